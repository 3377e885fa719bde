#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "acpnet/graph.hpp"
#include "acpnet/ops.hpp"
#include "acpnet/parameter.hpp"

namespace acpnet {

inline constexpr double kLeakySlope = 0.1;

/// Dense layer y = x W (+ b) applied row-wise.
struct Linear {
  Parameter weight;  // (in, out)
  Parameter bias;    // (out), empty when disabled
  bool use_bias = true;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::uint64_t seed, bool with_bias = true) : use_bias(with_bias) {
    std::mt19937_64 rng(seed);
    const double bound = std::sqrt(3.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(Shape{in, out});
    for (double& v : w.data()) v = u(rng);
    weight = Parameter(std::move(w));
    if (use_bias) bias = Parameter(Tensor(Shape{out}));
  }

  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }

  Var forward(Var x) {
    Graph& g = x.graph();
    Var y = matmul(x, g.param(weight));
    return use_bias ? add_bias(y, g.param(bias)) : y;
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    set.add(prefix + ".weight", weight);
    if (use_bias) set.add(prefix + ".bias", bias);
  }
};

/// Batch normalization over the point axis with running statistics.
struct BatchNorm {
  Parameter gamma;
  Parameter beta;
  Parameter running_mean;
  Parameter running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t c)
      : gamma(Tensor(Shape{c}, 1.0)),
        beta(Tensor(Shape{c})),
        running_mean(Tensor(Shape{c}), false),
        running_var(Tensor(Shape{c}, 1.0), false) {}

  Var forward(Var x) {
    Graph& g = x.graph();
    return batch_norm(x, g.param(gamma), g.param(beta), running_mean.value, running_var.value, momentum, eps);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    set.add(prefix + ".gamma", gamma);
    set.add(prefix + ".beta", beta);
    set.add(prefix + ".running_mean", running_mean);
    set.add(prefix + ".running_var", running_var);
  }
};

/// Shared per-point MLP unit: linear -> batch norm -> optional leaky ReLU.
struct UnitMLP {
  Linear linear;
  BatchNorm norm;
  bool activate = true;

  UnitMLP() = default;
  UnitMLP(std::size_t in, std::size_t out, std::uint64_t seed, bool with_activation = true)
      : linear(in, out, seed, false), norm(out), activate(with_activation) {}

  std::size_t in() const { return linear.in(); }
  std::size_t out() const { return linear.out(); }

  Var forward(Var x) {
    Var y = norm.forward(linear.forward(x));
    return activate ? leaky_relu(y, kLeakySlope) : y;
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    linear.collect(set, prefix + ".linear");
    norm.collect(set, prefix + ".norm");
  }
};

/// Mixes a seed with a small tag so sub-layers get independent streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace acpnet
