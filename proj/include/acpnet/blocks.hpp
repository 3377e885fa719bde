#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "acpnet/acpconv.hpp"
#include "acpnet/geometry.hpp"
#include "acpnet/layers.hpp"
#include "acpnet/ops.hpp"

namespace acpnet {

/// Kernel settings shared by every ACPConv inside a block.
struct ConvSettings {
  std::size_t kernels = 15;
  double scale = 1.0;
  double theta_t = deg_to_rad(30.0);
  Aggregation aggregation = Aggregation::Sum;
};

/// ACPConv followed by batch norm and leaky ReLU.
struct ConvUnit {
  ACPConvLayer conv;
  BatchNorm norm;

  ConvUnit() = default;
  ConvUnit(std::size_t in, std::size_t out, const ConvSettings& s, std::uint64_t seed)
      : conv(in, out, s.kernels, s.scale, s.theta_t, seed, s.aggregation), norm(out) {}

  Var forward(Var x, std::span<const Vec3> positions, const NeighborTable& nbrs) {
    return leaky_relu(norm.forward(acpconv_forward(x, positions, nbrs, conv)), kLeakySlope);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    conv.collect(set, prefix + ".conv");
    norm.collect(set, prefix + ".norm");
  }
};

/// Local multi-scale split block.
///
/// The entry MLP maps to d' channels, which are split into four equal groups
/// x1..x4. x2 goes through conv1 (d'/2 out) whose output halves are y21 and
/// y22; concat(y22, x3) goes through conv2 (d'/2 out) giving y31, y32;
/// concat(y32, x4) goes through conv3 (d'/4 out) giving y4. The exit MLP maps
/// concat(x1, y21, y31, y4) back to d_out and the (projected) input is added.
struct MSSBlock {
  std::size_t d_in = 0, d_prime = 0, d_out = 0;
  UnitMLP entry;
  ConvUnit conv1, conv2, conv3;
  UnitMLP exit;
  std::optional<Linear> residual_proj;

  MSSBlock() = default;
  MSSBlock(std::size_t in, std::size_t prime, std::size_t out, const ConvSettings& s, std::uint64_t seed)
      : d_in(in), d_prime(prime), d_out(out) {
    if (prime == 0 || prime % 4 != 0) {
      throw std::invalid_argument("MSSBlock: d' must be a positive multiple of 4, got " + std::to_string(prime));
    }
    const std::size_t q = prime / 4;
    entry = UnitMLP(in, prime, derive_seed(seed, 1));
    conv1 = ConvUnit(q, 2 * q, s, derive_seed(seed, 2));
    conv2 = ConvUnit(2 * q, 2 * q, s, derive_seed(seed, 3));
    conv3 = ConvUnit(2 * q, q, s, derive_seed(seed, 4));
    exit = UnitMLP(prime, out, derive_seed(seed, 5), false);
    if (in != out) residual_proj.emplace(in, out, derive_seed(seed, 6), false);
  }

  Var forward(Var x, std::span<const Vec3> positions, const NeighborTable& nbrs) {
    if (x.shape().size() != 2 || x.shape()[1] != d_in) throw ShapeError("mss_block", x.shape(), Shape{positions.size(), d_in});
    const auto xs = split_even(entry.forward(x), 4, 1);
    const auto y2 = split_even(conv1.forward(xs[1], positions, nbrs), 2, 1);
    const auto y3 = split_even(conv2.forward(concat({y2[1], xs[2]}, 1), positions, nbrs), 2, 1);
    const Var y4 = conv3.forward(concat({y3[1], xs[3]}, 1), positions, nbrs);
    const Var main = exit.forward(concat({xs[0], y2[0], y3[0], y4}, 1));
    return add(main, residual_proj ? residual_proj->forward(x) : x);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    entry.collect(set, prefix + ".entry");
    conv1.collect(set, prefix + ".conv1");
    conv2.collect(set, prefix + ".conv2");
    conv3.collect(set, prefix + ".conv3");
    exit.collect(set, prefix + ".exit");
    if (residual_proj) residual_proj->collect(set, prefix + ".residual");
  }
};

/// ResNet-style bottleneck: reduce MLP -> ACPConv -> expand MLP, plus residual.
struct BottleneckBlock {
  std::size_t d_in = 0, d_mid = 0, d_out = 0;
  UnitMLP reduce;
  ConvUnit conv;
  UnitMLP expand;
  std::optional<Linear> residual_proj;

  BottleneckBlock() = default;
  BottleneckBlock(std::size_t in, std::size_t mid, std::size_t out, const ConvSettings& s, std::uint64_t seed)
      : d_in(in), d_mid(mid), d_out(out) {
    if (mid == 0) throw std::invalid_argument("BottleneckBlock: bottleneck width must be positive");
    reduce = UnitMLP(in, mid, derive_seed(seed, 1));
    conv = ConvUnit(mid, mid, s, derive_seed(seed, 2));
    expand = UnitMLP(mid, out, derive_seed(seed, 3), false);
    if (in != out) residual_proj.emplace(in, out, derive_seed(seed, 4), false);
  }

  Var forward(Var x, std::span<const Vec3> positions, const NeighborTable& nbrs) {
    if (x.shape().size() != 2 || x.shape()[1] != d_in) {
      throw ShapeError("bottleneck_block", x.shape(), Shape{positions.size(), d_in});
    }
    const Var main = expand.forward(conv.forward(reduce.forward(x), positions, nbrs));
    return add(main, residual_proj ? residual_proj->forward(x) : x);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    reduce.collect(set, prefix + ".reduce");
    conv.collect(set, prefix + ".conv");
    expand.collect(set, prefix + ".expand");
    if (residual_proj) residual_proj->collect(set, prefix + ".residual");
  }
};

enum class BlockKind { MSS, Bottleneck };

inline const char* to_string(BlockKind k) { return k == BlockKind::MSS ? "mss" : "bottleneck"; }

/// Either block kind behind one interface. Both reduce to width d_out / ratio internally.
class Block {
 public:
  Block(BlockKind kind, std::size_t in, std::size_t out, std::size_t ratio, const ConvSettings& s, std::uint64_t seed) {
    const std::size_t inner = std::max<std::size_t>(1, out / std::max<std::size_t>(1, ratio));
    if (kind == BlockKind::MSS) impl_.emplace<MSSBlock>(in, inner, out, s, seed);
    else impl_.emplace<BottleneckBlock>(in, inner, out, s, seed);
  }

  Var forward(Var x, std::span<const Vec3> positions, const NeighborTable& nbrs) {
    return std::visit([&](auto& b) { return b.forward(x, positions, nbrs); }, impl_);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    std::visit([&](auto& b) { b.collect(set, prefix); }, impl_);
  }

 private:
  std::variant<MSSBlock, BottleneckBlock> impl_;
};

/// Inverse-square-distance interpolation stencil from a coarse to a fine point set.
struct Interpolation {
  std::vector<Index> indices;   // (fine * k)
  std::vector<double> weights;  // (fine * k), rows sum to 1
  std::size_t k = 0;
  std::size_t fine_count() const { return k ? indices.size() / k : 0; }
};

inline constexpr double kInterpolationEps = 1e-8;

inline Interpolation interpolation_weights(std::span<const Vec3> coarse, std::span<const Vec3> fine, std::size_t k) {
  if (coarse.empty()) throw std::invalid_argument("feature_propagate: empty coarse level");
  const NeighborTable nn = knn(coarse, fine, k);
  Interpolation it{nn.indices, std::vector<double>(nn.indices.size()), k};
  for (std::size_t i = 0; i < fine.size(); ++i) {
    double* w = &it.weights[i * k];
    const Index* idx = &it.indices[i * k];
    std::optional<std::size_t> exact;
    for (std::size_t j = 0; j < k && !exact; ++j) {
      if (squared_distance(fine[i], coarse[static_cast<std::size_t>(idx[j])]) == 0.0) exact = j;
    }
    if (exact) {
      w[*exact] = 1.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      w[j] = 1.0 / (squared_distance(fine[i], coarse[static_cast<std::size_t>(idx[j])]) + kInterpolationEps);
      total += w[j];
    }
    for (std::size_t j = 0; j < k; ++j) w[j] /= total;
  }
  return it;
}

inline Var interpolate(Var coarse_features, const Interpolation& it) {
  return weighted_gather(coarse_features, it.indices, it.weights, it.k);
}

/// Feature-propagation upsampling: k-NN inverse-distance interpolation followed
/// by an optional shared MLP.
struct FeaturePropagator {
  std::size_t k_interp = 3;
  std::optional<UnitMLP> mlp;

  FeaturePropagator() = default;
  explicit FeaturePropagator(std::size_t k) : k_interp(k) {}
  FeaturePropagator(std::size_t k, std::size_t in, std::size_t out, std::uint64_t seed) : k_interp(k) {
    mlp.emplace(in, out, seed);
  }

  void collect(ParameterSet& set, const std::string& prefix) {
    if (mlp) mlp->collect(set, prefix + ".mlp");
  }
};

inline Var feature_propagate(std::span<const Vec3> coarse_positions, Var coarse_features,
                             std::span<const Vec3> fine_positions, FeaturePropagator& prop) {
  if (coarse_features.shape().size() != 2 || coarse_features.shape()[0] != coarse_positions.size()) {
    throw ShapeError("feature_propagate", coarse_features.shape(), Shape{coarse_positions.size()});
  }
  Var up = interpolate(coarse_features, interpolation_weights(coarse_positions, fine_positions, prop.k_interp));
  return prop.mlp ? prop.mlp->forward(up) : up;
}

}  // namespace acpnet
