#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "acpnet/tensor.hpp"

namespace acpnet {

/// A named model tensor together with its gradient slot and Adam moments.
/// Non-trainable parameters (normalization statistics, kernel offsets) are
/// persisted in checkpoints but skipped by the optimizer.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v, bool is_trainable = true)
      : value(std::move(v)),
        adam_m(value.shape()),
        adam_v(value.shape()),
        trainable(is_trainable) {}

  bool has_grad() const noexcept { return grad.size() == value.size() && !value.empty(); }

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    else grad.fill(0.0);
  }

  void accumulate_grad(std::span<const double> g) {
    if (!has_grad()) grad = Tensor(value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

/// Ordered, named view over the parameters of a model.
class ParameterSet {
 public:
  void add(std::string name, Parameter& p) { items_.emplace_back(std::move(name), &p); }

  const std::vector<std::pair<std::string, Parameter*>>& items() const noexcept { return items_; }

  std::vector<Parameter*> trainable() const {
    std::vector<Parameter*> out;
    for (const auto& [name, p] : items_) {
      if (p->trainable) out.push_back(p);
    }
    return out;
  }

  Parameter* find(const std::string& name) const {
    for (const auto& [n, p] : items_) {
      if (n == name) return p;
    }
    return nullptr;
  }

  /// Number of trainable scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : items_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

  void zero_grad() const {
    for (const auto& [name, p] : items_) {
      if (p->trainable) p->zero_grad();
    }
  }

 private:
  std::vector<std::pair<std::string, Parameter*>> items_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update applied in place.
inline void adam_step(std::span<Parameter* const> params, const AdamOptions& opt = {}) {
  for (Parameter* p : params) {
    if (!p->has_grad()) throw std::logic_error("adam_step: parameter has no gradient");
  }
  for (Parameter* p : params) {
    if (p->adam_m.shape() != p->value.shape()) p->adam_m = Tensor(p->value.shape());
    if (p->adam_v.shape() != p->value.shape()) p->adam_v = Tensor(p->value.shape());
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    auto theta = p->value.data();
    auto g = p->grad.data();
    auto m = p->adam_m.data();
    auto v = p->adam_v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

inline void adam_step(const ParameterSet& set, const AdamOptions& opt = {}) {
  const auto params = set.trainable();
  adam_step(std::span<Parameter* const>(params), opt);
}

}  // namespace acpnet
