#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/graph.hpp"

namespace acpnet {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  /// Probe at most this many coordinates per target (evenly strided); 0 = all.
  std::size_t max_coords_per_target = 0;
  /// Optional coordinate filter, e.g. to keep probes away from activation kinks.
  std::function<bool(std::size_t target, std::size_t coord)> probe;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_target = 0;
  std::size_t worst_coord = 0;
  std::size_t probes = 0;
  double tol = 0.0;

  bool passed() const noexcept { return max_relative_error < tol; }
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t target, std::size_t coord)
      : std::runtime_error("finite_diff_check: non-finite value at target " + std::to_string(target) +
                           ", coordinate " + std::to_string(coord)),
        target_(target),
        coord_(coord) {}
  std::size_t target() const noexcept { return target_; }
  std::size_t coord() const noexcept { return coord_; }

 private:
  std::size_t target_, coord_;
};

/// Compares reverse-mode gradients against central differences.
///
/// `build` must construct a scalar-rooted graph that reads the current
/// contents of every tensor in `targets` through Graph::leaf or Graph::param.
/// Each target coordinate is perturbed in place by +-h and restored. The
/// reported error is |analytic - numeric| / max(1, |analytic|).
inline GradCheckResult finite_diff_check(const std::function<Var(Graph&)>& build,
                                         std::span<Tensor* const> targets,
                                         const GradCheckOptions& opt = {}) {
  if (!(opt.h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  std::vector<Tensor> analytic;
  {
    Graph g;
    Var root = build(g);
    g.backward(root);
    for (Tensor* t : targets) analytic.push_back(g.grad_wrt(*t));
  }
  // blame the coordinate whose gradient blew up before any probe trips over it
  for (std::size_t ti = 0; ti < analytic.size(); ++ti)
    for (std::size_t ci = 0; ci < analytic[ti].size(); ++ci)
      if (!std::isfinite(analytic[ti][ci])) throw NonFiniteError(ti, ci);
  auto eval = [&](std::size_t ti, std::size_t ci) {
    Graph g;
    const double v = g.forward(build(g)).item();
    if (!std::isfinite(v)) throw NonFiniteError(ti, ci);
    return v;
  };

  GradCheckResult res;
  res.tol = opt.tol;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Tensor& t = *targets[ti];
    const std::size_t n = t.size();
    const std::size_t stride =
        opt.max_coords_per_target && n > opt.max_coords_per_target
            ? (n + opt.max_coords_per_target - 1) / opt.max_coords_per_target
            : 1;
    for (std::size_t ci = 0; ci < n; ci += stride) {
      if (opt.probe && !opt.probe(ti, ci)) continue;
      const double a = analytic[ti][ci];
      if (!std::isfinite(a)) throw NonFiniteError(ti, ci);
      const double saved = t[ci];
      t[ci] = saved + opt.h;
      const double fp = eval(ti, ci);
      t[ci] = saved - opt.h;
      const double fm = eval(ti, ci);
      t[ci] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (res.probes++ == 0 || err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_target = ti;
        res.worst_coord = ci;
      }
    }
  }
  return res;
}

inline GradCheckResult finite_diff_check(const std::function<Var(Graph&)>& build,
                                         std::initializer_list<Tensor*> targets,
                                         const GradCheckOptions& opt = {}) {
  std::vector<Tensor*> t(targets);
  return finite_diff_check(build, std::span<Tensor* const>(t), opt);
}

}  // namespace acpnet
