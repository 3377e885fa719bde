#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/geometry.hpp"
#include "acpnet/graph.hpp"
#include "acpnet/ops.hpp"
#include "acpnet/parameter.hpp"

namespace acpnet {

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Kernel points around a query point. offsets[0] is the center kernel; the
/// offsets are fixed after initialization and only the weights train.
struct KernelSet {
  std::vector<Vec3> offsets;
  double scale = 1.0;
  double theta_t = deg_to_rad(30.0);
  /// One C_in x C_out matrix per kernel point, stored as a (K, C_in, C_out) tensor.
  Parameter weights;
  /// Offsets mirrored into a non-trainable parameter so checkpoints carry them.
  Parameter offset_state;

  std::size_t count() const noexcept { return offsets.size(); }
  std::size_t c_in() const { return weights.value.dim(1); }
  std::size_t c_out() const { return weights.value.dim(2); }

  /// Copy of W_k.
  Tensor weight(std::size_t k) const {
    const std::size_t ci = c_in(), co = c_out();
    Tensor w(Shape{ci, co});
    const auto src = weights.value.data().subspan(k * ci * co, ci * co);
    std::copy(src.begin(), src.end(), w.data().begin());
    return w;
  }

  /// Replaces the offsets (and their persisted copy); K must not change.
  void set_offsets(const std::vector<Vec3>& o) {
    if (o.size() != offsets.size()) throw std::invalid_argument("KernelSet: offset count must stay " + std::to_string(offsets.size()));
    offsets = o;
    for (std::size_t k = 0; k < o.size(); ++k)
      for (int a = 0; a < 3; ++a) offset_state.value[k * 3 + a] = o[k][a];
  }

  void sync_offsets_from_state() {
    for (std::size_t k = 0; k < offsets.size(); ++k)
      for (int a = 0; a < 3; ++a) offsets[k][a] = offset_state.value[k * 3 + a];
  }
};

/// Draws K-1 kernel offsets uniformly in the ball of radius `scale` (plus the
/// center kernel) and fan-in-scaled uniform weights.
inline KernelSet init_kernels(std::size_t k, double scale, double theta_t, std::size_t c_in, std::size_t c_out,
                              std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("init_kernels: K must be at least 1");
  if (!(theta_t > 0.0 && theta_t < std::numbers::pi)) {
    throw std::invalid_argument("init_kernels: theta_t must lie in (0, pi)");
  }
  if (!(scale > 0.0)) throw std::invalid_argument("init_kernels: scale must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  KernelSet ks;
  ks.scale = scale;
  ks.theta_t = theta_t;
  ks.offsets.push_back({0.0, 0.0, 0.0});
  while (ks.offsets.size() < k) {
    Vec3 d{gauss(rng), gauss(rng), gauss(rng)};
    const double n = norm(d);
    if (n < 1e-12) continue;
    const double radius = scale * std::cbrt(unit(rng));
    if (radius <= 0.0) continue;
    ks.offsets.push_back((radius / n) * d);
  }
  Tensor off(Shape{k, 3});
  for (std::size_t i = 0; i < k; ++i)
    for (int a = 0; a < 3; ++a) off[i * 3 + a] = ks.offsets[i][a];
  ks.offset_state = Parameter(std::move(off), false);

  const double bound = std::sqrt(3.0 / static_cast<double>(c_in * k));
  std::uniform_real_distribution<double> w(-bound, bound);
  Tensor weights(Shape{k, c_in, c_out});
  for (double& v : weights.data()) v = w(rng);
  ks.weights = Parameter(std::move(weights));
  return ks;
}

/// Correlation of one relative neighbor vector with kernel k. Column 0 is the
/// center kernel, which correlates only with the query point itself.
inline double correlation(const Vec3& v, const Vec3& u, std::size_t k, double cos_threshold) {
  const double nv = norm(v);
  if (k == 0) return nv == 0.0 ? 1.0 : 0.0;
  const double nu = norm(u);
  if (nv == 0.0 || nu == 0.0) return 0.0;
  const double c = dot(v, u) / (nv * nu);
  return c > cos_threshold ? c : 0.0;
}

/// (M, K) matrix of correlations between relative neighbor positions and kernels.
inline Tensor angle_correlation(std::span<const Vec3> rel_neighbors, const KernelSet& kernel) {
  const std::size_t m = rel_neighbors.size(), k = kernel.count();
  const double cos_t = std::cos(kernel.theta_t);
  Tensor out(Shape{m, k});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t q = 0; q < k; ++q) out[j * k + q] = correlation(rel_neighbors[j], kernel.offsets[q], q, cos_t);
  return out;
}

/// Nonzero correlations for every (query, neighbor slot) pair.
struct CorrelationTable {
  struct Entry {
    std::uint32_t slot;    ///< j within the neighbor row
    std::uint32_t kernel;  ///< k
    double weight;
  };
  std::size_t queries = 0, m = 0, kernels = 0;
  std::vector<Index> neighbor;          ///< (queries * m) source index per slot
  std::vector<std::size_t> row_begin;  ///< per query, offset into entries; size queries + 1
  std::vector<Entry> entries;
};

inline CorrelationTable build_correlation_table(std::span<const Vec3> positions, const NeighborTable& nbrs,
                                                const KernelSet& kernel) {
  if (nbrs.query_count != positions.size() || nbrs.source_count != positions.size()) {
    throw ShapeError("acpconv: neighbor table does not match positions",
                     Shape{nbrs.query_count, nbrs.source_count}, Shape{positions.size()});
  }
  CorrelationTable t;
  t.queries = positions.size();
  t.m = nbrs.m;
  t.kernels = kernel.count();
  t.neighbor = nbrs.indices;
  t.row_begin.reserve(t.queries + 1);
  const double cos_t = std::cos(kernel.theta_t);
  for (std::size_t i = 0; i < t.queries; ++i) {
    t.row_begin.push_back(t.entries.size());
    for (std::size_t j = 0; j < t.m; ++j) {
      const Vec3 v = positions[static_cast<std::size_t>(nbrs(i, j))] - positions[i];
      for (std::size_t k = 0; k < t.kernels; ++k) {
        const double c = correlation(v, kernel.offsets[k], k, cos_t);
        if (c != 0.0) {
          t.entries.push_back({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k), c});
        }
      }
    }
  }
  t.row_begin.push_back(t.entries.size());
  return t;
}

/// Projects neighbor features onto kernel points.
///   pooled:        out[i, k*C + c]         = sum_j corr(i,j,k) * f[n(i,j), c]
///   per-neighbor:  out[i*M + j, k*C + c]   =       corr(i,j,k) * f[n(i,j), c]
inline Var kernel_aggregate(Var features, std::shared_ptr<const CorrelationTable> table_ptr, bool pooled) {
  Graph& g = features.graph();
  const CorrelationTable& table = *table_ptr;
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.dim(0) != table.queries) {
    throw ShapeError("kernel_aggregate", fv.shape(), Shape{table.queries, table.kernels});
  }
  const std::size_t c = fv.dim(1), k = table.kernels, m = table.m;
  const std::size_t rows = pooled ? table.queries : table.queries * m;
  Tensor out(Shape{rows, k * c});
  for (std::size_t i = 0; i < table.queries; ++i) {
    for (std::size_t e = table.row_begin[i]; e < table.row_begin[i + 1]; ++e) {
      const auto& en = table.entries[e];
      const std::size_t src = static_cast<std::size_t>(table.neighbor[i * m + en.slot]);
      const std::size_t r = pooled ? i : i * m + en.slot;
      double* dst = &out[r * k * c + en.kernel * c];
      const double* f = &fv[src * c];
      for (std::size_t q = 0; q < c; ++q) dst[q] += en.weight * f[q];
    }
  }
  const std::size_t fi = features.id();
  return g.record(OpKind::KernelAggregate, {fi}, std::move(out),
                  [fi, table_ptr, pooled, c, k, m](Graph& gr, std::size_t self) {
                    const CorrelationTable& table = *table_ptr;
                    auto go = gr.grad(self);
                    detail::accumulate(gr, fi, [&](std::span<double> gf) {
                      for (std::size_t i = 0; i < table.queries; ++i) {
                        for (std::size_t e = table.row_begin[i]; e < table.row_begin[i + 1]; ++e) {
                          const auto& en = table.entries[e];
                          const std::size_t src = static_cast<std::size_t>(table.neighbor[i * m + en.slot]);
                          const std::size_t r = pooled ? i : i * m + en.slot;
                          const double* up = &go[r * k * c + en.kernel * c];
                          double* dst = &gf[src * c];
                          for (std::size_t q = 0; q < c; ++q) dst[q] += en.weight * up[q];
                        }
                      }
                    });
                  });
}

enum class Aggregation { Sum, Mean, Max };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Sum: return "sum";
    case Aggregation::Mean: return "mean";
    case Aggregation::Max: return "max";
  }
  return "?";
}

/// Angle Correlation Point Convolution layer.
struct ACPConvLayer {
  KernelSet kernel;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  Aggregation aggregation = Aggregation::Sum;

  ACPConvLayer() = default;
  ACPConvLayer(std::size_t in, std::size_t out, std::size_t kernels, double scale, double theta_t,
               std::uint64_t seed, Aggregation agg = Aggregation::Sum)
      : kernel(init_kernels(kernels, scale, theta_t, in, out, seed)), c_in(in), c_out(out), aggregation(agg) {}

  void collect(ParameterSet& set, const std::string& prefix) {
    set.add(prefix + ".weights", kernel.weights);
    set.add(prefix + ".kernel_offsets", kernel.offset_state);
  }
};

/// out_i = F_{j in N(i)} sum_k Corr(p_j - p_i, u_k) f_j W_k, with F the layer's
/// aggregation. Differentiable in the features and in every W_k.
inline Var acpconv_forward(Var features, std::span<const Vec3> positions, const NeighborTable& nbrs,
                           ACPConvLayer& layer) {
  Graph& g = features.graph();
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.dim(1) != layer.c_in || fv.dim(0) != positions.size()) {
    throw ShapeError("acpconv", fv.shape(), Shape{positions.size(), layer.c_in});
  }
  // Offsets may have been replaced by a checkpoint load.
  layer.kernel.sync_offsets_from_state();
  auto table = std::make_shared<const CorrelationTable>(build_correlation_table(positions, nbrs, layer.kernel));
  const std::size_t k = layer.kernel.count();
  Var w = reshape(g.param(layer.kernel.weights), Shape{k * layer.c_in, layer.c_out});
  const bool pooled = layer.aggregation != Aggregation::Max;
  Var agg = kernel_aggregate(features, std::move(table), pooled);
  Var out = matmul(agg, w);
  switch (layer.aggregation) {
    case Aggregation::Sum: return out;
    case Aggregation::Mean: return scale(out, 1.0 / static_cast<double>(nbrs.m));
    case Aggregation::Max: return group_max(out, nbrs.m);
  }
  return out;
}

}  // namespace acpnet
