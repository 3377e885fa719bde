#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "acpnet/ops.hpp"
#include "acpnet/tensor.hpp"

namespace acpnet {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Positions in meters with optional per-point colors, labels and features.
struct PointCloud {
  std::vector<Vec3> positions;
  std::optional<std::vector<Vec3>> colors;
  std::optional<std::vector<int>> labels;
  std::optional<Tensor> features;

  std::size_t size() const noexcept { return positions.size(); }
  bool empty() const noexcept { return positions.empty(); }

  void validate() const {
    const std::size_t n = positions.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (double c : positions[i]) {
        if (!std::isfinite(c)) throw std::invalid_argument("PointCloud: non-finite position at " + std::to_string(i));
      }
    }
    if (colors && colors->size() != n) throw std::invalid_argument("PointCloud: colors/positions length mismatch");
    if (labels && labels->size() != n) throw std::invalid_argument("PointCloud: labels/positions length mismatch");
    if (features && features->rows() != n) throw std::invalid_argument("PointCloud: features/positions length mismatch");
  }

  /// Sub-cloud of the given rows, carrying every optional attribute along.
  PointCloud subset(std::span<const Index> rows) const {
    PointCloud out;
    out.positions.reserve(rows.size());
    for (Index r : rows) out.positions.push_back(positions.at(static_cast<std::size_t>(r)));
    if (colors) {
      out.colors.emplace();
      for (Index r : rows) out.colors->push_back((*colors)[static_cast<std::size_t>(r)]);
    }
    if (labels) {
      out.labels.emplace();
      for (Index r : rows) out.labels->push_back((*labels)[static_cast<std::size_t>(r)]);
    }
    if (features) {
      const std::size_t w = features->row_width();
      Tensor f(Shape{rows.size(), w});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = features->row(static_cast<std::size_t>(rows[i]));
        std::copy(src.begin(), src.end(), f.row(i).begin());
      }
      out.features = std::move(f);
    }
    return out;
  }
};

/// Row q holds the M sources nearest to query q in nondecreasing distance.
struct NeighborTable {
  std::vector<Index> indices;
  std::size_t source_count = 0;
  std::size_t query_count = 0;
  std::size_t m = 0;

  std::span<const Index> row(std::size_t q) const {
    return std::span<const Index>(indices).subspan(q * m, m);
  }
  Index operator()(std::size_t q, std::size_t j) const { return indices[q * m + j]; }
};

struct CellKey {
  std::int64_t x, y, z;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Uniform hash grid: each point lives in cell floor(position / cell_size).
class SpatialGrid {
 public:
  SpatialGrid(std::span<const Vec3> points, double cell_size) : cell_size_(cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("SpatialGrid: cell size must be positive");
    for (std::size_t i = 0; i < points.size(); ++i) insert(points[i], static_cast<Index>(i));
  }

  explicit SpatialGrid(double cell_size) : SpatialGrid(std::span<const Vec3>{}, cell_size) {}

  double cell_size() const noexcept { return cell_size_; }

  CellKey cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p[0] / cell_size_)),
            static_cast<std::int64_t>(std::floor(p[1] / cell_size_)),
            static_cast<std::int64_t>(std::floor(p[2] / cell_size_))};
  }

  void insert(const Vec3& p, Index id) {
    const CellKey k = cell_of(p);
    cells_[k].push_back(id);
    if (cells_.size() == 1 && cells_[k].size() == 1) {
      lo_ = hi_ = k;
    } else {
      lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
      hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
    }
  }

  const std::vector<Index>* cell(const CellKey& k) const {
    auto it = cells_.find(k);
    return it == cells_.end() ? nullptr : &it->second;
  }

  const std::unordered_map<CellKey, std::vector<Index>, CellKeyHash>& occupancy() const noexcept {
    return cells_;
  }

  /// Chebyshev ring radius (in cells) beyond which no occupied cell exists.
  std::int64_t max_ring_from(const CellKey& c) const {
    return std::max({c.x - lo_.x, hi_.x - c.x, c.y - lo_.y, hi_.y - c.y, c.z - lo_.z, hi_.z - c.z,
                     std::int64_t{0}});
  }

  /// Visits the occupied cells at Chebyshev distance exactly `ring` from `c`.
  template <class F>
  void for_each_in_ring(const CellKey& c, std::int64_t ring, F&& f) const {
    if (ring == 0) {
      if (auto* v = cell(c)) f(*v);
      return;
    }
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
      for (std::int64_t dy = -ring; dy <= ring; ++dy) {
        const bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
        const std::int64_t step = edge ? 1 : 2 * ring;
        for (std::int64_t dz = -ring; dz <= ring; dz += step) {
          if (auto* v = cell({c.x + dx, c.y + dy, c.z + dz})) f(*v);
        }
      }
    }
  }

 private:
  double cell_size_;
  std::unordered_map<CellKey, std::vector<Index>, CellKeyHash> cells_;
  CellKey lo_{0, 0, 0}, hi_{0, 0, 0};
};

namespace detail {

/// Cell size giving roughly `target` points per occupied cell. Works for
/// volumetric and surface-like clouds alike since it measures occupancy.
inline double knn_cell_size(std::span<const Vec3> pts, std::size_t target) {
  Vec3 lo = pts[0], hi = pts[0];
  for (const Vec3& p : pts)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (!(extent > 0.0)) return 1.0;
  double cell = extent / std::max(1.0, std::cbrt(static_cast<double>(pts.size()) / static_cast<double>(target)));
  for (int iter = 0; iter < 4; ++iter) {
    SpatialGrid probe(pts, cell);
    const double per_cell = static_cast<double>(pts.size()) / static_cast<double>(probe.occupancy().size());
    const double ratio = static_cast<double>(target) / per_cell;
    if (ratio > 0.5 && ratio < 2.0) break;
    // Surface clouds fill cells ~ quadratically in cell size.
    cell *= std::clamp(std::sqrt(ratio), 0.25, 4.0);
    cell = std::min(cell, extent);
  }
  return cell;
}

inline void pad_row(std::vector<std::pair<double, Index>>& best, std::size_t m) {
  const auto nearest = best.front();
  while (best.size() < m) best.push_back(nearest);
}

}  // namespace detail

/// Exact Euclidean K-nearest neighbors of each query among `source`,
/// grid-accelerated. Ties break toward the lower source index; when M exceeds
/// the source size rows are padded by repeating the nearest index.
inline NeighborTable knn(std::span<const Vec3> source, std::span<const Vec3> queries, std::size_t m) {
  if (source.empty()) throw std::invalid_argument("knn: empty source cloud");
  if (m == 0) throw std::invalid_argument("knn: M must be at least 1");
  NeighborTable table;
  table.source_count = source.size();
  table.query_count = queries.size();
  table.m = m;
  table.indices.resize(queries.size() * m);

  const std::size_t want = std::min(m, source.size());
  const SpatialGrid grid(source, detail::knn_cell_size(source, std::max<std::size_t>(want, 4)));
  const double cell = grid.cell_size();
  std::vector<std::pair<double, Index>> cand;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Vec3& p = queries[q];
    const CellKey c = grid.cell_of(p);
    const std::int64_t last = grid.max_ring_from(c);
    cand.clear();
    for (std::int64_t ring = 0;; ++ring) {
      grid.for_each_in_ring(c, ring, [&](const std::vector<Index>& ids) {
        for (Index id : ids) cand.emplace_back(squared_distance(p, source[static_cast<std::size_t>(id)]), id);
      });
      if (ring >= last) break;
      if (cand.size() >= want) {
        // Unvisited points lie at least ring * cell away from the query.
        std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(want - 1), cand.end());
        const double bound = static_cast<double>(ring) * cell;
        if (cand[want - 1].first < bound * bound * (1.0 - 1e-12)) break;
      }
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(want), cand.end());
    cand.resize(want);
    detail::pad_row(cand, m);
    for (std::size_t j = 0; j < m; ++j) table.indices[q * m + j] = cand[j].second;
  }
  return table;
}

/// O(N*Q) reference scan with the same ordering and padding contract as knn().
inline NeighborTable knn_exhaustive(std::span<const Vec3> source, std::span<const Vec3> queries,
                                    std::size_t m) {
  if (source.empty()) throw std::invalid_argument("knn: empty source cloud");
  if (m == 0) throw std::invalid_argument("knn: M must be at least 1");
  NeighborTable table{std::vector<Index>(queries.size() * m), source.size(), queries.size(), m};
  const std::size_t want = std::min(m, source.size());
  std::vector<std::pair<double, Index>> all(source.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < source.size(); ++i) {
      all[i] = {squared_distance(queries[q], source[i]), static_cast<Index>(i)};
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want), all.end());
    std::vector<std::pair<double, Index>> row(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
    detail::pad_row(row, m);
    for (std::size_t j = 0; j < m; ++j) table.indices[q * m + j] = row[j].second;
  }
  return table;
}

inline NeighborTable knn(const PointCloud& source, std::span<const Vec3> queries, std::size_t m) {
  return knn(std::span<const Vec3>(source.positions), queries, m);
}

/// Greedy sample elimination: points are visited in a seeded random order and
/// accepted iff no accepted point lies within distance r. Returns the accepted
/// indices in ascending order.
inline std::vector<Index> poisson_disk_subsample(std::span<const Vec3> points, double r, std::uint64_t seed) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("poisson_disk_subsample: radius must be >= 0");
  std::vector<Index> all(points.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
  if (r == 0.0) return all;

  std::vector<Index> order = all;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  SpatialGrid accepted(r);
  const double r2 = r * r;
  std::vector<Index> selected;
  for (Index id : order) {
    const Vec3& p = points[static_cast<std::size_t>(id)];
    const CellKey c = accepted.cell_of(p);
    bool blocked = false;
    for (std::int64_t dx = -1; dx <= 1 && !blocked; ++dx)
      for (std::int64_t dy = -1; dy <= 1 && !blocked; ++dy)
        for (std::int64_t dz = -1; dz <= 1 && !blocked; ++dz) {
          if (auto* ids = accepted.cell({c.x + dx, c.y + dy, c.z + dz})) {
            for (Index o : *ids) {
              if (squared_distance(p, points[static_cast<std::size_t>(o)]) <= r2) {
                blocked = true;
                break;
              }
            }
          }
        }
    if (!blocked) {
      accepted.insert(p, id);
      selected.push_back(id);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline std::vector<Index> poisson_disk_subsample(const PointCloud& cloud, double r, std::uint64_t seed) {
  return poisson_disk_subsample(std::span<const Vec3>(cloud.positions), r, seed);
}

/// Doubling radii [r, 2r, 4r, ...] for L downsampling stages.
inline std::vector<double> radius_schedule(double r, std::size_t levels) {
  if (!(r > 0.0)) throw std::invalid_argument("radius_schedule: r must be positive");
  if (levels < 1) throw std::invalid_argument("radius_schedule: need at least one level");
  std::vector<double> out(levels);
  for (std::size_t l = 0; l < levels; ++l) out[l] = std::ldexp(r, static_cast<int>(l));
  return out;
}

/// Raised by sphere_crop when no point falls inside the sphere.
class EmptyCropError : public std::runtime_error {
 public:
  EmptyCropError() : std::runtime_error("sphere_crop: no points inside the sphere") {}
};

struct Crop {
  PointCloud cloud;
  std::vector<Index> index_map;  ///< crop row -> original row
};

inline Crop sphere_crop(const PointCloud& cloud, const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("sphere_crop: radius must be positive");
  const double r2 = radius * radius;
  Crop crop;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (squared_distance(cloud.positions[i], center) <= r2) crop.index_map.push_back(static_cast<Index>(i));
  }
  if (crop.index_map.empty()) throw EmptyCropError();
  crop.cloud = cloud.subset(crop.index_map);
  return crop;
}

}  // namespace acpnet
