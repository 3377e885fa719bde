#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/geometry.hpp"

namespace acpnet {

enum SceneClass : int { kFloor = 0, kCeiling = 1, kWall = 2, kColumn = 3, kBoard = 4, kBox = 5 };
inline constexpr std::size_t kSceneClassCount = 6;
inline constexpr std::array<const char*, kSceneClassCount> kSceneClassNames{"floor", "ceiling", "wall",
                                                                            "column", "board", "box"};

/// Parameters of a synthetic axis-aligned room. Sizes are [min, max] ranges
/// drawn per object; counts of zero disable a class.
struct SyntheticSceneSpec {
  Vec3 extent{4.0, 4.0, 3.0};
  double density = 25.0;  ///< points per square meter of surface
  bool floor = true;
  bool ceiling = true;
  bool walls = true;
  std::size_t columns = 1;
  std::size_t boards = 1;
  std::size_t boxes = 2;
  std::array<double, 2> column_radius{0.15, 0.3};
  std::array<double, 2> board_width{0.8, 1.5};
  std::array<double, 2> board_height{0.5, 1.0};
  std::array<double, 2> box_size{0.4, 0.9};
  double board_offset = 0.02;
  double color_noise = 0.05;

  static SyntheticSceneSpec room() { return {}; }

  static SyntheticSceneSpec floor_only() {
    SyntheticSceneSpec s;
    s.ceiling = s.walls = false;
    s.columns = s.boards = s.boxes = 0;
    return s;
  }

  static SyntheticSceneSpec preset(const std::string& name) {
    if (name == "room") return room();
    if (name == "floor") return floor_only();
    if (name == "dense-room") {
      SyntheticSceneSpec s;
      s.density = 500.0;
      return s;
    }
    throw std::invalid_argument("unknown scene preset '" + name + "' (room, floor, dense-room)");
  }

  void validate() const {
    for (double e : extent) {
      if (!(e > 0.0) || !std::isfinite(e)) throw std::invalid_argument("SyntheticSceneSpec: extents must be positive");
    }
    if (!(density > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: density must be positive");
    const double margin = 2.0 * std::max({column_radius[1], box_size[1]});
    if ((columns || boxes) && (extent[0] <= margin || extent[1] <= margin)) {
      throw std::invalid_argument("SyntheticSceneSpec: room too small for its objects");
    }
  }
};

inline Vec3 class_color(int label) {
  switch (label) {
    case kFloor:
    case kCeiling: return {0.60, 0.60, 0.55};
    case kWall:
    case kColumn: return {0.80, 0.78, 0.70};
    case kBoard: return {0.20, 0.35, 0.25};
    case kBox: return {0.70, 0.30, 0.20};
    default: return {0.5, 0.5, 0.5};
  }
}

namespace detail {

class SceneWriter {
 public:
  SceneWriter(PointCloud& cloud, const SyntheticSceneSpec& spec, std::mt19937_64& rng)
      : cloud_(cloud), spec_(spec), rng_(rng) {}

  std::size_t count_for(double area) const { return static_cast<std::size_t>(std::llround(area * spec_.density)); }

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }

  void emit(const Vec3& p, int label) {
    Vec3 c = class_color(label);
    std::normal_distribution<double> n(0.0, spec_.color_noise);
    for (double& v : c) v = std::clamp(v + n(rng_), 0.0, 1.0);
    cloud_.positions.push_back(p);
    cloud_.colors->push_back(c);
    cloud_.labels->push_back(label);
  }

  /// Uniform samples on the rectangle origin + s*u + t*v, s,t in [0,1].
  void rectangle(const Vec3& origin, const Vec3& u, const Vec3& v, int label) {
    const std::size_t n = count_for(norm(u) * norm(v));
    for (std::size_t i = 0; i < n; ++i) emit(origin + uniform(0, 1) * u + uniform(0, 1) * v, label);
  }

 private:
  PointCloud& cloud_;
  const SyntheticSceneSpec& spec_;
  std::mt19937_64& rng_;
};

}  // namespace detail

/// Samples floor, ceiling, walls, vertical cylindrical columns, wall-mounted
/// boards and floor-standing boxes at the spec density. Labels are assigned by
/// construction and colors are the class color plus clipped Gaussian noise.
inline PointCloud generate_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  PointCloud cloud;
  cloud.colors.emplace();
  cloud.labels.emplace();
  detail::SceneWriter w(cloud, spec, rng);
  const double X = spec.extent[0], Y = spec.extent[1], H = spec.extent[2];

  if (spec.floor) w.rectangle({0, 0, 0}, {X, 0, 0}, {0, Y, 0}, kFloor);
  if (spec.ceiling) w.rectangle({0, 0, H}, {X, 0, 0}, {0, Y, 0}, kCeiling);
  if (spec.walls) {
    w.rectangle({0, 0, 0}, {X, 0, 0}, {0, 0, H}, kWall);
    w.rectangle({0, Y, 0}, {X, 0, 0}, {0, 0, H}, kWall);
    w.rectangle({0, 0, 0}, {0, Y, 0}, {0, 0, H}, kWall);
    w.rectangle({X, 0, 0}, {0, Y, 0}, {0, 0, H}, kWall);
  }
  for (std::size_t c = 0; c < spec.columns; ++c) {
    const double radius = w.uniform(spec.column_radius[0], spec.column_radius[1]);
    const double cx = w.uniform(radius, X - radius), cy = w.uniform(radius, Y - radius);
    const std::size_t n = w.count_for(2.0 * std::numbers::pi * radius * H);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = w.uniform(0.0, 2.0 * std::numbers::pi);
      w.emit({cx + radius * std::cos(a), cy + radius * std::sin(a), w.uniform(0.0, H)}, kColumn);
    }
  }
  for (std::size_t b = 0; b < spec.boards; ++b) {
    const double width = w.uniform(spec.board_width[0], spec.board_width[1]);
    const double height = std::min(w.uniform(spec.board_height[0], spec.board_height[1]), H);
    const int wall = static_cast<int>(rng() % 4);
    const double along = wall < 2 ? X : Y;
    const double bw = std::min(width, along);
    const double start = w.uniform(0.0, along - bw);
    const double z0 = w.uniform(0.0, H - height);
    const double off = spec.board_offset;
    switch (wall) {
      case 0: w.rectangle({start, off, z0}, {bw, 0, 0}, {0, 0, height}, kBoard); break;
      case 1: w.rectangle({start, Y - off, z0}, {bw, 0, 0}, {0, 0, height}, kBoard); break;
      case 2: w.rectangle({off, start, z0}, {0, bw, 0}, {0, 0, height}, kBoard); break;
      default: w.rectangle({X - off, start, z0}, {0, bw, 0}, {0, 0, height}, kBoard); break;
    }
  }
  for (std::size_t b = 0; b < spec.boxes; ++b) {
    const double sx = w.uniform(spec.box_size[0], spec.box_size[1]);
    const double sy = w.uniform(spec.box_size[0], spec.box_size[1]);
    const double sz = std::min(w.uniform(spec.box_size[0], spec.box_size[1]), H);
    const double x0 = w.uniform(0.0, X - sx), y0 = w.uniform(0.0, Y - sy);
    w.rectangle({x0, y0, sz}, {sx, 0, 0}, {0, sy, 0}, kBox);
    w.rectangle({x0, y0, 0}, {sx, 0, 0}, {0, 0, sz}, kBox);
    w.rectangle({x0, y0 + sy, 0}, {sx, 0, 0}, {0, 0, sz}, kBox);
    w.rectangle({x0, y0, 0}, {0, sy, 0}, {0, 0, sz}, kBox);
    w.rectangle({x0 + sx, y0, 0}, {0, sy, 0}, {0, 0, sz}, kBox);
  }
  return cloud;
}

/// Scenes seeded seed, seed+1, ...
inline std::vector<PointCloud> generate_dataset(const SyntheticSceneSpec& spec, std::size_t count, std::uint64_t seed) {
  std::vector<PointCloud> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) scenes.push_back(generate_scene(spec, seed + i));
  return scenes;
}

}  // namespace acpnet
