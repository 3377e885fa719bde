#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "acpnet/blocks.hpp"
#include "acpnet/geometry.hpp"
#include "acpnet/layers.hpp"

namespace acpnet {

struct PyramidLevel {
  std::vector<Index> crop_indices;  ///< rows of the level-0 crop
  std::vector<Vec3> positions;
  double radius = 0.0;              ///< subsampling radius that produced this level (0 for level 0)
  NeighborTable neighbors;          ///< intra-level M-NN
  NeighborTable pool;               ///< level > 0: M nearest points of the finer level (down-map)
  Interpolation upsample;           ///< level > 0: stencil onto the finer level (up-map)

  std::size_t size() const noexcept { return positions.size(); }
};

struct ResolutionPyramid {
  std::vector<PyramidLevel> levels;

  std::size_t depth() const noexcept { return levels.size(); }
  const PyramidLevel& operator[](std::size_t l) const { return levels.at(l); }
};

class EmptyLevelError : public std::runtime_error {
 public:
  explicit EmptyLevelError(std::size_t level)
      : std::runtime_error("build_pyramid: level " + std::to_string(level) + " is empty"), level_(level) {}
  std::size_t level() const noexcept { return level_; }

 private:
  std::size_t level_;
};

/// Level 0 is the crop itself; level l >= 1 is a Poisson-disk subsample of
/// level l-1 with radius r * 2^(l-1). r = 0 keeps every point at every level.
inline ResolutionPyramid build_pyramid(std::span<const Vec3> crop, double r, std::size_t levels, std::size_t m,
                                       std::uint64_t seed = 0, std::size_t k_interp = 3) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: need at least one level");
  if (crop.empty()) throw EmptyLevelError(0);
  const std::vector<double> radii = r > 0.0 ? radius_schedule(r, levels) : std::vector<double>(levels, 0.0);
  ResolutionPyramid pyr;
  PyramidLevel base;
  base.positions.assign(crop.begin(), crop.end());
  base.crop_indices.resize(crop.size());
  for (std::size_t i = 0; i < crop.size(); ++i) base.crop_indices[i] = static_cast<Index>(i);
  base.neighbors = knn(base.positions, base.positions, m);
  pyr.levels.push_back(std::move(base));
  for (std::size_t l = 1; l < levels; ++l) {
    const PyramidLevel& prev = pyr.levels.back();
    const auto keep = poisson_disk_subsample(prev.positions, radii[l - 1], derive_seed(seed, l));
    if (keep.empty()) throw EmptyLevelError(l);
    PyramidLevel lv;
    lv.radius = radii[l - 1];
    for (Index i : keep) {
      lv.positions.push_back(prev.positions[static_cast<std::size_t>(i)]);
      lv.crop_indices.push_back(prev.crop_indices[static_cast<std::size_t>(i)]);
    }
    lv.neighbors = knn(lv.positions, lv.positions, m);
    lv.pool = knn(prev.positions, lv.positions, m);
    lv.upsample = interpolation_weights(lv.positions, prev.positions, k_interp);
    pyr.levels.push_back(std::move(lv));
  }
  return pyr;
}

inline ResolutionPyramid build_pyramid(const PointCloud& crop, double r, std::size_t levels, std::size_t m,
                                       std::uint64_t seed = 0, std::size_t k_interp = 3) {
  return build_pyramid(std::span<const Vec3>(crop.positions), r, levels, m, seed, k_interp);
}

/// Max-pools features from level `from` down to coarser level `to` through the down-maps.
inline Var pool_down(Var x, const ResolutionPyramid& pyr, std::size_t from, std::size_t to) {
  for (std::size_t l = from + 1; l <= to; ++l) {
    const auto& pool = pyr[l].pool;
    x = group_max(gather_rows(x, pool.indices), pool.m);
  }
  return x;
}

/// Interpolates features from level `from` up to finer level `to` through the up-maps.
inline Var lift_up(Var x, const ResolutionPyramid& pyr, std::size_t from, std::size_t to) {
  for (std::size_t l = from; l > to; --l) x = interpolate(x, pyr[l].upsample);
  return x;
}

enum class Architecture { HRNet, UNet };

inline const char* to_string(Architecture a) { return a == Architecture::HRNet ? "hrnet" : "unet"; }

struct NetworkConfig {
  Architecture architecture = Architecture::HRNet;
  std::size_t num_streams = 3;  ///< pyramid depth used (streams for HRNet, stages + 1 for Unet)
  std::size_t blocks_per_stage = 2;
  std::vector<std::size_t> widths{64, 128, 256};
  BlockKind block_kind = BlockKind::MSS;
  std::size_t block_ratio = 4;  ///< inner width = width / ratio (d' for MSS, bottleneck width otherwise)
  std::size_t num_classes = 6;
  std::size_t in_channels = 5;
  std::size_t kernels = 15;
  double theta_t_deg = 30.0;
  std::size_t neighbors = 32;
  std::size_t k_interp = 3;
  double base_radius = 0.04;
  double kernel_scale_factor = 2.5;
  Aggregation aggregation = Aggregation::Sum;
  std::uint64_t seed = 0;

  static NetworkConfig full_scale() { return NetworkConfig{}; }

  static NetworkConfig desk() {
    NetworkConfig c;
    c.widths = {16, 32, 64};
    c.neighbors = 16;
    c.base_radius = 0.2;
    return c;
  }

  void validate() const {
    if (num_streams < 1) throw std::invalid_argument("NetworkConfig: need at least one stream");
    if (widths.size() < num_streams) {
      throw std::invalid_argument("NetworkConfig: " + std::to_string(widths.size()) + " widths for " +
                                  std::to_string(num_streams) + " streams");
    }
    if (num_classes < 1 || in_channels < 1) throw std::invalid_argument("NetworkConfig: empty class or input set");
    if (kernels < 1 || neighbors < 1) throw std::invalid_argument("NetworkConfig: kernels and neighbors must be >= 1");
  }

  /// Kernel containment radius for ACPConvs on pyramid level l.
  double kernel_scale(std::size_t level) const {
    const double r = base_radius > 0.0 ? base_radius : 1.0;
    const double level_radius = level == 0 ? r / 2.0 : std::ldexp(r, static_cast<int>(level) - 1);
    return kernel_scale_factor * level_radius;
  }

  ConvSettings conv_settings(std::size_t level) const {
    return ConvSettings{kernels, kernel_scale(level), deg_to_rad(theta_t_deg), aggregation};
  }
};

struct NetworkOutput {
  Var logits;    ///< (N, num_classes) on pyramid level 0
  Var features;  ///< (N, widths[0]) last hidden layer before the classifier
};

class SegmentationNetwork {
 public:
  explicit SegmentationNetwork(NetworkConfig config) : config_(std::move(config)) { config_.validate(); }
  virtual ~SegmentationNetwork() = default;

  virtual NetworkOutput forward(Graph& g, const ResolutionPyramid& pyr, Var input) = 0;
  virtual void collect(ParameterSet& set, const std::string& prefix) = 0;

  const NetworkConfig& config() const noexcept { return config_; }

  ParameterSet parameters(const std::string& prefix = "net") {
    ParameterSet set;
    collect(set, prefix);
    return set;
  }

 protected:
  void check_inputs(const ResolutionPyramid& pyr, Var input) const {
    if (pyr.depth() != config_.num_streams) {
      throw std::invalid_argument("network: pyramid depth " + std::to_string(pyr.depth()) +
                                  " does not match configured depth " + std::to_string(config_.num_streams));
    }
    if (input.shape().size() != 2 || input.shape()[0] != pyr[0].size() || input.shape()[1] != config_.in_channels) {
      throw ShapeError("network input", input.shape(), Shape{pyr[0].size(), config_.in_channels});
    }
  }

  NetworkConfig config_;
};

/// Point-cloud HRNet: parallel resolution streams with repeated exchange
/// fusion and a decoder that lifts every stream to full resolution.
class HRNet final : public SegmentationNetwork {
 public:
  explicit HRNet(NetworkConfig config) : SegmentationNetwork(std::move(config)) {
    const auto& c = config_;
    const std::size_t s_count = c.num_streams;
    stem_ = ConvUnit(c.in_channels, c.widths[0], c.conv_settings(0), derive_seed(c.seed, 100));
    std::uint64_t tag = 1000;
    for (std::size_t s = 0; s < s_count; ++s) {
      std::vector<std::vector<Block>> stage;
      for (std::size_t k = 0; k <= s; ++k) {
        std::vector<Block> blocks;
        for (std::size_t b = 0; b < c.blocks_per_stage; ++b) {
          blocks.emplace_back(c.block_kind, c.widths[k], c.widths[k], c.block_ratio, c.conv_settings(k),
                              derive_seed(c.seed, tag++));
        }
        stage.push_back(std::move(blocks));
      }
      stages_.push_back(std::move(stage));
      for (std::size_t t = 0; t < targets_after(s); ++t)
        for (std::size_t a = 0; a <= s; ++a) {
          if (a == t) continue;
          transfers_.emplace(std::make_tuple(s, a, t),
                             UnitMLP(c.widths[a], c.widths[t], derive_seed(c.seed, tag++), false));
        }
    }
    std::size_t concat = c.widths[0];
    for (std::size_t k = 0; k < s_count; ++k) concat += c.widths[k];
    head_ = UnitMLP(concat, c.widths[0], derive_seed(c.seed, 200));
    classifier_ = Linear(c.widths[0], c.num_classes, derive_seed(c.seed, 201));
  }

  NetworkOutput forward(Graph& g, const ResolutionPyramid& pyr, Var input) override {
    check_inputs(pyr, input);
    (void)g;
    const auto& lvl = pyr.levels;
    const Var stem = stem_.forward(input, lvl[0].positions, lvl[0].neighbors);
    std::vector<Var> streams{stem};
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t k = 0; k <= s; ++k)
        for (Block& b : stages_[s][k]) streams[k] = b.forward(streams[k], lvl[k].positions, lvl[k].neighbors);
      streams = exchange(s, streams, pyr);
    }
    std::vector<Var> parts;
    for (std::size_t k = 0; k < streams.size(); ++k) parts.push_back(lift_up(streams[k], pyr, k, 0));
    parts.push_back(stem);
    const Var features = head_.forward(concat(parts, 1));
    return {classifier_.forward(features), features};
  }

  void collect(ParameterSet& set, const std::string& prefix) override {
    stem_.collect(set, prefix + ".stem");
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t k = 0; k < stages_[s].size(); ++k)
        for (std::size_t b = 0; b < stages_[s][k].size(); ++b) {
          stages_[s][k][b].collect(set, prefix + ".stage" + std::to_string(s) + ".stream" + std::to_string(k) +
                                            ".block" + std::to_string(b));
        }
    for (auto& [key, mlp] : transfers_) {
      const auto [s, a, t] = key;
      mlp.collect(set, prefix + ".exchange" + std::to_string(s) + "." + std::to_string(a) + "to" + std::to_string(t));
    }
    head_.collect(set, prefix + ".head");
    classifier_.collect(set, prefix + ".classifier");
  }

 private:
  std::size_t targets_after(std::size_t s) const {
    return s + 1 < config_.num_streams ? s + 2 : config_.num_streams;
  }

  /// Each target stream receives the sum of channel-matched transfers from
  /// every live stream; the exchange after stage s also spawns stream s + 1.
  std::vector<Var> exchange(std::size_t s, const std::vector<Var>& streams, const ResolutionPyramid& pyr) {
    std::vector<Var> out;
    for (std::size_t t = 0; t < targets_after(s); ++t) {
      Var acc;
      for (std::size_t a = 0; a < streams.size(); ++a) {
        Var term;
        if (a == t) {
          term = streams[a];
        } else {
          UnitMLP& mlp = transfers_.at(std::make_tuple(s, a, t));
          term = a < t ? mlp.forward(pool_down(streams[a], pyr, a, t)) : mlp.forward(lift_up(streams[a], pyr, a, t));
        }
        acc = acc.valid() ? add(acc, term) : term;
      }
      out.push_back(acc);
    }
    return out;
  }

  ConvUnit stem_;
  std::vector<std::vector<std::vector<Block>>> stages_;  // [stage][stream][block]
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, UnitMLP> transfers_;
  UnitMLP head_;
  Linear classifier_;
};

/// Encoder-decoder baseline over the same pyramid with skip connections.
class UNet final : public SegmentationNetwork {
 public:
  explicit UNet(NetworkConfig config) : SegmentationNetwork(std::move(config)) {
    const auto& c = config_;
    stem_ = ConvUnit(c.in_channels, c.widths[0], c.conv_settings(0), derive_seed(c.seed, 100));
    std::uint64_t tag = 1000;
    for (std::size_t l = 0; l < c.num_streams; ++l) {
      std::vector<Block> blocks;
      for (std::size_t b = 0; b < c.blocks_per_stage; ++b) {
        const std::size_t in = (b == 0 && l > 0) ? c.widths[l - 1] : c.widths[l];
        blocks.emplace_back(c.block_kind, in, c.widths[l], c.block_ratio, c.conv_settings(l), derive_seed(c.seed, tag++));
      }
      if (blocks.empty() && l > 0) {
        down_proj_.emplace(l, UnitMLP(c.widths[l - 1], c.widths[l], derive_seed(c.seed, tag++)));
      }
      encoder_.push_back(std::move(blocks));
    }
    for (std::size_t l = 1; l < c.num_streams; ++l) {
      decoder_.emplace_back(c.widths[l] + c.widths[l - 1], c.widths[l - 1], derive_seed(c.seed, tag++));
    }
    head_ = UnitMLP(c.widths[0], c.widths[0], derive_seed(c.seed, 200));
    classifier_ = Linear(c.widths[0], c.num_classes, derive_seed(c.seed, 201));
  }

  NetworkOutput forward(Graph& g, const ResolutionPyramid& pyr, Var input) override {
    check_inputs(pyr, input);
    (void)g;
    const auto& lvl = pyr.levels;
    std::vector<Var> skips;
    Var x = stem_.forward(input, lvl[0].positions, lvl[0].neighbors);
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      if (l > 0) {
        x = pool_down(x, pyr, l - 1, l);
        if (auto it = down_proj_.find(l); it != down_proj_.end()) x = it->second.forward(x);
      }
      for (Block& b : encoder_[l]) x = b.forward(x, lvl[l].positions, lvl[l].neighbors);
      skips.push_back(x);
    }
    for (std::size_t l = encoder_.size() - 1; l > 0; --l) {
      const Var up = lift_up(x, pyr, l, l - 1);
      x = decoder_[l - 1].forward(concat({up, skips[l - 1]}, 1));
    }
    const Var features = head_.forward(x);
    return {classifier_.forward(features), features};
  }

  void collect(ParameterSet& set, const std::string& prefix) override {
    stem_.collect(set, prefix + ".stem");
    for (std::size_t l = 0; l < encoder_.size(); ++l)
      for (std::size_t b = 0; b < encoder_[l].size(); ++b)
        encoder_[l][b].collect(set, prefix + ".encoder" + std::to_string(l) + ".block" + std::to_string(b));
    for (auto& [l, mlp] : down_proj_) mlp.collect(set, prefix + ".down" + std::to_string(l));
    for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].collect(set, prefix + ".decoder" + std::to_string(l));
    head_.collect(set, prefix + ".head");
    classifier_.collect(set, prefix + ".classifier");
  }

 private:
  ConvUnit stem_;
  std::vector<std::vector<Block>> encoder_;
  std::map<std::size_t, UnitMLP> down_proj_;
  std::vector<UnitMLP> decoder_;
  UnitMLP head_;
  Linear classifier_;
};

inline std::unique_ptr<SegmentationNetwork> make_network(const NetworkConfig& config) {
  if (config.architecture == Architecture::HRNet) return std::make_unique<HRNet>(config);
  return std::make_unique<UNet>(config);
}

}  // namespace acpnet
