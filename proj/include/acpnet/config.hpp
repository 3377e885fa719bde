#pragma once

// JSON run configuration. Every key is optional; missing keys keep the
// defaults of the corresponding struct.

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"

#include "acpnet/fusion.hpp"
#include "acpnet/network.hpp"
#include "acpnet/pipeline.hpp"
#include "acpnet/synthetic.hpp"

namespace acpnet {

namespace detail {

// Enum <-> string tables that reject unknown names instead of silently picking
// the first entry.
template <typename E, std::size_t N>
void enum_to_json(nlohmann::json& j, E e, const std::pair<E, const char*> (&table)[N]) {
  for (const auto& [v, name] : table)
    if (v == e) {
      j = name;
      return;
    }
  throw std::invalid_argument("config: enum value out of range");
}

template <typename E, std::size_t N>
void enum_from_json(const nlohmann::json& j, E& e, const std::pair<E, const char*> (&table)[N]) {
  const std::string s = j.get<std::string>();
  std::string known;
  for (const auto& [v, name] : table) {
    if (s == name) {
      e = v;
      return;
    }
    known += known.empty() ? name : std::string(", ") + name;
  }
  throw nlohmann::json::other_error::create(501, "unknown value '" + s + "' (expected " + known + ")", &j);
}

}  // namespace detail

#define ACPNET_JSON_ENUM(E, ...)                                                            \
  inline constexpr std::pair<E, const char*> E##_names[] = __VA_ARGS__;                     \
  inline void to_json(nlohmann::json& j, E e) { detail::enum_to_json(j, e, E##_names); }   \
  inline void from_json(const nlohmann::json& j, E& e) { detail::enum_from_json(j, e, E##_names); }

ACPNET_JSON_ENUM(Architecture, {{Architecture::HRNet, "hrnet"}, {Architecture::UNet, "unet"}})
ACPNET_JSON_ENUM(BlockKind, {{BlockKind::MSS, "mss"}, {BlockKind::Bottleneck, "bottleneck"}})
ACPNET_JSON_ENUM(Aggregation, {{Aggregation::Sum, "sum"}, {Aggregation::Mean, "mean"}, {Aggregation::Max, "max"}})
ACPNET_JSON_ENUM(FusionMode,
                 {{FusionMode::Single, "single"}, {FusionMode::Average, "average"}, {FusionMode::Attention, "attention"}})

#undef ACPNET_JSON_ENUM

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, architecture, num_streams, blocks_per_stage, widths,
                                                block_kind, block_ratio, num_classes, in_channels, kernels,
                                                theta_t_deg, neighbors, k_interp, base_radius, kernel_scale_factor,
                                                aggregation, seed)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, rotate, jitter, jitter_sigma, jitter_clip, scale,
                                                scale_min, scale_max, color_drop, color_drop_prob)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, decay_factor, decay_every, epochs, crops_per_epoch,
                                                sphere_radius, seed, augment, max_crop_retries, deterministic)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VotingConfig, sphere_radius, stride, num_classes, seed)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticSceneSpec, extent, density, floor, ceiling, walls, columns,
                                                boards, boxes, column_radius, board_width, board_height, box_size,
                                                board_offset, color_noise)

// optional<double> r2 is written as null when unset.
inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = nlohmann::json{{"network", m.network},       {"fusion", m.fusion},
                     {"r1", m.r1},                 {"r2", m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr)},
                     {"shared_weights", m.shared_weights}, {"use_color", m.use_color},
                     {"use_height", m.use_height}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  const ModelConfig d;
  m.network = j.value("network", d.network);
  m.fusion = j.value("fusion", d.fusion);
  m.r1 = j.value("r1", d.r1);
  if (auto it = j.find("r2"); it != j.end() && !it->is_null()) m.r2 = it->get<double>();
  else m.r2.reset();
  m.shared_weights = j.value("shared_weights", d.shared_weights);
  m.use_color = j.value("use_color", d.use_color);
  m.use_height = j.value("use_height", d.use_height);
}

struct DataConfig {
  std::string preset = "room";
  SyntheticSceneSpec scene = SyntheticSceneSpec::room();
  std::size_t scenes = 1;
};

inline void to_json(nlohmann::json& j, const DataConfig& d) {
  j = nlohmann::json{{"preset", d.preset}, {"scene", d.scene}, {"scenes", d.scenes}};
}

/// A "preset" selects the base scene; a "scene" object then overrides fields of it.
inline void from_json(const nlohmann::json& j, DataConfig& d) {
  d.preset = j.value("preset", std::string("room"));
  d.scene = SyntheticSceneSpec::preset(d.preset);
  if (auto it = j.find("scene"); it != j.end()) {
    nlohmann::json merged = d.scene;
    merged.merge_patch(*it);
    d.scene = merged.get<SyntheticSceneSpec>();
  }
  d.scenes = j.value("scenes", std::size_t{1});
}

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  VotingConfig voting;
  DataConfig data;
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = nlohmann::json{{"seed", r.seed}, {"model", r.model}, {"train", r.train}, {"voting", r.voting}, {"data", r.data}};
}

inline void from_json(const nlohmann::json& j, RunConfig& r) {
  const RunConfig d;
  r.seed = j.value("seed", d.seed);
  r.model = j.value("model", d.model);
  r.train = j.value("train", d.train);
  r.voting = j.value("voting", d.voting);
  r.data = j.value("data", d.data);
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline RunConfig parse_run_config(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  try {
    return nlohmann::json::parse(is).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw ConfigError("config: cannot write " + path);
  os << nlohmann::json(cfg).dump(2) << '\n';
}

}  // namespace acpnet
