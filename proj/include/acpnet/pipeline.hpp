#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/checkpoint.hpp"
#include "acpnet/fusion.hpp"
#include "acpnet/geometry.hpp"
#include "acpnet/metrics.hpp"
#include "acpnet/network.hpp"
#include "acpnet/ops.hpp"

namespace acpnet {

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool rotate = true;
  bool jitter = true;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  bool scale = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  bool color_drop = true;
  double color_drop_prob = 0.2;

  static AugmentConfig none() {
    AugmentConfig a;
    a.rotate = a.jitter = a.scale = a.color_drop = false;
    return a;
  }
};

/// Vertical-axis rotation, clipped Gaussian jitter, isotropic scaling and
/// color dropping, applied in that order about the crop centroid.
inline PointCloud augment(const PointCloud& crop, const AugmentConfig& cfg, std::uint64_t seed) {
  PointCloud out = crop;
  if (out.empty()) return out;
  std::mt19937_64 rng(seed);
  Vec3 center{0.0, 0.0, 0.0};
  for (const Vec3& p : out.positions) center = center + p;
  center = (1.0 / static_cast<double>(out.size())) * center;

  if (cfg.rotate) {
    const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const double c = std::cos(angle), s = std::sin(angle);
    for (Vec3& p : out.positions) {
      const double x = p[0] - center[0], y = p[1] - center[1];
      p[0] = center[0] + c * x - s * y;
      p[1] = center[1] + s * x + c * y;
    }
  }
  if (cfg.jitter) {
    std::normal_distribution<double> n(0.0, cfg.jitter_sigma);
    for (Vec3& p : out.positions)
      for (double& v : p) v += std::clamp(n(rng), -cfg.jitter_clip, cfg.jitter_clip);
  }
  if (cfg.scale) {
    const double s = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
    for (Vec3& p : out.positions) p = center + s * (p - center);
  }
  if (cfg.color_drop && out.colors) {
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.color_drop_prob) {
      for (Vec3& c : *out.colors) c = {0.0, 0.0, 0.0};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  NetworkConfig network = NetworkConfig::desk();
  FusionMode fusion = FusionMode::Single;
  double r1 = 0.2;
  std::optional<double> r2;  ///< defaults to 2 * r1
  bool shared_weights = true;
  bool use_color = true;
  bool use_height = true;

  std::size_t input_channels() const { return 1 + (use_color ? 3 : 0) + (use_height ? 1 : 0); }
  BranchRadii radii() const { return BranchRadii::from(r1, r2); }
};

/// Per-point input features: constant 1, optional RGB, optional height.
inline Tensor input_features(const PointCloud& crop, const ModelConfig& cfg) {
  const std::size_t c = cfg.input_channels();
  Tensor f(Shape{crop.size(), c});
  for (std::size_t i = 0; i < crop.size(); ++i) {
    std::size_t q = 0;
    f(i, q++) = 1.0;
    if (cfg.use_color) {
      for (int a = 0; a < 3; ++a) f(i, q++) = crop.colors ? (*crop.colors)[i][a] : 0.0;
    }
    if (cfg.use_height) f(i, q++) = crop.positions[i][2];
  }
  return f;
}

/// Network(s) plus optional fusion head for one- or two-branch segmentation.
class Segmenter {
 public:
  explicit Segmenter(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.network.in_channels = cfg_.input_channels();
    cfg_.network.base_radius = cfg_.r1;
    net1_ = make_network(cfg_.network);
    if (two_branch() && !cfg_.shared_weights) {
      NetworkConfig c2 = cfg_.network;
      c2.seed = derive_seed(c2.seed, 77);
      c2.base_radius = cfg_.radii().second;
      net2_ = make_network(c2);
    }
    if (cfg_.fusion == FusionMode::Attention) {
      head_.emplace(cfg_.network.widths[0], cfg_.network.num_classes, cfg_.network.conv_settings(0),
                    derive_seed(cfg_.network.seed, 900));
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  bool two_branch() const noexcept { return cfg_.fusion != FusionMode::Single; }
  SegmentationNetwork& network() { return *net1_; }
  FusionHead* head() { return head_ ? &*head_ : nullptr; }

  ParameterSet parameters() {
    ParameterSet set;
    net1_->collect(set, "net");
    if (net2_) net2_->collect(set, "net2");
    if (head_) head_->collect(set, "fusion");
    return set;
  }

  /// Row-stochastic class probabilities for every point of the crop.
  Var predict(Graph& g, const PointCloud& crop, std::uint64_t seed) {
    const Var input = g.constant(input_features(crop, cfg_));
    const auto& nc = cfg_.network;
    if (!two_branch()) {
      const auto pyr = build_pyramid(crop, cfg_.r1, nc.num_streams, nc.neighbors, seed, nc.k_interp);
      return softmax(net1_->forward(g, pyr, input).logits);
    }
    SegmentationNetwork& second = net2_ ? *net2_ : *net1_;
    return run_two_branch(g, crop.positions, input, *net1_, second, cfg_.radii(), cfg_.fusion, head(), seed).fused;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<SegmentationNetwork> net1_, net2_;
  std::optional<FusionHead> head_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-3;
  double decay_factor = 0.5;
  std::size_t decay_every = 30;
  std::size_t epochs = 1;
  std::size_t crops_per_epoch = 10;
  double sphere_radius = 2.5;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  std::size_t max_crop_retries = 16;
  bool deterministic = true;

  void validate() const {
    if (!(lr > 0.0) || !(decay_factor > 0.0) || decay_every == 0 || !(sphere_radius > 0.0)) {
      throw std::invalid_argument("TrainConfig: rates, decay period and sphere radius must be positive");
    }
  }

  /// lr * decay_factor^floor(epoch / decay_every)
  double lr_at(std::size_t epoch) const {
    return lr * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  ///< optimizer steps completed at the end of the epoch
  double loss = 0.0;
  double oa = 0.0;
  double lr = 0.0;
};

/// Writes `epoch, step, loss, OA, lr` with full precision.
inline void write_log_line(std::ostream& os, const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu, %zu, %.17g, %.17g, %.17g\n", r.epoch, r.step, r.loss, r.oa, r.lr);
  os << buf;
}

struct StepRecord {
  double loss = 0.0;
  double oa = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

/// Draws a labeled crop around a random point of a random scene, redrawing
/// empty or unlabeled crops up to `max_crop_retries` times.
inline Crop draw_training_crop(std::span<const PointCloud> dataset, const TrainConfig& cfg, std::mt19937_64& rng) {
  for (std::size_t attempt = 0; attempt <= cfg.max_crop_retries; ++attempt) {
    const PointCloud& scene = dataset[static_cast<std::size_t>(rng() % dataset.size())];
    if (scene.empty()) continue;
    const Vec3 center = scene.positions[static_cast<std::size_t>(rng() % scene.size())];
    try {
      Crop c = sphere_crop(scene, center, cfg.sphere_radius);
      if (c.cloud.labels) return c;
    } catch (const EmptyCropError&) {
    }
  }
  throw std::runtime_error("train: no usable crop after " + std::to_string(cfg.max_crop_retries + 1) + " draws");
}

using StepCallback = std::function<void(std::size_t step, const StepRecord&)>;

/// Sphere-sampled training with cross-entropy and scheduled Adam. Epoch lines
/// are appended to `log` when given.
inline TrainResult train(std::span<const PointCloud> dataset, Segmenter& model, const TrainConfig& cfg,
                         std::ostream* log = nullptr, const StepCallback& on_step = {}) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParameterSet params = model.parameters();
  const auto trainable = params.trainable();
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    AdamOptions opt;
    opt.lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    std::uint64_t correct = 0, scored = 0;
    for (std::size_t s = 0; s < cfg.crops_per_epoch; ++s) {
      const Crop crop = draw_training_crop(dataset, cfg, rng);
      const std::uint64_t step_seed = rng();
      const PointCloud aug = augment(crop.cloud, cfg.augment, step_seed);
      Graph g;
      g.set_training(true);
      const Var probs = model.predict(g, aug, derive_seed(step_seed, 1));
      const Var loss = cross_entropy(probs, *aug.labels);
      params.zero_grad();
      g.backward(loss);
      adam_step(std::span<Parameter* const>(trainable), opt);
      ++step;

      const Tensor& pv = probs.value();
      std::uint64_t ok = 0, n = 0;
      for (std::size_t i = 0; i < pv.dim(0); ++i) {
        const int truth = (*aug.labels)[i];
        if (truth == kIgnoreLabel) continue;
        const auto row = pv.row(i);
        const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        ok += pred == truth;
        ++n;
      }
      const StepRecord rec{loss.value().item(), n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0};
      result.steps.push_back(rec);
      if (on_step) on_step(step, rec);
      loss_sum += rec.loss;
      correct += ok;
      scored += n;
    }
    EpochRecord er{epoch, step, cfg.crops_per_epoch ? loss_sum / static_cast<double>(cfg.crops_per_epoch) : 0.0,
                   scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0, opt.lr};
    result.epochs.push_back(er);
    if (log) {
      write_log_line(*log, er);
      log->flush();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Voting inference

/// Maps a crop to an (N, num_classes) row-stochastic probability tensor.
using Predictor = std::function<Tensor(const PointCloud& crop, std::uint64_t seed)>;

inline Predictor make_predictor(Segmenter& model) {
  return [&model](const PointCloud& crop, std::uint64_t seed) {
    Graph g;
    g.set_training(false);
    return model.predict(g, crop, seed).value();
  };
}

struct VotingConfig {
  double sphere_radius = 2.5;
  double stride = 0.0;  ///< center spacing; 0 means equal to the radius
  std::size_t num_classes = 6;
  std::uint64_t seed = 0;
};

struct SceneVotes {
  Tensor probabilities;     ///< (N, C) averaged over covering spheres
  std::vector<int> labels;  ///< argmax
  std::vector<int> coverage;
};

class UncoveredPointsError : public std::runtime_error {
 public:
  explicit UncoveredPointsError(std::size_t count)
      : std::runtime_error("evaluate_with_voting: " + std::to_string(count) + " points not covered by any sphere"),
        count_(count) {}
  std::size_t count() const noexcept { return count_; }

 private:
  std::size_t count_;
};

/// Sphere centers on a regular grid over the scene bounding box.
inline std::vector<Vec3> voting_centers(const PointCloud& scene, double stride) {
  if (scene.empty()) return {};
  Vec3 lo = scene.positions[0], hi = scene.positions[0];
  for (const Vec3& p : scene.positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  std::array<std::size_t, 3> n{};
  for (int a = 0; a < 3; ++a) n[a] = static_cast<std::size_t>(std::ceil((hi[a] - lo[a]) / stride)) + 1;
  std::vector<Vec3> centers;
  for (std::size_t i = 0; i < n[0]; ++i)
    for (std::size_t j = 0; j < n[1]; ++j)
      for (std::size_t k = 0; k < n[2]; ++k) {
        centers.push_back({lo[0] + static_cast<double>(i) * stride, lo[1] + static_cast<double>(j) * stride,
                           lo[2] + static_cast<double>(k) * stride});
      }
  return centers;
}

inline SceneVotes vote_scene(const PointCloud& scene, const Predictor& predict, const VotingConfig& cfg,
                             std::span<const Vec3> centers) {
  SceneVotes v;
  v.probabilities = Tensor(Shape{scene.size(), cfg.num_classes});
  v.coverage.assign(scene.size(), 0);
  std::uint64_t crop_seed = cfg.seed;
  for (const Vec3& center : centers) {
    Crop crop;
    try {
      crop = sphere_crop(scene, center, cfg.sphere_radius);
    } catch (const EmptyCropError&) {
      continue;
    }
    const Tensor probs = predict(crop.cloud, crop_seed++);
    if (probs.rank() != 2 || probs.dim(0) != crop.cloud.size() || probs.dim(1) != cfg.num_classes) {
      throw ShapeError("evaluate_with_voting: predictor output", probs.shape(),
                       Shape{crop.cloud.size(), cfg.num_classes});
    }
    for (std::size_t i = 0; i < crop.index_map.size(); ++i) {
      const auto dst = static_cast<std::size_t>(crop.index_map[i]);
      for (std::size_t c = 0; c < cfg.num_classes; ++c) v.probabilities(dst, c) += probs(i, c);
      ++v.coverage[dst];
    }
  }
  const auto uncovered = static_cast<std::size_t>(std::count(v.coverage.begin(), v.coverage.end(), 0));
  if (uncovered) throw UncoveredPointsError(uncovered);
  v.labels.resize(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    auto row = v.probabilities.row(i);
    for (double& p : row) p /= static_cast<double>(v.coverage[i]);
    v.labels[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return v;
}

struct EvaluationResult {
  ConfusionMatrix confusion;
  SegmentationMetrics metrics;
  std::vector<SceneVotes> scenes;
};

/// Voting inference over every scene followed by metrics on labeled points.
inline EvaluationResult evaluate_with_voting(std::span<const PointCloud> dataset, const Predictor& predict,
                                             const VotingConfig& cfg) {
  if (!(cfg.sphere_radius > 0.0)) throw std::invalid_argument("evaluate_with_voting: radius must be positive");
  const double stride = cfg.stride > 0.0 ? cfg.stride : cfg.sphere_radius;
  EvaluationResult res{ConfusionMatrix(cfg.num_classes), {}, {}};
  for (const PointCloud& scene : dataset) {
    const auto centers = voting_centers(scene, stride);
    SceneVotes v = vote_scene(scene, predict, cfg, centers);
    if (scene.labels) {
      for (std::size_t i = 0; i < scene.size(); ++i) {
        const int truth = (*scene.labels)[i];
        if (truth != kIgnoreLabel) res.confusion.add(truth, v.labels[i]);
      }
    }
    res.scenes.push_back(std::move(v));
  }
  res.metrics = compute_metrics(res.confusion);
  return res;
}

}  // namespace acpnet
