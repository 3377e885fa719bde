#pragma once

// Small trend experiments: block kind and architecture, and single-scale vs
// fused two-scale prediction. Every row is trained and evaluated once per seed
// on a freshly generated synthetic dataset and the metrics are averaged.

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "acpnet/pipeline.hpp"
#include "acpnet/synthetic.hpp"

namespace acpnet {

struct AblationSettings {
  SyntheticSceneSpec scene = SyntheticSceneSpec::room();
  std::size_t scenes = 20;
  std::size_t test_scenes = 5;  ///< the last scenes of each dataset are held out
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ModelConfig model;
  TrainConfig train;
  VotingConfig voting;
};

struct AblationRow {
  std::string name;
  std::vector<double> miou;  ///< per seed
  std::vector<double> oa;
  std::size_t params = 0;    ///< trainable scalars of one model instance

  double mean_miou() const { return mean(miou); }
  double mean_oa() const { return mean(oa); }

 private:
  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

struct AblationData {
  std::vector<PointCloud> train, test;
};

inline AblationData ablation_data(const AblationSettings& s, std::uint64_t seed) {
  if (s.test_scenes == 0 || s.test_scenes >= s.scenes) {
    throw std::invalid_argument("ablation: need both training and held-out scenes");
  }
  auto all = generate_dataset(s.scene, s.scenes, derive_seed(seed, 31));
  AblationData d;
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.end() - static_cast<std::ptrdiff_t>(s.test_scenes)));
  d.test.assign(std::make_move_iterator(all.end() - static_cast<std::ptrdiff_t>(s.test_scenes)), std::make_move_iterator(all.end()));
  return d;
}

using AblationProgress = std::function<void(const std::string& row, std::uint64_t seed, const SegmentationMetrics&)>;

namespace detail {

inline ModelConfig seeded(ModelConfig m, std::uint64_t seed) {
  m.network.seed = derive_seed(seed, 41);
  return m;
}

inline TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = derive_seed(seed, 42);
  return t;
}

inline VotingConfig seeded(VotingConfig v, const ModelConfig& m, std::uint64_t seed) {
  v.seed = derive_seed(seed, 43);
  v.num_classes = m.network.num_classes;
  return v;
}

inline void record(AblationRow& row, std::uint64_t seed, const EvaluationResult& r, const AblationProgress& progress) {
  row.miou.push_back(r.metrics.miou);
  row.oa.push_back(r.metrics.oa);
  if (progress) progress(row.name, seed, r.metrics);
}

}  // namespace detail

/// Rows: Unet + bottleneck, Unet + MSS, HRNet + MSS (single branch each).
inline std::vector<AblationRow> run_block_grid(const AblationSettings& s, const AblationProgress& progress = {}) {
  struct Variant {
    const char* name;
    Architecture arch;
    BlockKind kind;
  };
  const Variant variants[] = {{"unet-bottleneck", Architecture::UNet, BlockKind::Bottleneck},
                              {"unet-mss", Architecture::UNet, BlockKind::MSS},
                              {"hrnet-mss", Architecture::HRNet, BlockKind::MSS}};
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) rows.push_back({v.name, {}, {}, 0});
  for (std::uint64_t seed : s.seeds) {
    const AblationData data = ablation_data(s, seed);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ModelConfig mc = detail::seeded(s.model, seed);
      mc.fusion = FusionMode::Single;
      mc.network.architecture = variants[i].arch;
      mc.network.block_kind = variants[i].kind;
      Segmenter model(mc);
      rows[i].params = model.parameters().scalar_count();
      train(data.train, model, detail::seeded(s.train, seed));
      const auto res = evaluate_with_voting(data.test, make_predictor(model), detail::seeded(s.voting, mc, seed));
      detail::record(rows[i], seed, res, progress);
    }
  }
  return rows;
}

/// Rows: scale1 (r1), scale2 (2 r1), average of those two models, and jointly
/// trained attention fusion with shared weights.
inline std::vector<AblationRow> run_fusion_grid(const AblationSettings& s, const AblationProgress& progress = {}) {
  std::vector<AblationRow> rows{{"scale1", {}, {}, 0}, {"scale2", {}, {}, 0}, {"average", {}, {}, 0},
                                {"attention", {}, {}, 0}};
  for (std::uint64_t seed : s.seeds) {
    const AblationData data = ablation_data(s, seed);
    ModelConfig base = detail::seeded(s.model, seed);
    base.fusion = FusionMode::Single;
    const VotingConfig vc = detail::seeded(s.voting, base, seed);
    const TrainConfig tc = detail::seeded(s.train, seed);

    ModelConfig m1 = base;
    ModelConfig m2 = base;
    m2.r1 = base.radii().second;
    m2.r2.reset();
    m2.network.seed = derive_seed(base.network.seed, 2);
    Segmenter scale1(m1), scale2(m2);
    train(data.train, scale1, tc);
    train(data.train, scale2, tc);
    rows[0].params = scale1.parameters().scalar_count();
    rows[1].params = scale2.parameters().scalar_count();
    rows[2].params = rows[0].params + rows[1].params;
    detail::record(rows[0], seed, evaluate_with_voting(data.test, make_predictor(scale1), vc), progress);
    detail::record(rows[1], seed, evaluate_with_voting(data.test, make_predictor(scale2), vc), progress);

    const Predictor p1 = make_predictor(scale1), p2 = make_predictor(scale2);
    const Predictor avg = [&](const PointCloud& crop, std::uint64_t sd) {
      Tensor a = p1(crop, sd);
      const Tensor b = p2(crop, sd);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5 * (a[i] + b[i]);
      return a;
    };
    detail::record(rows[2], seed, evaluate_with_voting(data.test, avg, vc), progress);

    ModelConfig ma = base;
    ma.fusion = FusionMode::Attention;
    ma.shared_weights = true;
    Segmenter attention(ma);
    rows[3].params = attention.parameters().scalar_count();
    train(data.train, attention, tc);
    detail::record(rows[3], seed, evaluate_with_voting(data.test, make_predictor(attention), vc), progress);
  }
  return rows;
}

inline void write_ablation_table(std::ostream& os, const std::string& title, std::span<const AblationRow> rows) {
  char buf[200];
  os << title << '\n';
  std::snprintf(buf, sizeof buf, "%-18s %10s %8s %8s\n", "row", "params", "mIoU", "OA");
  os << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %10zu %8.2f %8.2f\n", r.name.c_str(), r.params, 100.0 * r.mean_miou(),
                  100.0 * r.mean_oa());
    os << buf;
  }
}

}  // namespace acpnet
