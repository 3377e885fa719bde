// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "acpnet/acpnet.hpp"
#include "oracles.hpp"

using namespace acpnet;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

// desk-scale budget for each ablation model
constexpr std::size_t kAblationEpochs = 100;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t n = 0, bad = 0;
  std::string worst_name;
  double worst = 0;
  for (const GradCase& c : all_grad_cases()) {
    const GradCheckResult r = c.run();
    ++n;
    if (!r.passed()) {
      ++bad;
      worst_name += " " + c.name;
    }
    if (r.max_relative_error / r.tol > worst) worst = r.max_relative_error / r.tol;
  }
  const double secs = seconds_since(t0);
  report("gradient-suite", bad == 0 && secs < 120.0,
         fmt("%zu cases, %zu failing%s, worst error/tol %.3g, %.1f s", n, bad, worst_name.c_str(), worst, secs));
}

void acpconv_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0;
  const Aggregation aggs[] = {Aggregation::Sum, Aggregation::Mean, Aggregation::Max};
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng() % 49, K = 1 + rng() % 8, m = 1 + rng() % std::min<std::size_t>(n, 10);
    const std::size_t cin = 1 + rng() % 5, cout = 1 + rng() % 5;
    const Aggregation agg = aggs[rep % 3];
    const double theta = deg_to_rad(15.0 + static_cast<double>(rng() % 60));
    const auto pos = oracle::random_cloud(n, 1.0, rng);
    const NeighborTable nbrs = knn(pos, pos, m);
    ACPConvLayer conv(cin, cout, K, 0.6, theta, rng(), agg);
    const Tensor f = gradsuite::random_tensor(Shape{n, cin}, rng);
    Graph g;
    const Tensor out = acpconv_forward(g.constant(f), pos, nbrs, conv).value();

    std::vector<std::vector<double>> frows(n, std::vector<double>(cin));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cin; ++c) frows[i][c] = f(i, c);
    std::vector<std::vector<Index>> nrows(n);
    for (std::size_t q = 0; q < n; ++q) {
      const auto r = nbrs.row(q);
      nrows[q].assign(r.begin(), r.end());
    }
    const oracle::Agg oagg = agg == Aggregation::Sum    ? oracle::Agg::Sum
                             : agg == Aggregation::Mean ? oracle::Agg::Mean
                                                        : oracle::Agg::Max;
    const auto ref = oracle::acpconv(frows, pos, nrows, conv.kernel.offsets, theta, conv.kernel.weights.value, oagg);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < cout; ++o) worst = std::max(worst, std::abs(ref[i][o] - out(i, o)));
  }
  report("oracle-acpconv", worst < 1e-12, fmt("100 instances, max abs diff %.3g", worst));
}

void knn_oracle() {
  std::mt19937_64 rng(102);
  std::size_t mismatched = 0, queries = 0;
  for (std::size_t n : {10u, 500u, 5000u}) {
    const auto src = oracle::random_cloud(n, 3.0, rng);
    const auto qry = oracle::random_cloud(200, 3.0, rng);
    for (std::size_t m : {1u, 8u, 16u}) {
      const NeighborTable t = knn(src, qry, m);
      const auto ref = oracle::knn(src, qry, m);
      for (std::size_t q = 0; q < qry.size(); ++q) {
        const auto r = t.row(q);
        mismatched += std::vector<Index>(r.begin(), r.end()) != ref[q];
        ++queries;
      }
    }
  }
  report("oracle-knn", mismatched == 0, fmt("%zu/%zu query rows differ from brute force", mismatched, queries));
}

void pds_oracle() {
  std::mt19937_64 rng(103);
  bool ok = true;
  std::string detail;
  for (double r : {0.05, 0.1, 0.3}) {
    const auto pts = oracle::random_cloud(2000, 1.0, rng);
    const auto kept = poisson_disk_subsample(pts, r, rng());
    const auto rep = oracle::check_pds(pts, kept);
    const bool good = rep.min_accepted_distance > r && rep.max_rejected_gap <= r;
    ok = ok && good;
    detail += fmt("r=%.2f kept %zu min sep %.4f max gap %.4f; ", r, kept.size(), rep.min_accepted_distance,
                  rep.max_rejected_gap);
  }
  report("oracle-pds", ok, detail);
}

void overfit() {
  const auto t0 = Clock::now();
  const PointCloud room = generate_scene(SyntheticSceneSpec::room(), 0);
  ModelConfig m;
  m.network.architecture = Architecture::HRNet;
  m.network.num_streams = 2;
  m.network.widths = {16, 32};
  m.network.seed = 1;
  Segmenter model(m);
  TrainConfig t;
  t.lr = 0.01;
  t.epochs = 500;
  t.crops_per_epoch = 1;
  t.sphere_radius = 100.0;
  t.augment = AugmentConfig::none();
  t.seed = 2;
  std::size_t hit = 0, steps = 0;
  double best = 0;
  // stop at the first step reaching the target; the budget is 500 steps
  try {
    train(std::span<const PointCloud>(&room, 1), model, t, nullptr, [&](std::size_t step, const StepRecord& r) {
      steps = step;
      best = std::max(best, r.oa);
      if (r.oa >= 0.99) {
        hit = step;
        throw hit;
      }
    });
  } catch (std::size_t) {
  }
  const double secs = seconds_since(t0);
  report("overfit", hit > 0 && secs < 300.0,
         fmt("%zu points, OA>=0.99 at step %zu (best %.4f after %zu steps), %.1f s", room.size(), hit, best, steps,
             secs));
}

AblationSettings ablation_settings() {
  AblationSettings s;
  s.scenes = 20;
  s.test_scenes = 5;
  s.seeds = {0, 1, 2};
  s.model.network = NetworkConfig::desk();
  // both branches (0.1 and 0.2) stay fine enough to resolve every object class
  s.model.r1 = 0.1;
  s.train.epochs = kAblationEpochs;
  s.train.crops_per_epoch = 10;
  s.train.lr = 0.01;
  s.train.sphere_radius = 1.5;
  s.voting.sphere_radius = 1.5;
  return s;
}

void ablation_trends() {
  const AblationSettings s = ablation_settings();
  auto t0 = Clock::now();
  const auto blocks = run_block_grid(s);
  std::ostringstream table;
  write_ablation_table(table, "blocks", blocks);
  std::cout << table.str();
  const AblationRow& bott = blocks[0];
  const AblationRow& mss = blocks[1];
  report("ablation-mss-miou", mss.mean_miou() >= bott.mean_miou() - 0.005,
         fmt("unet mss %.4f vs bottleneck %.4f (%.0f s)", mss.mean_miou(), bott.mean_miou(), seconds_since(t0)));
  report("ablation-mss-params", mss.params < bott.params,
         fmt("mss %zu vs bottleneck %zu trainable scalars", mss.params, bott.params));

  t0 = Clock::now();
  const auto fusion = run_fusion_grid(s);
  table.str("");
  write_ablation_table(table, "fusion", fusion);
  std::cout << table.str();
  const double s1 = fusion[0].mean_miou(), s2 = fusion[1].mean_miou();
  const double avg = fusion[2].mean_miou(), att = fusion[3].mean_miou();
  report("fusion-attention-vs-average", att >= avg - 0.003,
         fmt("attention %.4f vs average %.4f (%.0f s)", att, avg, seconds_since(t0)));
  report("fusion-average-vs-single", avg >= std::max(s1, s2) - 0.005,
         fmt("average %.4f vs scale1 %.4f, scale2 %.4f", avg, s1, s2));
}

void fusion_identity() {
  std::mt19937_64 rng(104);
  double worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 5 + rng() % 40, w = 2 + rng() % 6, c = 2 + rng() % 6;
    const auto pos = oracle::random_cloud(n, 1.0, rng);
    const NeighborTable nbrs = knn(pos, pos, std::min<std::size_t>(n, 6));
    FusionHead head(w, c, ConvSettings{5, 0.6, deg_to_rad(45.0), Aggregation::Sum}, rng());
    head.attention_conv.kernel.weights.value.fill(0.0);
    auto probs = [&] {
      Tensor p = gradsuite::random_tensor(Shape{n, c}, rng, 0.01, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < c; ++k) s += p(i, k);
        for (std::size_t k = 0; k < c; ++k) p(i, k) /= s;
      }
      return p;
    };
    const Tensor p1 = probs(), p2 = probs();
    Graph g;
    const Tensor att = attention_fuse(g.constant(gradsuite::random_tensor(Shape{n, w}, rng)),
                                      g.constant(gradsuite::random_tensor(Shape{n, w}, rng)), g.constant(p1),
                                      g.constant(p2), pos, nbrs, head)
                           .value();
    const Tensor avg = average_fuse(g.constant(p1), g.constant(p2)).value();
    for (std::size_t i = 0; i < att.size(); ++i) worst = std::max(worst, std::abs(att[i] - avg[i]));
  }
  report("fusion-zero-logit-identity", worst < 1e-12, fmt("20 instances, max abs diff %.3g", worst));
}

void determinism() {
  const auto data = generate_dataset(SyntheticSceneSpec::room(), 2, 7);
  auto run = [&] {
    ModelConfig m;
    m.network.num_streams = 2;
    m.network.widths = {16, 32};
    m.network.seed = 3;
    Segmenter model(m);
    TrainConfig t;
    t.epochs = 3;
    t.crops_per_epoch = 3;
    t.sphere_radius = 1.5;
    t.seed = 11;
    t.deterministic = true;
    std::ostringstream log;
    train(data, model, t, &log);
    return log.str();
  };
  const std::string a = run(), b = run();
  report("determinism", a == b && !a.empty(), fmt("two runs, %zu-byte logs %s", a.size(), a == b ? "identical" : "differ"));
}

void metrics() {
  const auto hand = compute_metrics(ConfusionMatrix::from_rows({{3, 1}, {1, 3}}));
  bool ok = std::abs(hand.miou - 0.6) < 1e-15 && std::abs(hand.oa - 0.75) < 1e-15;
  std::mt19937_64 rng(105);
  double worst = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<std::vector<std::uint64_t>> rows(n, std::vector<std::uint64_t>(n));
    for (auto& r : rows)
      for (auto& v : r) v = rng() % 3 ? rng() % 100 : 0;
    rows[rng() % n][rng() % n] += 1;
    const auto got = compute_metrics(ConfusionMatrix::from_rows(rows));
    const auto ref = oracle::metrics(rows);
    worst = std::max({worst, std::abs(got.miou - ref.miou), std::abs(got.oa - ref.oa)});
    for (std::size_t c = 0; c < n; ++c) {
      if (got.iou[c].has_value() != ref.iou[c].has_value()) ok = false;
      else if (ref.iou[c]) worst = std::max(worst, std::abs(*got.iou[c] - *ref.iou[c]));
    }
  }
  ok = ok && worst < 1e-12;
  report("metrics", ok, fmt("hand example mIoU %.4f OA %.4f; 1000 random matrices, max diff %.3g", hand.miou, hand.oa, worst));
}

}  // namespace

int main() {
  gradient_suite();
  acpconv_oracle();
  knn_oracle();
  pds_oracle();
  overfit();
  fusion_identity();
  determinism();
  metrics();
  ablation_trends();
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
