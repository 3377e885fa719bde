// acpnet command-line front end.
//
// Exit codes: 0 success, 1 failed check (gradcheck) or runtime failure,
// 2 usage error (unknown command/flag, bad config or input file).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acpnet/acpnet.hpp"

namespace fs = std::filesystem;
using namespace acpnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string config_path;
};

// All randomness derives from one seed: the flag wins over the config file.
RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.model.network.seed = derive_seed(cfg.seed, 1);
  cfg.train.seed = derive_seed(cfg.seed, 2);
  cfg.voting.seed = derive_seed(cfg.seed, 3);
  cfg.voting.num_classes = cfg.model.network.num_classes;
  if (g.deterministic) cfg.train.deterministic = true;
  return cfg;
}

std::vector<PointCloud> load_or_generate(const std::vector<std::string>& files, const RunConfig& cfg,
                                         std::uint64_t tag) {
  std::vector<PointCloud> out;
  if (!files.empty()) {
    for (const auto& f : files) out.push_back(read_cloud(f));
    return out;
  }
  return generate_dataset(cfg.data.scene, cfg.data.scenes, derive_seed(cfg.seed, tag));
}

std::string scene_path(const std::string& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "scene_%03zu.cloud", i);
  return (fs::path(dir) / name).string();
}

int cmd_gen(const Globals& g, const std::string& preset, std::size_t scenes, std::optional<double> density,
            const std::string& out_dir) {
  RunConfig cfg = resolve_config(g);
  SyntheticSceneSpec spec = preset.empty() ? cfg.data.scene : SyntheticSceneSpec::preset(preset);
  if (density) spec.density = *density;
  fs::create_directories(out_dir);
  const auto clouds = generate_dataset(spec, scenes, cfg.seed);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    write_cloud(scene_path(out_dir, i), clouds[i]);
    std::cout << scene_path(out_dir, i) << " " << clouds[i].size() << " points\n";
  }
  return kExitOk;
}

int cmd_train(const Globals& g, const std::vector<std::string>& data, const std::string& ckpt,
              const std::string& log_path, std::optional<std::size_t> epochs, std::optional<std::size_t> crops,
              std::optional<double> lr) {
  RunConfig cfg = resolve_config(g);
  if (epochs) cfg.train.epochs = *epochs;
  if (crops) cfg.train.crops_per_epoch = *crops;
  if (lr) cfg.train.lr = *lr;
  const auto dataset = load_or_generate(data, cfg, 10);
  Segmenter model(cfg.model);
  std::ofstream log;
  std::ostream* sink = &std::cout;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw UsageError("cannot write log " + log_path);
    sink = &log;
  }
  train(dataset, model, cfg.train, sink);
  const ParameterSet params = model.parameters();
  save_checkpoint(ckpt, params, true);
  save_run_config(ckpt + ".json", cfg);
  std::cerr << "saved " << ckpt << " (" << params.scalar_count() << " trainable scalars)\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::vector<std::string>& data, const std::string& ckpt,
             const std::string& metrics_out, const std::string& pred_dir) {
  const std::string sidecar = ckpt + ".json";
  if (!fs::exists(sidecar)) throw UsageError("missing model config " + sidecar);
  RunConfig cfg = load_run_config(sidecar);
  if (g.seed) cfg.voting.seed = derive_seed(*g.seed, 3);
  Segmenter model(cfg.model);
  load_checkpoint(ckpt, model.parameters());
  const auto dataset = load_or_generate(data, cfg, 20);
  const auto res = evaluate_with_voting(dataset, make_predictor(model), cfg.voting);
  write_metrics_table(std::cout, res.metrics, kSceneClassNames);
  if (!metrics_out.empty()) {
    std::ofstream os(metrics_out);
    os << metrics_json(res.metrics, kSceneClassNames).dump(2) << '\n';
  }
  if (!pred_dir.empty()) {
    fs::create_directories(pred_dir);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      PointCloud pred = dataset[i];
      pred.labels = res.scenes[i].labels;
      write_cloud(scene_path(pred_dir, i), pred);
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& filter) {
  int failures = 0;
  for (const GradCase& c : all_grad_cases()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    const GradCheckResult r = c.run();
    std::printf("%-30s %-9s max_rel_err=%.3e tol=%.0e probes=%zu %s\n", c.name.c_str(),
                c.composite ? "composite" : "primitive", r.max_relative_error, r.tol, r.probes,
                r.passed() ? "ok" : "FAILED");
    failures += !r.passed();
  }
  std::printf("%d failure(s)\n", failures);
  return failures ? kExitFailure : kExitOk;
}

int cmd_bench(const Globals& g, const std::vector<std::size_t>& sizes, std::size_t m, double radius) {
  const RunConfig cfg = resolve_config(g);
  std::printf("%10s %12s %14s %12s %14s\n", "points", "knn_ms", "knn_queries/s", "pds_ms", "pds_points/s");
  for (std::size_t n : sizes) {
    SyntheticSceneSpec spec = SyntheticSceneSpec::room();
    spec.density = static_cast<double>(n) / 80.0;  // surface area of the default room is roughly 80 m^2
    const PointCloud cloud = generate_scene(spec, cfg.seed);
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    const NeighborTable nn = knn(cloud, cloud.positions, m);
    auto t1 = clock::now();
    const auto kept = poisson_disk_subsample(cloud, radius, cfg.seed);
    auto t2 = clock::now();
    const double knn_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double pds_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    std::printf("%10zu %12.2f %14.0f %12.2f %14.0f\n", cloud.size(), knn_ms,
                1e3 * static_cast<double>(nn.query_count) / std::max(knn_ms, 1e-9), pds_ms,
                1e3 * static_cast<double>(cloud.size()) / std::max(pds_ms, 1e-9));
    (void)kept;
  }
  return kExitOk;
}

int cmd_ablate(const Globals& g, const std::string& grid, std::optional<std::size_t> scenes,
               std::optional<std::size_t> seeds, std::optional<std::size_t> epochs, std::optional<std::size_t> crops) {
  const RunConfig cfg = resolve_config(g);
  AblationSettings s;
  s.scene = cfg.data.scene;
  s.model = cfg.model;
  s.train = cfg.train;
  s.voting = cfg.voting;
  if (scenes) s.scenes = *scenes;
  if (s.test_scenes >= s.scenes) s.test_scenes = std::max<std::size_t>(1, s.scenes / 4);
  s.seeds.clear();
  for (std::size_t i = 0; i < seeds.value_or(3); ++i) s.seeds.push_back(derive_seed(cfg.seed, 100 + i));
  if (epochs) s.train.epochs = *epochs;
  if (crops) s.train.crops_per_epoch = *crops;
  const AblationProgress progress = [](const std::string& row, std::uint64_t seed, const SegmentationMetrics& m) {
    std::fprintf(stderr, "  %-16s seed %016llx  mIoU %.4f  OA %.4f\n", row.c_str(),
                 static_cast<unsigned long long>(seed), m.miou, m.oa);
  };
  if (grid == "blocks" || grid == "all") {
    const auto rows = run_block_grid(s, progress);
    write_ablation_table(std::cout, "block grid (single branch)", rows);
  }
  if (grid == "fusion" || grid == "all") {
    const auto rows = run_fusion_grid(s, progress);
    write_ablation_table(std::cout, "fusion grid", rows);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acpnet: angle-correlation point convolution toolkit"};
  app.require_subcommand(1);
  Globals globals;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random choice")->capture_default_str();
  app.add_flag("--deterministic", globals.deterministic, "Force sequential reductions (always on in this build)");
  app.add_option("--config", globals.config_path, "JSON run configuration")->check(CLI::ExistingFile);

  std::string preset;
  std::size_t gen_scenes = 1;
  std::optional<double> density;
  std::string gen_out = ".";
  auto* gen = app.add_subcommand("gen", "Write synthetic labeled scenes");
  gen->add_option("--preset", preset, "room | floor | dense-room (default: config data section)");
  gen->add_option("--scenes", gen_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--density", density, "Points per square meter")->check(CLI::PositiveNumber);
  gen->add_option("-o,--out", gen_out, "Output directory");

  std::vector<std::string> train_data;
  std::string ckpt = "model.ckpt", log_path;
  std::optional<std::size_t> epochs, crops;
  std::optional<double> lr;
  auto* tr = app.add_subcommand("train", "Train a segmenter");
  tr->add_option("--data", train_data, "Cloud files (default: generated from config)")->check(CLI::ExistingFile);
  tr->add_option("-o,--out", ckpt, "Checkpoint path; the run config is written next to it");
  tr->add_option("--log", log_path, "Metric log (epoch, step, loss, OA, lr); default stdout");
  tr->add_option("--epochs", epochs);
  tr->add_option("--crops", crops, "Crops per epoch");
  tr->add_option("--lr", lr)->check(CLI::PositiveNumber);

  std::vector<std::string> eval_data;
  std::string eval_ckpt = "model.ckpt", metrics_out, pred_dir;
  auto* ev = app.add_subcommand("eval", "Voting inference and per-class IoU table");
  ev->add_option("--data", eval_data, "Cloud files (default: generated from the model config)")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", eval_ckpt)->check(CLI::ExistingFile);
  ev->add_option("--metrics", metrics_out, "Write full-precision metrics JSON");
  ev->add_option("--predictions", pred_dir, "Directory for predicted-label clouds");

  std::string filter;
  auto* gc = app.add_subcommand("gradcheck", "Run every finite-difference gradient check");
  gc->add_option("--filter", filter, "Only cases whose name contains this text");

  std::vector<std::size_t> sizes{1000, 10000, 100000};
  std::size_t bench_m = 32;
  double bench_r = 0.04;
  auto* bench = app.add_subcommand("bench", "KNN and Poisson-disk throughput");
  bench->add_option("--points", sizes, "Approximate cloud sizes");
  bench->add_option("-m,--neighbors", bench_m)->check(CLI::PositiveNumber);
  bench->add_option("-r,--radius", bench_r)->check(CLI::NonNegativeNumber);

  std::string grid = "all";
  std::optional<std::size_t> ab_scenes, ab_seeds, ab_epochs, ab_crops;
  auto* ab = app.add_subcommand("ablate", "Block-kind and fusion trend grids");
  ab->add_option("--grid", grid)->check(CLI::IsMember({"blocks", "fusion", "all"}));
  ab->add_option("--scenes", ab_scenes);
  ab->add_option("--seeds", ab_seeds, "Number of seeds");
  ab->add_option("--epochs", ab_epochs);
  ab->add_option("--crops", ab_crops);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (seed_opt->count()) globals.seed = seed_value;

  try {
    if (*gen) return cmd_gen(globals, preset, gen_scenes, density, gen_out);
    if (*tr) return cmd_train(globals, train_data, ckpt, log_path, epochs, crops, lr);
    if (*ev) return cmd_eval(globals, eval_data, eval_ckpt, metrics_out, pred_dir);
    if (*gc) return cmd_gradcheck(filter);
    if (*bench) return cmd_bench(globals, sizes, bench_m, bench_r);
    if (*ab) return cmd_ablate(globals, grid, ab_scenes, ab_seeds, ab_epochs, ab_crops);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CloudFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
