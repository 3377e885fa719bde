#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "acpnet/cloud_io.hpp"
#include "acpnet/config.hpp"
#include "acpnet/metrics.hpp"
#include "acpnet/report.hpp"
#include "acpnet/synthetic.hpp"

using namespace acpnet;

namespace {

struct Box3 {
  Vec3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  std::size_t n = 0;
  Vec3 extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
};

Box3 class_box(const PointCloud& c, int label) {
  Box3 b;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if ((*c.labels)[i] != label) continue;
    ++b.n;
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::min(b.lo[a], c.positions[i][a]);
      b.hi[a] = std::max(b.hi[a], c.positions[i][a]);
    }
  }
  return b;
}

std::size_t count_label(const PointCloud& c, int label) {
  return static_cast<std::size_t>(std::count(c.labels->begin(), c.labels->end(), label));
}

}  // namespace

TEST(Synthetic, FloorOnlySceneIsFlatFloor) {
  const PointCloud c = generate_scene(SyntheticSceneSpec::floor_only(), 1);
  EXPECT_EQ(c.size(), 400u);  // 4 x 4 m at 25 points per m^2
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ((*c.labels)[i], kFloor);
    EXPECT_NEAR(c.positions[i][2], 0.0, 1e-12);
  }
}

TEST(Synthetic, SameSeedSameScene) {
  const PointCloud a = generate_scene(SyntheticSceneSpec::room(), 11);
  const PointCloud b = generate_scene(SyntheticSceneSpec::room(), 11);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(*a.colors, *b.colors);
  EXPECT_EQ(*a.labels, *b.labels);
  EXPECT_NE(generate_scene(SyntheticSceneSpec::room(), 12).positions, a.positions);
}

TEST(Synthetic, DefaultRoomIsDeskSized) {
  const PointCloud c = generate_scene(SyntheticSceneSpec::room(), 0);
  EXPECT_GT(c.size(), 2000u);
  EXPECT_LT(c.size(), 2500u);
  for (int l = 0; l < static_cast<int>(kSceneClassCount); ++l) EXPECT_GT(count_label(c, l), 0u) << kSceneClassNames[l];
}

// Point counts per class follow surface area x density, with the area measured
// back from the sampled geometry.
TEST(Synthetic, DensityMatchesSurfaceArea) {
  SyntheticSceneSpec spec = SyntheticSceneSpec::preset("dense-room");
  spec.boxes = 1;
  const double rho = 500.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PointCloud c = generate_scene(spec, seed);
    const double X = 4, Y = 4, H = 3;
    auto near = [&](int label, double area) {
      const double expect = area * rho;
      EXPECT_NEAR(static_cast<double>(count_label(c, label)), expect, 0.05 * expect) << kSceneClassNames[label];
    };
    near(kFloor, X * Y);
    near(kCeiling, X * Y);
    near(kWall, 2 * (X + Y) * H);

    const Box3 col = class_box(c, kColumn);
    const double r = (col.extent()[0] + col.extent()[1]) / 4;
    near(kColumn, 2 * std::numbers::pi * r * H);

    const Vec3 be = class_box(c, kBoard).extent();
    const double board_area = std::max(be[0], be[1]) * be[2];
    near(kBoard, board_area);

    const Vec3 xe = class_box(c, kBox).extent();
    near(kBox, xe[0] * xe[1] + 2 * (xe[0] + xe[1]) * xe[2]);

    const double total = 2 * X * Y + 2 * (X + Y) * H + 2 * std::numbers::pi * r * H + board_area +
                         xe[0] * xe[1] + 2 * (xe[0] + xe[1]) * xe[2];
    EXPECT_NEAR(static_cast<double>(c.size()), total * rho, 0.05 * total * rho);
  }
}

TEST(Synthetic, DegenerateSpecsThrow) {
  SyntheticSceneSpec s;
  s.extent = {0, 4, 3};
  EXPECT_THROW(generate_scene(s, 0), std::invalid_argument);
  s.extent = {4, 4, -1};
  EXPECT_THROW(generate_scene(s, 0), std::invalid_argument);
  s = SyntheticSceneSpec{};
  s.density = 0;
  EXPECT_THROW(generate_scene(s, 0), std::invalid_argument);
  s = SyntheticSceneSpec{};
  s.extent = {1, 1, 3};
  EXPECT_THROW(generate_scene(s, 0), std::invalid_argument);
  EXPECT_THROW(SyntheticSceneSpec::preset("castle"), std::invalid_argument);
}

TEST(CloudIo, RoundTripIsExact) {
  const PointCloud c = generate_scene(SyntheticSceneSpec::room(), 4);
  std::stringstream ss;
  write_cloud(ss, c);
  const PointCloud back = read_cloud(ss);
  EXPECT_EQ(back.positions, c.positions);
  EXPECT_EQ(*back.colors, *c.colors);
  EXPECT_EQ(*back.labels, *c.labels);
}

TEST(CloudIo, MissingColumnsStayAbsent) {
  std::istringstream in("ACPCLOUD fields=x,y,z count=2\n0 0 0\n1 2 3\n");
  const PointCloud c = read_cloud(in);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_FALSE(c.labels.has_value());
  EXPECT_FALSE(c.colors.has_value());
  EXPECT_EQ(c.positions[1], (Vec3{1, 2, 3}));
}

TEST(CloudIo, CountMismatchNamesBothCounts) {
  std::istringstream in("ACPCLOUD fields=x,y,z,label count=3\n0 0 0 1\n1 1 1 2\n");
  try {
    read_cloud(in);
    FAIL() << "expected CloudFormatError";
  } catch (const CloudFormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos) << msg;
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
  }
}

TEST(CloudIo, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      read_cloud(in);
    } catch (const CloudFormatError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("ACPCLOUD fields=x,y,z count=2\n0 0 0\n1 x 3\n"), 3u);
  EXPECT_EQ(line_of("ACPCLOUD fields=x,y,z count=2\n0 0\n1 1 3\n"), 2u);
  EXPECT_EQ(line_of("ACPCLOUD fields=x,y,z,label count=1\n0 0 0 1.5\n"), 2u);
  EXPECT_EQ(line_of("PLY\n"), 1u);
  EXPECT_EQ(line_of("ACPCLOUD fields=x,y count=0\n"), 1u);
  EXPECT_EQ(line_of(""), 1u);
}

TEST(Config, JsonRoundTrip) {
  RunConfig r;
  r.seed = 17;
  r.model.fusion = FusionMode::Attention;
  r.model.r2 = 0.5;
  r.model.network.widths = {8, 24};
  r.model.network.block_kind = BlockKind::Bottleneck;
  r.train.epochs = 7;
  r.train.augment.jitter_sigma = 0.02;
  r.voting.stride = 1.25;
  r.data.scenes = 3;
  r.data.scene.density = 12.5;
  const std::string text = nlohmann::json(r).dump();
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(nlohmann::json(back).dump(), text);
  EXPECT_EQ(back.model.r2, std::optional<double>(0.5));
  EXPECT_EQ(back.model.network.block_kind, BlockKind::Bottleneck);
  EXPECT_EQ(back.data.scene.density, 12.5);
}

TEST(Config, MissingKeysKeepDefaultsAndPresetsPatch) {
  const RunConfig r = parse_run_config(R"({"data": {"preset": "floor", "scene": {"density": 10}}})");
  EXPECT_EQ(r.seed, 0u);
  EXPECT_EQ(r.train.lr, 1e-3);
  EXPECT_FALSE(r.data.scene.walls);
  EXPECT_EQ(r.data.scene.density, 10.0);
  EXPECT_EQ(generate_scene(r.data.scene, 0).size(), 160u);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"seed": "seven"})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"fusion": "attentoin"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"network": {"block_kind": 1}}})"), ConfigError);
}

TEST(Config, SampleRunFileParses) {
  const RunConfig r = load_run_config(ACPNET_TEST_DATA "/tiny_run.json");
  EXPECT_EQ(r.seed, 5u);
  EXPECT_EQ(r.model.network.widths, (std::vector<std::size_t>{16, 32}));
  EXPECT_EQ(r.data.scenes, 2u);
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST(Report, JsonIsExactAndTableMatches) {
  const auto m = compute_metrics(ConfusionMatrix::from_rows({{7, 1, 0}, {2, 5, 0}, {0, 0, 0}}));
  const std::array<const char*, 3> names{"a", "b", "c"};
  const auto j = nlohmann::json::parse(metrics_json(m, names).dump());
  EXPECT_EQ(j["miou"].get<double>(), m.miou);
  EXPECT_EQ(j["oa"].get<double>(), m.oa);
  EXPECT_EQ(j["iou"]["a"].get<double>(), *m.iou[0]);
  EXPECT_TRUE(j["iou"]["c"].is_null());

  std::ostringstream os;
  write_metrics_table(os, m, names);
  char expect[32];
  std::snprintf(expect, sizeof expect, "%.2f", 100 * m.miou);
  EXPECT_NE(os.str().find(expect), std::string::npos) << os.str();
  std::snprintf(expect, sizeof expect, "%.2f", 100 * *m.iou[1]);
  EXPECT_NE(os.str().find(expect), std::string::npos);
  EXPECT_NE(os.str().find(" -"), std::string::npos);
}
