#include <gtest/gtest.h>

#include <random>

#include "acpnet/fusion.hpp"
#include "acpnet/gradcheck.hpp"
#include "acpnet/gradsuite.hpp"
#include "oracles.hpp"

using namespace acpnet;

namespace {

Tensor random_probs(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  Tensor p = gradsuite::random_tensor(Shape{n, c}, rng, 0.01, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += p(i, k);
    for (std::size_t k = 0; k < c; ++k) p(i, k) /= s;
  }
  return p;
}

struct Setup {
  std::vector<Vec3> pos;
  NeighborTable nbrs;
  Tensor f1, f2, p1, p2;
  FusionHead head;
};

Setup make(std::size_t n, std::size_t width, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Setup s;
  s.pos = oracle::random_cloud(n, 1.0, rng);
  s.nbrs = knn(s.pos, s.pos, 5);
  s.f1 = gradsuite::random_tensor(Shape{n, width}, rng);
  s.f2 = gradsuite::random_tensor(Shape{n, width}, rng);
  s.p1 = random_probs(n, classes, rng);
  s.p2 = random_probs(n, classes, rng);
  s.head = FusionHead(width, classes, ConvSettings{4, 0.6, deg_to_rad(60.0), Aggregation::Sum}, seed + 1);
  return s;
}

Tensor fuse(Setup& s) {
  Graph g;
  return attention_fuse(g.constant(s.f1), g.constant(s.f2), g.constant(s.p1), g.constant(s.p2), s.pos, s.nbrs, s.head)
      .value();
}

}  // namespace

TEST(AttentionFuse, ZeroLogitsEqualAverage) {
  auto s = make(12, 4, 3, 1);
  s.head.attention_conv.kernel.weights.value.fill(0.0);
  Graph g;
  const Tensor avg = average_fuse(g.constant(s.p1), g.constant(s.p2)).value();
  const Tensor att = fuse(s);
  for (std::size_t i = 0; i < avg.size(); ++i) EXPECT_LE(std::abs(avg[i] - att[i]), 1e-12);
}

TEST(AttentionFuse, SaturatedFirstBranchGivesFirstProbs) {
  auto s = make(8, 2, 3, 2);
  // constant features and a center kernel that pushes slot 1 logits far above slot 2
  for (auto* f : {&s.f1, &s.f2}) f->fill(1.0);
  auto& w = s.head.attention_conv.kernel.weights.value;
  w.fill(0.0);
  const std::size_t cin = 4, cout = 6;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t o = 0; o < 3; ++o) w[(0 * cin + c) * cout + o] = 100.0;
  const Tensor out = fuse(s);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], s.p1[i], 1e-12);
}

TEST(AttentionFuse, MatchesScalarLoop) {
  auto s = make(10, 3, 4, 3);
  Graph g;
  const Tensor logits =
      acpconv_forward(concat({g.constant(s.f1), g.constant(s.f2)}, 1), s.pos, s.nbrs, s.head.attention_conv).value();
  const Tensor out = fuse(s);
  for (std::size_t i = 0; i < 10; ++i) {
    double row[4], total = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double l1 = logits(i, c), l2 = logits(i, 4 + c);
      const double a1 = std::exp(l1) / (std::exp(l1) + std::exp(l2));
      const double a2 = std::exp(l2) / (std::exp(l1) + std::exp(l2));
      EXPECT_NEAR(a1 + a2, 1.0, 1e-15);
      row[c] = a1 * s.p1(i, c) + a2 * s.p2(i, c);
      total += row[c];
    }
    double out_sum = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out(i, c), row[c] / total, 1e-12);
      out_sum += out(i, c);
    }
    EXPECT_NEAR(out_sum, 1.0, 1e-12);
  }
}

TEST(AttentionFuse, ScoresSumToOneAndReweightIsConvex) {
  auto s = make(40, 3, 5, 4);
  Graph g;
  const auto a = attention_scores(g.constant(s.f1), g.constant(s.f2), s.pos, s.nbrs, s.head);
  const Tensor& a1 = a.first.value();
  const Tensor& a2 = a.second.value();
  for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_NEAR(a1[i] + a2[i], 1.0, 1e-15);
  const Tensor mixed = attention_reweight(a, g.constant(s.p1), g.constant(s.p2)).value();
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    EXPECT_GE(mixed[i], std::min(s.p1[i], s.p2[i]) - 1e-15);
    EXPECT_LE(mixed[i], std::max(s.p1[i], s.p2[i]) + 1e-15);
  }
}

TEST(AttentionFuse, AgreeingArgmaxSurvivesUniformAttention) {
  // with class-independent attention the fused row is a convex mix of the rows
  auto s = make(50, 3, 4, 5);
  s.head.attention_conv.kernel.weights.value.fill(0.0);
  const Tensor out = fuse(s);
  auto argmax = [](const Tensor& t, std::size_t i) {
    std::size_t b = 0;
    for (std::size_t c = 1; c < t.dim(1); ++c)
      if (t(i, c) > t(i, b)) b = c;
    return b;
  };
  for (std::size_t i = 0; i < 50; ++i)
    if (argmax(s.p1, i) == argmax(s.p2, i)) {
      EXPECT_EQ(argmax(out, i), argmax(s.p1, i));
    }
}

TEST(AttentionFuse, ShapeMismatchThrows) {
  auto s = make(10, 3, 4, 6);
  Graph g;
  std::mt19937_64 rng(1);
  EXPECT_THROW(attention_fuse(g.constant(s.f1), g.constant(gradsuite::random_tensor(Shape{10, 2}, rng)),
                              g.constant(s.p1), g.constant(s.p2), s.pos, s.nbrs, s.head),
               ShapeError);
  EXPECT_THROW(attention_fuse(g.constant(s.f1), g.constant(s.f2), g.constant(s.p1),
                              g.constant(random_probs(10, 3, rng)), s.pos, s.nbrs, s.head),
               ShapeError);
}

TEST(AttentionFuse, GradientThroughHead) {
  auto s = make(10, 3, 3, 7);
  auto r = finite_diff_check(
      [&](Graph& g) {
        return gradsuite::project(attention_fuse(g.leaf(s.f1, true), g.leaf(s.f2, true), g.leaf(s.p1, true),
                                                 g.leaf(s.p2, true), s.pos, s.nbrs, s.head),
                                  3);
      },
      {&s.f1, &s.f2, &s.p1, &s.p2, &s.head.attention_conv.kernel.weights.value},
      gradsuite::options(kCompositeTolerance));
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(AverageFuse, Examples) {
  Graph g;
  const Tensor p = Tensor::matrix({{0.2, 0.8}, {0.5, 0.5}});
  EXPECT_EQ(average_fuse(g.constant(p), g.constant(p)).value(), p);
  EXPECT_EQ(average_fuse(g.constant(Tensor::matrix({{1, 0}})), g.constant(Tensor::matrix({{0, 1}}))).value(),
            Tensor::matrix({{0.5, 0.5}}));
  std::mt19937_64 rng(8);
  const Tensor out = average_fuse(g.constant(random_probs(30, 6, rng)), g.constant(random_probs(30, 6, rng))).value();
  for (std::size_t i = 0; i < 30; ++i) {
    double t = 0;
    for (std::size_t c = 0; c < 6; ++c) t += out(i, c);
    EXPECT_NEAR(t, 1.0, 1e-12);
  }
}

TEST(BranchRadii, DefaultsAndOverride) {
  EXPECT_DOUBLE_EQ(BranchRadii::from(0.04).first, 0.04);
  EXPECT_DOUBLE_EQ(BranchRadii::from(0.04).second, 0.08);
  EXPECT_DOUBLE_EQ(BranchRadii::from(0.08).second, 0.16);
  EXPECT_DOUBLE_EQ(BranchRadii::from(0.08, 0.12).second, 0.12);
}

TEST(TwoBranch, IdenticalBranchesReduceToSingle) {
  NetworkConfig c;
  c.num_streams = 2;
  c.blocks_per_stage = 1;
  c.widths = {8, 16};
  c.block_ratio = 2;
  c.num_classes = 4;
  c.in_channels = 3;
  c.kernels = 5;
  c.neighbors = 6;
  c.base_radius = 0.15;
  auto net = make_network(c);
  FusionHead head(8, 4, c.conv_settings(0), 3);
  head.attention_conv.kernel.weights.value.fill(0.0);
  std::mt19937_64 rng(9);
  const auto pts = oracle::random_cloud(40, 1.0, rng);
  const Tensor x = gradsuite::random_tensor(Shape{40, 3}, rng);

  Graph g;
  g.set_training(false);
  const auto r = run_two_branch(g, pts, g.constant(x), *net, *net, BranchRadii::from(0.15, 0.15),
                                FusionMode::Attention, &head, 5);
  const Tensor& single = r.probs1.value();
  EXPECT_EQ(r.probs1.value(), r.probs2.value());
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(r.fused.value()[i], single[i], 1e-12);
}
