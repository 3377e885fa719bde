#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "acpnet/blocks.hpp"
#include "acpnet/gradcheck.hpp"
#include "acpnet/gradsuite.hpp"
#include "oracles.hpp"

using namespace acpnet;

namespace {

ConvSettings wide(std::size_t k = 5) { return ConvSettings{k, 0.6, deg_to_rad(60.0), Aggregation::Sum}; }

Tensor cols(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out(Shape{t.dim(0), end - begin});
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t c = begin; c < end; ++c) out(i, c - begin) = t(i, c);
  return out;
}

Tensor hcat(const std::vector<Tensor>& parts) {
  std::size_t w = 0;
  for (const auto& p : parts) w += p.dim(1);
  Tensor out(Shape{parts[0].dim(0), w});
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.dim(0); ++i)
      for (std::size_t c = 0; c < p.dim(1); ++c) out(i, off + c) = p(i, c);
    off += p.dim(1);
  }
  return out;
}

std::size_t scalars(MSSBlock& b) {
  ParameterSet s;
  b.collect(s, "b");
  return s.scalar_count();
}

std::size_t scalars(BottleneckBlock& b) {
  ParameterSet s;
  b.collect(s, "b");
  return s.scalar_count();
}

}  // namespace

TEST(MSS, ChannelArithmeticClosesAtDPrime) {
  std::mt19937_64 rng(1);
  const auto pos = oracle::random_cloud(12, 1.0, rng);
  const auto nbrs = knn(pos, pos, 4);
  for (std::size_t dp : {16u, 32u, 64u, 128u}) {
    MSSBlock b(8, dp, 24, wide(3), dp);
    const std::size_t q = dp / 4;
    EXPECT_EQ(b.entry.out(), dp);
    EXPECT_EQ(b.conv1.conv.c_in, q);
    EXPECT_EQ(b.conv1.conv.c_out, 2 * q);
    EXPECT_EQ(b.conv2.conv.c_in, 2 * q);
    EXPECT_EQ(b.conv2.conv.c_out, 2 * q);
    EXPECT_EQ(b.conv3.conv.c_in, 2 * q);
    EXPECT_EQ(b.conv3.conv.c_out, q);
    // x1 + y21 + y31 + y4
    EXPECT_EQ(q + q + q + q, dp);
    EXPECT_EQ(b.exit.in(), dp);
    Graph g;
    const Tensor x = gradsuite::random_tensor(Shape{12, 8}, rng);
    EXPECT_EQ(b.forward(g.constant(x), pos, nbrs).shape(), (Shape{12, 24}));
  }
}

TEST(MSS, DPrimeMustBeMultipleOfFour) {
  EXPECT_THROW(MSSBlock(8, 18, 8, wide(), 0), std::invalid_argument);
  EXPECT_THROW(MSSBlock(8, 0, 8, wide(), 0), std::invalid_argument);
}

// Literal walk through the block's dataflow with plain tensor slicing.
TEST(MSS, MatchesDataflowTranscription) {
  std::mt19937_64 rng(2);
  const auto pos = oracle::random_cloud(20, 1.0, rng);
  const auto nbrs = knn(pos, pos, 6);
  MSSBlock b(12, 16, 20, wide(), 3);
  const Tensor x = gradsuite::random_tensor(Shape{20, 12}, rng);

  Graph g;
  const Tensor out = b.forward(g.constant(x), pos, nbrs).value();

  Graph h;
  auto val = [&](Var v) { return v.value(); };
  auto c = [&](const Tensor& t) { return h.constant(t); };
  const Tensor e = val(b.entry.forward(c(x)));
  const Tensor x1 = cols(e, 0, 4), x2 = cols(e, 4, 8), x3 = cols(e, 8, 12), x4 = cols(e, 12, 16);
  const Tensor y2 = val(b.conv1.forward(c(x2), pos, nbrs));
  const Tensor y21 = cols(y2, 0, 4), y22 = cols(y2, 4, 8);
  const Tensor y3 = val(b.conv2.forward(c(hcat({y22, x3})), pos, nbrs));
  const Tensor y31 = cols(y3, 0, 4), y32 = cols(y3, 4, 8);
  const Tensor y4 = val(b.conv3.forward(c(hcat({y32, x4})), pos, nbrs));
  const Tensor main = val(b.exit.forward(c(hcat({x1, y21, y31, y4}))));
  const Tensor res = val(b.residual_proj->forward(c(x)));
  ASSERT_EQ(out.shape(), main.shape());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], main[i] + res[i]);
}

TEST(MSS, ZeroMainBranchLeavesResidual) {
  std::mt19937_64 rng(3);
  const auto pos = oracle::random_cloud(15, 1.0, rng);
  const auto nbrs = knn(pos, pos, 5);
  MSSBlock same(16, 16, 16, wide(), 4);
  same.exit.linear.weight.value.fill(0.0);
  const Tensor x = gradsuite::random_tensor(Shape{15, 16}, rng);
  Graph g;
  g.set_training(false);
  EXPECT_EQ(same.forward(g.constant(x), pos, nbrs).value(), x);

  // zero input as well: the main branch sees only zeros
  MSSBlock proj(8, 16, 12, wide(), 5);
  proj.exit.linear.weight.value.fill(0.0);
  const Tensor x2 = gradsuite::random_tensor(Shape{15, 8}, rng);
  Graph g2;
  g2.set_training(false);
  const Tensor out = proj.forward(g2.constant(x2), pos, nbrs).value();
  const Tensor expect = proj.residual_proj->forward(g2.constant(x2)).value();
  EXPECT_EQ(out, expect);
}

TEST(MSS, ReceptiveFieldOnPathGraph) {
  // points on a line; each point's neighbors are itself and the two adjacent points
  const std::size_t n = 15;
  std::vector<Vec3> pos;
  for (std::size_t i = 0; i < n; ++i) pos.push_back({static_cast<double>(i), 0.0, 0.0});
  const auto nbrs = knn(pos, pos, 3);
  MSSBlock b(4, 8, 4, ConvSettings{3, 1.0, deg_to_rad(30.0), Aggregation::Sum}, 6);
  for (ConvUnit* u : {&b.conv1, &b.conv2, &b.conv3}) u->conv.kernel.set_offsets({{0, 0, 0}, {0.5, 0, 0}, {-0.5, 0, 0}});
  std::mt19937_64 rng(7);
  const Tensor x = gradsuite::random_tensor(Shape{n, 4}, rng);
  auto run = [&](const Tensor& in) {
    Graph g;
    g.set_training(false);  // batch statistics would couple every point
    return b.forward(g.constant(in), pos, nbrs).value();
  };
  const Tensor base = run(x);
  Tensor bumped = x;
  const std::size_t p = 7;
  for (std::size_t c = 0; c < 4; ++c) bumped(p, c) += 1.0;
  const Tensor moved = run(bumped);
  auto changed = [&](std::size_t i) {
    for (std::size_t c = 0; c < 4; ++c)
      if (base(i, c) != moved(i, c)) return true;
    return false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hops = i > p ? i - p : p - i;
    if (hops > 3) {
      EXPECT_FALSE(changed(i)) << "point " << i;
    }
  }
  EXPECT_TRUE(changed(p - 2) || changed(p + 2));
}

TEST(MSS, FewerParametersThanBottleneck) {
  for (std::size_t d : {16u, 32u, 64u, 128u}) {
    MSSBlock m(d, d / 4, d, ConvSettings{15, 1.0, deg_to_rad(30.0), Aggregation::Sum}, 1);
    BottleneckBlock bn(d, d / 4, d, ConvSettings{15, 1.0, deg_to_rad(30.0), Aggregation::Sum}, 1);
    EXPECT_LT(scalars(m), scalars(bn)) << "d = " << d;
  }
}

TEST(Bottleneck, ZeroMainBranchIsIdentity) {
  std::mt19937_64 rng(8);
  const auto pos = oracle::random_cloud(10, 1.0, rng);
  const auto nbrs = knn(pos, pos, 4);
  BottleneckBlock b(8, 2, 8, wide(), 9);
  b.expand.linear.weight.value.fill(0.0);
  const Tensor x = gradsuite::random_tensor(Shape{10, 8}, rng);
  Graph g;
  g.set_training(false);
  EXPECT_EQ(b.forward(g.constant(x), pos, nbrs).value(), x);
}

TEST(Bottleneck, IdentityMlpsAndCenterKernelGiveLinearMap) {
  std::mt19937_64 rng(10);
  const auto pos = oracle::random_cloud(10, 1.0, rng);
  const auto nbrs = knn(pos, pos, 4);
  BottleneckBlock b(3, 3, 3, ConvSettings{1, 1.0, deg_to_rad(30.0), Aggregation::Sum}, 11);
  for (UnitMLP* u : {&b.reduce, &b.expand}) {
    u->linear.weight.value = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    u->activate = false;
  }
  const Tensor x = gradsuite::random_tensor(Shape{10, 3}, rng);
  Graph g;
  g.set_training(false);
  const Tensor y = b.forward(g.constant(x), pos, nbrs).value();
  // fresh eval-mode norms only rescale by 1/sqrt(1 + eps)
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  const Tensor w = b.conv.conv.kernel.weight(0);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double z = 0;
      for (std::size_t c = 0; c < 3; ++c) z += s * x(i, c) * w(c, o);  // reduce, then center kernel
      z *= s;
      z = z > 0 ? z : 0.1 * z;
      EXPECT_NEAR(y(i, o), x(i, o) + s * z, 1e-12);
    }
}

TEST(Bottleneck, ChannelMismatchThrows) {
  std::mt19937_64 rng(12);
  const auto pos = oracle::random_cloud(6, 1.0, rng);
  const auto nbrs = knn(pos, pos, 3);
  BottleneckBlock b(8, 2, 8, wide(), 13);
  Graph g;
  EXPECT_THROW(b.forward(g.constant(Tensor(Shape{6, 5})), pos, nbrs), ShapeError);
}

TEST(Blocks, GradientChecks) {
  std::mt19937_64 rng(14);
  const auto pos = oracle::random_cloud(12, 1.0, rng);
  const auto nbrs = knn(pos, pos, 5);
  Tensor x = gradsuite::random_tensor(Shape{12, 8}, rng);
  MSSBlock m(8, 8, 12, wide(4), 15);
  BottleneckBlock bn(8, 4, 8, wide(4), 16);
  ParameterSet ms, bs;
  m.collect(ms, "m");
  bn.collect(bs, "b");
  auto mt = gradsuite::param_targets(ms);
  mt.insert(mt.begin(), &x);
  auto rm = finite_diff_check([&](Graph& g) { return gradsuite::project(m.forward(g.leaf(x, true), pos, nbrs), 1); },
                              std::span<Tensor* const>(mt), gradsuite::options(kCompositeTolerance, 40));
  EXPECT_LT(rm.max_relative_error, 1e-4);
  auto bt = gradsuite::param_targets(bs);
  bt.insert(bt.begin(), &x);
  auto rb = finite_diff_check([&](Graph& g) { return gradsuite::project(bn.forward(g.leaf(x, true), pos, nbrs), 2); },
                              std::span<Tensor* const>(bt), gradsuite::options(kCompositeTolerance, 40));
  EXPECT_LT(rb.max_relative_error, 1e-4);
}

TEST(Interpolation, MidpointHandWeights) {
  const std::vector<Vec3> coarse{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  const std::vector<Vec3> fine{{0.5, 0, 0}};
  const auto it = interpolation_weights(coarse, fine, 3);
  const double w0 = 1.0 / (0.25 + 1e-8), w1 = 1.0 / (0.25 + 1e-8), w2 = 1.0 / (6.25 + 1e-8);
  const double tot = w0 + w1 + w2;
  ASSERT_EQ(it.indices, (std::vector<Index>{0, 1, 2}));
  EXPECT_NEAR(it.weights[0], w0 / tot, 1e-15);
  EXPECT_NEAR(it.weights[1], w1 / tot, 1e-15);
  EXPECT_NEAR(it.weights[2], w2 / tot, 1e-15);
}

TEST(Interpolation, CoincidentPointCopiesFeature) {
  const std::vector<Vec3> coarse{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  const std::vector<Vec3> fine{{1, 0, 0}};
  Graph g;
  const Tensor f = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  FeaturePropagator prop(3);
  const Tensor out = feature_propagate(coarse, g.constant(f), fine, prop).value();
  EXPECT_EQ(out, Tensor::matrix({{3, 4}}));
}

TEST(Interpolation, ConstantFeaturesStayConstant) {
  std::mt19937_64 rng(15);
  const auto coarse = oracle::random_cloud(30, 1.0, rng);
  const auto fine = oracle::random_cloud(100, 1.0, rng);
  Graph g;
  FeaturePropagator prop(3);
  const Tensor out = feature_propagate(coarse, g.constant(Tensor(Shape{30, 3}, 0.37)), fine, prop).value();
  for (double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Interpolation, WeightsAreConvex) {
  std::mt19937_64 rng(16);
  const auto coarse = oracle::random_cloud(40, 1.0, rng);
  auto fine = oracle::random_cloud(200, 1.0, rng);
  fine.insert(fine.end(), coarse.begin(), coarse.begin() + 5);
  const auto it = interpolation_weights(coarse, fine, 3);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_GE(it.weights[i * 3 + j], 0.0);
      s += it.weights[i * 3 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Interpolation, EmptyCoarseThrows) {
  const std::vector<Vec3> coarse;
  const std::vector<Vec3> fine{{0, 0, 0}};
  EXPECT_THROW(interpolation_weights(coarse, fine, 3), std::invalid_argument);
}
