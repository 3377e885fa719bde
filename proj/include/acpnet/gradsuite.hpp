#pragma once

// The shipped finite-difference suite: one check per primitive and per
// composite layer. Used by the test binaries and by `acpnet gradcheck`.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "acpnet/blocks.hpp"
#include "acpnet/fusion.hpp"
#include "acpnet/gradcheck.hpp"
#include "acpnet/layers.hpp"
#include "acpnet/network.hpp"
#include "acpnet/ops.hpp"

namespace acpnet {

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kCompositeTolerance = 1e-4;

struct GradCase {
  std::string name;
  bool composite = false;
  std::function<GradCheckResult()> run;
};

namespace gradsuite {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Random positions in a cube; collisions have probability zero.
inline std::vector<Vec3> random_points(std::size_t n, double side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Vec3> p(n);
  for (Vec3& v : p) v = {u(rng), u(rng), u(rng)};
  return p;
}

/// sum(y * R) for a fixed random R so upstream gradients are not uniform.
inline Var project(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Graph& g = y.graph();
  return sum(mul(y, g.constant(random_tensor(y.shape(), rng))));
}

/// Keeps probes of target `t` at least `margin` away from zero.
inline std::function<bool(std::size_t, std::size_t)> away_from_zero(const Tensor& x, std::size_t t, double margin) {
  return [&x, t, margin](std::size_t target, std::size_t coord) {
    return target != t || std::abs(x[coord]) > margin;
  };
}

inline GradCheckOptions options(double tol, std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.h = 1e-5;
  o.tol = tol;
  o.max_coords_per_target = max_coords;
  return o;
}

/// Everything a composite check needs about one point set.
struct Patch {
  std::vector<Vec3> positions;
  NeighborTable nbrs;
};

inline Patch random_patch(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  Patch p{random_points(n, 1.0, rng), {}};
  p.nbrs = knn(p.positions, p.positions, m);
  return p;
}

inline std::vector<Tensor*> param_targets(const ParameterSet& set) {
  std::vector<Tensor*> out;
  for (const auto& [name, p] : set.items())
    if (p->trainable) out.push_back(&p->value);
  return out;
}

}  // namespace gradsuite

inline std::vector<GradCase> primitive_grad_cases() {
  using namespace gradsuite;
  const double tol = kPrimitiveTolerance;
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, std::function<Var(Var)> f, double lo, double hi, double kink_margin = -1.0) {
    cases.push_back({name, false, [f, lo, hi, kink_margin, tol, name] {
                       std::mt19937_64 rng(std::hash<std::string>{}(name));
                       Tensor x = random_tensor({4, 5}, rng, lo, hi);
                       auto opt = options(tol);
                       if (kink_margin > 0) opt.probe = away_from_zero(x, 0, kink_margin);
                       return finite_diff_check([&](Graph& g) { return project(f(g.leaf(x, true)), 7); }, {&x}, opt);
                     }});
  };
  auto binary = [&](std::string name, std::function<Var(Var, Var)> f, Shape sa, Shape sb) {
    cases.push_back({name, false, [f, sa, sb, tol, name] {
                       std::mt19937_64 rng(std::hash<std::string>{}(name));
                       Tensor a = random_tensor(sa, rng), b = random_tensor(sb, rng);
                       return finite_diff_check(
                           [&](Graph& g) { return project(f(g.leaf(a, true), g.leaf(b, true)), 8); }, {&a, &b},
                           options(tol));
                     }});
  };

  binary("add", [](Var a, Var b) { return add(a, b); }, {3, 4}, {3, 4});
  binary("sub", [](Var a, Var b) { return sub(a, b); }, {3, 4}, {3, 4});
  binary("mul", [](Var a, Var b) { return mul(a, b); }, {3, 4}, {3, 4});
  binary("matmul", [](Var a, Var b) { return matmul(a, b); }, {3, 4}, {4, 5});
  binary("add_bias", [](Var a, Var b) { return add_bias(a, b); }, {3, 4}, {4});
  binary("concat_axis0", [](Var a, Var b) { return concat({a, b}, 0); }, {2, 3}, {4, 3});
  binary("concat_axis1", [](Var a, Var b) { return concat({a, b}, 1); }, {3, 2}, {3, 4});
  unary("affine", [](Var x) { return affine(x, -1.7, 0.3); }, -1, 1);
  unary("relu", [](Var x) { return relu(x); }, -1, 1, 0.1);
  unary("leaky_relu", [](Var x) { return leaky_relu(x, kLeakySlope); }, -1, 1, 0.1);
  unary("sigmoid", [](Var x) { return sigmoid(x); }, -3, 3);
  unary("exp", [](Var x) { return acpnet::exp(x); }, -2, 2);
  unary("log", [](Var x) { return acpnet::log(x); }, 0.5, 2.0);
  unary("split_axis0", [](Var x) { auto p = split(x, {1, 3}, 0); return concat({p[1], p[0]}, 0); }, -1, 1);
  unary("split_axis1", [](Var x) { auto p = split(x, {2, 3}, 1); return mul(p[0], slice(p[1], 1, 0, 2)); }, -1, 1);
  unary("reshape", [](Var x) { return matmul(reshape(x, {10, 2}), x.graph().constant(Tensor::matrix({{1, 2}, {3, -1}}))); }, -1, 1);
  unary("gather_rows", [](Var x) { return gather_rows(x, {3, 0, 0, 2, 1, 3}); }, -1, 1);
  unary("scatter_add_rows", [](Var x) { return scatter_add_rows(x, {2, 0, 2, 1}, 3); }, -1, 1);
  unary("weighted_gather", [](Var x) { return weighted_gather(x, {0, 1, 3, 2, 2, 0}, {0.2, 0.5, 0.3, 1.0, -0.4, 0.7}, 3); }, -1, 1);
  unary("group_max", [](Var x) { return group_max(x, 2); }, -1, 1);
  unary("softmax", [](Var x) { return softmax(x); }, -2, 2);
  unary("normalize_rows", [](Var x) { return normalize_rows(x); }, 0.5, 2.0);
  unary("sum", [](Var x) { return mul(sum(x), sum(x)); }, -1, 1);
  unary("mean", [](Var x) { return mul(mean(x), mean(x)); }, -1, 1);

  for (bool train : {true, false}) {
    std::string name = train ? "batch_norm_train" : "batch_norm_eval";
    cases.push_back({name, false, [train, tol] {
                       std::mt19937_64 rng(train ? 11 : 12);
                       Tensor x = random_tensor({6, 3}, rng), gamma = random_tensor({3}, rng, 0.5, 1.5),
                              beta = random_tensor({3}, rng);
                       Tensor rm = random_tensor({3}, rng), rv = random_tensor({3}, rng, 0.5, 1.5);
                       return finite_diff_check(
                           [&](Graph& g) {
                             g.set_training(train);
                             Tensor m = rm, v = rv;
                             return project(batch_norm(g.leaf(x, true), g.leaf(gamma, true), g.leaf(beta, true), m, v), 9);
                           },
                           {&x, &gamma, &beta}, options(tol));
                     }});
  }
  cases.push_back({"cross_entropy", false, [tol] {
                     std::mt19937_64 rng(13);
                     Tensor p = random_tensor({5, 4}, rng, 0.2, 1.0);
                     const std::vector<int> labels{0, 3, kIgnoreLabel, 1, 2};
                     return finite_diff_check([&](Graph& g) { return cross_entropy(g.leaf(p, true), labels); }, {&p},
                                              options(tol));
                   }});
  cases.push_back({"softmax_cross_entropy", false, [tol] {
                     std::mt19937_64 rng(14);
                     Tensor z = random_tensor({5, 4}, rng, -2, 2);
                     const std::vector<int> labels{2, 0, 1, 3, 3};
                     return finite_diff_check([&](Graph& g) { return softmax_cross_entropy(g.leaf(z, true), labels); },
                                              {&z}, options(tol));
                   }});
  for (bool pooled : {true, false}) {
    cases.push_back({pooled ? "kernel_aggregate_pooled" : "kernel_aggregate_per_neighbor", false, [pooled, tol] {
                       std::mt19937_64 rng(pooled ? 15 : 16);
                       const Patch p = random_patch(8, 4, rng);
                       const KernelSet ks = init_kernels(5, 0.6, deg_to_rad(60.0), 1, 1, 3);
                       auto table = std::make_shared<const CorrelationTable>(build_correlation_table(p.positions, p.nbrs, ks));
                       Tensor f = random_tensor({8, 3}, rng);
                       return finite_diff_check([&](Graph& g) { return project(kernel_aggregate(g.leaf(f, true), table, pooled), 10); },
                                                {&f}, options(tol));
                     }});
  }
  return cases;
}

inline std::vector<GradCase> composite_grad_cases() {
  using namespace gradsuite;
  const double tol = kCompositeTolerance;
  std::vector<GradCase> cases;

  cases.push_back({"linear", true, [] {
                     std::mt19937_64 rng(21);
                     Linear lin(4, 3, 5);
                     Tensor x = random_tensor({6, 4}, rng);
                     lin.bias.value = random_tensor({3}, rng);
                     return finite_diff_check([&](Graph& g) { return project(lin.forward(g.leaf(x, true)), 1); },
                                              {&x, &lin.weight.value, &lin.bias.value}, options(kPrimitiveTolerance));
                   }});
  cases.push_back({"unit_mlp", true, [tol] {
                     std::mt19937_64 rng(22);
                     UnitMLP mlp(4, 3, 6);
                     Tensor x = random_tensor({7, 4}, rng);
                     ParameterSet set;
                     mlp.collect(set, "mlp");
                     auto t = param_targets(set);
                     t.push_back(&x);
                     return finite_diff_check([&](Graph& g) { return project(mlp.forward(g.leaf(x, true)), 2); }, t,
                                              options(tol));
                   }});
  for (Aggregation agg : {Aggregation::Sum, Aggregation::Mean, Aggregation::Max}) {
    cases.push_back({std::string("acpconv_") + to_string(agg), true, [agg, tol] {
                       std::mt19937_64 rng(23 + static_cast<int>(agg));
                       const Patch p = random_patch(10, 5, rng);
                       ACPConvLayer layer(3, 4, 6, 0.8, deg_to_rad(60.0), 17, agg);
                       Tensor f = random_tensor({10, 3}, rng);
                       return finite_diff_check(
                           [&](Graph& g) { return project(acpconv_forward(g.leaf(f, true), p.positions, p.nbrs, layer), 3); },
                           {&f, &layer.kernel.weights.value}, options(tol));
                     }});
  }
  auto block_case = [&](std::string name, auto make) {
    cases.push_back({name, true, [make, tol, name] {
                       std::mt19937_64 rng(std::hash<std::string>{}(name));
                       const Patch p = random_patch(20, 6, rng);
                       auto block = make();
                       Tensor x = random_tensor({20, block.d_in}, rng);
                       ParameterSet set;
                       block.collect(set, "b");
                       auto t = param_targets(set);
                       t.push_back(&x);
                       return finite_diff_check(
                           [&](Graph& g) { return project(block.forward(g.leaf(x, true), p.positions, p.nbrs), 4); }, t,
                           options(tol));
                     }});
  };
  const ConvSettings cs{6, 0.8, deg_to_rad(60.0), Aggregation::Sum};
  block_case("mss_block", [cs] { return MSSBlock(8, 8, 8, cs, 31); });
  block_case("mss_block_projected", [cs] { return MSSBlock(6, 8, 10, cs, 32); });
  block_case("bottleneck_block", [cs] { return BottleneckBlock(8, 2, 8, cs, 33); });
  cases.push_back({"feature_propagate", true, [tol] {
                     std::mt19937_64 rng(34);
                     const auto coarse = random_points(6, 1.0, rng), fine = random_points(15, 1.0, rng);
                     FeaturePropagator prop(3, 4, 5, 35);
                     Tensor f = random_tensor({6, 4}, rng);
                     ParameterSet set;
                     prop.collect(set, "fp");
                     auto t = param_targets(set);
                     t.push_back(&f);
                     return finite_diff_check(
                         [&](Graph& g) { return project(feature_propagate(coarse, g.leaf(f, true), fine, prop), 5); }, t,
                         options(tol));
                   }});
  for (Architecture arch : {Architecture::HRNet, Architecture::UNet}) {
    cases.push_back({std::string(to_string(arch)) + "_forward", true, [arch, tol] {
                       std::mt19937_64 rng(36 + static_cast<int>(arch));
                       const auto pts = random_points(30, 1.0, rng);
                       NetworkConfig c = NetworkConfig::desk();
                       c.architecture = arch;
                       c.num_streams = 2;
                       c.widths = {8, 16};
                       c.blocks_per_stage = 1;
                       c.block_ratio = 2;
                       c.kernels = 5;
                       c.neighbors = 6;
                       c.base_radius = 0.15;
                       c.in_channels = 3;
                       c.num_classes = 4;
                       c.seed = 37;
                       const auto pyr = build_pyramid(pts, c.base_radius, c.num_streams, c.neighbors, 1);
                       auto net = make_network(c);
                       Tensor x = random_tensor({30, 3}, rng);
                       const std::vector<int> labels = [&] {
                         std::vector<int> l(30);
                         for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<int>(i % 4);
                         return l;
                       }();
                       ParameterSet set = net->parameters();
                       auto t = param_targets(set);
                       t.push_back(&x);
                       return finite_diff_check(
                           [&](Graph& g) { return softmax_cross_entropy(net->forward(g, pyr, g.leaf(x, true)).logits, labels); },
                           t, options(tol));
                     }});
  }
  cases.push_back({"fusion_head", true, [tol] {
                     std::mt19937_64 rng(38);
                     const Patch p = random_patch(10, 5, rng);
                     FusionHead head(3, 4, ConvSettings{5, 0.8, deg_to_rad(60.0), Aggregation::Sum}, 39);
                     Tensor f1 = random_tensor({10, 3}, rng), f2 = random_tensor({10, 3}, rng);
                     Tensor z1 = random_tensor({10, 4}, rng, -2, 2), z2 = random_tensor({10, 4}, rng, -2, 2);
                     const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
                     return finite_diff_check(
                         [&](Graph& g) {
                           const Var fused = attention_fuse(g.leaf(f1, true), g.leaf(f2, true), softmax(g.leaf(z1, true)),
                                                            softmax(g.leaf(z2, true)), p.positions, p.nbrs, head);
                           return cross_entropy(fused, labels);
                         },
                         {&f1, &f2, &z1, &z2, &head.attention_conv.kernel.weights.value}, options(tol));
                   }});
  return cases;
}

inline std::vector<GradCase> all_grad_cases() {
  auto cases = primitive_grad_cases();
  for (auto& c : composite_grad_cases()) cases.push_back(std::move(c));
  return cases;
}

}  // namespace acpnet
