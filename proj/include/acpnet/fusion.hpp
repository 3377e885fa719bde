#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "acpnet/acpconv.hpp"
#include "acpnet/network.hpp"

namespace acpnet {

/// Predicts per-point, per-class attention logits for two branches.
struct FusionHead {
  ACPConvLayer attention_conv;  // 2 * feature_width -> 2 * num_classes
  std::size_t num_classes = 0;

  FusionHead() = default;
  FusionHead(std::size_t feature_width, std::size_t classes, const ConvSettings& s, std::uint64_t seed)
      : attention_conv(2 * feature_width, 2 * classes, s.kernels, s.scale, s.theta_t, seed, s.aggregation),
        num_classes(classes) {}

  void collect(ParameterSet& set, const std::string& prefix) { attention_conv.collect(set, prefix + ".attention"); }
};

struct AttentionWeights {
  Var first;   ///< a1, (N, C)
  Var second;  ///< a2 = 1 - a1
};

/// Softmax over the two branch slots for every (point, class): a1 = sigmoid(l1 - l2).
inline AttentionWeights attention_scores(Var feats1, Var feats2, std::span<const Vec3> positions,
                                         const NeighborTable& nbrs, FusionHead& head) {
  const Var logits = acpconv_forward(concat({feats1, feats2}, 1), positions, nbrs, head.attention_conv);
  const auto slots = split_even(logits, 2, 1);
  const Var a1 = sigmoid(sub(slots[0], slots[1]));
  return {a1, affine(a1, -1.0, 1.0)};
}

/// a1 * probs1 + a2 * probs2 before row renormalization. Every entry lies
/// between the two branch probabilities it mixes.
inline Var attention_reweight(const AttentionWeights& a, Var probs1, Var probs2) {
  return add(mul(a.first, probs1), mul(a.second, probs2));
}

/// Attentional fusion of two branch probability maps on the same point set.
inline Var attention_fuse(Var feats1, Var feats2, Var probs1, Var probs2, std::span<const Vec3> positions,
                          const NeighborTable& nbrs, FusionHead& head) {
  if (feats1.shape() != feats2.shape()) throw ShapeError("attention_fuse: features", feats1.shape(), feats2.shape());
  if (probs1.shape() != probs2.shape()) throw ShapeError("attention_fuse: probabilities", probs1.shape(), probs2.shape());
  if (probs1.shape().size() != 2 || probs1.shape()[1] != head.num_classes || probs1.shape()[0] != feats1.shape()[0]) {
    throw ShapeError("attention_fuse: probabilities vs head", probs1.shape(), Shape{feats1.shape()[0], head.num_classes});
  }
  const AttentionWeights a = attention_scores(feats1, feats2, positions, nbrs, head);
  return normalize_rows(attention_reweight(a, probs1, probs2));
}

inline Var average_fuse(Var probs1, Var probs2) { return scale(add(probs1, probs2), 0.5); }

enum class FusionMode { Single, Average, Attention };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Single: return "single";
    case FusionMode::Average: return "average";
    case FusionMode::Attention: return "attention";
  }
  return "?";
}

struct BranchRadii {
  double first = 0.04;
  double second = 0.08;

  /// r2 = 2 r1 unless explicitly overridden.
  static BranchRadii from(double r1, std::optional<double> r2 = std::nullopt) {
    return {r1, r2.value_or(2.0 * r1)};
  }
};

struct TwoBranchResult {
  Var fused;
  Var probs1, probs2;
  NetworkOutput branch1, branch2;
};

/// Runs the network(s) on two pyramids of the same crop built with radii
/// (r1, r2) and fuses the level-0 predictions. `net2` may alias `net1`
/// (shared weights). `head` is required for attention fusion.
inline TwoBranchResult run_two_branch(Graph& g, std::span<const Vec3> crop, Var input, SegmentationNetwork& net1,
                                      SegmentationNetwork& net2, const BranchRadii& radii, FusionMode mode,
                                      FusionHead* head, std::uint64_t seed = 0,
                                      const ResolutionPyramid* prebuilt1 = nullptr,
                                      const ResolutionPyramid* prebuilt2 = nullptr) {
  const auto& c = net1.config();
  std::optional<ResolutionPyramid> own1, own2;
  if (!prebuilt1) own1 = build_pyramid(crop, radii.first, c.num_streams, c.neighbors, seed, c.k_interp);
  if (!prebuilt2) own2 = build_pyramid(crop, radii.second, net2.config().num_streams, net2.config().neighbors, seed, net2.config().k_interp);
  const ResolutionPyramid& p1 = prebuilt1 ? *prebuilt1 : *own1;
  const ResolutionPyramid& p2 = prebuilt2 ? *prebuilt2 : *own2;

  TwoBranchResult r;
  r.branch1 = net1.forward(g, p1, input);
  r.branch2 = net2.forward(g, p2, input);
  r.probs1 = softmax(r.branch1.logits);
  r.probs2 = softmax(r.branch2.logits);
  switch (mode) {
    case FusionMode::Single: r.fused = r.probs1; break;
    case FusionMode::Average: r.fused = average_fuse(r.probs1, r.probs2); break;
    case FusionMode::Attention:
      if (!head) throw std::invalid_argument("run_two_branch: attention fusion needs a FusionHead");
      r.fused = attention_fuse(r.branch1.features, r.branch2.features, r.probs1, r.probs2, p1[0].positions,
                               p1[0].neighbors, *head);
      break;
  }
  return r;
}

}  // namespace acpnet
