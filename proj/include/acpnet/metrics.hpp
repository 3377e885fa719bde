#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace acpnet {

/// Class-by-class counts; row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0)
      : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.size()) throw std::invalid_argument("ConfusionMatrix: matrix must be square");
      for (std::size_t p = 0; p < rows.size(); ++p) cm.counts_[t * cm.n_ + p] = rows[t][p];
    }
    return cm;
  }

  std::size_t num_classes() const noexcept { return n_; }

  void add(int truth, int pred, std::uint64_t count = 1) {
    check(truth);
    check(pred);
    counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(pred)] += count;
  }

  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_.at(truth * n_ + pred); }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

 private:
  void check(int c) const {
    if (c < 0 || static_cast<std::size_t>(c) >= n_) {
      throw std::out_of_range("ConfusionMatrix: class " + std::to_string(c) + " outside [0, " + std::to_string(n_) + ")");
    }
  }

  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct SegmentationMetrics {
  double miou = 0.0;
  double oa = 0.0;
  /// IoU per class; empty for classes absent from both truth and prediction.
  std::vector<std::optional<double>> iou;
};

/// IoU_c = TP / (TP + FP + FN). Classes with 0/0 are left out of the mean;
/// classes present in the truth but never predicted count as 0.
inline SegmentationMetrics compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.num_classes();
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
  SegmentationMetrics m;
  m.iou.resize(n);
  std::uint64_t trace = 0;
  double iou_sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const std::uint64_t tp = cm(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += cm(o, c);
      fn += cm(c, o);
    }
    trace += tp;
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    m.iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
    iou_sum += *m.iou[c];
    ++included;
  }
  m.oa = static_cast<double>(trace) / static_cast<double>(total);
  m.miou = included ? iou_sum / static_cast<double>(included) : 0.0;
  return m;
}

}  // namespace acpnet
