#pragma once

// Slow, literal reference implementations used only by the tests. They share
// no code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "acpnet/geometry.hpp"
#include "acpnet/metrics.hpp"
#include "acpnet/tensor.hpp"

namespace oracle {

using acpnet::Index;
using acpnet::Tensor;
using acpnet::Vec3;

inline double dist2(const Vec3& a, const Vec3& b) {
  double s = 0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Full sort of every (distance, index) pair per query.
inline std::vector<std::vector<Index>> knn(const std::vector<Vec3>& src, const std::vector<Vec3>& q, std::size_t m) {
  std::vector<std::vector<Index>> rows;
  for (const Vec3& p : q) {
    std::vector<std::tuple<double, Index>> all;
    for (std::size_t i = 0; i < src.size(); ++i) all.emplace_back(dist2(p, src[i]), static_cast<Index>(i));
    std::sort(all.begin(), all.end());
    std::vector<Index> row;
    for (std::size_t j = 0; j < m; ++j) row.push_back(std::get<1>(all[j < all.size() ? j : 0]));  // pad with nearest
    rows.push_back(row);
  }
  return rows;
}

struct PdsReport {
  double min_accepted_distance = INFINITY;
  double max_rejected_gap = 0.0;  ///< max over rejected points of distance to the nearest accepted point
};

inline PdsReport check_pds(const std::vector<Vec3>& pts, const std::vector<Index>& accepted) {
  PdsReport r;
  std::vector<bool> is_acc(pts.size(), false);
  for (Index a : accepted) is_acc[static_cast<std::size_t>(a)] = true;
  for (std::size_t i = 0; i < accepted.size(); ++i)
    for (std::size_t j = i + 1; j < accepted.size(); ++j)
      r.min_accepted_distance = std::min(
          r.min_accepted_distance,
          std::sqrt(dist2(pts[static_cast<std::size_t>(accepted[i])], pts[static_cast<std::size_t>(accepted[j])])));
  for (std::size_t q = 0; q < pts.size(); ++q) {
    if (is_acc[q]) continue;
    double best = INFINITY;
    for (Index a : accepted) best = std::min(best, std::sqrt(dist2(pts[q], pts[static_cast<std::size_t>(a)])));
    r.max_rejected_gap = std::max(r.max_rejected_gap, best);
  }
  return r;
}

/// Angle-based correlation: theta computed with acos, compared with the threshold.
inline double corr(const Vec3& v, const Vec3& u, std::size_t k, double theta_t) {
  const double nv = std::sqrt(dist2(v, {0, 0, 0}));
  if (k == 0) return nv == 0.0 ? 1.0 : 0.0;
  const double nu = std::sqrt(dist2(u, {0, 0, 0}));
  if (nv == 0.0 || nu == 0.0) return 0.0;
  const double c = (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) / (nv * nu);
  const double theta = std::acos(std::clamp(c, -1.0, 1.0));
  return theta < theta_t ? std::cos(theta) : 0.0;
}

enum class Agg { Sum, Mean, Max };

/// out[i][o] = F_j sum_k corr(p_j - p_i, u_k) sum_c f[j][c] W[k][c][o]
inline std::vector<std::vector<double>> acpconv(const std::vector<std::vector<double>>& f, const std::vector<Vec3>& pos,
                                                const std::vector<std::vector<Index>>& nbrs,
                                                const std::vector<Vec3>& offsets, double theta_t,
                                                const Tensor& w /* (K, Cin, Cout) */, Agg agg) {
  const std::size_t n = pos.size(), K = offsets.size(), cin = w.dim(1), cout = w.dim(2);
  std::vector<std::vector<double>> out(n, std::vector<double>(cout, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < cout; ++o) {
      std::vector<double> per;
      for (Index jj : nbrs[i]) {
        const std::size_t j = static_cast<std::size_t>(jj);
        const Vec3 v{pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2]};
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const double c = corr(v, offsets[k], k, theta_t);
          for (std::size_t q = 0; q < cin; ++q) s += c * f[j][q] * w[(k * cin + q) * cout + o];
        }
        per.push_back(s);
      }
      double r = 0.0;
      if (agg == Agg::Max) {
        r = *std::max_element(per.begin(), per.end());
      } else {
        for (double x : per) r += x;
        if (agg == Agg::Mean) r /= static_cast<double>(per.size());
      }
      out[i][o] = r;
    }
  }
  return out;
}

struct Metrics {
  double miou, oa;
  std::vector<std::optional<double>> iou;
};

inline Metrics metrics(const std::vector<std::vector<std::uint64_t>>& cm) {
  const std::size_t n = cm.size();
  Metrics m{0, 0, std::vector<std::optional<double>>(n)};
  double total = 0, diag = 0, sum = 0;
  int count = 0;
  for (std::size_t c = 0; c < n; ++c) {
    double row = 0, col = 0;
    for (std::size_t o = 0; o < n; ++o) {
      row += static_cast<double>(cm[c][o]);
      col += static_cast<double>(cm[o][c]);
      total += static_cast<double>(cm[c][o]);
    }
    const double tp = static_cast<double>(cm[c][c]);
    diag += tp;
    const double uni = row + col - tp;
    if (uni > 0) {
      m.iou[c] = tp / uni;
      sum += *m.iou[c];
      ++count;
    }
  }
  m.oa = diag / total;
  m.miou = count ? sum / count : 0.0;
  return m;
}

inline std::vector<Vec3> random_cloud(std::size_t n, double side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Vec3> p(n);
  for (Vec3& v : p) v = {u(rng), u(rng), u(rng)};
  return p;
}

}  // namespace oracle
