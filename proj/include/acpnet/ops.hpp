#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/graph.hpp"

// Differentiable primitives. Each one computes its value eagerly and records
// a backward closure that reads the saved context and the upstream gradient.

namespace acpnet {

using Index = std::int64_t;

namespace detail {

template <class F>
Var unary(Var x, OpKind op, F&& value_and_deriv) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  std::vector<double> deriv(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) value_and_deriv(xv[i], out[i], deriv[i]);
  const std::size_t xi = x.id();
  return g.record(op, {xi}, std::move(out),
                  [xi, deriv = std::move(deriv)](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv[i];
                    });
                  });
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_indices(std::span<const Index> idx, std::size_t limit, const char* op) {
  for (Index i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= limit) {
      throw std::out_of_range(std::string(op) + ": index " + std::to_string(i) +
                              " outside [0, " + std::to_string(limit) + ")");
    }
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "add");
  const Tensor &av = a.value(), &bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("add", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(OpKind::Add, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    for (std::size_t id : {ai, bi}) {
      detail::accumulate(gr, id, [&](std::span<double> gx) {
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      });
    }
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "sub");
  const Tensor &av = a.value(), &bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("sub", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(OpKind::Sub, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    detail::accumulate(gr, ai, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
    detail::accumulate(gr, bi, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] -= go[i];
    });
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "mul");
  const Tensor &av = a.value(), &bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("mul", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(OpKind::Mul, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    const Tensor &av = gr.value(ai), &bv = gr.value(bi);
    detail::accumulate(gr, ai, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * bv[i];
    });
    detail::accumulate(gr, bi, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * av[i];
    });
  });
}

/// scale * x + shift, elementwise.
inline Var affine(Var x, double scale, double shift = 0.0) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
  const std::size_t xi = x.id();
  return g.record(OpKind::Affine, {xi}, std::move(out), [xi, scale](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    detail::accumulate(gr, xi, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += scale * go[i];
    });
  });
}

inline Var scale(Var x, double s) { return affine(x, s, 0.0); }

/// Adds a length-C vector to every row of an (N, C) matrix.
inline Var add_bias(Var x, Var bias) {
  Graph& g = detail::same_graph(x, bias, "add_bias");
  const Tensor &xv = x.value(), &bv = bias.value();
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw ShapeError("add_bias", xv.shape(), bv.shape());
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  const std::size_t xi = x.id(), bi = bias.id();
  return g.record(OpKind::AddBias, {xi, bi}, std::move(out),
                  [xi, bi, n, c](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                    });
                    detail::accumulate(gr, bi, [&](std::span<double> gb) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
                    });
                  });
}

/// (n, k) x (k, m) -> (n, m).
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "matmul");
  const Tensor &av = a.value(), &bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul", av.shape(), bv.shape());
  }
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * m];
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * brow[j];
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(OpKind::MatMul, {ai, bi}, std::move(out),
                  [ai, bi, n, k, m](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    const Tensor &av = gr.value(ai), &bv = gr.value(bi);
                    detail::accumulate(gr, ai, [&](std::span<double> ga) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < m; ++j) s += go[i * m + j] * bv[p * m + j];
                          ga[i * k + p] += s;
                        }
                    });
                    detail::accumulate(gr, bi, [&](std::span<double> gb) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = av[i * k + p];
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * go[i * m + j];
                        }
                    });
                  });
}

inline Var relu(Var x) {
  return detail::unary(x, OpKind::Relu, [](double v, double& y, double& d) {
    y = v > 0.0 ? v : 0.0;
    d = v > 0.0 ? 1.0 : 0.0;
  });
}

inline Var leaky_relu(Var x, double slope = 0.1) {
  return detail::unary(x, OpKind::LeakyRelu, [slope](double v, double& y, double& d) {
    y = v > 0.0 ? v : slope * v;
    d = v > 0.0 ? 1.0 : slope;
  });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, OpKind::Sigmoid, [](double v, double& y, double& d) {
    y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    d = y * (1.0 - y);
  });
}

inline Var exp(Var x) {
  return detail::unary(x, OpKind::Exp, [](double v, double& y, double& d) {
    y = std::exp(v);
    d = y;
  });
}

inline Var log(Var x) {
  return detail::unary(x, OpKind::Log, [](double v, double& y, double& d) {
    y = std::log(v);
    d = 1.0 / v;
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Graph& g = parts.front().graph();
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range", shape, Shape{axis});
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    detail::same_graph(parts.front(), p, "concat");
    bool ok = s.size() == shape.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == shape[d];
    if (!ok) throw ShapeError("concat", shape, s);
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_axis(shape, axis);
  Tensor out(shape);
  std::vector<std::size_t> ids, extents;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t ext = pv.dim(axis);
    for (std::size_t o = 0; o < split.outer; ++o) {
      const double* src = pv.data().data() + o * ext * split.inner;
      double* dst = out.data().data() + (o * total + offset) * split.inner;
      std::copy(src, src + ext * split.inner, dst);
    }
    ids.push_back(p.id());
    extents.push_back(ext);
    offset += ext;
  }
  return g.record(OpKind::Concat, ids, std::move(out),
                  [ids, extents, split, total](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    std::size_t off = 0;
                    for (std::size_t q = 0; q < ids.size(); ++q) {
                      const std::size_t ext = extents[q];
                      detail::accumulate(gr, ids[q], [&](std::span<double> gx) {
                        for (std::size_t o = 0; o < split.outer; ++o) {
                          const double* src = go.data() + (o * total + off) * split.inner;
                          double* dst = gx.data() + o * ext * split.inner;
                          for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
                        }
                      });
                      off += ext;
                    }
                  });
}

/// Sub-range [begin, end) along `axis`.
inline Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (axis >= xv.rank() || begin > end || end > xv.dim(axis)) {
    throw ShapeError("slice", xv.shape(), Shape{axis, begin, end});
  }
  const auto split = detail::split_axis(xv.shape(), axis);
  Shape shape = xv.shape();
  shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  Tensor out(shape);
  for (std::size_t o = 0; o < split.outer; ++o) {
    const double* src = xv.data().data() + (o * split.extent + begin) * split.inner;
    std::copy(src, src + ext * split.inner, out.data().data() + o * ext * split.inner);
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::Slice, {xi}, std::move(out),
                  [xi, split, begin, ext](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t o = 0; o < split.outer; ++o) {
                        double* dst = gx.data() + (o * split.extent + begin) * split.inner;
                        const double* src = go.data() + o * ext * split.inner;
                        for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
                      }
                    });
                  });
}

/// Splits along `axis` into consecutive pieces of the given extents.
inline std::vector<Var> split(Var x, const std::vector<std::size_t>& sizes, std::size_t axis) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (axis >= x.shape().size() || total != x.shape()[axis]) {
    throw ShapeError("split", x.shape(), Shape(sizes));
  }
  std::vector<Var> out;
  std::size_t begin = 0;
  for (std::size_t s : sizes) {
    out.push_back(slice(x, axis, begin, begin + s));
    begin += s;
  }
  return out;
}

inline std::vector<Var> split_even(Var x, std::size_t parts, std::size_t axis) {
  if (parts == 0 || axis >= x.shape().size() || x.shape()[axis] % parts != 0) {
    throw ShapeError("split_even", x.shape(), Shape{parts});
  }
  return split(x, std::vector<std::size_t>(parts, x.shape()[axis] / parts), axis);
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  Tensor out = x.value();
  out.reshape(std::move(shape));
  const std::size_t xi = x.id();
  return g.record(OpKind::Reshape, {xi}, std::move(out), [xi](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    detail::accumulate(gr, xi, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  });
}

/// out[r] = x[indices[r]] over the leading dimension.
inline Var gather_rows(Var x, std::vector<Index> indices) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("gather_rows", xv.shape(), Shape{indices.size()});
  detail::check_indices(indices, xv.dim(0), "gather_rows");
  const std::size_t w = xv.row_width();
  Shape shape = xv.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = xv.row(static_cast<std::size_t>(indices[r]));
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::GatherRows, {xi}, std::move(out),
                  [xi, w, idx = std::move(indices)](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t r = 0; r < idx.size(); ++r) {
                        double* dst = gx.data() + static_cast<std::size_t>(idx[r]) * w;
                        const double* src = go.data() + r * w;
                        for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
                      }
                    });
                  });
}

/// out[indices[r]] += x[r]; `out_rows` rows in the result. Sources are
/// visited in ascending order, so each destination sums in ascending source order.
inline Var scatter_add_rows(Var x, std::vector<Index> indices, std::size_t out_rows) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || xv.dim(0) != indices.size()) {
    throw ShapeError("scatter_add_rows", xv.shape(), Shape{indices.size()});
  }
  detail::check_indices(indices, out_rows, "scatter_add_rows");
  const std::size_t w = xv.row_width();
  Shape shape = xv.shape();
  shape[0] = out_rows;
  Tensor out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    double* dst = out.data().data() + static_cast<std::size_t>(indices[r]) * w;
    const auto src = xv.row(r);
    for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::ScatterAddRows, {xi}, std::move(out),
                  [xi, w, idx = std::move(indices)](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t r = 0; r < idx.size(); ++r) {
                        const double* src = go.data() + static_cast<std::size_t>(idx[r]) * w;
                        for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += src[c];
                      }
                    });
                  });
}

/// out[i] = sum_j weights[i*per_row + j] * x[indices[i*per_row + j]].
/// Weights are constants.
inline Var weighted_gather(Var x, std::vector<Index> indices, std::vector<double> weights,
                           std::size_t per_row) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || per_row == 0 || indices.size() != weights.size() ||
      indices.size() % per_row != 0) {
    throw ShapeError("weighted_gather", xv.shape(), Shape{indices.size(), weights.size(), per_row});
  }
  detail::check_indices(indices, xv.dim(0), "weighted_gather");
  const std::size_t n = indices.size() / per_row, c = xv.dim(1);
  Tensor out(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = &out[i * c];
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t e = i * per_row + j;
      const double w = weights[e];
      const auto src = xv.row(static_cast<std::size_t>(indices[e]));
      for (std::size_t q = 0; q < c; ++q) dst[q] += w * src[q];
    }
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::WeightedGather, {xi}, std::move(out),
                  [xi, c, per = per_row, idx = std::move(indices), wts = std::move(weights)](
                      Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t e = 0; e < idx.size(); ++e) {
                        const std::size_t i = e / per;
                        double* dst = gx.data() + static_cast<std::size_t>(idx[e]) * c;
                        for (std::size_t q = 0; q < c; ++q) dst[q] += wts[e] * go[i * c + q];
                      }
                    });
                  });
}

/// Max over consecutive groups of `group` rows: (n*group, C) -> (n, C).
/// Ties resolve to the first row of the group.
inline Var group_max(Var x, std::size_t group) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || group == 0 || xv.dim(0) % group != 0) {
    throw ShapeError("group_max", xv.shape(), Shape{group});
  }
  const std::size_t n = xv.dim(0) / group, c = xv.dim(1);
  Tensor out(Shape{n, c});
  std::vector<std::size_t> arg(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < c; ++q) {
      std::size_t best = i * group;
      for (std::size_t r = i * group + 1; r < (i + 1) * group; ++r) {
        if (xv[r * c + q] > xv[best * c + q]) best = r;
      }
      arg[i * c + q] = best;
      out[i * c + q] = xv[best * c + q];
    }
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::GroupMax, {xi}, std::move(out),
                  [xi, c, arg = std::move(arg)](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t e = 0; e < arg.size(); ++e) gx[arg[e] * c + e % c] += go[e];
                    });
                  });
}

/// Softmax over the last axis.
inline Var softmax(Var x) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("softmax", xv.shape(), Shape{});
  const std::size_t c = xv.shape().back();
  const std::size_t n = c ? xv.size() / c : 0;
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = &xv[i * c];
    double* o = &out[i * c];
    const double mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::Softmax, {xi}, std::move(out), [xi, n, c](Graph& gr, std::size_t self) {
    auto go = gr.grad(self);
    const Tensor& y = gr.value(self);
    detail::accumulate(gr, xi, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
      }
    });
  });
}

/// Divides each last-axis row by its sum.
inline Var normalize_rows(Var x) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("normalize_rows", xv.shape(), Shape{});
  const std::size_t c = xv.shape().back();
  const std::size_t n = c ? xv.size() / c : 0;
  Tensor out(xv.shape());
  std::vector<double> sums(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j];
    sums[i] = s;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / s;
  }
  const std::size_t xi = x.id();
  return g.record(OpKind::NormalizeRows, {xi}, std::move(out),
                  [xi, n, c, sums = std::move(sums)](Graph& gr, std::size_t self) {
                    auto go = gr.grad(self);
                    const Tensor& y = gr.value(self);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (std::size_t i = 0; i < n; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
                        for (std::size_t j = 0; j < c; ++j)
                          gx[i * c + j] += (go[i * c + j] - dot) / sums[i];
                      }
                    });
                  });
}

inline Var sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return g.record(OpKind::Sum, {xi}, Tensor::scalar(s), [xi](Graph& gr, std::size_t self) {
    const double go = gr.grad(self)[0];
    detail::accumulate(gr, xi, [&](std::span<double> gx) {
      for (double& v : gx) v += go;
    });
  });
}

inline Var mean(Var x) {
  Graph& g = x.graph();
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean", x.shape(), Shape{});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return g.record(OpKind::Mean, {xi}, Tensor::scalar(s / static_cast<double>(n)),
                  [xi, n](Graph& gr, std::size_t self) {
                    const double go = gr.grad(self)[0] / static_cast<double>(n);
                    detail::accumulate(gr, xi, [&](std::span<double> gx) {
                      for (double& v : gx) v += go;
                    });
                  });
}

/// Batch normalization of an (N, C) matrix over the point axis. In training
/// mode batch statistics are used and the running statistics are updated as
/// running = momentum * running + (1 - momentum) * batch.
inline Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                      double momentum = 0.9, double eps = 1e-5) {
  Graph& g = detail::same_graph(x, gamma, "batch_norm");
  detail::same_graph(x, beta, "batch_norm");
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("batch_norm", xv.shape(), gamma.shape());
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  if (gamma.value().size() != c || beta.value().size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batch_norm", xv.shape(), gamma.shape());
  }
  const bool train = g.training();
  if (train && n == 0) throw ShapeError("batch_norm: empty batch", xv.shape(), gamma.shape());
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  if (train) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < c; ++q) mu[q] += xv[i * c + q];
    for (double& m : mu) m /= static_cast<double>(n);
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < c; ++q) {
        const double d = xv[i * c + q] - mu[q];
        var[q] += d * d;
      }
    for (std::size_t q = 0; q < c; ++q) {
      const double biased = var[q] / static_cast<double>(n);
      const double unbiased = n > 1 ? var[q] / static_cast<double>(n - 1) : biased;
      inv_std[q] = 1.0 / std::sqrt(biased + eps);
      running_mean[q] = momentum * running_mean[q] + (1.0 - momentum) * mu[q];
      running_var[q] = momentum * running_var[q] + (1.0 - momentum) * unbiased;
    }
  } else {
    for (std::size_t q = 0; q < c; ++q) {
      mu[q] = running_mean[q];
      inv_std[q] = 1.0 / std::sqrt(running_var[q] + eps);
    }
  }
  const Tensor &gv = gamma.value(), &bv = beta.value();
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < c; ++q) {
      const double h = (xv[i * c + q] - mu[q]) * inv_std[q];
      xhat[i * c + q] = h;
      out[i * c + q] = gv[q] * h + bv[q];
    }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return g.record(
      OpKind::BatchNorm, {xi, gi, bi}, std::move(out),
      [xi, gi, bi, n, c, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](
          Graph& gr, std::size_t self) {
        auto go = gr.grad(self);
        const Tensor& gv = gr.value(gi);
        detail::accumulate(gr, bi, [&](std::span<double> gb) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < c; ++q) gb[q] += go[i * c + q];
        });
        detail::accumulate(gr, gi, [&](std::span<double> gg) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < c; ++q) gg[q] += go[i * c + q] * xhat[i * c + q];
        });
        detail::accumulate(gr, xi, [&](std::span<double> gx) {
          if (!train) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t q = 0; q < c; ++q) gx[i * c + q] += gv[q] * inv_std[q] * go[i * c + q];
            return;
          }
          std::vector<double> mean_g(c, 0.0), mean_gh(c, 0.0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < c; ++q) {
              mean_g[q] += go[i * c + q];
              mean_gh[q] += go[i * c + q] * xhat[i * c + q];
            }
          for (std::size_t q = 0; q < c; ++q) {
            mean_g[q] /= static_cast<double>(n);
            mean_gh[q] /= static_cast<double>(n);
          }
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < c; ++q) {
              gx[i * c + q] += gv[q] * inv_std[q] *
                               (go[i * c + q] - mean_g[q] - xhat[i * c + q] * mean_gh[q]);
            }
        });
      });
}

inline constexpr int kIgnoreLabel = -1;

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`
/// (N, C). Points labelled kIgnoreLabel do not contribute.
inline Var cross_entropy(Var probs, const std::vector<int>& labels) {
  Graph& g = probs.graph();
  const Tensor& pv = probs.value();
  if (pv.rank() != 2 || pv.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy", pv.shape(), Shape{labels.size()});
  }
  const std::size_t n = pv.dim(0), c = pv.dim(1);
  static constexpr double kProbFloor = std::numeric_limits<double>::min();
  double loss = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(c) + ")");
    }
    loss -= std::log(std::max(pv[i * c + static_cast<std::size_t>(labels[i])], kProbFloor));
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  const std::size_t pi = probs.id();
  return g.record(OpKind::CrossEntropy, {pi}, Tensor::scalar(loss / denom),
                  [pi, c, denom, labels](Graph& gr, std::size_t self) {
                    const double go = gr.grad(self)[0];
                    const Tensor& pv = gr.value(pi);
                    detail::accumulate(gr, pi, [&](std::span<double> gp) {
                      for (std::size_t i = 0; i < labels.size(); ++i) {
                        if (labels[i] == kIgnoreLabel) continue;
                        const std::size_t e = i * c + static_cast<std::size_t>(labels[i]);
                        gp[e] -= go / (std::max(pv[e], kProbFloor) * denom);
                      }
                    });
                  });
}

inline Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  return cross_entropy(softmax(logits), labels);
}

}  // namespace acpnet
