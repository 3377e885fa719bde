#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "acpnet/parameter.hpp"
#include "acpnet/tensor.hpp"

namespace acpnet {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Affine,
  AddBias,
  MatMul,
  Relu,
  LeakyRelu,
  Sigmoid,
  Exp,
  Log,
  Concat,
  Slice,
  Reshape,
  GatherRows,
  ScatterAddRows,
  WeightedGather,
  GroupMax,
  Softmax,
  NormalizeRows,
  Sum,
  Mean,
  BatchNorm,
  CrossEntropy,
  KernelAggregate,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::AddBias: return "add_bias";
    case OpKind::MatMul: return "matmul";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ScatterAddRows: return "scatter_add_rows";
    case OpKind::WeightedGather: return "weighted_gather";
    case OpKind::GroupMax: return "group_max";
    case OpKind::Softmax: return "softmax";
    case OpKind::NormalizeRows: return "normalize_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::KernelAggregate: return "kernel_aggregate";
  }
  return "unknown";
}

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while its graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Every primitive computes its output when
/// it is recorded, so node ids are already a topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const noexcept { return training_; }
  void set_training(bool on) noexcept { training_ = on; }

  /// Leaf holding a copy of `t`. The source address is remembered so that
  /// gradients can be looked up by the tensor they came from.
  Var leaf(const Tensor& t, bool requires_grad = false) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = t;
    n.requires_grad = requires_grad;
    n.source = &t;
    return push(std::move(n));
  }

  Var constant(Tensor t) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(t);
    return push(std::move(n));
  }

  /// Leaf bound to a parameter; backward() accumulates into Parameter::grad.
  Var param(Parameter& p) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = p.value;
    n.requires_grad = p.trainable;
    n.source = &p.value;
    n.parameter = p.trainable ? &p : nullptr;
    return push(std::move(n));
  }

  /// Extension point for primitives. `fn` is dropped when no input needs a gradient.
  Var record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id()); }
  OpKind op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() root w.r.t. this node; empty if none flowed.
  std::span<const double> grad(std::size_t id) const { return nodes_.at(id).grad; }
  std::span<const double> grad(Var v) const { return grad(v.id()); }

  /// Mutable gradient buffer, allocated on first use. Used by primitive backward functions.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  /// Value of the root. Outputs are computed eagerly as nodes are recorded.
  const Tensor& forward(Var root) const { return value(root); }

  /// Propagates d(root)/d(node) to every node that requires a gradient.
  void backward(Var root) {
    if (root.valid() && &root.graph() != this) throw std::invalid_argument("backward: foreign root");
    const Tensor& rv = value(root);
    if (rv.size() != 1) throw ShapeError("backward: root must be scalar", rv.shape(), Shape{});
    for (Node& n : nodes_) n.grad.clear();
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.parameter) n.parameter->accumulate_grad(n.grad);
    }
  }

  /// Sum of gradients over every leaf built from `source` (see leaf()/param()).
  Tensor grad_wrt(const Tensor& source) const {
    Tensor g(source.shape());
    for (const Node& n : nodes_) {
      if (n.source != &source || n.grad.empty()) continue;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    return g;
  }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Tensor* source = nullptr;
    Parameter* parameter = nullptr;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool training_ = true;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

namespace detail {

/// Calls f(grad_span) for input `id` only if it participates in differentiation.
template <class F>
void accumulate(Graph& g, std::size_t id, F&& f) {
  if (g.requires_grad(id)) f(g.grad_buffer(id));
}

inline Graph& same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
  return a.graph();
}

}  // namespace detail

}  // namespace acpnet
