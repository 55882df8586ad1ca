#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

enum class OpKind {
  kLeaf,
  kAdd,
  kMul,
  kScale,
  kSum,
  kMatmul,
  kLinear,
  kEmbedding,
  kGelu,
  kTanh,
  kLayerNorm,
  kAttention,
  kDropout,
  kSelectRows,
  kReshape,
  kCrossEntropy,
  kMse,
};

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Reverse-mode tape.
///
/// Nodes are appended as ops execute, so insertion order is a topological
/// order. `backward` walks the tape once from the end, invoking each node's
/// vector-Jacobian product at most once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` may be empty when no input needs a
  /// gradient; it is dropped in that case anyway.
  Var record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  OpKind kind(Var v) const;
  bool requires_grad(Var v) const;
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  /// Gradient accumulated by the last backward pass; zeros when none reached v.
  Tensor grad(Var v) const;
  /// Mutable accumulation buffer used by op backward functions.
  Tensor& grad_buffer(Var v);

  /// d(loss)/d(node) for every node; `loss` must hold exactly one element.
  void backward(Var loss);
  /// Vector-Jacobian product seeded with `seed` at `output`.
  void backward(Var output, const Tensor& seed);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Nodes whose backward function ran during the last pass.
  std::size_t backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  void run_backward();

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace xfer
