#include "xfer/graph.hpp"

#include <algorithm>

#include "xfer/error.hpp"

namespace xfer {

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n{OpKind::kLeaf, std::move(value), Tensor{}, requires_grad, false, {}, {}};
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto in : inputs) needs = needs || node(in).requires_grad;
  Node n{kind, std::move(value), Tensor{}, needs, false, std::move(inputs), needs ? std::move(backward) : BackwardFn{}};
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  require(v.id < nodes_.size(), ErrorKind::kContract, "variable does not belong to this graph");
  return nodes_[v.id];
}

Graph::Node& Graph::node(Var v) {
  require(v.id < nodes_.size(), ErrorKind::kContract, "variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
OpKind Graph::kind(Var v) const { return node(v).kind; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

bool Graph::any_requires_grad(std::initializer_list<Var> vars) const {
  for (auto v : vars)
    if (node(v).requires_grad) return true;
  return false;
}

Tensor Graph::grad(Var v) const {
  const auto& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Graph::grad_buffer(Var v) {
  auto& n = node(v);
  if (!n.has_grad) {
    if (n.grad.shape() == n.value.shape()) {
      std::fill(n.grad.storage().begin(), n.grad.storage().end(), 0.0);
    } else {
      n.grad = Tensor(n.value.shape());
    }
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::zero_grad() {
  for (auto& n : nodes_) n.has_grad = false;
  visits_ = 0;
}

void Graph::backward(Var loss) {
  require(value(loss).size() == 1, ErrorKind::kContract,
          "backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  backward(loss, Tensor(value(loss).shape(), 1.0));
}

void Graph::backward(Var output, const Tensor& seed) {
  require(seed.shape() == value(output).shape(), ErrorKind::kDimension,
          "backward seed shape " + shape_string(seed.shape()) + " differs from output " +
              shape_string(value(output).shape()));
  zero_grad();
  grad_buffer(output) = seed;
  run_backward();
}

void Graph::run_backward() {
  for (std::size_t id = nodes_.size(); id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
    ++visits_;
  }
}

}  // namespace xfer
