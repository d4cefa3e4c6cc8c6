#include "atmc/graph.hpp"

#include <string>

#include "atmc/error.hpp"

namespace atmc {

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("graph leaf contains non-finite values");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw GraphError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty() && !n.value.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }
bool Graph::is_leaf(Var v) const { return node(v).leaf; }

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced at graph node " + std::to_string(nodes_.size()));
  }
  bool rg = false;
  for (Var p : parents) rg = rg || node(p).requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad_of(std::size_t id) const { return nodes_[id].grad; }

void Graph::backward(Var loss) {
  if (backward_done_) throw GraphError("backward called twice on the same forward pass");
  const Node& l = node(loss);
  if (l.value.size() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + shape_string(l.value.shape()));
  }
  backward_done_ = true;
  if (!l.requires_grad) return;
  grad_buffer(loss.id).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.leaf || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

}  // namespace atmc
