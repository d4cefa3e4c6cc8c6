#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "atmc/tensor.hpp"

namespace atmc {

/// Arithmetic precision of the matrix-product kernels. Storage stays f64;
/// under f32 every GEMM (matmul, conv) runs in single precision.
enum class Precision { f64, f32 };

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph;

/// Receives the graph and the id of the node whose gradient is complete, and
/// pushes that gradient into the parents.
using BackwardFn = std::function<void(Graph&, std::size_t)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so creation order
/// is a topological order and backward walks it in reverse.
///
/// A graph is single use: one forward, one backward. Leaves marked
/// requires_grad hold dLoss/dLeaf after backward().
class Graph {
 public:
  explicit Graph(Precision precision = Precision::f64) : precision_(precision) {
    nodes_.reserve(64);
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Trainable leaf: gradient is accumulated into it.
  Var parameter(Tensor value) { return leaf(std::move(value), true); }
  /// Data leaf; pass requires_grad to differentiate w.r.t. inputs.
  Var input(Tensor value, bool requires_grad = false) {
    return leaf(std::move(value), requires_grad);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() w.r.t. v; zeros if nothing flowed into v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  bool is_leaf(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  Precision precision() const { return precision_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward function in
  /// reverse creation order. Throws GraphError if called twice.
  void backward(Var loss);

  // Op-implementer interface.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);
  /// Mutable gradient buffer for node id, allocated (zeroed) on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& grad_of(std::size_t id) const;
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var leaf(Tensor value, bool requires_grad);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  Precision precision_;
  bool backward_done_ = false;
};

}  // namespace atmc
