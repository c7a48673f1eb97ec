#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Leaves created with requires_grad=true
// accumulate gradients across backward() calls until zero_grad(); interior
// nodes are recomputed per graph and their gradients are reset at the start of
// every backward pass.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pseudosr/tensor.hpp"

namespace pseudosr {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return inputs.empty(); }

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
  bool has_grad() const noexcept { return !grad.empty(); }
  void zero_grad() { grad = Tensor<T>(); }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

  /// Graph leaf that never receives gradients.
  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  /// Graph leaf that accumulates gradients.
  static Var leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr<T>& node() const noexcept { return node_; }

  /// Gradient accumulated on this node; empty tensor when none reached it.
  const Tensor<T>& grad() const { return node_->grad; }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  /// Scalar value of a 1-element variable.
  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

 private:
  NodePtr<T> node_;
};

/// Builds an interior node. `fn` is only retained when some input needs gradients.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

namespace detail {

template <class T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

}  // namespace detail

/// Back-propagates d(root)/d(·) into every reachable node. `root` must be a scalar.
template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root, got " + to_string(root.shape()));
  if (!root.requires_grad()) return;
  auto order = detail::topological_order(root.node().get());
  for (Node<T>* n : order)
    if (!n->is_leaf()) n->zero_grad();
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

/// Accumulates `g` into input `i` of `self` when that input tracks gradients.
template <class T, class F>
inline void accumulate_into(Node<T>& self, std::size_t i, F&& fill) {
  Node<T>& in = *self.inputs[i];
  if (!in.requires_grad) return;
  fill(in.grad_buffer());
}

}  // namespace pseudosr
