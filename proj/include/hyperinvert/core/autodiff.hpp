#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hyperinvert/core/tensor.hpp"

namespace hyperinvert {

// Define-by-run reverse-mode autodiff. Ops build a graph of Node objects;
// backward() runs the recorded closures in reverse creation order. When no
// input requires gradients an op produces a detached constant, so inference
// pays no taping cost.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  uint64_t seq = 0;

  void ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = Tensor<T>::zeros(value.shape());
    if (grad.empty() && value.size() == 0) grad = Tensor<T>(value.shape());
  }
};

namespace detail {
inline uint64_t next_node_seq() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->seq = detail::next_node_seq();
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  static Var param(Tensor<T> value) { return leaf(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  Tensor<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }

  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
void topo_collect(const std::shared_ptr<Node<T>>& root, std::vector<std::shared_ptr<Node<T>>>& out) {
  // Iterative DFS; graphs from unrolled training steps are deep.
  std::unordered_set<Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack{root};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!n || !n->requires_grad || seen.count(n.get())) continue;
    seen.insert(n.get());
    out.push_back(n);
    for (auto& p : n->parents) stack.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
}

}  // namespace detail

// Accumulate gradients of `root` (a scalar) into every reachable node that
// requires gradients. Leaf gradients persist until zeroed by the optimizer.
template <class T>
void backward(const Var<T>& root) {
  check_shape(root.node()->value.size() == 1, "backward() root must be a scalar");
  if (!root.requires_grad()) return;
  root.node()->ensure_grad();
  root.node()->grad.fill(T(1));
  std::vector<std::shared_ptr<Node<T>>> order;
  detail::topo_collect(root.node(), order);
  for (auto& n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace detail {

// Add `g` into the parent's gradient, reducing over broadcast axes if needed.
template <class T>
void accumulate_grad(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  if (g.shape() == parent.grad.shape()) {
    T* dst = parent.grad.data();
    const T* src = g.data();
    for (int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  } else {
    Tensor<T> r = reduce_to_shape(g, parent.grad.shape());
    T* dst = parent.grad.data();
    for (int64_t i = 0; i < r.size(); ++i) dst[i] += r[i];
  }
}

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  bool rg = false;
  for (const auto& v : inputs) rg = rg || v.requires_grad();
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = rg;
  n->seq = next_node_seq();
  if (rg) {
    n->parents.reserve(inputs.size());
    for (auto& v : inputs) n->parents.push_back(v.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

}  // namespace detail

}  // namespace hyperinvert
