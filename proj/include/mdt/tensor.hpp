#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Ops build new nodes that
// remember their inputs and a closure propagating the output gradient back
// into them. Graphs are released when the last handle to the output goes
// away; parameters are leaf nodes owned by whichever model holds them.
//
// The scalar type is a template parameter: float for training, double for
// finite-difference gradient checks.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mdt/errors.hpp"

namespace mdt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows in (always allocated for parameters)
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (numel(shape) != data.size())
      throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                       " values");
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false) {
    std::vector<T> data;
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data), requires_grad);
  }

  static Tensor vector(std::initializer_list<T> v, bool requires_grad = false) {
    return Tensor({v.size()}, std::vector<T>(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape.front(); }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> data() const { return node_->value; }
  // Writable view. Only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }

  bool requires_grad() const { return node_->requires_grad; }

  // Leaves only. A trainable leaf always carries a gradient buffer; a frozen
  // one keeps whatever (zero) buffer it had and never accumulates into it.
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }

  // Fresh leaf holding a copy of the values; no history, no gradient.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  // Reverse sweep from a scalar. Gradients accumulate into every reachable
  // node with requires_grad set.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; reversing it yields a topological order.
    std::vector<detail::Node<T>*> order;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    std::unordered_set<detail::Node<T>*> visited;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        auto* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->ensure_grad();
    node_->grad[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(n->grad);
    }
  }

  const NodePtr& node() const noexcept { return node_; }

  // Builds an op output. The closure is kept only if some input needs a
  // gradient; otherwise the result is a constant leaf.
  static Tensor from_op(Shape shape, std::vector<T> value, std::initializer_list<const Tensor*> inputs,
                        std::function<void(const std::vector<T>&)> backward) {
    Tensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(value);
    for (const Tensor* in : inputs) {
      if (in && in->defined() && in->requires_grad()) out.node_->parents.push_back(in->node_);
    }
    if (!out.node_->parents.empty()) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  static Tensor from_op(Shape shape, std::vector<T> value, const std::vector<Tensor>& inputs,
                        std::function<void(const std::vector<T>&)> backward) {
    Tensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(value);
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    if (!out.node_->parents.empty()) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  NodePtr node_;
};

}  // namespace mdt
