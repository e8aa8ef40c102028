// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fitv2/errors.hpp"

namespace fitv2 {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Pushes this node's grad into the grads of `inputs`.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables recording for the lifetime of the guard (sampling, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Mutating the buffer of a tensor that is on a live tape invalidates its backward.
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T>& buffer() { return node_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Same storage viewed with a new shape; differentiable.
  Tensor reshape(Shape new_shape) const;

  Tensor detach() const { return Tensor(shape(), node_->data); }

  const NodePtr& node() const { return node_; }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

// Builds the result of a primitive op. The backward closure is only attached
// when recording is enabled and some input requires a gradient.
template <typename T, typename Backward>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> data,
                         std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.leaf = false;
  node.op = op;
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::forward<Backward>(backward);
  return out;
}

template <typename T>
Tensor<T> make_op_result_list(const char* op, Shape shape, std::vector<T> data,
                              const std::vector<Tensor<T>>& inputs,
                              std::function<void(detail::Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.leaf = false;
  node.op = op;
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  return make_op_result<T>("reshape", std::move(new_shape), node_->data, {*this},
                           [](detail::Node<T>& self) {
                             auto& in = *self.inputs[0];
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
                           });
}

// Topologically ordered record of the recorded graph reaching a root.
template <typename T>
struct Tape {
  std::vector<detail::Node<T>*> order;

  static Tape build(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const detail::Node<T>*> visited;
    // Iterative post-order DFS; inputs are emitted before their consumers.
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    auto* start = root.node().get();
    if (!start->requires_grad) return tape;
    stack.emplace_back(start, 0);
    visited.insert(start);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        auto* child = node->inputs[next++].get();
        if (child->requires_grad && !visited.count(child)) {
          visited.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        tape.order.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf, then releases
// the recorded graph.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not on the tape");
  }
  auto tape = Tape<T>::build(loss);
  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T{1};
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    auto* node = *it;
    if (!node->leaf && node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : tape.order) {
    if (node->leaf) continue;
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
  }
}

}  // namespace fitv2
