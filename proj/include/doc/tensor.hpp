#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "doc/errors.hpp"

namespace doc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Dense row-major array of doubles. Copies of a Tensor share storage and
// tape node, like a handle; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const double> data() const { return node_->data; }
  // Direct mutation is reserved for parameter initialisation and optimiser
  // updates; it bypasses the tape.
  std::span<double> mutable_data() { return node_->data; }
  double item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  const std::string& op() const { return node_->op; }

  // Same values, no tape, independent storage.
  Tensor clone() const { return Tensor(shape(), node_->data, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void require_finite(std::span<const double> values, const std::string& op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + op);
  }
}

// Wraps a freshly computed result into a tensor, recording the backward rule
// when any parent is tracked and recording is enabled.
inline Tensor make_result(Shape shape, std::vector<double> data, std::string op,
                          std::vector<Tensor> parents,
                          std::function<void(const Node&)> backward) {
  require_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  bool tracked = false;
  if (grad_enabled()) {
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
  }
  auto& node = *out.node();
  node.op = std::move(op);
  if (tracked) {
    node.requires_grad = true;
    for (const auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Every tracked tensor reachable from
// the loss receives d(loss)/d(tensor); leaf gradients accumulate across calls,
// interior gradients are recomputed from zero.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ShapeError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ValueError("backward() on a loss that is not connected to any tracked tensor");
  }

  // Iterative DFS producing a post-order; a node met while still open is a cycle.
  enum class Mark { open, done };
  std::unordered_map<const detail::Node*, Mark> marks;
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  marks[loss.node().get()] = Mark::open;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = marks.find(parent);
      if (it == marks.end()) {
        marks[parent] = Mark::open;
        stack.emplace_back(parent, 0);
      } else if (it->second == Mark::open) {
        throw ValueError("cycle detected in the autodiff tape");
      }
    } else {
      marks[node] = Mark::done;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->backward) node->grad.assign(node->data.size(), 0.0);
  }
  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    for (auto& parent : node->parents) {
      if (parent->requires_grad) parent->ensure_grad();
    }
    node->backward(*node);
  }
}

}  // namespace doc
