// Reverse-mode autodiff tape. Forward passes append nodes (value + backward
// closure); backward walks the nodes in reverse creation order, which is a
// topological order by construction. Gradients of leaves that were never
// touched by the backward sweep read back as exact zeros.
#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "taylornet/tensor.hpp"

namespace taylornet {

using Var = int32_t;
inline constexpr Var kNoVar = -1;

template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    std::function<void(Tape&)> back;
    bool requires_grad = false;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, grad_enabled_ && requires_grad});
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var op_node(Tensor<T> value, std::span<const Var> inputs, std::function<void(Tape&)> back) {
    bool rg = false;
    if (grad_enabled_)
      for (Var v : inputs) rg = rg || nodes_[static_cast<size_t>(v)].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(back) : nullptr, rg});
    return static_cast<Var>(nodes_.size() - 1);
  }

  const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
  size_t size() const { return nodes_.size(); }
  bool wants_grad(Var v) const { return nodes_[static_cast<size_t>(v)].requires_grad; }

  // Gradient buffer, zero-initialized to the value's shape on first use.
  Tensor<T>& grad_buf(Var v) {
    Node& n = nodes_[static_cast<size_t>(v)];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_[static_cast<size_t>(v)].grad.empty(); }

  void accum(Var v, const Tensor<T>& g) {
    if (!wants_grad(v)) return;
    Tensor<T>& buf = grad_buf(v);
    for (int64_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  // Gradient as a tensor; exact zeros if the backward sweep never reached v.
  Tensor<T> grad_of(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v)];
    if (!n.grad.empty()) return n.grad;
    return Tensor<T>(n.value.shape());
  }

  void zero_grads() {
    for (Node& n : nodes_) n.grad = Tensor<T>{};
  }

  void backward(Var root) {
    if (!grad_enabled_) throw std::logic_error("backward() on a no-grad tape");
    Node& r = nodes_[static_cast<size_t>(root)];
    if (r.value.size() != 1) throw std::invalid_argument("backward root must be scalar");
    grad_buf(root)[0] = T(1);
    for (int64_t v = root; v >= 0; --v) {
      Node& n = nodes_[static_cast<size_t>(v)];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
  }

  // Drops value storage of nodes in [from, size()) that are not in `keep`.
  // Only valid on a no-grad tape (nothing will read the values again).
  void free_values_except(size_t from, std::span<const Var> keep) {
    if (grad_enabled_) return;
    for (size_t v = from; v < nodes_.size(); ++v) {
      bool kept = false;
      for (Var k : keep) kept = kept || static_cast<size_t>(k) == v;
      if (!kept) nodes_[v].value.release();
    }
  }

 private:
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace taylornet
