// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dynmoe/numerics/tensor.hpp"

namespace dynmoe::num {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value in the gradient tape. Interior nodes hold the closure
/// that pushes their gradient back into their parents.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

/// Handle to a tape node. Copies share the node; use `detach()` or
/// `Var(value)` for an independent value.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct access for optimizer updates and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; zeros of the right shape if nothing flowed in.
  Tensor grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }

  Var detach() const { return Var(node_->value, false); }
  double item() const;

  const NodePtr& node() const { return node_; }
  static Var from_node(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  NodePtr node_;
};

/// Global switch consulted by every op; graph recording is skipped while a
/// guard is alive.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds the result node of an op. When recording is off or no parent needs
/// a gradient, the result is a plain constant and `fn` is dropped.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

/// Reverse sweep from a scalar loss. Visits nodes in reverse topological order
/// derived from a depth-first walk over parents in argument order, so two
/// identical graphs produce bitwise-identical gradients. Leaf gradients
/// accumulate across calls until `zero_grad`.
void backward(const Var& loss);

}  // namespace dynmoe::num
