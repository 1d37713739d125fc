#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xdg/tensor.hpp"

namespace xdg {

/// Local gradient rule of an operation.
///
/// `gout` is the gradient flowing into the node's value. `gin[i]` points at the
/// accumulator for parent i, or is null when that parent needs no gradient.
/// Rules must accumulate (+=) into the accumulators.
using BackwardFn = std::function<void(const Tensor& gout, std::span<Tensor* const> gin)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::string name;
};

/// Handle to a node of a reverse-mode computation graph.
///
/// Graphs are built implicitly by the functions in ops.hpp and kept alive by the
/// handles referring to them. A graph belongs to one thread.
class Var {
 public:
  Var() = default;

  /// Leaf without gradient tracking.
  static Var constant(Tensor value);
  /// Leaf that accumulates gradients; `grad` starts at zero.
  static Var parameter(Tensor value, std::string name = {});

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers; only meaningful on leaves.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.fill(0.0); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  Node* node() const { return node_.get(); }

  /// Same value, no history.
  Var detach() const { return constant(node_->value); }

 private:
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  friend Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);
};

/// Creates an operation node. If no parent requires a gradient the result is a
/// constant and the rule is dropped.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Backpropagates from a scalar root, accumulating into the `grad` of every
/// reachable node that requires a gradient. Repeated calls accumulate; the
/// root's own gradient is seeded with 1.
void backward(const Var& root);

/// Gradients of a scalar root with respect to `wrt`, without touching any
/// node's stored `grad`. Entries for nodes unreachable from the root are zero.
std::vector<Tensor> grad(const Var& root, std::span<const Var> wrt);

}  // namespace xdg
