#pragma once

#include <span>
#include <vector>

#include "xdg/autodiff.hpp"
#include "xdg/hparams.hpp"

namespace xdg {

/// SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over a fixed parameter list. Weight
/// decay enters as an L2 term: the step uses grad + weight_decay * param.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double weight_decay);

  /// Updates each parameter in place from its stored gradient. The list must be the same
  /// (same order) on every call.
  void step(std::span<const Var> params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, weight_decay_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

void zero_grads(std::span<const Var> params);

}  // namespace xdg
