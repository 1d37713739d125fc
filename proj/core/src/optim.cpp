#include "xdg/optim.hpp"

#include <cmath>

namespace xdg {

Optimizer::Optimizer(OptimizerKind kind, double lr, double weight_decay)
    : kind_(kind), lr_(lr), weight_decay_(weight_decay) {}

void Optimizer::step(std::span<const Var> params) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ValueError("optimizer parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var p = params[i];
    Tensor& w = p.mutable_value();
    const Tensor& g = p.grad();
    if (!g.same_shape(w)) throw ShapeError("gradient shape differs from parameter " + p.name());
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * (g[k] + weight_decay_ * w[k]);
      continue;
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + weight_decay_ * w[k];
      m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
      v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

void zero_grads(std::span<const Var> params) {
  for (const auto& p : params) Var(p).zero_grad();
}

}  // namespace xdg
