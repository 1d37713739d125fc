#pragma once

#include <span>
#include <vector>

#include "xdg/cam.hpp"
#include "xdg/nn.hpp"

namespace xdg {

/// Threshold average pooling: per channel, the mean of cells strictly above
/// lambda_tap * max(channel); 0 when no cell qualifies. [B,K,H,W] -> [B,K].
/// The cell selection is treated as constant when differentiating.
Var tap_pool(const Var& z, double lambda_tap);

/// -(1/HW) sum log M' averaged over maps. `maps` is [B,H,W] (or [B,HW]) with every
/// map summing to 1; anything else is rejected.
double hnc_map_loss(const Tensor& maps);
/// KL(U || M') with U uniform over the cells, averaged over maps.
double kl_uniform(const Tensor& maps);
/// Differentiable counterpart on unnormalized maps [B,N]: spatial softmax, then the loss above.
Var hnc_map_loss_logits(const Var& maps);

/// Per sample, the top_m negative classes by logit, ties to the lower class index.
std::vector<std::vector<int>> top_negative_classes(const Tensor& logits, std::span<const int> labels, int top_m);

/// Approximate homogeneous-negative-CAM term: one Grad-CAM for the summed logits of the
/// top_m negative classes, softmax-normalized over space and scored by hnc_map_loss,
/// scaled by lambda. Channel importances are constants; the map stays differentiable in z.
Var hnc_approx_loss(const Var& z, const HeadFn& head, std::span<const int> labels, int top_m, double lambda);

struct KernelConfig {
  /// Gaussian kernels exp(-gamma * |x - x'|^2), averaged over gamma.
  std::vector<double> gammas{1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  void validate() const;
};

/// Biased MMD^2 estimate averaged over the kernel mixture. Arguments are put in a
/// canonical order first, so the result does not depend on argument order.
Var mmd_mixture(const Var& a, const Var& b, const KernelConfig& kc = {});
double mmd_mixture(const Tensor& a, const Tensor& b, const KernelConfig& kc = {});

struct MlpConfig {
  std::size_t width = 512;
  std::size_t depth = 3;  // number of linear layers
  double dropout = 0.5;
};

/// Domain discriminator: linear layers with relu and dropout between them.
class DomainDiscriminator {
 public:
  DomainDiscriminator() = default;
  DomainDiscriminator(std::size_t inputs, std::size_t domains, const MlpConfig& cfg, Rng& rng,
                      const std::string& prefix = "discriminator");

  struct Pass {
    Var logits;
    /// d relu / d pre-activation times the dropout mask, per hidden layer.
    std::vector<Tensor> gates;
  };
  /// `rng` null disables dropout.
  Pass forward(const Var& x, Rng* rng) const;
  /// Gradient of sum_b CE(logits_b, domains_b) with respect to x, as a graph in the
  /// discriminator parameters (relu kinks contribute no second-order terms).
  Var input_gradient(const Pass& pass, std::span<const int> domains) const;

  std::size_t domains() const { return layers_.empty() ? 0 : layers_.back().out_features(); }
  std::vector<Var> parameters() const;

 private:
  std::vector<Linear> layers_;
  double dropout_ = 0.0;
};

/// Per-sample weights 1 / (C * count of the sample's class in the batch).
std::vector<double> class_balance_weights(std::span<const int> labels, int classes);

struct CdannLosses {
  Var weighted_ce;   // sum_b w_b * CE_b
  Var penalty;       // mean_b |d(sum CE)/d maps_b|^2
  Var discriminator; // weighted_ce + eta * penalty
  Var generator;     // -lambda * weighted_ce
};

CdannLosses cdann_losses(const Var& maps, std::span<const int> domains, std::span<const int> labels, int classes,
                         const DomainDiscriminator& disc, double lambda, double eta, Rng* dropout_rng);

}  // namespace xdg
