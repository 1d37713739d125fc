#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xdg/cam.hpp"
#include "xdg/random.hpp"

namespace xdg {

enum class RscMode { spatial, channel, alternate };
/// Per-sample score deciding which samples keep their masks.
///   confidence: ground-truth softmax probability (the DivCAM default)
///   change:     drop of that probability caused by the mask
///   random:     uniform draw for correctly classified samples, -inf otherwise
enum class BatchScore { confidence, change, random };

struct ChallengeConfig {
  double feature_drop = 1.0 / 3.0;  // p
  double batch_drop = 1.0 / 3.0;    // b
  BatchScore score = BatchScore::confidence;
  bool per_domain = false;          // "D": keep-sets chosen within each domain
  bool schedule = false;            // "S": b grows linearly over training
  RscMode rsc_mode = RscMode::alternate;

  void validate() const;
  /// Short variant label such as "B", "C-D" or "T-D-S".
  std::string variant_name() const;
};

BatchScore parse_batch_score(const std::string& s);
RscMode parse_rsc_mode(const std::string& s);

enum class PoolAxis {
  spatial,  // mean over channels: [B,K,H,W] -> [B,H,W]
  channel   // mean over locations: [B,K,H,W] -> [B,K]
};

/// d(sum_b <head(z)_b, onehot_b>)/dz, computed on a detached copy of z.
Tensor target_gradient(const Tensor& z, const HeadFn& head, const Tensor& onehot);
Tensor pool_gradient(const Tensor& g, PoolAxis axis);

/// Per sample (leading dimension), zeroes the round(p*N) largest of the N trailing
/// entries; ties go to the lower flat index. Everything else is 1.
Tensor percentile_mask(const Tensor& scores, double p);

/// Indices of the round(fraction * n) largest finite scores, ties to the lower index,
/// returned as a 0/1 flag per entry. -inf scores are never selected.
std::vector<char> top_fraction(std::span<const double> scores, double fraction);

/// softmax(head(z))_gt - softmax(head(z * mask))_gt per sample. `mask` has z's shape.
std::vector<double> change_vector(const Tensor& z, const Tensor& mask, const HeadFn& head, const Tensor& onehot);

/// Resets to all-ones the masks (rows of the leading dimension) of samples that are
/// not among the round(b*B) highest scores.
Tensor revert_mask(const Tensor& mask, std::span<const double> scores, double b);
/// Same, with the keep-set chosen independently inside each domain group.
Tensor revert_mask_grouped(const Tensor& mask, std::span<const double> scores, double b,
                           std::span<const int> groups);

std::vector<double> select_batch_scores(BatchScore score, const Tensor& logits, const Tensor& masked_logits,
                                        const Tensor& onehot, Rng& rng);

double linear_schedule(long step, long total, double b_final);

/// Repeats a [B,H,W] spatial mask over K channels, or a [B,K] channel mask over HxW.
Tensor expand_mask(const Tensor& mask, const Shape& feature_shape);

struct ChallengeOutcome {
  Tensor mask;              // same shape as z, entries 0 or 1
  std::vector<char> kept;   // per sample: mask survived reversion
  std::size_t zero_count = 0;
  std::string mode;         // "spatial", "channel" or "cam"
};

/// Input of the last feature block, used for the spatial mode with pooled heads:
/// gradients are probed here and their channel mean is average-pooled by 2.
struct PreviousLayer {
  Tensor features;
  std::function<Var(const Var&)> to_z;
};

ChallengeOutcome rsc_step(const Tensor& z, const HeadFn& head, const Tensor& onehot, const ChallengeConfig& cfg,
                          Rng& rng, const PreviousLayer* previous = nullptr);

/// `domains` gives each sample's domain and is only read when cfg.per_domain is set.
ChallengeOutcome divcam_step(const Tensor& z, const HeadFn& head, const Tensor& onehot, const ChallengeConfig& cfg,
                             long step, long total, std::span<const int> domains, Rng& rng);

Var apply_mask(const Var& z, const Tensor& mask);

}  // namespace xdg
