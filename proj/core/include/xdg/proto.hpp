#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xdg/nn.hpp"

namespace xdg {

struct PrototypeSet {
  Var prototypes;               // [m, K, hp, wp]
  std::vector<int> class_of;    // [m]
  std::vector<int> domain_of;   // [m] or empty
  double epsilon = 1e-4;

  std::size_t size() const { return class_of.size(); }
  /// Every class in [0, classes) needs a prototype; epsilon must be positive.
  void validate(int classes) const;
};

/// `per_class` prototypes for every class (and for every domain when domains > 0),
/// initialized uniformly in [0,1) like the sigmoid-bounded features they are compared to.
PrototypeSet make_prototypes(int classes, std::size_t per_class, std::size_t channels, Rng& rng, int domains = 0,
                             std::size_t side = 1, const std::string& name = "prototypes");

/// log((d2 + 1) / (d2 + eps)).
double similarity(double sq_dist, double eps);
Var similarity(const Var& sq_dist, double eps);

/// 1x1 conv -> relu -> 1x1 conv -> sigmoid between the featurizer and the prototypes.
struct Adapter {
  Conv2d first, second;
  Var operator()(const Var& z) const;
  std::vector<Var> parameters() const;
};
Adapter make_adapter(std::size_t channels, Rng& rng, const std::string& name = "adapter");

struct PrototypeActivations {
  Var sq_dists;  // [B, m, H', W']
  Var maps;      // similarity per patch
  Var scores;    // [B, m], best similarity over patches
  Var min_sq;    // [B, m], smallest squared distance over patches
};

/// Compares already adapted features with every prototype.
PrototypeActivations prototype_similarity(const Var& features, const PrototypeSet& protos);

struct ClusterSep {
  Var cluster;     // mean over samples of the closest own-class prototype distance
  Var separation;  // minus the mean closest other-class prototype distance
};

ClusterSep cluster_sep_losses(const Var& min_sq, std::span<const int> labels, const PrototypeSet& protos);
/// Per environment, restricted to that environment's prototypes, then averaged.
ClusterSep domain_cluster_sep(std::span<const Var> min_sq_per_env, std::span<const std::vector<int>> labels_per_env,
                              std::span<const int> env_domain, const PrototypeSet& protos);

/// [C, m]: 1 where the prototype belongs to the class, w_neg elsewhere.
Tensor init_prototype_classifier(int classes, std::span<const int> class_of, double w_neg);

struct ProDropOutcome {
  Tensor mask;  // [B, m]
  std::vector<char> kept;
  std::size_t zero_count = 0;
};

/// Zeroes, per sample, the round(p * |own-class prototypes|) highest own-class scores,
/// then keeps masks only for the round(b * B) samples with the highest `confidence`.
ProDropOutcome prodrop_mask(const Tensor& scores, std::span<const int> labels, std::span<const int> class_of,
                            double p, double b, std::span<const double> confidence);

/// sum over unordered same-class pairs of l2_weight * |pi - pj| + cos_weight * (1 - cos(pi, pj)).
/// A zero-norm prototype has cosine distance 1 to everything.
Var intra_loss(const PrototypeSet& protos, double l2_weight, double cos_weight);

struct DistanceMatrices {
  Tensor l2;      // [m, m]
  Tensor cosine;  // [m, m], 1 - cos
};
DistanceMatrices pairwise_distances(const Tensor& prototypes);
std::string matrix_csv(const Tensor& m);

enum class EnsembleMode { uniform, predictor, masked };
EnsembleMode parse_ensemble_mode(const std::string& s);

/// Combines per-domain layer logits. With a training domain the matching layer is
/// selected (one-hot routing). At test time (no domain) the layers are averaged with
/// weight 1/s (uniform) or weighted by `predictor_weights` [B, s] (predictor).
Var ensemble_combine(EnsembleMode mode, std::span<const Var> layer_logits, std::optional<int> domain,
                     const Var& predictor_weights = {});

/// Masked mode: [B, m] with ones on prototypes of `domain`, zeros elsewhere; all ones
/// when no domain is given (test time). Unknown domains are rejected.
Tensor domain_score_mask(std::span<const int> domain_of, std::optional<int> domain, std::size_t batch);

}  // namespace xdg
