#pragma once

#include <optional>
#include <vector>

#include "xdg/cam.hpp"
#include "xdg/nn.hpp"
#include "xdg/proto.hpp"

namespace xdg {

/// Featurizer, spatial pooling and a linear classifier. Pooling is a global average, or
/// threshold average pooling when `tap` is set.
class CamNet {
 public:
  CamNet(const FeaturizerConfig& cfg, int classes, Rng& rng, std::optional<double> tap = std::nullopt);

  Var pool(const Var& z) const;
  Var head(const Var& z) const { return fc_(pool(z)); }
  /// Head bound to this model; the model must outlive the returned function.
  HeadFn head_fn() const;
  Var logits(const Var& x) const { return head(featurizer_(x)); }

  const Featurizer& featurizer() const { return featurizer_; }
  const Linear& fc() const { return fc_; }
  std::vector<Var> parameters() const { return join({featurizer_.parameters(), fc_.parameters()}); }

 private:
  Featurizer featurizer_;
  Linear fc_;
  std::optional<double> tap_;
};

/// Featurizer -> adapter -> prototype layer -> linear map from prototype scores to classes.
/// With per-domain prototypes the model also carries one classifier per domain (uniform
/// and predictor ensembles) and, for the predictor ensemble, a domain predictor on pooled
/// features.
class ProtoNet {
 public:
  struct Options {
    std::size_t per_class = 5;
    double w_neg = -0.5;
    int domains = 0;  // 0: prototypes are shared by all domains
    EnsembleMode ensemble = EnsembleMode::masked;
  };
  ProtoNet(const FeaturizerConfig& cfg, int classes, const Options& opt, Rng& rng);

  struct Pass {
    Var z;         // featurizer output
    PrototypeActivations act;
  };
  Pass forward(const Var& x) const;

  /// Logits from (possibly masked) scores. `domain` routes to that domain's classifier
  /// or masks other domains' prototypes; without it every domain contributes.
  Var classify(const Var& scores, std::optional<int> domain, const Var& z) const;
  Var logits(const Var& x) const;
  /// Domain predictor logits [B, domains]; only for the predictor ensemble.
  Var domain_logits(const Var& z) const;

  const PrototypeSet& prototypes() const { return protos_; }
  const Featurizer& featurizer() const { return featurizer_; }
  const Adapter& adapter() const { return adapter_; }
  const std::vector<Var>& classifiers() const { return classifiers_; }
  int classes() const { return classes_; }
  int domains() const { return opt_.domains; }
  std::vector<Var> adapter_parameters() const { return adapter_.parameters(); }
  std::vector<Var> parameters() const;

 private:
  int classes_;
  Options opt_;
  Featurizer featurizer_;
  Adapter adapter_;
  PrototypeSet protos_;
  std::vector<Var> classifiers_;  // each [C, m]
  Linear predictor_;
};

}  // namespace xdg
