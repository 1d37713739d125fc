#include "xdg/models.hpp"

#include "xdg/align.hpp"
#include "xdg/ops.hpp"

namespace xdg {

CamNet::CamNet(const FeaturizerConfig& cfg, int classes, Rng& rng, std::optional<double> tap)
    : featurizer_(cfg, rng), fc_(make_linear(cfg.width, static_cast<std::size_t>(classes), rng, "fc")), tap_(tap) {}

Var CamNet::pool(const Var& z) const { return tap_ ? tap_pool(z, *tap_) : global_avg_pool(z); }

HeadFn CamNet::head_fn() const {
  return [this](const Var& z) { return head(z); };
}

ProtoNet::ProtoNet(const FeaturizerConfig& cfg, int classes, const Options& opt, Rng& rng)
    : classes_(classes), opt_(opt), featurizer_(cfg, rng), adapter_(make_adapter(cfg.width, rng)) {
  protos_ = make_prototypes(classes, opt.per_class, cfg.width, rng, opt.domains);
  const Tensor init = init_prototype_classifier(classes, protos_.class_of, opt.w_neg);
  const bool per_domain_layers =
      opt.domains > 0 && (opt.ensemble == EnsembleMode::uniform || opt.ensemble == EnsembleMode::predictor);
  if (per_domain_layers) {
    for (int d = 0; d < opt.domains; ++d) classifiers_.push_back(Var::parameter(init, "classifier" + std::to_string(d)));
  } else {
    classifiers_.push_back(Var::parameter(init, "classifier"));
  }
  if (opt.domains > 0 && opt.ensemble == EnsembleMode::predictor) {
    predictor_ = make_linear(cfg.width, static_cast<std::size_t>(opt.domains), rng, "domain_predictor");
  }
}

ProtoNet::Pass ProtoNet::forward(const Var& x) const {
  Pass p;
  p.z = featurizer_(x);
  p.act = prototype_similarity(adapter_(p.z), protos_);
  return p;
}

Var ProtoNet::domain_logits(const Var& z) const {
  if (!predictor_.weight.defined()) throw ValueError("model has no domain predictor");
  return predictor_(global_avg_pool(z));
}

Var ProtoNet::classify(const Var& scores, std::optional<int> domain, const Var& z) const {
  const std::size_t B = scores.shape()[0];
  if (opt_.domains == 0) return matmul(scores, transpose(classifiers_[0]));
  if (opt_.ensemble == EnsembleMode::masked) {
    const Tensor mask = domain_score_mask(protos_.domain_of, domain, B);
    return matmul(mul(scores, Var::constant(mask)), transpose(classifiers_[0]));
  }
  if (domain && (*domain < 0 || *domain >= opt_.domains)) {
    throw ValueError("unknown domain " + std::to_string(*domain));
  }
  std::vector<Var> layers;
  for (const auto& w : classifiers_) layers.push_back(matmul(scores, transpose(w)));
  Var weights;
  if (!domain && opt_.ensemble == EnsembleMode::predictor) weights = softmax_rows(domain_logits(z).detach());
  return ensemble_combine(opt_.ensemble, layers, domain, weights);
}

Var ProtoNet::logits(const Var& x) const {
  const Pass p = forward(x);
  return classify(p.act.scores, std::nullopt, p.z);
}

std::vector<Var> ProtoNet::parameters() const {
  std::vector<Var> out = join({featurizer_.parameters(), adapter_.parameters()});
  out.push_back(protos_.prototypes);
  for (const auto& w : classifiers_) out.push_back(w);
  if (predictor_.weight.defined()) {
    for (auto& p : predictor_.parameters()) out.push_back(p);
  }
  return out;
}

}  // namespace xdg
