#include "xdg/proto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "xdg/ops.hpp"

namespace xdg {

void PrototypeSet::validate(int classes) const {
  if (!(epsilon > 0.0)) throw ValueError("prototype epsilon must be positive");
  if (!prototypes.defined() || prototypes.shape().size() != 4 || prototypes.shape()[0] != class_of.size()) {
    throw ShapeError("prototype tensor must be [m,K,hp,wp] with one class per prototype");
  }
  if (!domain_of.empty() && domain_of.size() != class_of.size()) throw ShapeError("one domain per prototype required");
  for (int c = 0; c < classes; ++c) {
    if (std::find(class_of.begin(), class_of.end(), c) == class_of.end()) {
      throw ValueError("class " + std::to_string(c) + " has no prototype");
    }
  }
}

PrototypeSet make_prototypes(int classes, std::size_t per_class, std::size_t channels, Rng& rng, int domains,
                             std::size_t side, const std::string& name) {
  if (classes < 1 || per_class < 1) throw ValueError("need at least one class and one prototype per class");
  PrototypeSet set;
  const int groups = std::max(domains, 1);
  for (int d = 0; d < groups; ++d)
    for (int c = 0; c < classes; ++c)
      for (std::size_t j = 0; j < per_class; ++j) {
        set.class_of.push_back(c);
        if (domains > 0) set.domain_of.push_back(d);
      }
  Tensor init({set.class_of.size(), channels, side, side});
  for (auto& v : init.data()) v = rng.uniform();
  set.prototypes = Var::parameter(std::move(init), name);
  return set;
}

double similarity(double sq_dist, double eps) { return std::log((sq_dist + 1.0) / (sq_dist + eps)); }

Var similarity(const Var& sq_dist, double eps) {
  return sub(log(add_scalar(sq_dist, 1.0)), log(add_scalar(sq_dist, eps)));
}

Var Adapter::operator()(const Var& z) const { return sigmoid(second(relu(first(z)))); }

std::vector<Var> Adapter::parameters() const { return join({first.parameters(), second.parameters()}); }

Adapter make_adapter(std::size_t channels, Rng& rng, const std::string& name) {
  return Adapter{make_conv(channels, channels, 1, 0, rng, name + ".conv0"),
                 make_conv(channels, channels, 1, 0, rng, name + ".conv1")};
}

PrototypeActivations prototype_similarity(const Var& features, const PrototypeSet& protos) {
  PrototypeActivations a;
  a.sq_dists = patch_sq_dists(features, protos.prototypes);
  a.maps = similarity(a.sq_dists, protos.epsilon);
  a.scores = global_max_pool(a.maps);
  a.min_sq = scale(global_max_pool(scale(a.sq_dists, -1.0)), -1.0);
  return a;
}

namespace {

// For each sample, the flat index into min_sq [B,m] of the smallest entry among the
// allowed prototypes (ties to the lower prototype index).
std::vector<std::size_t> closest(const Tensor& min_sq, std::span<const int> labels, std::span<const int> class_of,
                                 std::span<const int> domain_of, std::optional<int> domain, bool own) {
  const std::size_t B = min_sq.dim(0), m = min_sq.dim(1);
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = m;
    for (std::size_t j = 0; j < m; ++j) {
      if ((class_of[j] == labels[b]) != own) continue;
      if (domain && domain_of[j] != *domain) continue;
      if (best == m || min_sq.at(b, j) < min_sq.at(b, best)) best = j;
    }
    if (best == m) {
      throw ValueError(std::string("sample ") + std::to_string(b) + " has no " + (own ? "own-class" : "other-class") +
                       " prototype");
    }
    idx.push_back(b * m + best);
  }
  return idx;
}

ClusterSep cluster_sep_impl(const Var& min_sq, std::span<const int> labels, const PrototypeSet& protos,
                            std::optional<int> domain) {
  if (min_sq.shape().size() != 2 || min_sq.shape()[1] != protos.size() || min_sq.shape()[0] != labels.size()) {
    throw ShapeError("min distances " + shape_str(min_sq.shape()) + " do not match labels/prototypes");
  }
  ClusterSep out;
  out.cluster = mean(gather(min_sq, closest(min_sq.value(), labels, protos.class_of, protos.domain_of, domain, true)));
  out.separation =
      scale(mean(gather(min_sq, closest(min_sq.value(), labels, protos.class_of, protos.domain_of, domain, false))), -1.0);
  return out;
}

}  // namespace

ClusterSep cluster_sep_losses(const Var& min_sq, std::span<const int> labels, const PrototypeSet& protos) {
  return cluster_sep_impl(min_sq, labels, protos, std::nullopt);
}

ClusterSep domain_cluster_sep(std::span<const Var> min_sq_per_env, std::span<const std::vector<int>> labels_per_env,
                              std::span<const int> env_domain, const PrototypeSet& protos) {
  if (protos.domain_of.empty()) throw ValueError("prototypes carry no domain assignment");
  const std::size_t s = min_sq_per_env.size();
  if (s == 0 || labels_per_env.size() != s || env_domain.size() != s) {
    throw ShapeError("one distance matrix, label list and domain id per environment required");
  }
  std::vector<Var> cl, sp;
  for (std::size_t e = 0; e < s; ++e) {
    if (std::find(protos.domain_of.begin(), protos.domain_of.end(), env_domain[e]) == protos.domain_of.end()) {
      throw ValueError("environment " + std::to_string(env_domain[e]) + " has no prototypes");
    }
    auto r = cluster_sep_impl(min_sq_per_env[e], labels_per_env[e], protos, env_domain[e]);
    cl.push_back(r.cluster);
    sp.push_back(r.separation);
  }
  const double inv = 1.0 / static_cast<double>(s);
  return {scale(add_n(cl), inv), scale(add_n(sp), inv)};
}

Tensor init_prototype_classifier(int classes, std::span<const int> class_of, double w_neg) {
  Tensor w({static_cast<std::size_t>(classes), class_of.size()});
  for (std::size_t c = 0; c < w.dim(0); ++c)
    for (std::size_t j = 0; j < class_of.size(); ++j) w.at(c, j) = class_of[j] == static_cast<int>(c) ? 1.0 : w_neg;
  return w;
}

ProDropOutcome prodrop_mask(const Tensor& scores, std::span<const int> labels, std::span<const int> class_of,
                            double p, double b, std::span<const double> confidence) {
  if (!(p >= 0.0 && p <= 1.0) || !(b >= 0.0 && b <= 1.0)) throw ValueError("prodrop p and b must lie in [0,1]");
  const std::size_t B = scores.dim(0), m = scores.dim(1);
  if (labels.size() != B || confidence.size() != B || class_of.size() != m) {
    throw ShapeError("prodrop: labels, confidences and prototype classes must match the score matrix");
  }
  ProDropOutcome out;
  out.mask = Tensor(scores.shape(), 1.0);
  for (std::size_t s = 0; s < B; ++s) {
    std::vector<std::size_t> own;
    for (std::size_t j = 0; j < m; ++j) {
      if (class_of[j] == labels[s]) own.push_back(j);
    }
    std::stable_sort(own.begin(), own.end(), [&](std::size_t a, std::size_t c) { return scores.at(s, a) > scores.at(s, c); });
    const auto drop = static_cast<std::size_t>(std::llround(p * static_cast<double>(own.size())));
    for (std::size_t i = 0; i < drop; ++i) out.mask.at(s, own[i]) = 0.0;
  }
  // batch reversion on the most confident samples
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return confidence[a] > confidence[c]; });
  const auto keep = static_cast<std::size_t>(std::llround(b * static_cast<double>(B)));
  out.kept.assign(B, 0);
  for (std::size_t i = 0; i < keep; ++i) out.kept[order[i]] = 1;
  for (std::size_t s = 0; s < B; ++s) {
    if (!out.kept[s]) {
      for (std::size_t j = 0; j < m; ++j) out.mask.at(s, j) = 1.0;
    }
  }
  out.zero_count = static_cast<std::size_t>(std::count(out.mask.data().begin(), out.mask.data().end(), 0.0));
  return out;
}

Var intra_loss(const PrototypeSet& protos, double l2_weight, double cos_weight) {
  if (l2_weight < 0.0 || cos_weight < 0.0) throw ValueError("intra loss weights must be nonnegative");
  const Tensor& P = protos.prototypes.value();
  const std::size_t m = P.dim(0), D = P.size() / m;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      if (protos.class_of[i] == protos.class_of[j]) pairs.emplace_back(i, j);
    }
  std::vector<double> norm(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += P[i * D + d] * P[i * D + d];
    norm[i] = std::sqrt(s);
  }
  double total = 0.0;
  for (auto [i, j] : pairs) {
    double d2 = 0.0, dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double diff = P[i * D + d] - P[j * D + d];
      d2 += diff * diff;
      dot += P[i * D + d] * P[j * D + d];
    }
    const double cosd = (norm[i] == 0.0 || norm[j] == 0.0) ? 1.0 : 1.0 - dot / (norm[i] * norm[j]);
    total += l2_weight * std::sqrt(d2) + cos_weight * cosd;
  }
  auto values = std::make_shared<Tensor>(P);
  auto norms = std::make_shared<std::vector<double>>(std::move(norm));
  auto pair_list = std::make_shared<decltype(pairs)>(std::move(pairs));
  return make_op(Tensor::scalar(total), {protos.prototypes},
                 [=](const Tensor& g, std::span<Tensor* const> gin) {
                   const Tensor& V = *values;
                   Tensor& G = *gin[0];
                   const double gv = g[0];
                   for (auto [i, j] : *pair_list) {
                     double d2 = 0.0, dot = 0.0;
                     for (std::size_t d = 0; d < D; ++d) {
                       const double diff = V[i * D + d] - V[j * D + d];
                       d2 += diff * diff;
                       dot += V[i * D + d] * V[j * D + d];
                     }
                     const double dist = std::sqrt(d2);
                     if (dist > 0.0) {
                       for (std::size_t d = 0; d < D; ++d) {
                         const double t = gv * l2_weight * (V[i * D + d] - V[j * D + d]) / dist;
                         G[i * D + d] += t;
                         G[j * D + d] -= t;
                       }
                     }
                     const double ni = (*norms)[i], nj = (*norms)[j];
                     if (ni > 0.0 && nj > 0.0) {
                       // d(-cos)/dpi = -(pj/(ni nj) - cos * pi / ni^2)
                       const double cs = dot / (ni * nj);
                       for (std::size_t d = 0; d < D; ++d) {
                         G[i * D + d] -= gv * cos_weight * (V[j * D + d] / (ni * nj) - cs * V[i * D + d] / (ni * ni));
                         G[j * D + d] -= gv * cos_weight * (V[i * D + d] / (ni * nj) - cs * V[j * D + d] / (nj * nj));
                       }
                     }
                   }
                 });
}

DistanceMatrices pairwise_distances(const Tensor& prototypes) {
  if (prototypes.rank() < 1 || prototypes.dim(0) == 0) throw ShapeError("need at least one prototype");
  const std::size_t m = prototypes.dim(0), D = prototypes.size() / m;
  DistanceMatrices out{Tensor({m, m}), Tensor({m, m})};
  std::vector<double> norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += prototypes[i * D + d] * prototypes[i * D + d];
    norm[i] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double d2 = 0.0, dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double a = prototypes[i * D + d], b = prototypes[j * D + d];
        d2 += (a - b) * (a - b);
        dot += a * b;
      }
      double cosd = 1.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) cosd = 1.0 - std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      if (i == j) {
        d2 = 0.0;
        if (norm[i] > 0.0) cosd = 0.0;
      }
      out.l2.at(i, j) = out.l2.at(j, i) = std::sqrt(d2);
      out.cosine.at(i, j) = out.cosine.at(j, i) = cosd;
    }
  return out;
}

std::string matrix_csv(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("matrix_csv expects a 2-d tensor");
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) os << (j ? "," : "") << m.at(i, j);
    os << '\n';
  }
  return os.str();
}

EnsembleMode parse_ensemble_mode(const std::string& s) {
  if (s == "uniform") return EnsembleMode::uniform;
  if (s == "predictor") return EnsembleMode::predictor;
  if (s == "masked") return EnsembleMode::masked;
  throw ValueError("unknown ensemble mode '" + s + "'");
}

Var ensemble_combine(EnsembleMode mode, std::span<const Var> layer_logits, std::optional<int> domain,
                     const Var& predictor_weights) {
  const std::size_t s = layer_logits.size();
  if (s == 0) throw ValueError("ensemble needs at least one layer");
  if (mode == EnsembleMode::masked) {
    if (s != 1) throw ValueError("masked ensembles use a single prototype layer");
    return layer_logits[0];
  }
  if (domain) {
    if (*domain < 0 || static_cast<std::size_t>(*domain) >= s) {
      throw ValueError("unknown training domain " + std::to_string(*domain));
    }
    return layer_logits[static_cast<std::size_t>(*domain)];
  }
  if (s == 1) return layer_logits[0];
  if (mode == EnsembleMode::uniform) {
    Var acc = layer_logits[0];
    for (std::size_t l = 1; l < s; ++l) acc = add(acc, layer_logits[l]);
    return scale(acc, 1.0 / static_cast<double>(s));
  }

  const auto& shape = layer_logits[0].shape();
  const std::size_t B = shape[0], C = shape[1];
  if (!predictor_weights.defined() || predictor_weights.shape() != Shape{B, s}) {
    throw ShapeError("predictor weights must be [B, layers]");
  }
  Tensor y({B, C});
  for (std::size_t l = 0; l < s; ++l)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) y.at(b, c) += predictor_weights.value().at(b, l) * layer_logits[l].value().at(b, c);
  std::vector<Var> parents(layer_logits.begin(), layer_logits.end());
  parents.push_back(predictor_weights);
  std::vector<Tensor> vals;
  for (const auto& v : parents) vals.push_back(v.value());
  auto saved = std::make_shared<std::vector<Tensor>>(std::move(vals));
  return make_op(std::move(y), std::move(parents), [saved, s, B, C](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& w = (*saved)[s];
    for (std::size_t l = 0; l < s; ++l)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          if (gin[l]) gin[l]->at(b, c) += g.at(b, c) * w.at(b, l);
          if (gin[s]) gin[s]->at(b, l) += g.at(b, c) * (*saved)[l].at(b, c);
        }
  });
}

Tensor domain_score_mask(std::span<const int> domain_of, std::optional<int> domain, std::size_t batch) {
  const std::size_t m = domain_of.size();
  Tensor mask({batch, m}, 1.0);
  if (!domain) return mask;
  if (std::find(domain_of.begin(), domain_of.end(), *domain) == domain_of.end()) {
    throw ValueError("unknown training domain " + std::to_string(*domain));
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < m; ++j) mask.at(b, j) = domain_of[j] == *domain ? 1.0 : 0.0;
  return mask;
}

}  // namespace xdg
