#include "xdg/xattn.hpp"

#include <algorithm>
#include <cmath>

#include "xdg/ops.hpp"
#include "xdg/random.hpp"

namespace xdg {

std::vector<Var> AttentionHeads::parameters() const {
  return join({key.parameters(), value.parameters(), query.parameters()});
}

AttentionHeads make_attention_heads(std::size_t channels, std::size_t d_k, std::size_t d_v, Rng& rng,
                                    const std::string& prefix) {
  return AttentionHeads{make_conv(channels, d_k, 1, 0, rng, prefix + ".key", false),
                        make_conv(channels, d_v, 1, 0, rng, prefix + ".value", false),
                        make_conv(channels, d_k, 1, 0, rng, prefix + ".query", false)};
}

Var attention_rows(const Var& queries, const Var& keys) {
  if (queries.shape().size() != 2 || keys.shape().size() != 2 || queries.shape()[1] != keys.shape()[1]) {
    throw ShapeError("attention needs [Q,d] queries and [N,d] keys, got " + shape_str(queries.shape()) + " and " +
                     shape_str(keys.shape()));
  }
  const double tau = std::sqrt(static_cast<double>(keys.shape()[1]));
  return softmax_rows(scale(matmul(queries, transpose(keys)), 1.0 / tau));
}

Tensor attention_weights(const Tensor& keys, const Tensor& query) {
  if (keys.rank() != 3 || query.rank() != 2 || keys.dim(2) != query.dim(1)) {
    throw ShapeError("attention_weights needs keys [n,L,d] and query [Lq,d], got " + shape_str(keys.shape()) +
                     " and " + shape_str(query.shape()));
  }
  const Tensor flat = keys.reshaped({keys.dim(0) * keys.dim(1), keys.dim(2)});
  return transpose(attention_rows(Var::constant(query), Var::constant(flat))).value();
}

Tensor spatial_prototypes(const Tensor& weights, const Tensor& values) {
  if (weights.rank() != 2 || values.rank() != 2 || weights.dim(0) != values.dim(0)) {
    throw ShapeError("spatial_prototypes needs weights [N,Lq] and values [N,d], got " + shape_str(weights.shape()) +
                     " and " + shape_str(values.shape()));
  }
  return matmul(transpose(Var::constant(weights)), Var::constant(values)).value();
}

std::vector<double> env_class_distance(const std::vector<std::vector<Tensor>>& prototypes, const Tensor& query_values) {
  if (prototypes.empty()) throw ValueError("no training environments");
  const std::size_t C = prototypes.front().size();
  const std::size_t L = query_values.dim(0);
  std::vector<double> score(C, 0.0);
  for (std::size_t e = 0; e < prototypes.size(); ++e) {
    if (prototypes[e].size() != C) {
      throw ValueError("environment " + std::to_string(e) + " is missing class support");
    }
    for (std::size_t c = 0; c < C; ++c) {
      const Tensor& p = prototypes[e][c];
      if (!p.same_shape(query_values)) throw ShapeError("prototype and query value shapes differ");
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * query_values[i];
      score[c] += s / static_cast<double>(L);
    }
  }
  return score;
}

SupportSet sample_support(const MultiDomainDataset& train, std::size_t n_support, std::uint64_t seed,
                          const std::vector<std::vector<std::size_t>>& exclude) {
  if (n_support == 0) throw ValueError("n_support must be positive");
  SupportSet set;
  for (std::size_t e = 0; e < train.envs.size(); ++e) {
    const auto& env = train.envs[e];
    std::vector<char> banned(env.size(), 0);
    if (e < exclude.size()) {
      for (auto r : exclude[e]) banned.at(r) = 1;
    }
    Rng rng(mix_seed(seed, e));
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(train.classes));
    for (std::size_t i = 0; i < env.size(); ++i) {
      if (!banned[i]) per_class[static_cast<std::size_t>(env.labels[i])].push_back(i);
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      auto& rows = per_class[c];
      if (rows.empty()) {
        throw ValueError("class " + std::to_string(c) + " is absent from environment " + std::to_string(e) +
                         " (domain " + std::to_string(env.domain_id) + ")");
      }
      rng.shuffle(rows);
      if (rows.size() > n_support) rows.resize(n_support);
      std::sort(rows.begin(), rows.end());
    }
    set.rows.push_back(std::move(per_class));
  }
  return set;
}

Tensor classic_proto_baseline(const std::vector<Tensor>& support_pooled, const Tensor& query_pooled) {
  const std::size_t C = support_pooled.size();
  if (C == 0 || query_pooled.rank() != 2) throw ShapeError("classic baseline needs class supports and [B,K] queries");
  const std::size_t B = query_pooled.dim(0), K = query_pooled.dim(1);
  Tensor logits({B, C});
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor& s = support_pooled[c];
    if (s.rank() != 2 || s.dim(1) != K) throw ShapeError("support features must be [n,K]");
    std::vector<double> proto(K, 0.0);
    for (std::size_t i = 0; i < s.dim(0); ++i)
      for (std::size_t k = 0; k < K; ++k) proto[k] += s.at(i, k);
    for (auto& v : proto) v /= static_cast<double>(s.dim(0));
    for (std::size_t b = 0; b < B; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += proto[k] * query_pooled.at(b, k);
      logits.at(b, c) = dot;
    }
  }
  return logits;
}

DTransformer::DTransformer(const DTransformerConfig& cfg, Rng& rng)
    : cfg_(cfg),
      featurizer_(cfg.featurizer, rng),
      heads_(make_attention_heads(cfg.featurizer.width, cfg.d_k, cfg.d_v, rng)) {}

Var DTransformer::logits(const Var& queries, const std::vector<std::vector<Tensor>>& support) const {
  if (support.empty() || support.front().empty()) throw ValueError("support set is empty");
  const std::size_t E = support.size(), C = support.front().size();

  // one featurizer pass over every support image
  std::vector<Tensor> parts;
  std::vector<std::size_t> offsets{0};
  for (const auto& env : support) {
    if (env.size() != C) throw ValueError("every environment needs support for every class");
    for (const auto& imgs : env) {
      parts.push_back(imgs);
      offsets.push_back(offsets.back() + imgs.dim(0));
    }
  }
  const Var zs = featurizer_(Var::constant(concat0(parts)));
  const Var keys_all = heads_.key(zs);
  const Var values_all = heads_.value(zs);

  const Var zq = featurizer_(queries);
  const std::size_t B = zq.shape()[0], L = zq.shape()[2] * zq.shape()[3];
  const Var q_rows = nchw_to_rows(heads_.query(zq));     // [B*L, d_k]
  const Var w_rows = nchw_to_rows(heads_.value(zq));     // [B*L, d_v]
  const Var ones = Var::constant(Tensor({L * cfg_.d_v, 1}, 1.0));

  std::vector<Var> columns;  // per class, [1, B]
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<Var> per_env;
    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t part = e * C + c;
      const Var k_rows = nchw_to_rows(slice0(keys_all, offsets[part], offsets[part + 1]));
      const Var v_rows = nchw_to_rows(slice0(values_all, offsets[part], offsets[part + 1]));
      const Var protos = matmul(attention_rows(q_rows, k_rows), v_rows);  // [B*L, d_v]
      const Var dots = reshape(mul(protos, w_rows), {B, L * cfg_.d_v});
      per_env.push_back(matmul(dots, ones));                              // [B, 1]
    }
    Var acc = per_env[0];
    for (std::size_t e = 1; e < E; ++e) acc = add(acc, per_env[e]);
    columns.push_back(transpose(scale(acc, 1.0 / static_cast<double>(L))));
  }
  return transpose(concat0(columns));
}

std::vector<Var> DTransformer::parameters() const { return join({featurizer_.parameters(), heads_.parameters()}); }

std::vector<std::vector<Tensor>> support_images(const MultiDomainDataset& train, const SupportSet& set) {
  std::vector<std::vector<Tensor>> out;
  for (std::size_t e = 0; e < set.rows.size(); ++e) {
    std::vector<Tensor> per_class;
    for (const auto& rows : set.rows[e]) per_class.push_back(take0(train.envs[e].images, rows));
    out.push_back(std::move(per_class));
  }
  return out;
}

}  // namespace xdg
