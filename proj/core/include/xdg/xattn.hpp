#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xdg/datasets.hpp"
#include "xdg/nn.hpp"

namespace xdg {

/// Key, value and query projections (1x1 convolutions without bias). The value head
/// serves both support and query features.
struct AttentionHeads {
  Conv2d key, value, query;
  std::vector<Var> parameters() const;
};
AttentionHeads make_attention_heads(std::size_t channels, std::size_t d_k, std::size_t d_v, Rng& rng,
                                    const std::string& prefix = "attention");

/// Row-wise softmax of queries[Q,d] . keys[N,d]^T / sqrt(d): one distribution over the
/// N support locations per query location. Returns [Q,N].
Var attention_rows(const Var& queries, const Var& keys);

/// keys [n, L, d_k], query [L_q, d_k] -> weights [n*L, L_q]; every column sums to 1.
Tensor attention_weights(const Tensor& keys, const Tensor& query);
/// weights [N, L_q], values [N, d_v] -> one prototype per query location [L_q, d_v].
Tensor spatial_prototypes(const Tensor& weights, const Tensor& values);
/// prototypes[env][class] each [L, d_v], query values [L, d_v] ->
/// score[c] = sum_env (1/L) sum_p <prototype_p, value_p>.
std::vector<double> env_class_distance(const std::vector<std::vector<Tensor>>& prototypes, const Tensor& query_values);

/// Row indices of support images, [env][class] -> indices into that environment.
struct SupportSet {
  std::vector<std::vector<std::vector<std::size_t>>> rows;
};

/// Draws up to n_support images per (environment, class) without replacement, skipping
/// `exclude[env]` (sorted or not). Classes with fewer images contribute all of them.
SupportSet sample_support(const MultiDomainDataset& train, std::size_t n_support, std::uint64_t seed,
                          const std::vector<std::vector<std::size_t>>& exclude = {});

/// Classical prototypes: per class, the mean pooled support feature; logits are dot products.
/// support_pooled[c] is [n_c, K]; query_pooled is [B, K]. Returns [B, C].
Tensor classic_proto_baseline(const std::vector<Tensor>& support_pooled, const Tensor& query_pooled);

struct DTransformerConfig {
  FeaturizerConfig featurizer;
  std::size_t d_k = 64;
  std::size_t d_v = 64;
};

class DTransformer {
 public:
  DTransformer(const DTransformerConfig& cfg, Rng& rng);

  /// Class logits for query images given support images [env][class] -> [n, C, H, W].
  Var logits(const Var& queries, const std::vector<std::vector<Tensor>>& support) const;
  std::vector<Var> parameters() const;
  const Featurizer& featurizer() const { return featurizer_; }

 private:
  DTransformerConfig cfg_;
  Featurizer featurizer_;
  AttentionHeads heads_;
};

/// Gathers the support images named by `set` from `train`.
std::vector<std::vector<Tensor>> support_images(const MultiDomainDataset& train, const SupportSet& set);

}  // namespace xdg
