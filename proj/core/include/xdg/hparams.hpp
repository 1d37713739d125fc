#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "xdg/challenge.hpp"
#include "xdg/proto.hpp"
#include "xdg/random.hpp"

namespace xdg {

/// Invalid configuration. `path()` names the offending field, e.g. "hparams.lr".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class Algorithm { erm, rsc, divcam, divcam_tap, divcam_hnc, divcam_mmd, divcam_cdann, protodrop, dtransformer };
/// Accepts "divcam+tap" as well as "divcam_tap".
Algorithm parse_algorithm(const std::string& s);
std::string to_string(Algorithm a);
bool needs_multiple_domains(Algorithm a);

enum class OptimizerKind { adam, sgd };
OptimizerKind parse_optimizer(const std::string& s);
std::string to_string(OptimizerKind k);

enum class SearchTable { mask_study, batching_study };
SearchTable parse_search_table(const std::string& s);
std::string to_string(SearchTable t);

struct HyperParams {
  // optimization
  double lr = 1e-3;
  std::size_t batch_size = 32;  // per training environment
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool lr_decay = false;  // x0.1 at 80% of the steps
  std::size_t total_steps = 2000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;

  // backbone
  std::size_t width = 64;
  std::size_t blocks = 3;

  // self-challenging
  ChallengeConfig challenge;

  // auxiliary losses
  double lambda_hnc = 1e-2;
  int top_m = 0;  // 0 means all negative classes
  double lambda_tap = 0.5;
  double lambda_adv = 1.0;
  std::size_t disc_steps = 1;
  double grad_penalty = 1.0;
  double lambda_mmd = 1.0;
  std::size_t disc_width = 512;
  std::size_t disc_depth = 3;
  double disc_dropout = 0.5;

  // prototypes
  double lambda_clst = 0.8;
  double lambda_sep = 0.08;
  double lambda_intra = 0.0;
  double intra_l2 = 1.0;
  double intra_cos = 1.0;
  double w_neg = -0.5;
  std::size_t per_class = 5;
  std::size_t warmup_steps = 100;
  bool domain_prototypes = false;
  EnsembleMode ensemble = EnsembleMode::masked;

  // cross-attention
  std::size_t n_support = 4;
  std::size_t d_k = 64;
  std::size_t d_v = 64;

  /// Throws ConfigError naming the field.
  void validate() const;
};

/// Defaults with the per-algorithm adjustments (prototype dropping uses p = 0.5).
HyperParams default_hyperparams(Algorithm a);

/// Draws one configuration from the search table, keeping every field the table does not
/// mention at its value in `base`.
HyperParams sample_hyperparams(SearchTable table, Rng& rng, const HyperParams& base = {});

/// Strict JSON round trip: unknown keys and wrongly typed values raise ConfigError with
/// `prefix` prepended to the field path.
std::string hyperparams_to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const std::string& json, const HyperParams& base = {},
                                  const std::string& prefix = "hparams");

}  // namespace xdg
