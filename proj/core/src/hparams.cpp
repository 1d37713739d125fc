#include "xdg/hparams.hpp"

#include <cmath>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

namespace xdg {

using json = nlohmann::ordered_json;

namespace {

struct AlgorithmName {
  Algorithm algorithm;
  const char* name;
};
constexpr AlgorithmName kAlgorithms[] = {
    {Algorithm::erm, "erm"},
    {Algorithm::rsc, "rsc"},
    {Algorithm::divcam, "divcam"},
    {Algorithm::divcam_tap, "divcam+tap"},
    {Algorithm::divcam_hnc, "divcam+hnc"},
    {Algorithm::divcam_mmd, "divcam+mmd"},
    {Algorithm::divcam_cdann, "divcam+cdann"},
    {Algorithm::protodrop, "protodrop"},
    {Algorithm::dtransformer, "dtransformer"},
};

}  // namespace

Algorithm parse_algorithm(const std::string& s) {
  std::string key = s;
  for (auto& ch : key) {
    if (ch == '_') ch = '+';
  }
  for (const auto& a : kAlgorithms) {
    if (key == a.name) return a.algorithm;
  }
  throw ValueError("unknown algorithm '" + s + "'");
}

std::string to_string(Algorithm a) {
  for (const auto& e : kAlgorithms) {
    if (e.algorithm == a) return e.name;
  }
  return "?";
}

bool needs_multiple_domains(Algorithm a) { return a == Algorithm::divcam_mmd || a == Algorithm::divcam_cdann; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ValueError("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

SearchTable parse_search_table(const std::string& s) {
  if (s == "mask_study") return SearchTable::mask_study;
  if (s == "batching_study") return SearchTable::batching_study;
  throw ValueError("unknown search table '" + s + "'");
}

std::string to_string(SearchTable t) { return t == SearchTable::mask_study ? "mask_study" : "batching_study"; }

void HyperParams::validate() const {
  auto need = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(std::string("hparams.") + field, what);
  };
  need(lr > 0.0 && std::isfinite(lr), "lr", "must be positive");
  need(batch_size >= 1, "batch_size", "must be at least 1");
  need(weight_decay >= 0.0, "weight_decay", "must be nonnegative");
  need(total_steps >= 1, "total_steps", "must be at least 1");
  need(eval_every >= 1, "eval_every", "must be at least 1");
  need(width >= 1, "width", "must be at least 1");
  need(blocks >= 1, "blocks", "must be at least 1");
  need(challenge.feature_drop >= 0.0 && challenge.feature_drop < 1.0, "feature_drop", "must lie in [0,1)");
  need(challenge.batch_drop >= 0.0 && challenge.batch_drop <= 1.0, "batch_drop", "must lie in [0,1]");
  need(lambda_hnc >= 0.0, "lambda_hnc", "must be nonnegative");
  need(top_m >= 0, "top_m", "must be nonnegative");
  need(lambda_tap >= 0.0 && lambda_tap < 1.0, "lambda_tap", "must lie in [0,1)");
  need(lambda_adv >= 0.0, "lambda_adv", "must be nonnegative");
  need(disc_steps >= 1, "disc_steps", "must be at least 1");
  need(grad_penalty >= 0.0, "grad_penalty", "must be nonnegative");
  need(lambda_mmd >= 0.0, "lambda_mmd", "must be nonnegative");
  need(disc_width >= 1, "disc_width", "must be at least 1");
  need(disc_depth >= 2, "disc_depth", "must be at least 2");
  need(disc_dropout >= 0.0 && disc_dropout < 1.0, "disc_dropout", "must lie in [0,1)");
  need(lambda_clst >= 0.0, "lambda_clst", "must be nonnegative");
  need(lambda_sep >= 0.0, "lambda_sep", "must be nonnegative");
  need(lambda_intra >= 0.0, "lambda_intra", "must be nonnegative");
  need(intra_l2 >= 0.0, "intra_l2", "must be nonnegative");
  need(intra_cos >= 0.0, "intra_cos", "must be nonnegative");
  need(per_class >= 1, "per_class", "must be at least 1");
  need(n_support >= 1, "n_support", "must be at least 1");
  need(d_k >= 1, "d_k", "must be at least 1");
  need(d_v >= 1, "d_v", "must be at least 1");
}

HyperParams default_hyperparams(Algorithm a) {
  HyperParams hp;
  if (a == Algorithm::protodrop) {
    hp.challenge.feature_drop = 0.5;
    hp.challenge.batch_drop = 1.0 / 3.0;
  }
  return hp;
}

HyperParams sample_hyperparams(SearchTable table, Rng& rng, const HyperParams& base) {
  HyperParams hp = base;
  auto log_uniform = [&](double lo, double hi) { return std::pow(10.0, rng.uniform(lo, hi)); };
  auto pow2_floor = [&](double lo, double hi) {
    return static_cast<std::size_t>(std::floor(std::pow(2.0, rng.uniform(lo, hi))));
  };
  if (table == SearchTable::mask_study) {
    hp.lr = log_uniform(-5.0, -3.5);
    hp.batch_size = pow2_floor(3.0, 5.5);
    hp.weight_decay = log_uniform(-6.0, -2.0);
    hp.challenge.feature_drop = rng.uniform(0.2, 0.5);
    hp.challenge.batch_drop = rng.uniform(0.0, 1.0);
    hp.lambda_hnc = log_uniform(-3.0, -1.0);
    hp.lambda_tap = rng.uniform(0.0, 1.0);
    hp.lambda_adv = log_uniform(-2.0, 2.0);
    hp.disc_steps = pow2_floor(0.0, 3.0);
    hp.grad_penalty = log_uniform(-2.0, 1.0);
    hp.lambda_mmd = log_uniform(-1.0, 1.0);
    hp.top_m = 0;
  } else {
    hp.lr = log_uniform(-5.0, -1.0);
    hp.batch_size = pow2_floor(3.0, 9.0);
    hp.weight_decay = log_uniform(-6.0, -2.0);
    hp.challenge.feature_drop = 1.0 / 3.0;
    hp.challenge.batch_drop = rng.uniform(0.0, 1.0);
    hp.lr_decay = true;
  }
  return hp;
}

namespace {

using Setter = std::function<void(const json&, HyperParams&, const std::string&)>;

template <class T>
T get_as(const json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
  } else {
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(path, "must be nonnegative");
    }
    return v.get<T>();
  }
}

template <class T>
Setter field(T HyperParams::*member) {
  return [member](const json& v, HyperParams& hp, const std::string& path) { hp.*member = get_as<T>(v, path); };
}

template <class T>
Setter challenge_field(T ChallengeConfig::*member) {
  return [member](const json& v, HyperParams& hp, const std::string& path) {
    hp.challenge.*member = get_as<T>(v, path);
  };
}

template <class F>
Setter parsed(F assign) {
  return [assign](const json& v, HyperParams& hp, const std::string& path) {
    const auto s = get_as<std::string>(v, path);
    try {
      assign(hp, s);
    } catch (const ValueError& e) {
      throw ConfigError(path, e.what());
    }
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"lr", field(&HyperParams::lr)},
      {"batch_size", field(&HyperParams::batch_size)},
      {"weight_decay", field(&HyperParams::weight_decay)},
      {"optimizer", parsed([](HyperParams& hp, const std::string& s) { hp.optimizer = parse_optimizer(s); })},
      {"lr_decay", field(&HyperParams::lr_decay)},
      {"total_steps", field(&HyperParams::total_steps)},
      {"eval_every", field(&HyperParams::eval_every)},
      {"seed", field(&HyperParams::seed)},
      {"width", field(&HyperParams::width)},
      {"blocks", field(&HyperParams::blocks)},
      {"feature_drop", challenge_field(&ChallengeConfig::feature_drop)},
      {"batch_drop", challenge_field(&ChallengeConfig::batch_drop)},
      {"batch_score",
       parsed([](HyperParams& hp, const std::string& s) { hp.challenge.score = parse_batch_score(s); })},
      {"per_domain", challenge_field(&ChallengeConfig::per_domain)},
      {"schedule", challenge_field(&ChallengeConfig::schedule)},
      {"rsc_mode", parsed([](HyperParams& hp, const std::string& s) { hp.challenge.rsc_mode = parse_rsc_mode(s); })},
      {"lambda_hnc", field(&HyperParams::lambda_hnc)},
      {"top_m", field(&HyperParams::top_m)},
      {"lambda_tap", field(&HyperParams::lambda_tap)},
      {"lambda_adv", field(&HyperParams::lambda_adv)},
      {"disc_steps", field(&HyperParams::disc_steps)},
      {"grad_penalty", field(&HyperParams::grad_penalty)},
      {"lambda_mmd", field(&HyperParams::lambda_mmd)},
      {"disc_width", field(&HyperParams::disc_width)},
      {"disc_depth", field(&HyperParams::disc_depth)},
      {"disc_dropout", field(&HyperParams::disc_dropout)},
      {"lambda_clst", field(&HyperParams::lambda_clst)},
      {"lambda_sep", field(&HyperParams::lambda_sep)},
      {"lambda_intra", field(&HyperParams::lambda_intra)},
      {"intra_l2", field(&HyperParams::intra_l2)},
      {"intra_cos", field(&HyperParams::intra_cos)},
      {"w_neg", field(&HyperParams::w_neg)},
      {"per_class", field(&HyperParams::per_class)},
      {"warmup_steps", field(&HyperParams::warmup_steps)},
      {"domain_prototypes", field(&HyperParams::domain_prototypes)},
      {"ensemble", parsed([](HyperParams& hp, const std::string& s) { hp.ensemble = parse_ensemble_mode(s); })},
      {"n_support", field(&HyperParams::n_support)},
      {"d_k", field(&HyperParams::d_k)},
      {"d_v", field(&HyperParams::d_v)},
  };
  return table;
}

std::string score_name(BatchScore s) {
  switch (s) {
    case BatchScore::confidence: return "B";
    case BatchScore::change: return "C";
    case BatchScore::random: return "T";
  }
  return "?";
}

std::string rsc_name(RscMode m) {
  switch (m) {
    case RscMode::spatial: return "spatial";
    case RscMode::channel: return "channel";
    case RscMode::alternate: return "alternate";
  }
  return "?";
}

std::string ensemble_name(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::uniform: return "uniform";
    case EnsembleMode::predictor: return "predictor";
    case EnsembleMode::masked: return "masked";
  }
  return "?";
}

}  // namespace

std::string hyperparams_to_json(const HyperParams& hp) {
  json j;
  j["lr"] = hp.lr;
  j["batch_size"] = hp.batch_size;
  j["weight_decay"] = hp.weight_decay;
  j["optimizer"] = to_string(hp.optimizer);
  j["lr_decay"] = hp.lr_decay;
  j["total_steps"] = hp.total_steps;
  j["eval_every"] = hp.eval_every;
  j["seed"] = hp.seed;
  j["width"] = hp.width;
  j["blocks"] = hp.blocks;
  j["feature_drop"] = hp.challenge.feature_drop;
  j["batch_drop"] = hp.challenge.batch_drop;
  j["batch_score"] = score_name(hp.challenge.score);
  j["per_domain"] = hp.challenge.per_domain;
  j["schedule"] = hp.challenge.schedule;
  j["rsc_mode"] = rsc_name(hp.challenge.rsc_mode);
  j["lambda_hnc"] = hp.lambda_hnc;
  j["top_m"] = hp.top_m;
  j["lambda_tap"] = hp.lambda_tap;
  j["lambda_adv"] = hp.lambda_adv;
  j["disc_steps"] = hp.disc_steps;
  j["grad_penalty"] = hp.grad_penalty;
  j["lambda_mmd"] = hp.lambda_mmd;
  j["disc_width"] = hp.disc_width;
  j["disc_depth"] = hp.disc_depth;
  j["disc_dropout"] = hp.disc_dropout;
  j["lambda_clst"] = hp.lambda_clst;
  j["lambda_sep"] = hp.lambda_sep;
  j["lambda_intra"] = hp.lambda_intra;
  j["intra_l2"] = hp.intra_l2;
  j["intra_cos"] = hp.intra_cos;
  j["w_neg"] = hp.w_neg;
  j["per_class"] = hp.per_class;
  j["warmup_steps"] = hp.warmup_steps;
  j["domain_prototypes"] = hp.domain_prototypes;
  j["ensemble"] = ensemble_name(hp.ensemble);
  j["n_support"] = hp.n_support;
  j["d_k"] = hp.d_k;
  j["d_v"] = hp.d_v;
  return j.dump();
}

HyperParams hyperparams_from_json(const std::string& text, const HyperParams& base, const std::string& prefix) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(prefix, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError(prefix, "expected an object");
  HyperParams hp = base;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix + "." + key;
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError(path, "unknown key");
    try {
      it->second(value, hp, path);
    } catch (const json::exception& e) {
      throw ConfigError(path, e.what());
    }
  }
  try {
    hp.validate();
  } catch (const ConfigError& e) {
    // re-root the field path under the caller's prefix
    const std::string tail = e.path().substr(std::string("hparams").size());
    throw ConfigError(prefix + tail, std::string(e.what()).substr(e.path().size() + 2));
  }
  return hp;
}

}  // namespace xdg
