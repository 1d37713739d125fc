#include "xdg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>

#include <nlohmann/json.hpp>

#include "xdg/align.hpp"
#include "xdg/models.hpp"
#include "xdg/ops.hpp"
#include "xdg/optim.hpp"
#include "xdg/xattn.hpp"

namespace xdg {

using json = nlohmann::ordered_json;

void DatasetSpec::validate() const {
  if (name != "cmnist" && name != "rmnist" && name != "glyphs") {
    throw ConfigError("dataset.name", "expected cmnist, rmnist or glyphs, got '" + name + "'");
  }
  if (digits < 10) throw ConfigError("dataset.digits", "must be at least 10");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("dataset.label_noise", "must lie in [0,1]");
  for (double p : domain_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dataset.domain_probs", "entries must lie in [0,1]");
  }
  const std::size_t envs = name == "cmnist" ? domain_probs.size()
                           : name == "rmnist" ? angles.size()
                                              : static_cast<std::size_t>(std::max(glyphs.domains, 0));
  if (envs < 2) throw ConfigError("dataset", "at least two environments are required");
  if (test_env < -1 || test_env >= static_cast<int>(envs)) {
    throw ConfigError("dataset.test_env", "out of range for " + std::to_string(envs) + " environments");
  }
}

int DatasetSpec::resolved_test_env(std::size_t env_count) const {
  return test_env < 0 ? static_cast<int>(env_count) - 1 : test_env;
}

MultiDomainDataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.name == "glyphs") return gen_synth_glyphs(spec.glyphs, spec.seed);
  const DigitSource src = !spec.mnist_dir.empty() && mnist_available(spec.mnist_dir)
                              ? load_mnist(spec.mnist_dir)
                              : render_digits(spec.digits, spec.seed);
  if (spec.name == "cmnist") return gen_colored_mnist(src, spec.domain_probs, spec.label_noise, spec.seed);
  return gen_rotated_mnist(src, spec.angles);
}

Selection parse_selection(const std::string& s) {
  if (s == "training_domain") return Selection::training_domain;
  if (s == "oracle") return Selection::oracle;
  throw ValueError("unknown selection strategy '" + s + "'");
}

std::size_t select_model(Selection strategy, std::span<const EvalRecord> records) {
  if (records.empty()) throw ValueError("no checkpoints to select from");
  if (strategy == Selection::oracle) return records.size() - 1;
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].pooled_val_acc > records[best].pooled_val_acc) best = i;
  }
  return best;
}

std::string eval_record_json(const EvalRecord& r, const std::vector<std::string>& env_names) {
  json j;
  j["step"] = r.step;
  json val = json::object();
  for (std::size_t e = 0; e < r.val_acc.size(); ++e) {
    val[e < env_names.size() ? env_names[e] : std::to_string(e)] = r.val_acc[e];
  }
  j["val_acc"] = val;
  j["pooled_val_acc"] = r.pooled_val_acc;
  j["test_acc"] = r.test_acc;
  j["oracle_acc"] = r.oracle_acc;
  json losses = json::object();
  for (const auto& [k, v] : r.losses) losses[k] = v;
  j["losses"] = losses;
  return j.dump();
}

namespace {

struct NonFiniteLoss {
  std::string what;
};

void check_finite(const Var& loss, const char* label) {
  if (!std::isfinite(loss.value().item())) throw NonFiniteLoss{std::string("non-finite ") + label + " loss"};
}

struct Batch {
  Tensor x;
  std::vector<int> labels;
  std::vector<int> domains;            // training-environment index per sample
  std::vector<std::size_t> offsets;    // env e occupies [offsets[e], offsets[e+1])
  std::vector<std::vector<std::size_t>> rows;
};

/// Walks a fresh permutation of every environment, reshuffling when it runs out.
class BatchSampler {
 public:
  BatchSampler(const MultiDomainDataset& ds, std::uint64_t seed) : ds_(ds), rng_(seed) {
    for (const auto& env : ds.envs) {
      order_.push_back(rng_.permutation(env.size()));
      cursor_.push_back(0);
    }
  }

  Batch next(std::size_t per_env) {
    Batch b;
    std::vector<Tensor> parts;
    b.offsets.push_back(0);
    for (std::size_t e = 0; e < ds_.envs.size(); ++e) {
      const auto& env = ds_.envs[e];
      const std::size_t n = std::min(per_env, env.size());
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (cursor_[e] == order_[e].size()) {
          order_[e] = rng_.permutation(env.size());
          cursor_[e] = 0;
        }
        rows.push_back(order_[e][cursor_[e]++]);
      }
      parts.push_back(take0(env.images, rows));
      for (auto r : rows) {
        b.labels.push_back(env.labels[r]);
        b.domains.push_back(static_cast<int>(e));
      }
      b.offsets.push_back(b.offsets.back() + n);
      b.rows.push_back(std::move(rows));
    }
    b.x = concat0(parts);
    return b;
  }

 private:
  const MultiDomainDataset& ds_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
};

using Losses = std::map<std::string, double>;

struct TraceEntry {
  std::string mode;
  std::size_t zero_count = 0;
  std::size_t kept = 0;
};

struct StepOutput {
  Losses losses;
  std::optional<TraceEntry> trace;
};

class Learner {
 public:
  virtual ~Learner() = default;
  virtual std::vector<Var> parameters() const = 0;
  virtual Var eval_logits(const Var& x) const = 0;
  virtual StepOutput step(const Batch& batch, std::size_t step) = 0;
  virtual void set_lr(double lr) = 0;
};

std::size_t count_kept(const std::vector<char>& kept) {
  std::size_t n = 0;
  for (char k : kept) n += k ? 1 : 0;
  return n;
}

class CamLearner final : public Learner {
 public:
  CamLearner(Algorithm algo, const HyperParams& hp, const FeaturizerConfig& fc, int classes, std::size_t train_envs,
             std::size_t map_cells)
      : algo_(algo),
        hp_(hp),
        classes_(classes),
        init_rng_(mix_seed(hp.seed, 1)),
        model_(fc, classes, init_rng_,
               algo == Algorithm::divcam_tap ? std::optional<double>(hp.lambda_tap) : std::nullopt),
        opt_(hp.optimizer, hp.lr, hp.weight_decay),
        challenge_rng_(mix_seed(hp.seed, 3)),
        dropout_rng_(mix_seed(hp.seed, 4)) {
    if (algo == Algorithm::divcam_cdann) {
      Rng disc_rng(mix_seed(hp.seed, 6));
      disc_.emplace(map_cells, train_envs, MlpConfig{hp.disc_width, hp.disc_depth, hp.disc_dropout}, disc_rng);
      disc_opt_.emplace(hp.optimizer, hp.lr, hp.weight_decay);
    }
  }

  std::vector<Var> parameters() const override {
    auto p = model_.parameters();
    if (disc_) {
      for (auto& d : disc_->parameters()) p.push_back(d);
    }
    return p;
  }

  Var eval_logits(const Var& x) const override { return model_.logits(x); }
  void set_lr(double lr) override {
    opt_.set_lr(lr);
    if (disc_opt_) disc_opt_->set_lr(lr);
  }

  StepOutput step(const Batch& batch, std::size_t step) override {
    StepOutput out;
    const Var x = Var::constant(batch.x);
    const Tensor onehot = one_hot(batch.labels, static_cast<std::size_t>(classes_));
    const HeadFn head = model_.head_fn();

    Var z;
    std::optional<ChallengeOutcome> masked;
    if (algo_ == Algorithm::rsc) {
      const auto blocks = model_.featurizer().forward_blocks(x);
      z = blocks.back();
      const std::size_t last = blocks.size() - 1;
      const Featurizer& f = model_.featurizer();
      PreviousLayer prev{last > 0 ? blocks[last - 1].value() : batch.x,
                         [&f, last](const Var& v) { return f.block(last, v); }};
      masked = rsc_step(z.value(), head, onehot, hp_.challenge, challenge_rng_, &prev);
    } else {
      z = model_.featurizer()(x);
      if (algo_ != Algorithm::erm) {
        masked = divcam_step(z.value(), head, onehot, hp_.challenge, static_cast<long>(step),
                             static_cast<long>(hp_.total_steps), batch.domains, challenge_rng_);
      }
    }
    const Var zt = masked ? apply_mask(z, masked->mask) : z;
    if (masked) out.trace = TraceEntry{masked->mode, masked->zero_count, count_kept(masked->kept)};

    if (algo_ == Algorithm::divcam_cdann) return cdann_step(batch, zt, head, onehot, step, std::move(out));

    const Var ce = softmax_cross_entropy(model_.head(zt), onehot);
    Var total = ce;
    out.losses["ce"] = ce.value().item();
    if (algo_ == Algorithm::divcam_hnc) {
      const int top_m = hp_.top_m > 0 ? hp_.top_m : classes_ - 1;
      const Var hnc = hnc_approx_loss(zt, head, batch.labels, top_m, hp_.lambda_hnc);
      out.losses["hnc"] = hnc.value().item();
      total = add(total, hnc);
    } else if (algo_ == Algorithm::divcam_mmd) {
      const Var maps = cam_maps(zt, head, batch.labels);
      std::vector<Var> terms;
      for (std::size_t i = 0; i + 1 < batch.rows.size(); ++i) {
        const Var a = slice0(maps, batch.offsets[i], batch.offsets[i + 1]);
        for (std::size_t j = i + 1; j < batch.rows.size(); ++j) {
          terms.push_back(mmd_mixture(a, slice0(maps, batch.offsets[j], batch.offsets[j + 1]), kernels_));
        }
      }
      const Var mmd = scale(add_n(terms), hp_.lambda_mmd);
      out.losses["mmd"] = mmd.value().item();
      total = add(total, mmd);
    }
    out.losses["total"] = total.value().item();
    check_finite(total, "training");
    const auto params = model_.parameters();
    zero_grads(params);
    backward(total);
    opt_.step(params);
    return out;
  }

 private:
  // ground-truth Grad-CAM maps [B, HW]; channel importances are constants
  Var cam_maps(const Var& zt, const HeadFn& head, std::span<const int> labels) const {
    const Tensor importance = grad_cam_importance(zt.value(), head, labels);
    const auto& s = zt.shape();
    return reshape(relu(channel_weighted_sum(zt, importance)), {s[0], s[2] * s[3]});
  }

  StepOutput cdann_step(const Batch& batch, const Var& zt, const HeadFn& head, const Tensor& onehot,
                        std::size_t step, StepOutput out) {
    const Var maps = cam_maps(zt, head, batch.labels);
    const auto disc_params = disc_->parameters();
    const std::size_t cycle = hp_.disc_steps + 1;
    const bool disc_turn = ((step - 1) % cycle) < hp_.disc_steps;
    if (disc_turn) {
      const CdannLosses l = cdann_losses(maps.detach(), batch.domains, batch.labels, classes_, *disc_,
                                         hp_.lambda_adv, hp_.grad_penalty, &dropout_rng_);
      out.losses["disc"] = l.discriminator.value().item();
      check_finite(l.discriminator, "discriminator");
      zero_grads(disc_params);
      backward(l.discriminator);
      disc_opt_->step(disc_params);
      return out;
    }
    const CdannLosses l = cdann_losses(maps, batch.domains, batch.labels, classes_, *disc_, hp_.lambda_adv,
                                       hp_.grad_penalty, &dropout_rng_);
    const Var ce = softmax_cross_entropy(model_.head(zt), onehot);
    const Var total = add(ce, l.generator);
    out.losses["ce"] = ce.value().item();
    out.losses["adv"] = l.generator.value().item();
    out.losses["total"] = total.value().item();
    check_finite(total, "training");
    const auto params = model_.parameters();
    zero_grads(params);
    backward(total);
    opt_.step(params);
    return out;
  }

  Algorithm algo_;
  HyperParams hp_;
  int classes_;
  Rng init_rng_;
  CamNet model_;
  Optimizer opt_;
  Rng challenge_rng_;
  Rng dropout_rng_;
  KernelConfig kernels_;
  std::optional<DomainDiscriminator> disc_;
  std::optional<Optimizer> disc_opt_;
};

class ProtoLearner final : public Learner {
 public:
  ProtoLearner(const HyperParams& hp, const FeaturizerConfig& fc, int classes, std::size_t train_envs)
      : hp_(hp),
        init_rng_(mix_seed(hp.seed, 1)),
        model_(fc, classes,
               ProtoNet::Options{hp.per_class, hp.w_neg, hp.domain_prototypes ? static_cast<int>(train_envs) : 0,
                                 hp.ensemble},
               init_rng_),
        warm_opt_(hp.optimizer, hp.lr, hp.weight_decay),
        opt_(hp.optimizer, hp.lr, hp.weight_decay) {}

  std::vector<Var> parameters() const override { return model_.parameters(); }
  Var eval_logits(const Var& x) const override { return model_.logits(x); }
  void set_lr(double lr) override {
    warm_opt_.set_lr(lr);
    opt_.set_lr(lr);
  }

  StepOutput step(const Batch& batch, std::size_t step) override {
    StepOutput out;
    const int C = model_.classes();
    const Tensor onehot = one_hot(batch.labels, static_cast<std::size_t>(C));
    const auto pass = model_.forward(Var::constant(batch.x));
    const Var& scores = pass.act.scores;

    const Tensor plain = routed_logits(scores.detach(), pass.z, batch).value();
    const Tensor probs = softmax_rows(plain);
    std::vector<double> confidence(batch.labels.size());
    for (std::size_t i = 0; i < confidence.size(); ++i) {
      confidence[i] = probs.at(i, static_cast<std::size_t>(batch.labels[i]));
    }
    const ProDropOutcome drop = prodrop_mask(scores.value(), batch.labels, model_.prototypes().class_of,
                                             hp_.challenge.feature_drop, hp_.challenge.batch_drop, confidence);
    out.trace = TraceEntry{"prototype", drop.zero_count, count_kept(drop.kept)};

    const Var logits = routed_logits(mul(scores, Var::constant(drop.mask)), pass.z, batch);
    const Var ce = softmax_cross_entropy(logits, onehot);
    ClusterSep cs;
    if (model_.domains() > 0) {
      std::vector<Var> min_sq;
      std::vector<std::vector<int>> labels;
      std::vector<int> env_domain;
      for (std::size_t e = 0; e + 1 < batch.offsets.size(); ++e) {
        min_sq.push_back(slice0(pass.act.min_sq, batch.offsets[e], batch.offsets[e + 1]));
        labels.emplace_back(batch.labels.begin() + static_cast<long>(batch.offsets[e]),
                            batch.labels.begin() + static_cast<long>(batch.offsets[e + 1]));
        env_domain.push_back(static_cast<int>(e));
      }
      cs = domain_cluster_sep(min_sq, labels, env_domain, model_.prototypes());
    } else {
      cs = cluster_sep_losses(pass.act.min_sq, batch.labels, model_.prototypes());
    }
    Var total = add_n(std::vector<Var>{ce, scale(cs.cluster, hp_.lambda_clst), scale(cs.separation, hp_.lambda_sep)});
    if (hp_.lambda_intra > 0.0) {
      total = sub(total, scale(intra_loss(model_.prototypes(), hp_.intra_l2, hp_.intra_cos), hp_.lambda_intra));
    }
    if (model_.domains() > 0 && hp_.ensemble == EnsembleMode::predictor) {
      total = add(total, softmax_cross_entropy(model_.domain_logits(pass.z),
                                               one_hot(batch.domains, static_cast<std::size_t>(model_.domains()))));
    }
    out.losses["ce"] = ce.value().item();
    out.losses["clst"] = cs.cluster.value().item();
    out.losses["sep"] = cs.separation.value().item();
    out.losses["total"] = total.value().item();
    check_finite(total, "training");

    const auto all = model_.parameters();
    zero_grads(all);
    backward(total);
    if (step <= hp_.warmup_steps) {
      warm_opt_.step(model_.adapter_parameters());
    } else {
      opt_.step(all);
    }
    return out;
  }

 private:
  // training routes every environment slice to its own domain
  Var routed_logits(const Var& scores, const Var& z, const Batch& batch) const {
    if (model_.domains() == 0) return model_.classify(scores, std::nullopt, z);
    std::vector<Var> parts;
    for (std::size_t e = 0; e + 1 < batch.offsets.size(); ++e) {
      parts.push_back(model_.classify(slice0(scores, batch.offsets[e], batch.offsets[e + 1]), static_cast<int>(e),
                                      slice0(z, batch.offsets[e], batch.offsets[e + 1])));
    }
    return concat0(parts);
  }

  HyperParams hp_;
  Rng init_rng_;
  ProtoNet model_;
  Optimizer warm_opt_;
  Optimizer opt_;
};

class AttnLearner final : public Learner {
 public:
  AttnLearner(const HyperParams& hp, const FeaturizerConfig& fc, const MultiDomainDataset& train)
      : hp_(hp),
        train_(train),
        init_rng_(mix_seed(hp.seed, 1)),
        model_(DTransformerConfig{fc, hp.d_k, hp.d_v}, init_rng_),
        opt_(hp.optimizer, hp.lr, hp.weight_decay),
        eval_support_(support_images(train, sample_support(train, hp.n_support, mix_seed(hp.seed, 5)))) {}

  std::vector<Var> parameters() const override { return model_.parameters(); }
  Var eval_logits(const Var& x) const override { return model_.logits(x, eval_support_); }
  void set_lr(double lr) override { opt_.set_lr(lr); }

  StepOutput step(const Batch& batch, std::size_t step) override {
    StepOutput out;
    const SupportSet support = sample_support(train_, hp_.n_support, mix_seed(mix_seed(hp_.seed, 5), step), batch.rows);
    const Var logits = model_.logits(Var::constant(batch.x), support_images(train_, support));
    const Var ce = softmax_cross_entropy(logits, one_hot(batch.labels, static_cast<std::size_t>(train_.classes)));
    out.losses["ce"] = ce.value().item();
    out.losses["total"] = ce.value().item();
    check_finite(ce, "training");
    const auto params = model_.parameters();
    zero_grads(params);
    backward(ce);
    opt_.step(params);
    return out;
  }

 private:
  HyperParams hp_;
  const MultiDomainDataset& train_;
  Rng init_rng_;
  DTransformer model_;
  Optimizer opt_;
  std::vector<std::vector<Tensor>> eval_support_;
};

Environment pick(const Environment& env, const std::vector<std::size_t>& rows) {
  Environment out;
  out.domain_id = env.domain_id;
  out.name = env.name;
  out.images = take0(env.images, rows);
  for (auto r : rows) out.labels.push_back(env.labels[r]);
  return out;
}

std::size_t correct_count(const Learner& learner, const Environment& env) {
  constexpr std::size_t chunk = 256;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < env.size(); begin += chunk) {
    const std::size_t end = std::min(env.size(), begin + chunk);
    const auto pred = argmax_rows(learner.eval_logits(Var::constant(slice0(env.images, begin, end))).value());
    for (std::size_t i = begin; i < end; ++i) correct += pred[i - begin] == env.labels[i] ? 1 : 0;
  }
  return correct;
}

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

void write_checkpoint(const std::filesystem::path& dir, const std::string& file, const NamedArrays& arrays) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  save_arrays(dir / file, arrays);
}

}  // namespace

TrainResult train(Algorithm algorithm, const MultiDomainDataset& data, int test_env, const HyperParams& hp,
                  const SplitSpec& split, const TrainOptions& options) {
  hp.validate();
  hp.challenge.validate();
  data.validate();
  const auto start = std::chrono::steady_clock::now();
  if (test_env < 0 || test_env >= static_cast<int>(data.envs.size())) {
    throw ValueError("test environment " + std::to_string(test_env) + " out of range");
  }
  const std::size_t train_count = data.envs.size() - 1;
  if (train_count < 1) throw ValueError("no training environments");
  if (needs_multiple_domains(algorithm) && train_count < 2) {
    throw ValueError(to_string(algorithm) + " needs at least two training environments");
  }

  const SplitIndices idx = split_indices(data, split);
  MultiDomainDataset train_ds, val_ds;
  train_ds.classes = val_ds.classes = data.classes;
  Environment test_in, test_out;
  std::vector<std::string> names;
  for (std::size_t e = 0; e < data.envs.size(); ++e) {
    if (static_cast<int>(e) == test_env) {
      test_in = pick(data.envs[e], idx.train[e]);
      test_out = pick(data.envs[e], idx.val[e]);
      continue;
    }
    train_ds.envs.push_back(pick(data.envs[e], idx.train[e]));
    val_ds.envs.push_back(pick(data.envs[e], idx.val[e]));
    names.push_back(data.envs[e].name);
  }

  const Shape img = data.image_shape();
  const FeaturizerConfig fc{img[0], hp.width, hp.blocks};
  std::unique_ptr<Learner> learner;
  switch (algorithm) {
    case Algorithm::protodrop:
      learner = std::make_unique<ProtoLearner>(hp, fc, data.classes, train_count);
      break;
    case Algorithm::dtransformer:
      learner = std::make_unique<AttnLearner>(hp, fc, train_ds);
      break;
    default:
    {
      const std::size_t side = img[2] >> hp.blocks;
      learner = std::make_unique<CamLearner>(algorithm, hp, fc, data.classes, train_count, side * side);
    }
  }

  std::ofstream metrics, trace;
  if (!options.metrics_path.empty()) {
    if (options.metrics_path.has_parent_path()) std::filesystem::create_directories(options.metrics_path.parent_path());
    metrics.open(options.metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + options.metrics_path.string());
  }
  if (!options.trace_path.empty()) {
    if (options.trace_path.has_parent_path()) std::filesystem::create_directories(options.trace_path.parent_path());
    trace.open(options.trace_path, std::ios::binary | std::ios::trunc);
    if (!trace) throw std::runtime_error("cannot write " + options.trace_path.string());
  }

  TrainResult result;
  BatchSampler sampler(train_ds, mix_seed(hp.seed, 2));
  NamedArrays last_good = snapshot(learner->parameters());
  std::map<std::string, std::pair<double, std::size_t>> running;
  const std::size_t decay_at = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(hp.total_steps)));
  const std::string variant = algorithm == Algorithm::protodrop ? "prodrop" : hp.challenge.variant_name();

  for (std::size_t step = 1; step <= hp.total_steps; ++step) {
    if (hp.lr_decay && step == decay_at + 1) learner->set_lr(hp.lr * 0.1);
    const Batch batch = sampler.next(hp.batch_size);
    StepOutput out;
    try {
      out = learner->step(batch, step);
    } catch (const NonFiniteLoss& e) {
      write_checkpoint(options.checkpoint_dir, "last_good.ckpt", last_good);
      throw TrainingAborted(step, e.what + " at step " + std::to_string(step));
    }
    for (const auto& [k, v] : out.losses) {
      auto& acc = running[k];
      acc.first += v;
      acc.second += 1;
    }
    if (std::find(options.save_steps.begin(), options.save_steps.end(), step) != options.save_steps.end()) {
      write_checkpoint(options.checkpoint_dir, "step" + std::to_string(step) + ".ckpt", snapshot(learner->parameters()));
    }
    if (trace.is_open() && out.trace) {
      json t;
      t["step"] = step;
      t["variant"] = variant;
      t["mode"] = out.trace->mode;
      t["zero_count"] = out.trace->zero_count;
      t["kept_samples"] = out.trace->kept;
      trace << t.dump() << '\n';
    }

    if (step % hp.eval_every != 0 && step != hp.total_steps) continue;
    EvalRecord rec;
    rec.step = step;
    std::size_t pooled_ok = 0, pooled_n = 0;
    for (const auto& env : val_ds.envs) {
      const std::size_t ok = correct_count(*learner, env);
      rec.val_acc.push_back(ratio(ok, env.size()));
      pooled_ok += ok;
      pooled_n += env.size();
    }
    rec.pooled_val_acc = ratio(pooled_ok, pooled_n);
    rec.test_acc = ratio(correct_count(*learner, test_in), test_in.size());
    rec.oracle_acc = ratio(correct_count(*learner, test_out), test_out.size());
    for (const auto& [k, acc] : running) rec.losses[k] = acc.first / static_cast<double>(acc.second);
    running.clear();
    if (metrics.is_open()) metrics << eval_record_json(rec, names) << '\n' << std::flush;
    if (options.on_eval) options.on_eval(rec);
    last_good = snapshot(learner->parameters());
    result.records.push_back(std::move(rec));
  }

  result.final_params = snapshot(learner->parameters());
  write_checkpoint(options.checkpoint_dir, "final.ckpt", result.final_params);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace xdg
