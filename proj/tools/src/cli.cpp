#include "xdg_cli/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xdg/cam.hpp"
#include "xdg/models.hpp"
#include "xdg/proto.hpp"
#include "xdg/sweep.hpp"
#include "xdg_cli/run_config.hpp"

namespace xdg::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> split_seeds;
  std::optional<std::string> algorithm;
  std::optional<std::string> dataset;
  std::string dataset_positional;
};

void write_text(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    cfg = load_run_config(f.config, f.algorithm);
  } else if (f.algorithm) {
    cfg = parse_run_config("{}", f.algorithm);
  }
  if (f.dataset) {
    cfg.dataset.name = *f.dataset;
    cfg.dataset.validate();
  }
  if (f.seed) cfg.hparams.seed = *f.seed;
  return cfg;
}

std::string manifest(const DatasetSpec& spec, const MultiDomainDataset& ds) {
  json j;
  j["dataset"] = spec.name;
  j["seed"] = spec.seed;
  j["classes"] = ds.classes;
  j["image_shape"] = ds.image_shape();
  j["domains"] = ds.envs.size();
  json envs = json::array();
  const auto counts = class_counts(ds);
  for (std::size_t e = 0; e < ds.envs.size(); ++e) {
    envs.push_back({{"name", ds.envs[e].name},
                    {"domain_id", ds.envs[e].domain_id},
                    {"count", ds.envs[e].size()},
                    {"class_counts", counts[e]}});
  }
  j["environments"] = envs;
  return j.dump(2) + "\n";
}

int cmd_gen_data(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  cfg.dataset.name = f.dataset_positional;
  if (f.seed) cfg.dataset.seed = *f.seed;
  cfg.dataset.validate();
  fs::path target = dataset_cache_path(cfg.dataset);
  if (!f.out.empty()) target = fs::path(f.out) / target.filename();
  MultiDomainDataset ds = load_or_build_dataset(cfg.dataset);
  if (target != dataset_cache_path(cfg.dataset)) {
    fs::create_directories(target.parent_path());
    save_arrays(target, encode_dataset(ds));
  }
  fs::path man = target;
  man.replace_extension(".manifest.json");
  write_text(man, manifest(cfg.dataset, ds));
  std::cout << target.string() << "\n" << man.string() << "\n";
  return ok;
}

std::string selection_json(const std::vector<EvalRecord>& records) {
  json j;
  for (auto strategy : {Selection::training_domain, Selection::oracle}) {
    const auto& r = records[select_model(strategy, records)];
    j[strategy == Selection::oracle ? "oracle" : "training_domain"] = {{"step", r.step},
                                                                       {"pooled_val_acc", r.pooled_val_acc},
                                                                       {"test_acc", r.test_acc},
                                                                       {"oracle_acc", r.oracle_acc}};
  }
  return j.dump(2) + "\n";
}

bool masks_features(Algorithm a) { return a != Algorithm::erm && a != Algorithm::dtransformer; }

int cmd_train(const Flags& f) {
  RunConfig cfg = resolve(f);
  cfg.hparams.validate();
  const fs::path out = f.out.empty() ? fs::path("runs") / to_string(cfg.algorithm) : fs::path(f.out);
  const MultiDomainDataset ds = load_or_build_dataset(cfg.dataset);
  const int test_env = cfg.dataset.resolved_test_env(ds.envs.size());
  fs::create_directories(out);
  write_text(out / "run.json", run_config_json(cfg) + "\n");

  TrainOptions opts;
  opts.metrics_path = out / "metrics.jsonl";
  if (cfg.trace && masks_features(cfg.algorithm)) opts.trace_path = out / "trace.jsonl";
  opts.checkpoint_dir = out;
  opts.save_steps = cfg.exports.cam_steps;
  opts.on_eval = [](const EvalRecord& r) {
    std::cerr << "step " << r.step << "  pooled val " << r.pooled_val_acc << "  held-out " << r.test_acc << "\n";
  };
  try {
    const TrainResult res = train(cfg.algorithm, ds, test_env, cfg.hparams, SplitSpec{0.2, cfg.split_seed}, opts);
    write_text(out / "selection.json", selection_json(res.records));
  } catch (const TrainingAborted& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return runtime_abort;
  }
  std::cout << (out / "metrics.jsonl").string() << "\n";
  return ok;
}

int cmd_sweep(const Flags& f) {
  RunConfig cfg = resolve(f);
  if (f.trials) cfg.sweep.n_trials = *f.trials;
  if (f.split_seeds) cfg.sweep.split_seeds = *f.split_seeds;
  if (f.seed) cfg.sweep.seed = *f.seed;
  const fs::path out = f.out.empty() ? fs::path("runs") / "sweep" : fs::path(f.out);
  SweepConfig sc;
  sc.algorithm = cfg.algorithm;
  sc.dataset = cfg.dataset;
  sc.base = cfg.hparams;
  sc.table = cfg.sweep.table;
  sc.n_trials = cfg.sweep.n_trials;
  sc.split_seeds = cfg.sweep.split_seeds;
  sc.seed = cfg.sweep.seed;
  sc.out_dir = out;
  fs::create_directories(out);
  write_text(out / "run.json", run_config_json(cfg) + "\n");
  const MultiDomainDataset ds = load_or_build_dataset(cfg.dataset);
  const SweepReport report = run_sweep(sc, ds, [](const TrialRow& r) {
    std::cerr << "trial " << r.trial << " seed " << r.split_seed << "  " << r.status << "  td " << r.td_test
              << "  oracle " << r.oracle_test << "\n";
  });
  write_text(out / "sweep.csv", sweep_csv(report));
  std::cout << (out / "sweep.csv").string() << "\n";
  return ok;
}

/// Run directory next to the config written by `train`.
struct TrainedRun {
  RunConfig cfg;
  fs::path dir;
};

TrainedRun open_run(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config", "export commands need the run.json of a training run");
  if (!fs::exists(f.config)) throw MissingArtifact("missing run configuration " + f.config);
  return TrainedRun{load_run_config(f.config), fs::path(f.config).parent_path()};
}

NamedArrays load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("missing checkpoint " + path.string());
  return load_arrays(path);
}

int cmd_export_cams(const Flags& f) {
  const TrainedRun run = open_run(f);
  const auto a = run.cfg.algorithm;
  if (a == Algorithm::protodrop || a == Algorithm::dtransformer) {
    throw ConfigError("algorithm", "CAM export needs a pooled linear classifier, not " + to_string(a));
  }
  const MultiDomainDataset ds = load_or_build_dataset(run.cfg.dataset);
  const Shape img = ds.image_shape();
  Rng rng(0);
  CamNet model(FeaturizerConfig{img[0], run.cfg.hparams.width, run.cfg.hparams.blocks}, ds.classes, rng,
               a == Algorithm::divcam_tap ? std::optional<double>(run.cfg.hparams.lambda_tap) : std::nullopt);
  auto params = model.parameters();

  std::vector<std::pair<std::string, fs::path>> checkpoints;
  for (auto s : run.cfg.exports.cam_steps) {
    checkpoints.emplace_back("step" + std::to_string(s), run.dir / ("step" + std::to_string(s) + ".ckpt"));
  }
  checkpoints.emplace_back("final", run.dir / "final.ckpt");

  const auto& env = ds.envs[static_cast<std::size_t>(run.cfg.dataset.resolved_test_env(ds.envs.size()))];
  const std::size_t n = std::min(run.cfg.exports.cam_images, env.size());
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  const Tensor x = take0(env.images, rows);
  const std::vector<int> labels(env.labels.begin(), env.labels.begin() + static_cast<long>(n));
  const fs::path out = f.out.empty() ? run.dir / "cams" : fs::path(f.out);
  fs::create_directories(out);

  for (const auto& [tag, path] : checkpoints) {
    restore(params, load_checkpoint(path));
    const Tensor z = model.featurizer()(Var::constant(x)).value();
    const Tensor maps = upsample_bilinear(grad_cam(z, model.head_fn(), labels), img[1], img[2]);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor base({img[1], img[2]});
      Tensor map({img[1], img[2]});
      for (std::size_t p = 0; p < base.size(); ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < img[0]; ++c) s += x[(i * img[0] + c) * base.size() + p];
        base[p] = s / static_cast<double>(img[0]);
        map[p] = maps[i * base.size() + p];
      }
      export_heatmap(map, base, out / (tag + "_img" + std::to_string(i) + ".ppm"));
    }
  }
  std::cout << out.string() << "\n";
  return ok;
}

int cmd_export_distances(const Flags& f) {
  const TrainedRun run = open_run(f);
  if (run.cfg.algorithm != Algorithm::protodrop) {
    throw ConfigError("algorithm", "distance export needs a prototype model, not " + to_string(run.cfg.algorithm));
  }
  const auto arrays = load_checkpoint(run.dir / "final.ckpt");
  const Tensor& protos = find_array(arrays, "prototypes");
  const DistanceMatrices d = pairwise_distances(protos);
  const fs::path out = f.out.empty() ? run.dir / "distances" : fs::path(f.out);
  fs::create_directories(out);
  write_text(out / "l2.csv", matrix_csv(d.l2));
  write_text(out / "cosine.csv", matrix_csv(d.cosine));
  write_bytes(out / "l2.pgm", grayscale_pgm(d.l2));
  write_bytes(out / "cosine.pgm", grayscale_pgm(d.cosine));
  std::cout << out.string() << "\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Explainability-driven domain generalization toolkit", "xdg"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run configuration");
    sub->add_option("--seed", f.seed, "seed override");
    sub->add_option("--out", f.out, "output directory");
  };
  auto* gen = app.add_subcommand("gen-data", "generate a dataset and its manifest");
  gen->add_option("dataset", f.dataset_positional, "cmnist, rmnist or glyphs")->required();
  add_common(gen);
  auto* tr = app.add_subcommand("train", "train one model");
  add_common(tr);
  tr->add_option("--algorithm", f.algorithm, "algorithm override");
  tr->add_option("--dataset", f.dataset, "dataset name override");
  auto* sw = app.add_subcommand("sweep", "random hyperparameter search over split seeds");
  add_common(sw);
  sw->add_option("--trials", f.trials, "hyperparameter samples");
  sw->add_option("--split-seeds", f.split_seeds, "data split seeds");
  sw->add_option("--algorithm", f.algorithm, "algorithm override");
  sw->add_option("--dataset", f.dataset, "dataset name override");
  auto* cams = app.add_subcommand("export-cams", "Grad-CAM overlays from a training run");
  add_common(cams);
  auto* dist = app.add_subcommand("export-distances", "pairwise prototype distances from a training run");
  add_common(dist);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return usage_error;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f);
    if (tr->parsed()) return cmd_train(f);
    if (sw->parsed()) return cmd_sweep(f);
    if (cams->parsed()) return cmd_export_cams(f);
    if (dist->parsed()) return cmd_export_distances(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return usage_error;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return missing_artifact;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime_abort;
  }
  return usage_error;
}

}  // namespace xdg::cli
