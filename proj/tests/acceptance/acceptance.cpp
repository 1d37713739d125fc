// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--criterion N]...
#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mask_oracle.hpp"
#include "xdg/align.hpp"
#include "xdg/challenge.hpp"
#include "xdg/models.hpp"
#include "xdg/ops.hpp"
#include "xdg/proto.hpp"
#include "xdg/sweep.hpp"
#include "xdg/train.hpp"
#include "xdg/xattn.hpp"
#include "xdg_cli/cli.hpp"

namespace fs = std::filesystem;
using namespace xdg;
using xdg::testing::TempDir;
using xdg::testing::random_tensor;
using xdg::testing::read_text;

namespace {

// Pinned tolerances.
constexpr double kGradRelError = 1e-3;
constexpr std::size_t kGradInstances = 20;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kOracleBatches = 50;
constexpr std::size_t kCardinalityCases = 1000;
constexpr double kHncTol = 1e-9;
constexpr std::size_t kHncMaps = 100;
constexpr double kMmdTol = 1e-9;
constexpr std::size_t kMmdMaxPoints = 16;
constexpr double kSimilarityTol = 1e-9;
constexpr double kPrototypeEps = 1e-4;
constexpr double kCosineSlack = 1e-12;
constexpr std::size_t kWarmupSteps = 100;
constexpr double kAttentionTol = 1e-9;
constexpr std::size_t kEpisodes = 100;
constexpr double kCmnistMinVal = 0.85;
constexpr double kCmnistMaxHeldOut = 0.40;
constexpr std::size_t kCmnistSteps = 2000;
constexpr std::size_t kCmnistSeeds = 3;
constexpr std::size_t kCmnistNeeded = 2;
constexpr double kCmnistSeconds = 600.0;
constexpr std::size_t kSweepTrials = 20;
constexpr std::size_t kSweepSeeds = 3;
constexpr double kSweepSeconds = 1800.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto results = testing::run_gradient_suite(kGradInstances, 20240501);
  const double secs = since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failing;
  for (const auto& r : results) {
    if (r.max_rel > worst) worst = r.max_rel, worst_name = r.name;
    if (!(r.max_rel < kGradRelError) || r.instances != kGradInstances) failing.push_back(r.name);
  }
  std::string detail = std::to_string(results.size()) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name +
                       "), " + fmt("%.1f", secs) + " s";
  for (const auto& n : failing) detail += ", failed " + n;
  return {failing.empty() && secs < kGradSeconds, detail};
}

Verdict mask_oracle() {
  std::size_t equal = 0;
  std::string mismatches;
  for (std::size_t i = 0; i < kOracleBatches; ++i) {
    const auto t = testing::compare_with_oracle(i, mix_seed(777, i));
    if (t.equal) {
      ++equal;
    } else {
      mismatches += " " + t.label;
    }
  }
  return {equal == kOracleBatches, std::to_string(equal) + "/" + std::to_string(kOracleBatches) + " batches equal" +
                                       mismatches};
}

Verdict cardinality() {
  Rng rng(31337);
  std::size_t bad_mask = 0, bad_revert = 0, tie_cases = 0;
  for (std::size_t k = 0; k < kCardinalityCases; ++k) {
    const std::size_t B = 1 + rng.below(6), N = 1 + rng.below(40);
    const double p = rng.uniform();
    Tensor scores({B, N});
    const auto kind = k % 3;  // all ties, few distinct values, continuous
    if (kind != 2) ++tie_cases;
    for (auto& v : scores.data()) v = kind == 0 ? 0.5 : kind == 1 ? static_cast<double>(rng.below(3)) : rng.normal();
    const Tensor mask = percentile_mask(scores, p);
    const auto want = static_cast<std::size_t>(std::llround(p * static_cast<double>(N)));
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t zeros = 0;
      for (std::size_t n = 0; n < N; ++n) zeros += mask.at(b, n) == 0.0;
      bad_mask += zeros != want;
    }

    const double frac = rng.uniform();
    const std::size_t BB = 1 + rng.below(64);
    std::vector<double> conf(BB);
    for (auto& c : conf) c = kind == 0 ? 0.25 : kind == 1 ? static_cast<double>(rng.below(2)) : rng.uniform();
    const Tensor reverted = revert_mask(Tensor({BB, 3}, 0.0), conf, frac);
    std::size_t kept = 0;
    for (std::size_t b = 0; b < BB; ++b) kept += reverted.at(b, 0) == 0.0;
    bad_revert += kept != static_cast<std::size_t>(std::llround(frac * static_cast<double>(BB)));
  }
  return {bad_mask == 0 && bad_revert == 0,
          std::to_string(kCardinalityCases) + " cases (" + std::to_string(tie_cases) + " with ties), " +
              std::to_string(bad_mask) + " mask rows off, " + std::to_string(bad_revert) + " reversions off"};
}

Verdict hnc() {
  const double uniform = hnc_map_loss(Tensor({1, 4, 4}, 1.0 / 16.0));
  const double uniform_err = std::abs(uniform - std::log(16.0));
  Rng rng(4);
  double worst = 0.0;
  for (std::size_t k = 0; k < kHncMaps; ++k) {
    const std::size_t H = 2 + rng.below(6), W = 2 + rng.below(6);
    Tensor maps({1, H, W});
    double total = 0.0;
    for (auto& v : maps.data()) total += (v = 1e-3 + rng.uniform());
    for (auto& v : maps.data()) v /= total;
    const double gap = kl_uniform(maps) - (hnc_map_loss(maps) - std::log(static_cast<double>(H * W)));
    worst = std::max(worst, std::abs(gap));
  }
  return {uniform_err <= kHncTol && worst <= kHncTol,
          "uniform error " + fmt("%.1e", uniform_err) + ", identity error " + fmt("%.1e", worst)};
}

double kernel_oracle(const Tensor& a, const Tensor& b, double gamma) {
  auto k = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double d = 0.0;
    for (std::size_t c = 0; c < x.dim(1); ++c) d += (x.at(i, c) - y.at(j, c)) * (x.at(i, c) - y.at(j, c));
    return std::exp(-gamma * d);
  };
  const std::size_t n = a.dim(0), m = b.dim(0);
  double aa = 0, bb = 0, ab = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) aa += k(a, i, a, j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) bb += k(b, i, b, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) ab += k(a, i, b, j);
  return aa / double(n * n) + bb / double(m * m) - 2 * ab / double(n * m);
}

Verdict mmd() {
  Rng rng(5);
  const KernelConfig kc;
  double self = 0.0, oracle = 0.0;
  std::size_t asymmetric = 0, cases = 0;
  for (std::size_t n = 1; n <= kMmdMaxPoints; n += 3) {
    for (std::size_t m = 1; m <= kMmdMaxPoints; m += 3) {
      ++cases;
      const std::size_t d = 1 + rng.below(5);
      const Tensor a = random_tensor({n, d}, rng), b = random_tensor({m, d}, rng);
      self = std::max(self, std::abs(mmd_mixture(a, a, kc)));
      const double ab = mmd_mixture(a, b, kc), ba = mmd_mixture(b, a, kc);
      asymmetric += std::memcmp(&ab, &ba, sizeof ab) != 0;
      const double vab = mmd_mixture(Var::constant(a), Var::constant(b), kc).value().item();
      const double vba = mmd_mixture(Var::constant(b), Var::constant(a), kc).value().item();
      asymmetric += std::memcmp(&vab, &vba, sizeof vab) != 0;
      double want = 0.0;
      for (double g : kc.gammas) want += kernel_oracle(a, b, g);
      want /= static_cast<double>(kc.gammas.size());
      oracle = std::max({oracle, std::abs(ab - want), std::abs(vab - want)});
    }
  }
  return {self <= kMmdTol && asymmetric == 0 && oracle <= kMmdTol,
          std::to_string(cases) + " pairs, |mmd(X,X)| " + fmt("%.1e", self) + ", oracle error " + fmt("%.1e", oracle) +
              ", " + std::to_string(asymmetric) + " asymmetric"};
}

const MultiDomainDataset& glyph_data() {
  static const MultiDomainDataset ds = [] {
    DatasetSpec spec;
    spec.name = "glyphs";
    return build_dataset(spec);
  }();
  return ds;
}

Verdict prototypes() {
  std::vector<std::string> problems;
  const double at_zero = similarity(0.0, kPrototypeEps);
  if (!(std::abs(at_zero - std::log(1.0 / kPrototypeEps)) <= kSimilarityTol)) problems.push_back("similarity at 0");
  double prev = at_zero;
  for (int i = 1; i <= 10000; ++i) {
    const double d2 = 1e-3 * i * i;
    const double s = similarity(d2, kPrototypeEps);
    if (!(s < prev)) {
      problems.push_back("not decreasing at " + fmt("%g", d2));
      break;
    }
    prev = s;
  }

  Rng rng(6);
  for (int k = 0; k < 50; ++k) {
    const std::size_t m = 1 + rng.below(12), K = 1 + rng.below(8);
    Tensor protos = random_tensor({m, K, 1, 1}, rng, -1.0, 1.0);
    if (k % 5 == 0) {
      for (std::size_t c = 0; c < K; ++c) protos[c] = 0.0;  // a zero prototype
    }
    const DistanceMatrices d = pairwise_distances(protos);
    for (std::size_t i = 0; i < m; ++i) {
      if (d.l2.at(i, i) != 0.0) problems.push_back("l2 diagonal");
      for (std::size_t j = 0; j < m; ++j) {
        if (d.l2.at(i, j) != d.l2.at(j, i) || d.cosine.at(i, j) != d.cosine.at(j, i)) problems.push_back("asymmetric");
        if (!(d.cosine.at(i, j) >= 0.0 && d.cosine.at(i, j) <= 2.0 + kCosineSlack)) problems.push_back("cosine range");
      }
    }
  }

  // warm-up: only the adapter moves
  HyperParams hp = default_hyperparams(Algorithm::protodrop);
  hp.width = 8;
  hp.blocks = 3;
  hp.batch_size = 8;
  hp.per_class = 2;
  hp.total_steps = kWarmupSteps;
  hp.warmup_steps = kWarmupSteps;
  hp.eval_every = kWarmupSteps;
  hp.seed = 3;
  const auto& data = glyph_data();
  Rng init(mix_seed(hp.seed, 1));
  const ProtoNet fresh(FeaturizerConfig{data.image_shape()[0], hp.width, hp.blocks}, data.classes,
                       ProtoNet::Options{hp.per_class, hp.w_neg, 0, hp.ensemble}, init);
  const NamedArrays before = snapshot(fresh.parameters());
  const TrainResult res = train(Algorithm::protodrop, data, static_cast<int>(data.envs.size()) - 1, hp, SplitSpec{0.2, 0});
  std::size_t frozen = 0, adapter_moved = 0, adapter = 0;
  for (const auto& [name, value] : before) {
    const Tensor& after = find_array(res.final_params, name);
    const bool same = after.shape() == value.shape() &&
                      std::memcmp(after.data().data(), value.data().data(), value.size() * sizeof(double)) == 0;
    if (name.rfind("adapter", 0) == 0) {
      ++adapter;
      adapter_moved += !same;
    } else if (same) {
      ++frozen;
    } else {
      problems.push_back("moved " + name);
    }
  }
  if (adapter_moved == 0) problems.push_back("adapter did not train");

  std::string detail = "similarity(0) = " + fmt("%.12f", at_zero) + ", " + std::to_string(frozen) +
                       " frozen arrays, " + std::to_string(adapter_moved) + "/" + std::to_string(adapter) +
                       " adapter arrays trained";
  std::set<std::string> unique(problems.begin(), problems.end());
  for (const auto& p : unique) detail += ", " + p;
  return {problems.empty(), detail};
}

Verdict attention() {
  Rng rng(7);
  double sum_err = 0.0, perm_err = 0.0;
  for (std::size_t e = 0; e < kEpisodes; ++e) {
    const std::size_t n = 1 + rng.below(6), L = 1 + rng.below(9), Lq = 1 + rng.below(9);
    const std::size_t dk = 1 + rng.below(6), dv = 1 + rng.below(6);
    const Tensor keys = random_tensor({n, L, dk}, rng, -2.0, 2.0);
    const Tensor query = random_tensor({Lq, dk}, rng, -2.0, 2.0);
    const Tensor vals = random_tensor({n * L, dv}, rng);
    const Tensor w = attention_weights(keys, query);
    for (std::size_t q = 0; q < Lq; ++q) {
      double s = 0.0;
      for (std::size_t r = 0; r < n * L; ++r) s += w.at(r, q);
      sum_err = std::max(sum_err, std::abs(s - 1.0));
    }
    const auto perm = rng.permutation(n * L);
    Tensor pk({n * L, dk}), pv({n * L, dv});
    for (std::size_t r = 0; r < n * L; ++r) {
      for (std::size_t k = 0; k < dk; ++k) pk.at(r, k) = keys[perm[r] * dk + k];
      for (std::size_t k = 0; k < dv; ++k) pv.at(r, k) = vals.at(perm[r], k);
    }
    const Tensor a = spatial_prototypes(w, vals);
    const Tensor b = spatial_prototypes(attention_weights(pk.reshaped({1, n * L, dk}), query), pv);
    perm_err = std::max(perm_err, max_abs_diff(a, b));
  }
  return {sum_err <= kAttentionTol && perm_err <= kAttentionTol,
          std::to_string(kEpisodes) + " episodes, weight-sum error " + fmt("%.1e", sum_err) +
              ", permutation error " + fmt("%.1e", perm_err)};
}

Verdict cmnist_shortcut() {
  DatasetSpec spec;  // cmnist, environments with colour-flip rates 0.1, 0.2 and held-out 0.9
  const MultiDomainDataset data = build_dataset(spec);
  const auto t0 = Clock::now();
  std::size_t passing = 0;
  std::string detail;
  for (std::uint64_t s = 0; s < kCmnistSeeds; ++s) {
    HyperParams hp = default_hyperparams(Algorithm::erm);
    hp.width = 16;
    hp.blocks = 3;
    hp.batch_size = 32;
    hp.lr = 1e-3;
    hp.total_steps = kCmnistSteps;
    hp.eval_every = 100;
    hp.seed = s;
    const TrainResult res = train(Algorithm::erm, data, spec.resolved_test_env(data.envs.size()), hp, SplitSpec{0.2, s});
    const EvalRecord& r = res.records[select_model(Selection::training_domain, res.records)];
    const bool ok = r.pooled_val_acc >= kCmnistMinVal && r.test_acc <= kCmnistMaxHeldOut;
    passing += ok;
    detail += " seed " + std::to_string(s) + ": val " + fmt("%.4f", r.pooled_val_acc) + " held-out " +
              fmt("%.4f", r.test_acc) + " @" + std::to_string(r.step) + (ok ? " ok;" : " miss;");
  }
  const double secs = since(t0);
  return {passing >= kCmnistNeeded && secs < kCmnistSeconds,
          std::to_string(passing) + "/" + std::to_string(kCmnistSeeds) + " seeds," + detail + " " + fmt("%.0f", secs) +
              " s"};
}

Verdict paired_identity() {
  TempDir dir("paired");
  DatasetSpec spec;
  const MultiDomainDataset data = build_dataset(spec);
  HyperParams erm = default_hyperparams(Algorithm::erm);
  erm.width = 8;
  erm.total_steps = 200;
  erm.eval_every = 50;
  erm.seed = 11;
  HyperParams div = erm;
  div.challenge.feature_drop = 0.0;
  div.challenge.batch_drop = 0.7;
  const int held_out = spec.resolved_test_env(data.envs.size());
  train(Algorithm::erm, data, held_out, erm, SplitSpec{0.2, 3}, TrainOptions{dir.path() / "erm.jsonl"});
  train(Algorithm::divcam, data, held_out, div, SplitSpec{0.2, 3}, TrainOptions{dir.path() / "divcam.jsonl"});
  const std::string a = read_text(dir.path() / "erm.jsonl"), b = read_text(dir.path() / "divcam.jsonl");
  return {!a.empty() && a == b, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " bytes, " +
                                    (a == b ? "identical" : "different")};
}

/// Mean and population std of the selected held-out accuracies, recomputed from the
/// trial rows of the CSV alone.
struct Recomputed {
  double td_mean, td_std, oracle_mean, oracle_std;
};

Recomputed recompute(const std::vector<TrialRow>& rows, std::size_t seeds) {
  std::vector<double> td, oracle;
  for (std::size_t s = 0; s < seeds; ++s) {
    const TrialRow *best_td = nullptr, *best_or = nullptr;
    for (const auto& r : rows) {
      if (r.split_seed != s || !r.ok()) continue;
      if (!best_td || r.td_val > best_td->td_val) best_td = &r;
      if (!best_or || r.oracle_val > best_or->oracle_val) best_or = &r;
    }
    if (best_td) td.push_back(best_td->td_test), oracle.push_back(best_or->oracle_test);
  }
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    return std::pair{m, std::sqrt(var / static_cast<double>(v.size()))};
  };
  const auto [tm, ts] = stats(td);
  const auto [om, os] = stats(oracle);
  return {tm, ts, om, os};
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  std::string c;
  while (std::getline(in, c, ',')) cells.push_back(c);
  return cells;
}

Verdict sweep_protocol() {
  TempDir dir("sweep");
  SweepConfig cfg;
  cfg.algorithm = Algorithm::divcam;
  cfg.dataset.name = "glyphs";
  cfg.base = default_hyperparams(Algorithm::divcam);
  cfg.base.width = 16;
  cfg.base.blocks = 3;
  cfg.base.total_steps = 300;
  cfg.base.eval_every = 50;
  cfg.n_trials = kSweepTrials;
  cfg.split_seeds = kSweepSeeds;
  cfg.seed = 0;
  cfg.out_dir = dir.path() / "runs";
  const auto t0 = Clock::now();
  const SweepReport report = run_sweep(cfg, glyph_data());
  const double secs = since(t0);
  const std::string csv = sweep_csv(report);

  const auto rows = parse_sweep_csv(csv);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.ok();
  const Recomputed want = recompute(rows, kSweepSeeds);

  // the summary line carries the four statistics; they must print exactly as recomputed
  std::istringstream lines(csv);
  std::string line, header, summary;
  std::getline(lines, header);
  while (std::getline(lines, line)) summary = line;
  const auto names = split_line(header);
  const auto cells = split_line(summary);
  auto column = [&](const std::string& name) -> double {
    for (std::size_t i = 0; i < names.size() && i < cells.size(); ++i)
      if (names[i] == name) return std::stod(cells[i]);
    return std::nan("");
  };
  const bool exact = column("td_mean") == want.td_mean && column("td_std") == want.td_std &&
                     column("oracle_mean") == want.oracle_mean && column("oracle_std") == want.oracle_std;
  const bool complete = rows.size() == kSweepTrials * kSweepSeeds;
  return {exact && complete && secs < kSweepSeconds,
          std::to_string(rows.size()) + " runs (" + std::to_string(failed) + " failed) in " + fmt("%.0f", secs) +
              " s, td " + fmt("%.4f", want.td_mean) + " +- " + fmt("%.4f", want.td_std) + ", oracle " +
              fmt("%.4f", want.oracle_mean) + " +- " + fmt("%.4f", want.oracle_std) +
              (exact ? ", summary recomputes exactly"
                     : ", summary differs: csv " + fmt("%.17g", column("td_mean")) + " " + fmt("%.17g", column("td_std")) +
                           " " + fmt("%.17g", column("oracle_mean")) + " " + fmt("%.17g", column("oracle_std")))};
}

/// Every regular file under `root`, relative path -> bytes.
std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), read_text(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict determinism() {
  TempDir dir("rerun");
  const std::string data_dir = (dir.path() / "data").string();
  ::setenv("XDG_DATA_DIR", data_dir.c_str(), 1);
  const std::string hp = R"(, "hparams": {"width": 8, "blocks": 3, "batch_size": 8, "total_steps": 60,
                          "eval_every": 20, "per_class": 2, "warmup_steps": 10, "n_support": 2, "d_k": 8, "d_v": 8})";
  const std::string data = R"("dataset": {"name": "glyphs", "glyphs": {"per_class": 20}})";
  auto write = [&](const std::string& name, const std::string& body) {
    const fs::path p = dir.path() / name;
    std::ofstream(p) << body;
    return p.string();
  };
  const std::string divcam = write("divcam.json", "{\"algorithm\": \"divcam\", " + data + hp +
                                                      R"(, "export": {"cam_steps": [20], "cam_images": 4}})");
  const std::string proto = write("proto.json", "{\"algorithm\": \"protodrop\", " + data + hp + "}");
  const std::string rsc = write("rsc.json", "{\"algorithm\": \"rsc\", " + data + hp + "}");
  const std::string xattn = write("xattn.json", "{\"algorithm\": \"dtransformer\", " + data + hp + "}");

  std::vector<std::string> failures;
  for (int rep = 0; rep < 2; ++rep) {
    const std::string out = (dir.path() / ("rep" + std::to_string(rep))).string();
    const std::vector<std::vector<std::string>> commands{
        {"gen-data", "cmnist", "--out", out + "/cmnist"},
        {"gen-data", "rmnist", "--out", out + "/rmnist"},
        {"gen-data", "glyphs", "--out", out + "/glyphs"},
        {"train", "--config", divcam, "--out", out + "/divcam"},
        {"export-cams", "--config", out + "/divcam/run.json"},
        {"train", "--config", rsc, "--out", out + "/rsc"},
        {"train", "--config", proto, "--out", out + "/proto"},
        {"export-distances", "--config", out + "/proto/run.json"},
        {"train", "--config", xattn, "--out", out + "/xattn"},
        {"sweep", "--config", divcam, "--trials", "2", "--split-seeds", "2", "--out", out + "/sweep"},
    };
    for (const auto& c : commands) {
      if (const int code = cli::run(c); code != 0) failures.push_back(c[0] + " exited " + std::to_string(code));
    }
  }
  const auto a = tree(dir.path() / "rep0"), b = tree(dir.path() / "rep1");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i] != b[i]) {
      ++differing;
      failures.push_back("differs: " + a[i].first);
    }
  }
  if (a.size() != b.size()) failures.push_back("file sets differ");
  std::string detail = std::to_string(a.size()) + " files compared, " + std::to_string(differing) + " differ";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty() && !a.empty(), detail};
}

const std::vector<std::pair<int, std::function<Verdict()>>>& criteria() {
  static const std::vector<std::pair<int, std::function<Verdict()>>> all{
      {1, gradients},     {2, mask_oracle},     {3, cardinality},     {4, hnc},
      {5, mmd},           {6, prototypes},      {7, attention},       {8, cmnist_shortcut},
      {9, paired_identity}, {10, sweep_protocol}, {11, determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion,-c", selected, "criteria to run (default: all)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  for (const auto& [id, check] : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "Criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
