#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xdg/train.hpp"

namespace xdg {

struct SweepConfig {
  Algorithm algorithm = Algorithm::divcam;
  DatasetSpec dataset;
  HyperParams base;
  SearchTable table = SearchTable::mask_study;
  std::size_t n_trials = 20;
  std::size_t split_seeds = 3;
  std::uint64_t seed = 0;          // drives the hyperparameter draws
  std::filesystem::path out_dir;   // one subdirectory per (trial, split seed); empty keeps nothing
};

struct TrialRow {
  std::size_t trial = 0;
  std::size_t split_seed = 0;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  double td_val = 0.0;        // pooled validation accuracy of the training-domain choice
  double td_test = 0.0;       // its held-out accuracy
  double oracle_val = 0.0;    // held-out validation accuracy of the last checkpoint
  double oracle_test = 0.0;   // its held-out accuracy
  std::string hparams;        // JSON
  bool ok() const { return status == "ok"; }
};

struct SweepSummary {
  std::size_t seeds = 0;  // split seeds with at least one successful trial
  double td_mean = 0.0, td_std = 0.0;
  double oracle_mean = 0.0, oracle_std = 0.0;
};

struct SweepReport {
  std::vector<TrialRow> rows;
  SweepSummary summary;
};

/// Per split seed, the best successful trial under each strategy (highest validation
/// score, earliest trial on ties); then mean and population std of their held-out
/// accuracies across seeds.
SweepSummary summarize(std::span<const TrialRow> rows);

/// Trains every (trial, split seed) pair, reusing results already present in out_dir.
/// Failed trials are recorded and skipped by the summary.
SweepReport run_sweep(const SweepConfig& cfg, const std::function<void(const TrialRow&)>& progress = {});
/// Same on an already built dataset (cfg.dataset then only supplies the test environment).
SweepReport run_sweep(const SweepConfig& cfg, const MultiDomainDataset& data,
                      const std::function<void(const TrialRow&)>& progress = {});

/// Header, one row per trial, one summary row. Numbers use 17 significant digits.
std::string sweep_csv(const SweepReport& report);
/// Reads the trial rows back from sweep_csv output.
std::vector<TrialRow> parse_sweep_csv(const std::string& text);

}  // namespace xdg
