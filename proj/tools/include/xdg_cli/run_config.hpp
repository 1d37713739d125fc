#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xdg/hparams.hpp"
#include "xdg/train.hpp"

namespace xdg::cli {

struct SweepSection {
  SearchTable table = SearchTable::mask_study;
  std::size_t n_trials = 20;
  std::size_t split_seeds = 3;
  std::uint64_t seed = 0;
};

struct ExportSection {
  std::vector<std::size_t> cam_steps;  // checkpoints kept for CAM overlays besides the final one
  std::size_t cam_images = 8;
};

struct RunConfig {
  Algorithm algorithm = Algorithm::erm;
  DatasetSpec dataset;
  HyperParams hparams = default_hyperparams(Algorithm::erm);
  std::uint64_t split_seed = 0;
  bool trace = true;
  SweepSection sweep;
  ExportSection exports;
};

/// Strict parse; `algorithm` (when given) replaces the file's choice before the
/// algorithm-dependent hyperparameter defaults are applied. Throws ConfigError.
RunConfig parse_run_config(const std::string& text, const std::optional<std::string>& algorithm = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::optional<std::string>& algorithm = std::nullopt);
std::string run_config_json(const RunConfig& cfg);

std::string dataset_json(const DatasetSpec& spec);

/// $XDG_DATA_DIR, or ./xdg-data.
std::filesystem::path data_root();
/// Cached container path for a dataset spec (keyed by a hash of its settings).
std::filesystem::path dataset_cache_path(const DatasetSpec& spec);
/// Loads the cached dataset or builds and caches it. MNIST files under <root>/mnist are
/// used when the spec names no directory.
MultiDomainDataset load_or_build_dataset(DatasetSpec spec);

}  // namespace xdg::cli
