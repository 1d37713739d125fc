#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xdg/checkpoint.hpp"
#include "xdg/datasets.hpp"
#include "xdg/hparams.hpp"

namespace xdg {

struct DatasetSpec {
  std::string name = "cmnist";  // cmnist, rmnist or glyphs
  std::uint64_t seed = 0;
  std::size_t digits = 6000;    // rendered digit count when no MNIST files are found
  std::vector<double> domain_probs{0.1, 0.2, 0.9};
  double label_noise = 0.25;
  std::vector<double> angles{0.0, 15.0, 30.0, 45.0, 60.0, 75.0};
  GlyphSpec glyphs;
  std::filesystem::path mnist_dir;  // optional IDX directory
  int test_env = -1;                // -1: the last environment

  void validate() const;
  int resolved_test_env(std::size_t env_count) const;
};

MultiDomainDataset build_dataset(const DatasetSpec& spec);

/// One periodic evaluation.
struct EvalRecord {
  std::size_t step = 0;
  std::vector<double> val_acc;  // per training environment, on its validation split
  double pooled_val_acc = 0.0;  // all training-domain validation samples pooled
  double test_acc = 0.0;        // held-out environment, its training split
  double oracle_acc = 0.0;      // held-out environment, its validation split
  std::map<std::string, double> losses;  // averaged since the previous evaluation
};

struct TrainResult {
  std::vector<EvalRecord> records;
  NamedArrays final_params;
  double seconds = 0.0;
};

struct TrainOptions {
  std::filesystem::path metrics_path;  // JSONL, one record per evaluation
  std::filesystem::path trace_path;    // JSONL, one record per masking step
  std::filesystem::path checkpoint_dir;  // final.ckpt, or last_good.ckpt on abort
  std::vector<std::size_t> save_steps;   // extra step<N>.ckpt files in checkpoint_dir
  std::function<void(const EvalRecord&)> on_eval;
};

/// Non-finite loss. The last checkpoint with a finite loss has been written when a
/// checkpoint directory was given.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

TrainResult train(Algorithm algorithm, const MultiDomainDataset& data, int test_env, const HyperParams& hp,
                  const SplitSpec& split, const TrainOptions& options = {});

/// Serialized metric record (one JSON line, no trailing newline).
std::string eval_record_json(const EvalRecord& r, const std::vector<std::string>& env_names);

enum class Selection { training_domain, oracle };
Selection parse_selection(const std::string& s);

/// training_domain: highest pooled validation accuracy, earliest on ties.
/// oracle: the last checkpoint.
std::size_t select_model(Selection strategy, std::span<const EvalRecord> records);

}  // namespace xdg
