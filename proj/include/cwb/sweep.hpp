#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cwb/contrastive.hpp"
#include "cwb/corpus.hpp"
#include "cwb/encoder.hpp"
#include "cwb/sts_eval.hpp"

namespace cwb {

struct Grid {
  std::vector<double> learning_rates;
  std::vector<double> temperatures;
  std::vector<std::size_t> batch_sizes;
  std::vector<PoolingMethod> poolings;
  std::size_t steps = 1000;
  std::size_t eval_every = 100;

  // Throws kGrid on an empty dimension or a budget below eval_every.
  void validate() const;
};

// Grid file: JSON with array keys learning_rate, temperature, batch_size,
// pooling and integer keys steps, eval_every.
Grid load_grid(const std::filesystem::path& path);

// Cartesian product in lexicographic order of (lr, tau, N, pooling), each
// dimension sorted ascending (pooling in canonical method order). Every
// other field is copied from `base`; steps/eval_every come from the grid.
std::vector<TrainConfig> expand_grid(const Grid& grid, const TrainConfig& base = {});

struct Checkpoint {
  std::size_t step = 0;
  EvalReport report;
};

struct TrialResult {
  TrainConfig config;
  std::vector<Checkpoint> checkpoints;
  std::size_t best_step = 0;
  double best_average_x100 = 0.0;
  bool failed = false;
  std::string error;
  TrainResult training;
};

struct TrialInputs {
  EncoderConfig encoder;
  std::span<const TokenizedSentence> corpus;
  const Vocabulary* vocab = nullptr;
  std::span<const StsDataset> datasets;
  Aggregation mode = Aggregation::kConcat;
};

// Trains a fresh model (initialized from config.seed) for `budget` steps,
// evaluating every `eval_every` steps. Training or evaluation errors mark the
// trial failed instead of propagating.
TrialResult run_trial(const TrainConfig& config, const TrialInputs& inputs,
                      std::size_t budget, std::size_t eval_every);

// Step of the checkpoint with the highest average; earliest on ties.
std::size_t detect_best_step(const TrialResult& result);

// Runs every config on up to `jobs` worker threads; results keep input order.
std::vector<TrialResult> run_sweep(std::span<const TrainConfig> configs,
                                   const TrialInputs& inputs, std::size_t jobs);

// Writes <dir>/sweep.csv (one row per non-failed trial and checkpoint) and
// <dir>/summary.md (best config overall and per swept dimension).
void emit_sweep_report(std::span<const TrialResult> results,
                       const std::filesystem::path& dir);

}  // namespace cwb
