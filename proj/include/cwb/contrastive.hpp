#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cwb/corpus.hpp"
#include "cwb/encoder.hpp"
#include "cwb/numerics.hpp"
#include "cwb/pooling.hpp"

namespace cwb {

struct TrainConfig {
  double temperature = 0.05;
  double learning_rate = 3e-5;
  std::size_t batch_size = 64;
  std::size_t max_steps = 1000;
  PoolingMethod pooling{};
  std::uint64_t seed = 42;
  bool amp = false;
  double loss_scale = 16384.0;  // 2^14
  std::size_t eval_every = 100;

  void validate() const;
};

inline constexpr double kCosineEps = 1e-8;

// a.b / (|a||b| + 1e-8). Both vectors zero gives 0 and sets *degenerate.
double cosine_sim(std::span<const double> a, std::span<const double> b,
                  bool* degenerate = nullptr);

// Entry (i, j) = cosine_sim(h1 row i, h2 row j).
Tensor sim_matrix(const Tensor& h1, const Tensor& h2);

struct InfoNceLoss {
  double mean = 0.0;
  std::vector<double> per_example;
};

// l_i = -log softmax(sims[i] / tau)[i], natural log.
InfoNceLoss infonce_loss(const Tensor& sims, double temperature);

// dMeanLoss/dSims.
Tensor infonce_backward(const Tensor& sims, double temperature);

// Gradients of sum_ij d_sims(i,j) * sims(i,j) with respect to h1 and h2.
void sim_matrix_backward(const Tensor& h1, const Tensor& h2,
                         const Tensor& d_sims, Tensor& d_h1, Tensor& d_h2);

// Dropout seeds of the two views at `step`.
std::uint64_t view_seed(std::uint64_t seed, std::size_t step, int view);
std::uint64_t batch_seed(std::uint64_t seed, std::size_t step);

struct Gradients {
  double loss = 0.0;
  std::vector<double> per_example;
  std::vector<Tensor> grads;  // aligned with model.params
};

// Mean InfoNCE loss of the batch with dropout views drawn for `step`.
double contrastive_loss(const EncoderModel& model, const SentenceBatch& batch,
                        const TrainConfig& config, std::size_t step);

// Exact reverse-mode gradients of contrastive_loss through both views.
// Throws kNumeric if the loss or a gradient is non-finite.
Gradients compute_gradients(const EncoderModel& model,
                            const SentenceBatch& batch,
                            const TrainConfig& config, std::size_t step);

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_model(const EncoderModel& model);
};

void adam_step(EncoderModel& model, const std::vector<Tensor>& grads,
               AdamState& state, double learning_rate);

// Multiplies gradients by the scale, stores them as binary16, and unscales.
// Non-finite stored values mean the step must be skipped: the scale is
// halved and nothing is returned.
class LossScaler {
 public:
  explicit LossScaler(double scale);

  double scale() const { return scale_; }
  std::size_t overflow_count() const { return overflow_count_; }

  // `scaled` are gradients of (scale * loss), already in binary16.
  std::optional<std::vector<Tensor>> unscale(std::vector<Tensor> scaled);
  // Simulates fp16 gradient buffers for gradients `grads` of the unscaled
  // loss: round(scale * g) to binary16, then unscale.
  std::optional<std::vector<Tensor>> round_trip(const std::vector<Tensor>& grads);

 private:
  double scale_;
  std::size_t overflow_count_ = 0;
};

// Rounds every gradient value to binary16 in place.
void store_as_binary16(std::vector<Tensor>& grads);

struct ScaledStep {
  double loss = 0.0;
  double scale_used = 1.0;
  std::optional<std::vector<Tensor>> grads;  // empty when skipped
};

// Mixed-precision emulation: both forward passes run in emu16, the backward
// pass starts from scale * dLoss, parameter gradients are stored in binary16
// and unscaled in double.
ScaledStep scaled_backward(const EncoderModel& model, const SentenceBatch& batch,
                           const TrainConfig& config, LossScaler& scaler,
                           std::size_t step);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double scale = 1.0;
  bool skipped = false;
};

using EvalHook = std::function<void(std::size_t step, const EncoderModel&)>;

struct TrainResult {
  std::vector<LossRecord> trace;
  std::size_t overflow_count = 0;
};

// Runs config.max_steps steps, calling eval_hook after every eval_every-th
// step. Numeric failures are rethrown with the step index.
TrainResult train(EncoderModel& model, std::span<const TokenizedSentence> corpus,
                  const TrainConfig& config, const EvalHook& eval_hook = {});

// step,loss[,scale]
void write_loss_csv(const TrainResult& result, bool with_scale,
                    const std::filesystem::path& path);

}  // namespace cwb
