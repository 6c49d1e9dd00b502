#include "cwb/contrastive.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cwb/error.hpp"

namespace cwb {

namespace {

constexpr std::uint64_t kBatchStream = 2;

void require_finite_grads(const std::vector<Tensor>& grads,
                          const EncoderModel& model) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw Error(ErrorKind::kNumeric,
                  "non-finite gradient for " + model.params[i].name);
    }
  }
}

struct ViewPass {
  ForwardTape tape;
  HiddenStack stack;
  Tensor pooled;
};

ViewPass run_view(const EncoderModel& model, const SentenceBatch& batch,
                  const TrainConfig& config, std::size_t step, int view,
                  Precision precision, bool keep_tape) {
  ViewPass pass;
  EncodeOptions options{true, view_seed(config.seed, step, view), precision};
  pass.stack = encode(model, batch, options, keep_tape ? &pass.tape : nullptr);
  pass.pooled = pool(pass.stack, config.pooling);
  return pass;
}

// Gradients of (multiplier * mean loss) with the forward pass in `precision`.
Gradients backward_pass(const EncoderModel& model, const SentenceBatch& batch,
                        const TrainConfig& config, std::size_t step,
                        Precision precision, double multiplier) {
  ViewPass first = run_view(model, batch, config, step, 0, precision, true);
  ViewPass second = run_view(model, batch, config, step, 1, precision, true);
  const Tensor sims = sim_matrix(first.pooled, second.pooled);
  InfoNceLoss loss = infonce_loss(sims, config.temperature);
  if (!std::isfinite(loss.mean)) {
    throw Error(ErrorKind::kNumeric, "non-finite contrastive loss");
  }

  Tensor d_sims = infonce_backward(sims, config.temperature);
  for (double& v : d_sims.data()) v *= multiplier;
  Tensor d_first, d_second;
  sim_matrix_backward(first.pooled, second.pooled, d_sims, d_first, d_second);

  Gradients out;
  out.loss = loss.mean;
  out.per_example = std::move(loss.per_example);
  out.grads = zero_gradients(model);
  encoder_backward(model, batch, first.tape,
                   pool_backward(first.stack, config.pooling, d_first), out.grads);
  encoder_backward(model, batch, second.tape,
                   pool_backward(second.stack, config.pooling, d_second), out.grads);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorKind::kConfig, "temperature must be positive");
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::kConfig, "learning_rate must be positive");
  }
  if (batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be at least 1");
  if (max_steps < 1) throw Error(ErrorKind::kConfig, "max_steps must be at least 1");
  if (eval_every < 1) throw Error(ErrorKind::kConfig, "eval_every must be at least 1");
  if (!(loss_scale > 0.0)) throw Error(ErrorKind::kConfig, "loss_scale must be positive");
}

double cosine_sim(std::span<const double> a, std::span<const double> b,
                  bool* degenerate) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimension, "cosine_sim: length mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (degenerate != nullptr) *degenerate = na == 0.0 && nb == 0.0;
  if (na == 0.0 && nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEps);
}

Tensor sim_matrix(const Tensor& h1, const Tensor& h2) {
  if (h1.rank() != 2 || h2.rank() != 2 || h1.dim(0) != h2.dim(0) ||
      h1.dim(1) != h2.dim(1)) {
    throw Error(ErrorKind::kDimension,
                "sim_matrix needs two batch x dim tensors of equal shape");
  }
  const std::size_t n = h1.dim(0);
  const std::size_t d = h1.dim(1);
  Tensor sims({n, n}, Precision::kCheck64);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sims.at(i, j) = cosine_sim(h1.data().subspan(i * d, d),
                                 h2.data().subspan(j * d, d));
    }
  }
  return sims;
}

InfoNceLoss infonce_loss(const Tensor& sims, double temperature) {
  if (sims.rank() != 2 || sims.dim(0) != sims.dim(1)) {
    throw Error(ErrorKind::kDimension, "infonce_loss needs a square matrix");
  }
  if (!(temperature > 0.0)) {
    throw Error(ErrorKind::kDomain, "temperature must be positive");
  }
  const std::size_t n = sims.dim(0);
  InfoNceLoss loss;
  loss.per_example.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // -log softmax_i = logsumexp_j(s_ij / tau) - s_ii / tau
    double max_logit = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      max_logit = std::max(max_logit, sims.at(i, j) / temperature);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sum += std::exp(sims.at(i, j) / temperature - max_logit);
    }
    const double li = max_logit + std::log(sum) - sims.at(i, i) / temperature;
    // Rounding can leave tiny negatives when the positive dominates.
    loss.per_example[i] = li < 0.0 && li > -1e-12 ? 0.0 : li;
    total += loss.per_example[i];
  }
  loss.mean = total / static_cast<double>(n);
  return loss;
}

Tensor infonce_backward(const Tensor& sims, double temperature) {
  const std::size_t n = sims.dim(0);
  Tensor grad({n, n}, Precision::kCheck64);
  std::vector<double> probs(n);
  const double inv = 1.0 / (temperature * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    softmax_row(sims.data().subspan(i * n, n), temperature, probs);
    for (std::size_t j = 0; j < n; ++j) {
      grad.at(i, j) = (probs[j] - (i == j ? 1.0 : 0.0)) * inv;
    }
  }
  return grad;
}

void sim_matrix_backward(const Tensor& h1, const Tensor& h2,
                         const Tensor& d_sims, Tensor& d_h1, Tensor& d_h2) {
  const std::size_t n = h1.dim(0);
  const std::size_t d = h1.dim(1);
  d_h1 = Tensor(h1.shape(), Precision::kCheck64);
  d_h2 = Tensor(h2.shape(), Precision::kCheck64);
  std::vector<double> norm1(n), norm2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      s1 += h1.at(i, c) * h1.at(i, c);
      s2 += h2.at(i, c) * h2.at(i, c);
    }
    norm1[i] = std::sqrt(s1);
    norm2[i] = std::sqrt(s2);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = d_sims.at(i, j);
      if (g == 0.0) continue;
      if (norm1[i] == 0.0 && norm2[j] == 0.0) continue;  // defined as 0
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += h1.at(i, c) * h2.at(j, c);
      const double denom = norm1[i] * norm2[j] + kCosineEps;
      // d/da [a.b / (|a||b| + eps)] = b/denom - (a.b)|b| a / (|a| denom^2)
      const double coef1 =
          norm1[i] > 0.0 ? dot * norm2[j] / (norm1[i] * denom * denom) : 0.0;
      const double coef2 =
          norm2[j] > 0.0 ? dot * norm1[i] / (norm2[j] * denom * denom) : 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        d_h1.at(i, c) += g * (h2.at(j, c) / denom - coef1 * h1.at(i, c));
        d_h2.at(j, c) += g * (h1.at(i, c) / denom - coef2 * h2.at(j, c));
      }
    }
  }
}

std::uint64_t view_seed(std::uint64_t seed, std::size_t step, int view) {
  return derive_seed(seed, step, static_cast<std::uint64_t>(view));
}

std::uint64_t batch_seed(std::uint64_t seed, std::size_t step) {
  return derive_seed(seed, step, kBatchStream);
}

double contrastive_loss(const EncoderModel& model, const SentenceBatch& batch,
                        const TrainConfig& config, std::size_t step) {
  const Precision precision = model.precision();
  ViewPass first = run_view(model, batch, config, step, 0, precision, false);
  ViewPass second = run_view(model, batch, config, step, 1, precision, false);
  return infonce_loss(sim_matrix(first.pooled, second.pooled), config.temperature)
      .mean;
}

Gradients compute_gradients(const EncoderModel& model,
                            const SentenceBatch& batch,
                            const TrainConfig& config, std::size_t step) {
  Gradients out = backward_pass(model, batch, config, step, model.precision(), 1.0);
  require_finite_grads(out.grads, model);
  return out;
}

AdamState AdamState::for_model(const EncoderModel& model) {
  AdamState state;
  state.first_moment = zero_gradients(model);
  state.second_moment = zero_gradients(model);
  return state;
}

void adam_step(EncoderModel& model, const std::vector<Tensor>& grads,
               AdamState& state, double learning_rate) {
  if (grads.size() != model.params.size() ||
      state.first_moment.size() != model.params.size()) {
    throw Error(ErrorKind::kDimension, "adam_step: parameter count mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != model.params[i].value.shape() ||
        state.first_moment[i].shape() != grads[i].shape()) {
      throw Error(ErrorKind::kDimension,
                  "adam_step: shape mismatch for " + model.params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& param = model.params[i].value;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t k = 0; k < param.size(); ++k) {
      const double g = grads[i][k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      param[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    round_in_place(param.data(), param.precision());
  }
}

LossScaler::LossScaler(double scale) : scale_(scale) {
  if (!(scale > 0.0)) throw Error(ErrorKind::kConfig, "loss scale must be positive");
}

void store_as_binary16(std::vector<Tensor>& grads) {
  for (auto& g : grads) g.set_precision(Precision::kEmu16);
}

std::optional<std::vector<Tensor>> LossScaler::unscale(std::vector<Tensor> scaled) {
  for (const auto& g : scaled) {
    if (!g.all_finite()) {
      scale_ *= 0.5;
      ++overflow_count_;
      return std::nullopt;
    }
  }
  for (auto& g : scaled) {
    g.set_precision(Precision::kCheck64);
    for (double& v : g.data()) v /= scale_;
  }
  return scaled;
}

std::optional<std::vector<Tensor>> LossScaler::round_trip(
    const std::vector<Tensor>& grads) {
  std::vector<Tensor> scaled = grads;
  for (auto& g : scaled) {
    g.set_precision(Precision::kCheck64);
    for (double& v : g.data()) v *= scale_;
  }
  store_as_binary16(scaled);
  return unscale(std::move(scaled));
}

ScaledStep scaled_backward(const EncoderModel& model, const SentenceBatch& batch,
                           const TrainConfig& config, LossScaler& scaler,
                           std::size_t step) {
  ScaledStep out;
  out.scale_used = scaler.scale();
  Gradients raw = backward_pass(model, batch, config, step, Precision::kEmu16,
                                scaler.scale());
  out.loss = raw.loss;
  store_as_binary16(raw.grads);
  out.grads = scaler.unscale(std::move(raw.grads));
  return out;
}

TrainResult train(EncoderModel& model, std::span<const TokenizedSentence> corpus,
                  const TrainConfig& config, const EvalHook& eval_hook) {
  config.validate();
  TrainResult result;
  result.trace.reserve(config.max_steps);
  AdamState adam = AdamState::for_model(model);
  LossScaler scaler(config.loss_scale);

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    try {
      const SentenceBatch batch =
          sample_batch(corpus, config.batch_size, batch_seed(config.seed, step));
      LossRecord record;
      record.step = step;
      if (config.amp) {
        ScaledStep scaled = scaled_backward(model, batch, config, scaler, step);
        record.loss = scaled.loss;
        record.scale = scaled.scale_used;
        record.skipped = !scaled.grads.has_value();
        if (scaled.grads) adam_step(model, *scaled.grads, adam, config.learning_rate);
      } else {
        Gradients g = compute_gradients(model, batch, config, step);
        record.loss = g.loss;
        adam_step(model, g.grads, adam, config.learning_rate);
      }
      result.trace.push_back(record);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      throw Error(ErrorKind::kNumeric,
                  "step " + std::to_string(step) + ": " + e.message());
    }
    if (eval_hook && step % config.eval_every == 0) eval_hook(step, model);
  }
  result.overflow_count = scaler.overflow_count();
  return result;
}

void write_loss_csv(const TrainResult& result, bool with_scale,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << (with_scale ? "step,loss,scale\n" : "step,loss\n");
  out << std::setprecision(17);
  for (const auto& r : result.trace) {
    out << r.step << ',' << r.loss;
    if (with_scale) out << ',' << r.scale;
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace cwb
