#include "cwb/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "cwb/checkpoint.hpp"
#include "cwb/error.hpp"

namespace cwb {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

// Seeds for the two dropout sites of each block.
constexpr std::uint64_t kAttentionDropout = 0;
constexpr std::uint64_t kFfnDropout = 1;

std::string layer_name(std::size_t layer, LayerParam p) {
  static const char* const kSuffix[kParamsPerLayer] = {
      "ln1.gain",           "ln1.bias",
      "attn.query.weight",  "attn.query.bias",
      "attn.key.weight",    "attn.key.bias",
      "attn.value.weight",  "attn.value.bias",
      "attn.output.weight", "attn.output.bias",
      "ln2.gain",           "ln2.bias",
      "ffn.in.weight",      "ffn.in.bias",
      "ffn.out.weight",     "ffn.out.bias",
  };
  return "layers." + std::to_string(layer) + "." + kSuffix[p];
}

// Names and shapes of every parameter, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_layout(
    const EncoderConfig& c) {
  const std::size_t h = c.hidden_dim;
  const std::size_t f = c.ffn_dim;
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("embeddings.token", Shape{c.vocab_size, h});
  layout.emplace_back("embeddings.position", Shape{c.max_seq_len, h});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const Shape shapes[kParamsPerLayer] = {
        {h}, {h}, {h, h}, {h}, {h, h}, {h}, {h, h}, {h},
        {h, h}, {h}, {h}, {h}, {h, f}, {f}, {f, h}, {h},
    };
    for (std::size_t p = 0; p < kParamsPerLayer; ++p) {
      layout.emplace_back(layer_name(l, static_cast<LayerParam>(p)), shapes[p]);
    }
  }
  return layout;
}

bool is_gain(const std::string& name) {
  return name.ends_with(".gain");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double u) {
  return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2));
}

double gelu_grad(double u) {
  const double cdf = 0.5 * (1.0 + std::erf(u * kInvSqrt2));
  const double pdf = std::exp(-0.5 * u * u) * 0.5 * std::numbers::inv_sqrtpi *
                     std::numbers::sqrt2;
  return cdf + u * pdf;
}

// out = x * w + bias for a [rows x in] input.
void linear(std::span<const double> x, const Tensor& w, const Tensor& bias,
            std::vector<double>& out, std::size_t rows, Precision precision) {
  const std::size_t in = w.dim(0);
  const std::size_t width = w.dim(1);
  out.resize(rows * width);
  gemm(x, w.data(), out, rows, in, width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] += bias[c];
  }
  round_in_place(out, precision);
}

void layer_norm_forward(std::span<const double> x, const Tensor& gain,
                        const Tensor& bias, std::size_t rows,
                        std::vector<double>& hat, std::vector<double>& rstd,
                        std::vector<double>& out, Precision precision) {
  const std::size_t width = gain.size();
  hat.resize(rows * width);
  rstd.resize(rows);
  out.resize(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * width;
    double mean = 0.0;
    for (std::size_t c = 0; c < width; ++c) mean += row[c];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(width);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < width; ++c) {
      hat[r * width + c] = (row[c] - mean) * rstd[r];
      out[r * width + c] = hat[r * width + c] * gain[c] + bias[c];
    }
  }
  round_in_place(out, precision);
}

// Accumulates the input gradient into dx and parameter gradients into
// dgain/dbias.
void layer_norm_backward(std::span<const double> dout,
                         std::span<const double> hat,
                         std::span<const double> rstd, const Tensor& gain,
                         std::size_t rows, std::span<double> dx, Tensor& dgain,
                         Tensor& dbias) {
  const std::size_t width = gain.size();
  const double inv_width = 1.0 / static_cast<double>(width);
  std::vector<double> dhat(width);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dhat = 0.0;
    double mean_dhat_hat = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      dgain[c] += dout[i] * hat[i];
      dbias[c] += dout[i];
      dhat[c] = dout[i] * gain[c];
      mean_dhat += dhat[c];
      mean_dhat_hat += dhat[c] * hat[i];
    }
    mean_dhat *= inv_width;
    mean_dhat_hat *= inv_width;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      dx[i] += rstd[r] * (dhat[c] - mean_dhat - hat[i] * mean_dhat_hat);
    }
  }
}

// Parameter and input gradients of out = x * w + b.
void linear_backward(std::span<const double> x, std::span<const double> dout,
                     const Tensor& w, std::size_t rows, Tensor& dw, Tensor& db,
                     std::vector<double>* dx) {
  const std::size_t in = w.dim(0);
  const std::size_t width = w.dim(1);
  gemm_tn_accumulate(x, dout, dw.data(), rows, in, width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) db[c] += dout[r * width + c];
  }
  if (dx != nullptr) {
    dx->resize(rows * in);
    gemm_nt(dout, w.data(), *dx, rows, width, in);
  }
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorKind::kConfig, msg);
  };
  if (vocab_size <= kReservedTokens) fail("vocab_size must exceed 3");
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (n_layers < 1) fail("n_layers must be at least 1");
  if (n_heads == 0) fail("n_heads must be positive");
  if (hidden_dim % n_heads != 0) {
    fail("hidden_dim " + std::to_string(hidden_dim) +
         " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    fail("dropout_rate must lie in [0, 1)");
  }
}

std::size_t expected_parameter_count(const EncoderConfig& c) {
  const std::size_t v = c.vocab_size, h = c.hidden_dim, p = c.max_seq_len;
  const std::size_t l = c.n_layers, f = c.ffn_dim;
  return v * h + p * h + l * (4 * h * h + 2 * h * f + 9 * h + f);
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

Precision EncoderModel::precision() const {
  return params.empty() ? Precision::kTrain32 : params.front().value.precision();
}

void EncoderModel::set_precision(Precision precision) {
  for (auto& p : params) p.value.set_precision(precision);
}

const Parameter* EncoderModel::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

EncoderModel init_model(const EncoderConfig& config, std::uint64_t seed,
                        Precision precision) {
  config.validate();
  EncoderModel model;
  model.config = config;
  Rng rng(seed);
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor t(shape, Precision::kCheck64);
    if (shape.size() == 2) {
      for (double& v : t.data()) v = rng.normal(0.0, kInitStd);
    } else if (is_gain(name)) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    }
    t.set_precision(precision);
    model.params.push_back({name, std::move(t)});
  }
  return model;
}

std::vector<Tensor> zero_gradients(const EncoderModel& model) {
  std::vector<Tensor> grads;
  grads.reserve(model.params.size());
  for (const auto& p : model.params) {
    grads.emplace_back(p.value.shape(), Precision::kCheck64);
  }
  return grads;
}

HiddenStack encode(const EncoderModel& model, const SentenceBatch& batch,
                   std::uint64_t dropout_seed, bool training) {
  return encode(model, batch, EncodeOptions{training, dropout_seed, {}});
}

HiddenStack encode(const EncoderModel& model, const SentenceBatch& batch,
                   const EncodeOptions& options, ForwardTape* tape) {
  const EncoderConfig& cfg = model.config;
  const std::size_t h = cfg.hidden_dim;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t head_dim = cfg.head_dim();
  const std::size_t b_size = batch.batch;
  const std::size_t width = batch.width;
  const std::size_t rows = b_size * width;
  const Precision precision = options.precision.value_or(model.precision());
  const double rate = options.training ? cfg.dropout_rate : 0.0;

  if (b_size == 0 || width == 0) {
    throw Error(ErrorKind::kInput, "empty batch");
  }
  if (width > cfg.max_seq_len) {
    throw Error(ErrorKind::kInput,
                "sequence length " + std::to_string(width) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (std::int32_t id : batch.ids) {
    if (id < 0 || static_cast<std::uint32_t>(id) >= cfg.vocab_size) {
      throw Error(ErrorKind::kInput, "token id " + std::to_string(id) +
                                         " outside vocabulary of size " +
                                         std::to_string(cfg.vocab_size));
    }
  }

  HiddenStack stack;
  stack.batch = b_size;
  stack.width = width;
  stack.hidden = h;
  stack.mask = batch.mask;
  const Shape shape{b_size, width, h};

  const Tensor& tok = model.params[kTokenEmbedding].value;
  const Tensor& pos = model.params[kPositionEmbedding].value;
  std::vector<double> x(rows * h);
  for (std::size_t b = 0; b < b_size; ++b) {
    for (std::size_t s = 0; s < width; ++s) {
      const std::size_t id = static_cast<std::size_t>(batch.id(b, s));
      double* out = x.data() + (b * width + s) * h;
      for (std::size_t c = 0; c < h; ++c) out[c] = tok.at(id, c) + pos.at(s, c);
    }
  }
  round_in_place(x, precision);
  stack.layers.emplace_back(shape, x, precision);

  if (tape != nullptr) tape->layers.assign(cfg.n_layers, {});
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<double> scores(width);
  std::vector<double> attn_out, ffn_out;

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    ForwardTape::Layer local;
    ForwardTape::Layer& t = tape != nullptr ? tape->layers[l] : local;
    auto param = [&](LayerParam p) -> const Tensor& {
      return model.params[param_index(l, p)].value;
    };

    layer_norm_forward(x, param(kLn1Gain), param(kLn1Bias), rows, t.ln1_hat,
                       t.ln1_rstd, t.ln1_out, precision);
    linear(t.ln1_out, param(kQueryWeight), param(kQueryBias), t.query, rows, precision);
    linear(t.ln1_out, param(kKeyWeight), param(kKeyBias), t.key, rows, precision);
    linear(t.ln1_out, param(kValueWeight), param(kValueBias), t.value, rows, precision);

    // Scaled dot-product attention; PAD keys receive zero weight.
    t.probs.assign(b_size * n_heads * width * width, 0.0);
    t.context.assign(rows * h, 0.0);
    for (std::size_t b = 0; b < b_size; ++b) {
      for (std::size_t hd = 0; hd < n_heads; ++hd) {
        const std::size_t off = hd * head_dim;
        for (std::size_t i = 0; i < width; ++i) {
          const double* q = t.query.data() + (b * width + i) * h + off;
          for (std::size_t j = 0; j < width; ++j) {
            if (!batch.real(b, j)) {
              scores[j] = -std::numeric_limits<double>::infinity();
              continue;
            }
            const double* k = t.key.data() + (b * width + j) * h + off;
            double dot = 0.0;
            for (std::size_t c = 0; c < head_dim; ++c) dot += q[c] * k[c];
            scores[j] = dot * score_scale;
          }
          std::span<double> p(t.probs.data() + ((b * n_heads + hd) * width + i) * width,
                              width);
          softmax_row(scores, 1.0, p);
          round_in_place(p, precision);
          double* ctx = t.context.data() + (b * width + i) * h + off;
          for (std::size_t j = 0; j < width; ++j) {
            if (p[j] == 0.0) continue;
            const double* v = t.value.data() + (b * width + j) * h + off;
            for (std::size_t c = 0; c < head_dim; ++c) ctx[c] += p[j] * v[c];
          }
        }
      }
    }
    round_in_place(t.context, precision);

    linear(t.context, param(kOutputWeight), param(kOutputBias), attn_out, rows,
           precision);
    if (rate > 0.0) {
      t.attn_keep = dropout_mask(attn_out.size(),
                                 rate, derive_seed(options.dropout_seed, l,
                                                   kAttentionDropout));
      for (std::size_t i = 0; i < attn_out.size(); ++i) attn_out[i] *= t.attn_keep[i];
      round_in_place(attn_out, precision);
    } else {
      t.attn_keep.clear();
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];
    round_in_place(x, precision);

    layer_norm_forward(x, param(kLn2Gain), param(kLn2Bias), rows, t.ln2_hat,
                       t.ln2_rstd, t.ln2_out, precision);
    linear(t.ln2_out, param(kFfnInWeight), param(kFfnInBias), t.ffn_pre, rows,
           precision);
    t.ffn_act.resize(t.ffn_pre.size());
    for (std::size_t i = 0; i < t.ffn_pre.size(); ++i) t.ffn_act[i] = gelu(t.ffn_pre[i]);
    round_in_place(t.ffn_act, precision);
    linear(t.ffn_act, param(kFfnOutWeight), param(kFfnOutBias), ffn_out, rows,
           precision);
    if (rate > 0.0) {
      t.ffn_keep = dropout_mask(ffn_out.size(), rate,
                                derive_seed(options.dropout_seed, l, kFfnDropout));
      for (std::size_t i = 0; i < ffn_out.size(); ++i) ffn_out[i] *= t.ffn_keep[i];
      round_in_place(ffn_out, precision);
    } else {
      t.ffn_keep.clear();
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
    round_in_place(x, precision);
    stack.layers.emplace_back(shape, x, precision);
  }
  return stack;
}

void encoder_backward(const EncoderModel& model, const SentenceBatch& batch,
                      const ForwardTape& tape,
                      std::vector<std::vector<double>> layer_grads,
                      std::vector<Tensor>& grads) {
  const EncoderConfig& cfg = model.config;
  const std::size_t h = cfg.hidden_dim;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t head_dim = cfg.head_dim();
  const std::size_t b_size = batch.batch;
  const std::size_t width = batch.width;
  const std::size_t rows = b_size * width;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  if (layer_grads.size() != cfg.n_layers + 1 || tape.layers.size() != cfg.n_layers ||
      grads.size() != model.params.size()) {
    throw Error(ErrorKind::kDimension, "encoder_backward: inconsistent inputs");
  }

  std::vector<double> dx = std::move(layer_grads[cfg.n_layers]);
  dx.resize(rows * h, 0.0);
  std::vector<double> d_ffn, d_act, d_pre, d_ln_out, d_attn, d_ctx;
  std::vector<double> dq(rows * h), dk(rows * h), dv(rows * h), tmp;
  std::vector<double> dp(width);

  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const ForwardTape::Layer& t = tape.layers[l];
    auto param = [&](LayerParam p) -> const Tensor& {
      return model.params[param_index(l, p)].value;
    };
    auto grad = [&](LayerParam p) -> Tensor& { return grads[param_index(l, p)]; };

    // x_out = residual + dropout(ffn(ln2(residual)))
    d_ffn = dx;
    if (!t.ffn_keep.empty()) {
      for (std::size_t i = 0; i < d_ffn.size(); ++i) d_ffn[i] *= t.ffn_keep[i];
    }
    linear_backward(t.ffn_act, d_ffn, param(kFfnOutWeight), rows,
                    grad(kFfnOutWeight), grad(kFfnOutBias), &d_act);
    d_pre.resize(d_act.size());
    for (std::size_t i = 0; i < d_act.size(); ++i) {
      d_pre[i] = d_act[i] * gelu_grad(t.ffn_pre[i]);
    }
    linear_backward(t.ln2_out, d_pre, param(kFfnInWeight), rows,
                    grad(kFfnInWeight), grad(kFfnInBias), &d_ln_out);
    layer_norm_backward(d_ln_out, t.ln2_hat, t.ln2_rstd, param(kLn2Gain), rows,
                        dx, grad(kLn2Gain), grad(kLn2Bias));

    // residual = x_in + dropout(attention(ln1(x_in)))
    d_attn = dx;
    if (!t.attn_keep.empty()) {
      for (std::size_t i = 0; i < d_attn.size(); ++i) d_attn[i] *= t.attn_keep[i];
    }
    linear_backward(t.context, d_attn, param(kOutputWeight), rows,
                    grad(kOutputWeight), grad(kOutputBias), &d_ctx);

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t b = 0; b < b_size; ++b) {
      for (std::size_t hd = 0; hd < n_heads; ++hd) {
        const std::size_t off = hd * head_dim;
        for (std::size_t i = 0; i < width; ++i) {
          const double* p = t.probs.data() + ((b * n_heads + hd) * width + i) * width;
          const double* dc = d_ctx.data() + (b * width + i) * h + off;
          double weighted = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            if (p[j] == 0.0) {
              dp[j] = 0.0;
              continue;
            }
            const double* v = t.value.data() + (b * width + j) * h + off;
            double* dvj = dv.data() + (b * width + j) * h + off;
            double acc = 0.0;
            for (std::size_t c = 0; c < head_dim; ++c) {
              acc += dc[c] * v[c];
              dvj[c] += p[j] * dc[c];
            }
            dp[j] = acc;
            weighted += p[j] * acc;
          }
          const double* q = t.query.data() + (b * width + i) * h + off;
          double* dqi = dq.data() + (b * width + i) * h + off;
          for (std::size_t j = 0; j < width; ++j) {
            if (p[j] == 0.0) continue;
            const double ds = p[j] * (dp[j] - weighted) * score_scale;
            const double* k = t.key.data() + (b * width + j) * h + off;
            double* dkj = dk.data() + (b * width + j) * h + off;
            for (std::size_t c = 0; c < head_dim; ++c) {
              dqi[c] += ds * k[c];
              dkj[c] += ds * q[c];
            }
          }
        }
      }
    }

    linear_backward(t.ln1_out, dq, param(kQueryWeight), rows, grad(kQueryWeight),
                    grad(kQueryBias), &d_ln_out);
    linear_backward(t.ln1_out, dk, param(kKeyWeight), rows, grad(kKeyWeight),
                    grad(kKeyBias), &tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) d_ln_out[i] += tmp[i];
    linear_backward(t.ln1_out, dv, param(kValueWeight), rows, grad(kValueWeight),
                    grad(kValueBias), &tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) d_ln_out[i] += tmp[i];
    layer_norm_backward(d_ln_out, t.ln1_hat, t.ln1_rstd, param(kLn1Gain), rows,
                        dx, grad(kLn1Gain), grad(kLn1Bias));

    if (!layer_grads[l].empty()) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += layer_grads[l][i];
    }
  }

  Tensor& d_tok = grads[kTokenEmbedding];
  Tensor& d_pos = grads[kPositionEmbedding];
  for (std::size_t b = 0; b < b_size; ++b) {
    for (std::size_t s = 0; s < width; ++s) {
      const std::size_t id = static_cast<std::size_t>(batch.id(b, s));
      const double* g = dx.data() + (b * width + s) * h;
      for (std::size_t c = 0; c < h; ++c) {
        d_tok.at(id, c) += g[c];
        d_pos.at(s, c) += g[c];
      }
    }
  }
}

std::size_t save_checkpoint(const EncoderModel& model,
                            const std::filesystem::path& path) {
  CheckpointFile file;
  file.config = model.config;
  for (const auto& p : model.params) {
    TensorRecord rec;
    rec.name = p.name;
    rec.shape = p.value.shape();
    rec.f32.reserve(p.value.size());
    for (double v : p.value.data()) rec.f32.push_back(static_cast<float>(v));
    file.records.push_back(std::move(rec));
  }
  return write_checkpoint_file(file, path);
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile file = read_checkpoint_file(path);
  try {
    file.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, std::string("invalid stored config: ") + e.what());
  }
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& rec : file.records) {
    if (!by_name.emplace(rec.name, &rec).second) {
      throw Error(ErrorKind::kFormat, "duplicate tensor " + rec.name);
    }
  }
  const auto layout = parameter_layout(file.config);
  if (by_name.size() != layout.size()) {
    throw Error(ErrorKind::kFormat,
                "checkpoint holds " + std::to_string(by_name.size()) +
                    " tensors, expected " + std::to_string(layout.size()));
  }
  EncoderModel model;
  model.config = file.config;
  for (const auto& [name, shape] : layout) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error(ErrorKind::kFormat, "missing tensor " + name);
    }
    const TensorRecord& rec = *it->second;
    if (rec.shape != shape) {
      throw Error(ErrorKind::kFormat, "shape mismatch for " + name);
    }
    std::vector<double> values(shape_size(shape));
    if (rec.dtype == DType::kF32) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = rec.f32[i];
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<double>(rec.codes[i]) * static_cast<double>(rec.scale);
      }
    }
    Tensor t(shape, std::move(values), Precision::kTrain32);
    if (!t.all_finite()) {
      throw Error(ErrorKind::kFormat, "non-finite values in " + name);
    }
    model.params.push_back({name, std::move(t)});
  }
  return model;
}

}  // namespace cwb
