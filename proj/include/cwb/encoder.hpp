#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cwb/corpus.hpp"
#include "cwb/numerics.hpp"

namespace cwb {

struct EncoderConfig {
  std::uint32_t vocab_size = 8192;
  std::uint32_t hidden_dim = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t ffn_dim = 256;
  std::uint32_t max_seq_len = 32;
  float dropout_rate = 0.1f;

  // Throws kConfig on a violated invariant.
  void validate() const;
  std::size_t head_dim() const { return hidden_dim / n_heads; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// V*H + P*H + L*(4H^2 + 2HF + 9H + F)
std::size_t expected_parameter_count(const EncoderConfig& config);

struct Parameter {
  std::string name;
  Tensor value;
};

// Parameters are kept in a fixed order: token and position embeddings, then
// kParamsPerLayer tensors for every block (see LayerParam).
struct EncoderModel {
  EncoderConfig config;
  std::vector<Parameter> params;

  std::size_t parameter_count() const;
  Precision precision() const;
  // Casts every parameter to `precision`.
  void set_precision(Precision precision);
  const Parameter* find(const std::string& name) const;
};

inline constexpr std::size_t kTokenEmbedding = 0;
inline constexpr std::size_t kPositionEmbedding = 1;
inline constexpr std::size_t kFirstLayerParam = 2;
inline constexpr std::size_t kParamsPerLayer = 16;

enum LayerParam : std::size_t {
  kLn1Gain, kLn1Bias,
  kQueryWeight, kQueryBias,
  kKeyWeight, kKeyBias,
  kValueWeight, kValueBias,
  kOutputWeight, kOutputBias,
  kLn2Gain, kLn2Bias,
  kFfnInWeight, kFfnInBias,
  kFfnOutWeight, kFfnOutBias,
};

inline std::size_t param_index(std::size_t layer, LayerParam p) {
  return kFirstLayerParam + layer * kParamsPerLayer + p;
}

// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1.
EncoderModel init_model(const EncoderConfig& config, std::uint64_t seed,
                        Precision precision = Precision::kTrain32);

// layers[0] is the embedding output; layers[l] the output of block l. Each is
// batch x width x hidden.
struct HiddenStack {
  std::vector<Tensor> layers;
  std::size_t batch = 0;
  std::size_t width = 0;
  std::size_t hidden = 0;
  std::vector<std::uint8_t> mask;

  std::size_t n_layers() const { return layers.size() - 1; }
};

// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardTape {
  struct Layer {
    std::vector<double> ln1_hat, ln1_rstd, ln1_out;
    std::vector<double> query, key, value, probs, context;
    std::vector<double> attn_keep;
    std::vector<double> ln2_hat, ln2_rstd, ln2_out;
    std::vector<double> ffn_pre, ffn_act, ffn_keep;
  };
  std::vector<Layer> layers;
};

struct EncodeOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  // Defaults to the model's parameter precision.
  std::optional<Precision> precision;
};

HiddenStack encode(const EncoderModel& model, const SentenceBatch& batch,
                   std::uint64_t dropout_seed, bool training);
HiddenStack encode(const EncoderModel& model, const SentenceBatch& batch,
                   const EncodeOptions& options, ForwardTape* tape = nullptr);

// Reverse pass. `layer_grads[l]` is dLoss/d(layers[l]) (empty vector for
// layers that received no gradient). Gradients are accumulated into `grads`,
// which must be shaped like model.params.
void encoder_backward(const EncoderModel& model, const SentenceBatch& batch,
                      const ForwardTape& tape,
                      std::vector<std::vector<double>> layer_grads,
                      std::vector<Tensor>& grads);

std::vector<Tensor> zero_gradients(const EncoderModel& model);

// Writes every parameter as an f32 record; returns the file size in bytes.
// Loading dequantizes int8 records transparently.
std::size_t save_checkpoint(const EncoderModel& model,
                            const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

}  // namespace cwb
