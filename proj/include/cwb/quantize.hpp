#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cwb/numerics.hpp"

namespace cwb {

// Symmetric per-tensor int8: value ~= code * scale, codes in [-127, 127].
struct QuantizedTensor {
  std::vector<std::int8_t> codes;
  float scale = 1.0f;
  Shape shape;
};

// scale = max|t| / 127 (1 for an all-zero tensor); codes rounded half to even.
// Throws kNumeric on non-finite input.
QuantizedTensor quantize_tensor(const Tensor& t);
Tensor dequantize_tensor(const QuantizedTensor& q);

struct TensorSizeRow {
  std::string name;
  std::size_t bytes_f32 = 0;
  std::size_t bytes_int8 = 0;  // equals bytes_f32 for tensors kept in f32
  bool quantized = false;
};

struct SizeReport {
  std::size_t file_bytes_before = 0;
  std::size_t file_bytes_after = 0;
  std::vector<TensorSizeRow> tensors;

  double file_ratio() const;
  // Payload ratio over quantized tensors only (int8 bytes incl. scale / f32).
  double quantized_payload_ratio() const;
};

// Rank-2 tensors (projection weights and embedding tables) become int8
// records; biases and layer-norm parameters stay f32.
SizeReport quantize_checkpoint(const std::filesystem::path& in,
                               const std::filesystem::path& out);

void write_size_report_text(const SizeReport& report, std::ostream& out);
void write_size_report_csv(const SizeReport& report,
                           const std::filesystem::path& path);

}  // namespace cwb
