#include "cwb/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "cwb/checkpoint.hpp"
#include "cwb/error.hpp"

namespace cwb {

QuantizedTensor quantize_tensor(const Tensor& t) {
  double max_abs = 0.0;
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNumeric, "cannot quantize a non-finite tensor");
    }
    max_abs = std::max(max_abs, std::fabs(v));
  }
  QuantizedTensor q;
  q.shape = t.shape();
  q.scale = max_abs == 0.0 ? 1.0f : static_cast<float>(max_abs / 127.0);
  q.codes.reserve(t.size());
  const double scale = q.scale;
  for (double v : t.data()) {
    const double code = std::clamp(std::nearbyint(v / scale), -127.0, 127.0);
    q.codes.push_back(static_cast<std::int8_t>(code));
  }
  return q;
}

Tensor dequantize_tensor(const QuantizedTensor& q) {
  std::vector<double> values(q.codes.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<double>(q.codes[i]) * static_cast<double>(q.scale);
  }
  return Tensor(q.shape, std::move(values), Precision::kCheck64);
}

double SizeReport::file_ratio() const {
  return file_bytes_before == 0
             ? 0.0
             : static_cast<double>(file_bytes_after) /
                   static_cast<double>(file_bytes_before);
}

double SizeReport::quantized_payload_ratio() const {
  std::size_t before = 0, after = 0;
  for (const auto& row : tensors) {
    if (!row.quantized) continue;
    before += row.bytes_f32;
    after += row.bytes_int8;
  }
  return before == 0 ? 0.0
                     : static_cast<double>(after) / static_cast<double>(before);
}

SizeReport quantize_checkpoint(const std::filesystem::path& in,
                               const std::filesystem::path& out) {
  CheckpointFile file = read_checkpoint_file(in);
  SizeReport report;
  report.file_bytes_before = std::filesystem::file_size(in);
  for (auto& rec : file.records) {
    TensorSizeRow row;
    row.name = rec.name;
    if (rec.dtype != DType::kF32) {
      throw Error(ErrorKind::kFormat,
                  "input checkpoint already holds int8 tensor " + rec.name);
    }
    row.bytes_f32 = rec.payload_size();
    if (rec.shape.size() == 2) {
      std::vector<double> values(rec.f32.begin(), rec.f32.end());
      const QuantizedTensor q =
          quantize_tensor(Tensor(rec.shape, std::move(values), Precision::kCheck64));
      rec.dtype = DType::kInt8;
      rec.f32.clear();
      rec.scale = q.scale;
      rec.codes = q.codes;
      row.quantized = true;
    }
    row.bytes_int8 = rec.payload_size();
    report.tensors.push_back(std::move(row));
  }
  report.file_bytes_after = write_checkpoint_file(file, out);
  return report;
}

void write_size_report_text(const SizeReport& report, std::ostream& out) {
  std::size_t quantized = 0;
  for (const auto& row : report.tensors) quantized += row.quantized ? 1 : 0;
  out << "tensors quantized: " << quantized << " of " << report.tensors.size() << '\n'
      << "file bytes before: " << report.file_bytes_before << '\n'
      << "file bytes after:  " << report.file_bytes_after << '\n'
      << std::fixed << std::setprecision(4)
      << "file size ratio:   " << report.file_ratio() << '\n'
      << "size reduction:    " << 100.0 * (1.0 - report.file_ratio()) << "%\n"
      << "int8 payload ratio (quantized tensors): "
      << report.quantized_payload_ratio() << '\n';
  out.unsetf(std::ios::floatfield);
}

void write_size_report_csv(const SizeReport& report,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "tensor,bytes_f32,bytes_int8,ratio\n" << std::fixed << std::setprecision(6);
  for (const auto& row : report.tensors) {
    out << row.name << ',' << row.bytes_f32 << ',' << row.bytes_int8 << ','
        << static_cast<double>(row.bytes_int8) / static_cast<double>(row.bytes_f32)
        << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace cwb
