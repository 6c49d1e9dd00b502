#include "cwb/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cwb/error.hpp"

namespace cwb {

Precision min_precision(Precision a, Precision b) {
  return static_cast<std::uint8_t>(a) < static_cast<std::uint8_t>(b) ? a : b;
}

double round_to_binary16(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  constexpr double kMaxHalf = 65504.0;
  const double mag = std::fabs(x);
  double quantum;
  if (mag < 0x1p-14) {
    quantum = 0x1p-24;  // subnormal spacing
  } else {
    int exp = 0;
    std::frexp(mag, &exp);  // mag = m * 2^exp, m in [0.5, 1)
    quantum = std::ldexp(1.0, exp - 11);
  }
  // x / quantum is exact (power-of-two divisor); nearbyint rounds half-even.
  double rounded = std::nearbyint(mag / quantum) * quantum;
  if (rounded > kMaxHalf) rounded = std::numeric_limits<double>::infinity();
  return std::copysign(rounded, x);
}

double round_to_precision(double x, Precision precision) {
  switch (precision) {
    case Precision::kCheck64: return x;
    case Precision::kTrain32: return static_cast<double>(static_cast<float>(x));
    case Precision::kEmu16: return round_to_binary16(x);
  }
  return x;
}

void round_in_place(std::span<double> values, Precision precision) {
  if (precision == Precision::kCheck64) return;
  for (double& v : values) v = round_to_precision(v, precision);
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, Precision precision)
    : shape_(std::move(shape)),
      data_(shape_size(shape_), 0.0),
      precision_(precision) {}

Tensor::Tensor(Shape shape, std::vector<double> data, Precision precision)
    : shape_(std::move(shape)), data_(std::move(data)), precision_(precision) {
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorKind::kDimension,
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape product " +
                    std::to_string(shape_size(shape_)));
  }
  round_in_place(data_, precision_);
}

void Tensor::set_precision(Precision precision) {
  precision_ = precision;
  round_in_place(data_, precision_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1p-53;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return r % n;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                          std::uint64_t b) {
  return mix64(mix64(mix64(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw Error(ErrorKind::kDimension,
                std::string(what) + " expects a 2-D tensor, got rank " +
                    std::to_string(t.rank()));
  }
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw Error(ErrorKind::kNumeric,
                std::string(what) + " produced a non-finite value");
  }
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  ConstMap am(a.data(), m, k);
  ConstMap bm(b.data(), k, n);
  MutMap cm(c.data(), m, n);
  cm.noalias() = am * bm;
}

void gemm_tn_accumulate(std::span<const double> a, std::span<const double> b,
                        std::span<double> c, std::size_t m, std::size_t k,
                        std::size_t n) {
  ConstMap am(a.data(), m, k);
  ConstMap bm(b.data(), m, n);
  MutMap cm(c.data(), k, n);
  cm.noalias() += am.transpose() * bm;
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n,
             std::size_t k) {
  ConstMap am(a.data(), m, n);
  ConstMap bm(b.data(), k, n);
  MutMap cm(c.data(), m, k);
  cm.noalias() = am * bm.transpose();
}

void softmax_row(std::span<const double> row, double temperature,
                 std::span<double> out) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : row) max_logit = std::max(max_logit, v / temperature);
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = std::exp(row[j] / temperature - max_logit);
    total += out[j];
  }
  for (double& v : out) v /= total;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw Error(ErrorKind::kDimension,
                "matmul inner dimensions differ: " + std::to_string(a.dim(1)) +
                    " vs " + std::to_string(b.dim(0)));
  }
  Tensor out({a.dim(0), b.dim(1)}, min_precision(a.precision(), b.precision()));
  gemm(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  round_in_place(out.data(), out.precision());
  require_finite(out, "matmul");
  return out;
}

Tensor softmax_rows(const Tensor& t, double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorKind::kDomain, "softmax temperature must be positive");
  }
  require_2d(t, "softmax_rows");
  Tensor out(t.shape(), t.precision());
  const std::size_t cols = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    softmax_row(t.data().subspan(r * cols, cols), temperature,
                out.data().subspan(r * cols, cols));
  }
  round_in_place(out.data(), out.precision());
  require_finite(out, "softmax_rows");
  return out;
}

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (t.rank() == 0 || t.shape().back() == 0) {
    throw Error(ErrorKind::kDimension, "layer_norm over an empty last axis");
  }
  const std::size_t width = t.shape().back();
  if (gain.size() != width || bias.size() != width) {
    throw Error(ErrorKind::kDimension,
                "layer_norm gain/bias must match last dimension " +
                    std::to_string(width));
  }
  Tensor out(t.shape(), t.precision());
  const std::size_t rows = t.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = t.data().subspan(r * width, width);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(width);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) {
      out[r * width + c] = (in[c] - mean) * rstd * gain[c] + bias[c];
    }
  }
  round_in_place(out.data(), out.precision());
  require_finite(out, "layer_norm");
  return out;
}

std::vector<double> dropout_mask(std::size_t count, double rate,
                                 std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorKind::kDomain, "dropout rate must lie in [0, 1)");
  }
  std::vector<double> mask(count, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  Rng rng(seed);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

Tensor dropout(const Tensor& t, double rate, std::uint64_t seed) {
  const std::vector<double> mask = dropout_mask(t.size(), rate, seed);
  Tensor out = t;
  if (rate == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  round_in_place(out.data(), out.precision());
  return out;
}

}  // namespace cwb
