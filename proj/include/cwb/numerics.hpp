#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace cwb {

// Storage is always double; the precision tag decides what every stored value
// is rounded to after an operation. emu16 is an IEEE binary16 round trip.
enum class Precision : std::uint8_t { kEmu16 = 0, kTrain32 = 1, kCheck64 = 2 };

// The lower of the two precisions (emu16 < train32 < check64).
Precision min_precision(Precision a, Precision b);

// Nearest binary16 value (round-half-to-even, overflow to +-inf, gradual
// underflow through the subnormal range). Returned widened to double.
double round_to_binary16(double x);
double round_to_precision(double x, Precision precision);
void round_in_place(std::span<double> values, Precision precision);

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Precision precision = Precision::kTrain32);
  // Values are rounded to `precision` on construction.
  Tensor(Shape shape, std::vector<double> data,
         Precision precision = Precision::kTrain32);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  Precision precision() const { return precision_; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D element access.
  double at(std::size_t row, std::size_t col) const {
    return data_[row * shape_[1] + col];
  }
  double& at(std::size_t row, std::size_t col) {
    return data_[row * shape_[1] + col];
  }

  // Re-tags the tensor and rounds every value to the new precision.
  void set_precision(Precision precision);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
  Precision precision_ = Precision::kTrain32;
};

// Seeded stream built on std::mt19937_64. The engine is fully specified by
// the standard; the conversions to uniform and normal variates are done here
// so results do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Box-Muller; the second variate of each pair is cached.
  double normal(double mean, double stddev);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
// Derives an independent stream seed from (base, a, b).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

// Row-major GEMM kernels on raw buffers; the encoder's forward and backward
// passes are written against these.
// c[m x n] = a[m x k] * b[k x n]
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn_accumulate(std::span<const double> a, std::span<const double> b,
                        std::span<double> c, std::size_t m, std::size_t k,
                        std::size_t n);
// c[m x k] = a[m x n] * b[k x n]^T
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k);

// Stable softmax of one row scaled by 1/temperature, written into `out`.
void softmax_row(std::span<const double> row, double temperature,
                 std::span<double> out);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& t, double temperature);
Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                  double eps);

// Per-element keep multipliers for inverted dropout: 0 with probability
// `rate`, 1/(1-rate) otherwise. Fully determined by the seed.
std::vector<double> dropout_mask(std::size_t count, double rate,
                                 std::uint64_t seed);
Tensor dropout(const Tensor& t, double rate, std::uint64_t seed);

}  // namespace cwb
