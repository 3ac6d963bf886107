#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kunlun {

/// Malformed input: wrong shapes, bad configuration, schema violations.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// NaN/Inf produced during compute, or training divergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of doubles. Almost every op in the library works on
/// rank-2 tensors; vectors are 1 x n and scalars 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double v) { return matrix(1, 1, v); }
  static Tensor row(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  Tensor reshaped(std::vector<std::size_t> shape) const;
  Tensor transposed() const;
  Tensor row_slice(std::size_t begin, std::size_t end) const;
  Tensor col_slice(std::size_t begin, std::size_t end) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  double sum() const;
  double squared_norm() const;
  double max_abs() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

/// Plain (non-differentiable) products used by kernels and test oracles.
Tensor matmul(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Variable-length rows packed contiguously; sample b owns rows
/// [offsets[b], offsets[b+1]).
struct JaggedBatch {
  Tensor values;
  std::vector<std::size_t> offsets{0};
  std::optional<std::vector<double>> timestamps;

  std::size_t batch_size() const { return offsets.size() - 1; }
  std::size_t length(std::size_t b) const { return offsets[b + 1] - offsets[b]; }
  std::size_t max_length() const;
  std::size_t dim() const { return values.cols(); }
  Tensor sample(std::size_t b) const { return values.row_slice(offsets[b], offsets[b + 1]); }

  void validate() const;

  static JaggedBatch from_samples(const std::vector<Tensor>& samples, std::size_t dim);
};

enum class PadAlign { kLeft, kRight };

/// Padded view: (B * max_len) x d with per-sample lengths.
struct PaddedBatch {
  Tensor values;
  std::vector<std::size_t> lengths;
  std::size_t max_len = 0;
  PadAlign align = PadAlign::kRight;
};

PaddedBatch pad(const JaggedBatch& batch, std::size_t max_len, PadAlign align = PadAlign::kRight,
                double fill = 0.0);
JaggedBatch unpad(const PaddedBatch& padded);

namespace detail {
// C = A(m x k) * B(k x n); accumulate adds into C instead.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false);
// C = A(m x k) * B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
// C = A(k x m)^T * B(k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
}  // namespace detail

}  // namespace kunlun
