#include "kunlun/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace kunlun {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + t.shape_str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) { return Tensor({rows, cols}, fill); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item(): tensor of shape " + shape_str() + " is not a scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (product(shape) != data_.size()) throw ShapeError("reshape " + shape_str() + " to incompatible extents");
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
  require_rank2(*this, "transpose");
  Tensor out = matrix(shape_[1], shape_[0]);
  for (std::size_t r = 0; r < shape_[0]; ++r)
    for (std::size_t c = 0; c < shape_[1]; ++c) out(c, r) = (*this)(r, c);
  return out;
}

Tensor Tensor::row_slice(std::size_t begin, std::size_t end) const {
  require_rank2(*this, "row_slice");
  if (begin > end || end > shape_[0]) throw ShapeError("row_slice out of range on " + shape_str());
  const std::size_t c = shape_[1];
  return Tensor({end - begin, c}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                      data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

Tensor Tensor::col_slice(std::size_t begin, std::size_t end) const {
  require_rank2(*this, "col_slice");
  if (begin > end || end > shape_[1]) throw ShapeError("col_slice out of range on " + shape_str());
  Tensor out = matrix(shape_[0], end - begin);
  for (std::size_t r = 0; r < shape_[0]; ++r)
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * shape_[1] + begin), end - begin,
                out.data() + r * (end - begin));
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_) throw ShapeError("+= between " + shape_str() + " and " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (shape_ != other.shape_) throw ShapeError("-= between " + shape_str() + " and " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::squared_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  detail::gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::size_t JaggedBatch::max_length() const {
  std::size_t m = 0;
  for (std::size_t b = 0; b < batch_size(); ++b) m = std::max(m, length(b));
  return m;
}

void JaggedBatch::validate() const {
  if (offsets.empty() || offsets.front() != 0) throw ValidationError("jagged batch: offsets[0] must be 0");
  for (std::size_t i = 1; i < offsets.size(); ++i)
    if (offsets[i] < offsets[i - 1]) throw ValidationError("jagged batch: offsets must be non-decreasing");
  if (offsets.back() != values.rows()) throw ValidationError("jagged batch: offsets[B] must equal row count");
  if (timestamps) {
    if (timestamps->size() != values.rows()) throw ValidationError("jagged batch: one timestamp per row required");
    for (std::size_t b = 0; b < batch_size(); ++b)
      for (std::size_t r = offsets[b] + 1; r < offsets[b + 1]; ++r)
        if ((*timestamps)[r] < (*timestamps)[r - 1])
          throw ValidationError("jagged batch: timestamps must be non-decreasing within a sample");
  }
}

JaggedBatch JaggedBatch::from_samples(const std::vector<Tensor>& samples, std::size_t dim) {
  JaggedBatch out;
  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.rows() > 0 && s.cols() != dim) throw ShapeError("jagged batch: sample width mismatch");
    total += s.rows();
    out.offsets.push_back(total);
  }
  out.values = Tensor::matrix(total, dim);
  std::size_t row = 0;
  for (const auto& s : samples) {
    std::copy(s.storage().begin(), s.storage().end(), out.values.data() + row * dim);
    row += s.rows();
  }
  return out;
}

PaddedBatch pad(const JaggedBatch& batch, std::size_t max_len, PadAlign align, double fill) {
  batch.validate();
  const std::size_t d = batch.dim();
  PaddedBatch out;
  out.max_len = max_len;
  out.align = align;
  out.values = Tensor::matrix(batch.batch_size() * max_len, d, fill);
  for (std::size_t b = 0; b < batch.batch_size(); ++b) {
    const std::size_t len = batch.length(b);
    if (len > max_len) throw ValidationError("pad: sample longer than max_len");
    out.lengths.push_back(len);
    const std::size_t first = b * max_len + (align == PadAlign::kRight ? max_len - len : 0);
    std::copy_n(batch.values.data() + batch.offsets[b] * d, len * d, out.values.data() + first * d);
  }
  return out;
}

JaggedBatch unpad(const PaddedBatch& padded) {
  const std::size_t d = padded.values.cols();
  JaggedBatch out;
  std::size_t total = 0;
  for (std::size_t len : padded.lengths) {
    total += len;
    out.offsets.push_back(total);
  }
  out.values = Tensor::matrix(total, d);
  for (std::size_t b = 0; b < padded.lengths.size(); ++b) {
    const std::size_t len = padded.lengths[b];
    const std::size_t first = b * padded.max_len + (padded.align == PadAlign::kRight ? padded.max_len - len : 0);
    std::copy_n(padded.values.data() + first * d, len * d, out.values.data() + out.offsets[b] * d);
  }
  return out;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

namespace {

// Blocked kernels pay for packing; tiny products are faster coefficient-wise.
bool small_product(std::size_t m, std::size_t k, std::size_t n) { return m * k * n <= 32 * 32 * 32; }

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap C(c, M, N);
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  ConstMap A(a, M, K), B(b, K, N);
  if (small_product(m, k, n)) {
    if (accumulate)
      C.noalias() += A.lazyProduct(B);
    else
      C.noalias() = A.lazyProduct(B);
  } else if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap C(c, M, N);
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  ConstMap A(a, M, K), B(b, N, K);
  if (small_product(m, k, n)) {
    if (accumulate)
      C.noalias() += A.lazyProduct(B.transpose());
    else
      C.noalias() = A.lazyProduct(B.transpose());
  } else if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MutMap C(c, M, N);
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  ConstMap A(a, K, M), B(b, K, N);
  if (small_product(m, k, n)) {
    if (accumulate)
      C.noalias() += A.transpose().lazyProduct(B);
    else
      C.noalias() = A.transpose().lazyProduct(B);
  } else if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

}  // namespace detail

}  // namespace kunlun
