#include "xfer/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "xfer/error.hpp"

namespace xfer {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    require(e > 0, ErrorKind::kDimension, "tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  require(shape_size(shape_) == data_.size(), ErrorKind::kDimension,
          "shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  require(r > 0, ErrorKind::kDimension, "empty matrix literal");
  const std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::kDimension, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  require(rank() == 2, ErrorKind::kDimension, "expected a matrix, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, ErrorKind::kDimension, "expected a matrix, got " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorKind::kContract, "item() on non-scalar " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(), ErrorKind::kDimension,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

namespace kernels {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Map out(c, em, en);
  if (beta == 0.0) {
    out.setZero();
  } else if (beta != 1.0) {
    out *= beta;
  }
  if (!transpose_a && !transpose_b) {
    out.noalias() += alpha * (ConstMap(a, em, ek) * ConstMap(b, ek, en));
  } else if (transpose_a && !transpose_b) {
    out.noalias() += alpha * (ConstMap(a, ek, em).transpose() * ConstMap(b, ek, en));
  } else if (!transpose_a && transpose_b) {
    out.noalias() += alpha * (ConstMap(a, em, ek) * ConstMap(b, en, ek).transpose());
  } else {
    out.noalias() += alpha * (ConstMap(a, ek, em).transpose() * ConstMap(b, en, ek).transpose());
  }
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::kDimension,
          "matmul expects matrices, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  require(a.cols() == b.rows(), ErrorKind::kDimension,
          "matmul inner dimensions differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor c({a.rows(), b.cols()});
  kernels::gemm(false, false, a.rows(), b.cols(), a.cols(), 1.0, a.data().data(), b.data().data(), 0.0,
                c.data().data());
  return c;
}

Tensor transpose(const Tensor& m) {
  Tensor t({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::kDimension, "shape mismatch in +");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::kDimension, "shape mismatch in -");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor c = a;
  for (auto& x : c.data()) x *= s;
  return c;
}

double dot(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), ErrorKind::kDimension, "dot of vectors with different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Tensor& m) { return l2_norm(m.data()); }

double max_abs(const Tensor& m) {
  double best = 0.0;
  for (double x : m.data()) best = std::max(best, std::abs(x));
  return best;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  require(nu > 0.0 && nv > 0.0, ErrorKind::kUndefinedSimilarity, "cosine of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

void check_finite(const Tensor& t, std::string_view what) {
  require(t.all_finite(), ErrorKind::kNumeric, std::string(what) + " contains non-finite values");
}

}  // namespace xfer
