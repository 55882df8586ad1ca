#include "xfer/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xfer/error.hpp"

namespace xfer {

namespace {

constexpr int kMaxSweeps = 80;

// Columns stored contiguously: col(j)[i] = A(i, j).
struct ColumnMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

double col_dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate(double* a, double* b, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i], y = b[i];
    a[i] = c * x - s * y;
    b[i] = s * x + c * y;
  }
}

// Orthogonalises the columns of w in place, accumulating rotations into v.
void jacobi_orthogonalize(ColumnMatrix& w, ColumnMatrix& v) {
  const std::size_t n = w.cols;
  const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(w.rows);
  std::vector<double> norms(n);
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) norms[j] = col_dot(w.col(j), w.col(j), w.rows);
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norms[p], beta = norms[q];
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = col_dot(w.col(p), w.col(q), w.rows);
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(w.col(p), w.col(q), w.rows, c, s);
        rotate(v.col(p), v.col(q), v.rows, c, s);
        norms[p] = alpha - t * gamma;
        norms[q] = beta + t * gamma;
      }
    }
    if (!rotated) return;
  }
}

// Fills the columns of u flagged as missing with unit vectors orthogonal to
// every other column (modified Gram-Schmidt, two passes).
void complete_basis(Tensor& u, const std::vector<bool>& filled) {
  const std::size_t r = u.rows(), k = u.cols();
  std::vector<bool> have = filled;
  std::size_t candidate = 0;
  std::vector<double> x(r);
  for (std::size_t j = 0; j < k; ++j) {
    if (have[j]) continue;
    for (; candidate < r; ++candidate) {
      std::fill(x.begin(), x.end(), 0.0);
      x[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < k; ++o) {
          if (!have[o]) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < r; ++i) proj += u(i, o) * x[i];
          for (std::size_t i = 0; i < r; ++i) x[i] -= proj * u(i, o);
        }
      }
      const double nrm = std::sqrt(col_dot(x.data(), x.data(), r));
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < r; ++i) u(i, j) = x[i] / nrm;
        have[j] = true;
        ++candidate;
        break;
      }
    }
  }
}

SvdResult svd_tall(const Tensor& m, bool want_u) {
  const std::size_t r = m.rows(), c = m.cols();
  ColumnMatrix w{r, c, std::vector<double>(r * c)};
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) w.col(j)[i] = m(i, j);
  ColumnMatrix v{c, c, std::vector<double>(c * c, 0.0)};
  for (std::size_t j = 0; j < c; ++j) v.col(j)[j] = 1.0;

  jacobi_orthogonalize(w, v);

  std::vector<double> norms(c);
  for (std::size_t j = 0; j < c; ++j) norms[j] = std::sqrt(col_dot(w.col(j), w.col(j), r));
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  SvdResult out;
  out.s.resize(c);
  out.v = Tensor({c, c});
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    out.s[k] = norms[j];
    for (std::size_t i = 0; i < c; ++i) out.v(i, k) = v.col(j)[i];
  }
  if (!want_u) return out;

  out.u = Tensor({r, c});
  const double cutoff = out.s.empty() ? 0.0 : out.s[0] * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(r, c));
  std::vector<bool> filled(c, false);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    if (out.s[k] <= cutoff || out.s[k] == 0.0) continue;
    for (std::size_t i = 0; i < r; ++i) out.u(i, k) = w.col(j)[i] / out.s[k];
    filled[k] = true;
  }
  if (std::find(filled.begin(), filled.end(), false) != filled.end()) complete_basis(out.u, filled);
  return out;
}

}  // namespace

SvdResult svd(const Tensor& m) {
  require(m.rank() == 2, ErrorKind::kDimension, "svd expects a matrix, got " + shape_string(m.shape()));
  check_finite(m, "svd input");
  if (m.rows() >= m.cols()) return svd_tall(m, true);
  SvdResult t = svd_tall(transpose(m), true);
  return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
}

std::vector<double> singular_values(const Tensor& m) {
  require(m.rank() == 2, ErrorKind::kDimension, "svd expects a matrix, got " + shape_string(m.shape()));
  check_finite(m, "svd input");
  if (m.rows() >= m.cols()) return svd_tall(m, false).s;
  return svd_tall(transpose(m), false).s;
}

Tensor center_columns(const Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  Tensor out = m;
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < r; ++i) mean += m(i, j);
    mean /= static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i) out(i, j) -= mean;
  }
  return out;
}

}  // namespace xfer
