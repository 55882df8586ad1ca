#pragma once

// Reference implementations the unit tests compare the library against. They
// are written for clarity, never for speed, and share no code with core/.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "xfer/tensor.hpp"

namespace oracle {

inline xfer::Tensor triple_loop(const xfer::Tensor& a, const xfer::Tensor& b) {
  xfer::Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

/// Minimum over all n! permutations.
inline double brute_force_assignment(const xfer::Tensor& cost) {
  std::vector<std::size_t> p(cost.rows());
  std::iota(p.begin(), p.end(), 0);
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += cost(i, p[i]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi.
inline std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) off += a[i][j] * a[i][j];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Singular values as square roots of the eigenvalues of MᵀM.
inline std::vector<double> singular_values_via_gram(const xfer::Tensor& m) {
  const std::size_t c = m.cols();
  std::vector<std::vector<double>> g(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t r = 0; r < m.rows(); ++r) g[i][j] += m(r, i) * m(r, j);
  auto ev = symmetric_eigenvalues(g);
  for (auto& v : ev) v = std::sqrt(std::max(0.0, v));
  return ev;
}

/// Singular values by one-sided Jacobi rotations on the columns of M; keeps
/// full relative accuracy for small values, unlike the Gram route.
inline std::vector<double> singular_values_jacobi(const xfer::Tensor& m) {
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<std::vector<double>> col(cols, std::vector<double>(rows));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) col[c][r] = m(r, c);
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double a = 0, b = 0, g = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          a += col[p][r] * col[p][r];
          b += col[q][r] * col[q][r];
          g += col[p][r] * col[q][r];
        }
        if (std::abs(g) <= 1e-15 * std::sqrt(a * b) || g == 0.0) continue;
        rotated = true;
        const double zeta = (b - a) / (2 * g);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const double cs = 1 / std::sqrt(1 + t * t), sn = cs * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double x = col[p][r], y = col[q][r];
          col[p][r] = cs * x - sn * y;
          col[q][r] = sn * x + cs * y;
        }
      }
    if (!rotated) break;
  }
  std::vector<double> sv;
  for (const auto& c : col) {
    double s = 0;
    for (double x : c) s += x * x;
    sv.push_back(std::sqrt(s));
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double()>& f, double& x, double eps) {
  const double saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2 * eps);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle

namespace oracle {

/// Upper chi-square critical value by the Wilson-Hilferty cube-root
/// approximation; z is the standard-normal upper quantile (3.090232 for 0.001).
inline double chi_square_critical(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  const double t = 1.0 - a + z * std::sqrt(a);
  return df * t * t * t;
}

/// Independent Dyck-word check: brackets close in LIFO order and every
/// opened bracket is closed. `pairs` lists (open, close) ids.
inline bool valid_dyck(const std::vector<int>& line, const std::vector<std::pair<int, int>>& pairs,
                       std::size_t* max_depth = nullptr) {
  std::vector<int> stack;
  std::size_t deepest = 0;
  for (int id : line) {
    bool handled = false;
    for (const auto& [open, close] : pairs) {
      if (id == open) {
        stack.push_back(close);
        deepest = std::max(deepest, stack.size());
        handled = true;
        break;
      }
      if (id == close) {
        if (stack.empty() || stack.back() != close) return false;
        stack.pop_back();
        handled = true;
        break;
      }
    }
    if (!handled) return false;
  }
  if (max_depth) *max_depth = deepest;
  return stack.empty();
}

inline bool contains_substring(const std::vector<int>& seq, const std::vector<int>& motif) {
  if (motif.size() > seq.size()) return false;
  for (std::size_t i = 0; i + motif.size() <= seq.size(); ++i) {
    bool all = true;
    for (std::size_t j = 0; j < motif.size() && all; ++j) all = seq[i + j] == motif[j];
    if (all) return true;
  }
  return false;
}

}  // namespace oracle
