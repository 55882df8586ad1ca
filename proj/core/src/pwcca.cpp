#include "xfer/pwcca.hpp"

#include <algorithm>
#include <cmath>

#include "xfer/error.hpp"
#include "xfer/linalg.hpp"

namespace xfer {

namespace {

/// Orthonormal basis (n x k) of the leading singular directions of a centred
/// view.
Tensor truncated_basis(const Tensor& centred, double variance_kept, const char* which) {
  const SvdResult s = svd(centred);
  double total = 0.0;
  for (double v : s.s) total += v * v;
  require(total > 0.0, ErrorKind::kDegeneracy, std::string(which) + " view has zero variance");
  const double floor = s.s.front() * 1e-12 * static_cast<double>(centred.rows());
  std::size_t k = 0;
  double acc = 0.0;
  while (k < s.s.size() && s.s[k] > floor) {
    acc += s.s[k] * s.s[k];
    ++k;
    if (acc >= variance_kept * total) break;
  }
  require(k >= 1, ErrorKind::kDegeneracy, std::string(which) + " view keeps no directions");
  const std::size_t n = centred.rows();
  Tensor q({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) q(i, j) = s.u(i, j);
  return q;
}

}  // namespace

CcaResult pwcca_details(const Tensor& x, const Tensor& y, double variance_kept) {
  require(x.rank() == 2 && y.rank() == 2, ErrorKind::kDimension, "pwcca views must be matrices");
  require(x.rows() == y.rows(), ErrorKind::kDimension,
          "pwcca views need the same datapoints: " + std::to_string(x.rows()) + " vs " + std::to_string(y.rows()));
  require(x.rows() >= 2, ErrorKind::kDimension, "pwcca needs at least two datapoints");
  require(variance_kept > 0.0 && variance_kept <= 1.0, ErrorKind::kConfig, "variance_kept must lie in (0, 1]");
  check_finite(x, "pwcca x");
  check_finite(y, "pwcca y");

  const Tensor xc = center_columns(x);
  const Tensor yc = center_columns(y);
  const Tensor qx = truncated_basis(xc, variance_kept, "first");
  const Tensor qy = truncated_basis(yc, variance_kept, "second");

  // Canonical correlations are the singular values of qx^T qy; the left
  // singular vectors give the first view's canonical variates h = qx p.
  const SvdResult c = svd(matmul(transpose(qx), qy));
  const std::size_t m = c.s.size();
  const Tensor h = matmul(qx, c.u);  // n x m

  CcaResult r;
  r.kept_x = qx.cols();
  r.kept_y = qy.cols();
  r.rho.resize(m);
  r.weights.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) r.rho[i] = std::clamp(c.s[i], 0.0, 1.0);

  // alpha_i = sum_j |<h_i, x_j>| over the centred columns of x.
  const Tensor proj = matmul(transpose(h), xc);  // m x dx
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double a = 0.0;
    for (std::size_t j = 0; j < proj.cols(); ++j) a += std::abs(proj(i, j));
    r.weights[i] = a;
    total += a;
  }
  require(total > 0.0, ErrorKind::kDegeneracy, "canonical directions carry no weight");
  for (auto& w : r.weights) w /= total;
  return r;
}

double pwcca(const Tensor& x, const Tensor& y, double variance_kept) {
  const CcaResult r = pwcca_details(x, y, variance_kept);
  double value = 0.0;
  for (std::size_t i = 0; i < r.rho.size(); ++i) value += r.weights[i] * r.rho[i];
  require(value >= -1e-12 && value <= 1.0 + 1e-12, ErrorKind::kNumeric, "pwcca left [0, 1]");
  return std::clamp(value, 0.0, 1.0);
}

PwccaPair pwcca_both(const Tensor& a, const Tensor& b, double variance_kept) {
  return {pwcca(a, b, variance_kept), pwcca(b, a, variance_kept)};
}

}  // namespace xfer
