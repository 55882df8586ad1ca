#pragma once

#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

struct CcaResult {
  /// Canonical correlations, descending.
  std::vector<double> rho;
  /// Projection weights over the first view, normalised to sum 1.
  std::vector<double> weights;
  std::size_t kept_x = 0;
  std::size_t kept_y = 0;
};

/// SVD-based CCA between column-centred views after keeping the leading
/// singular directions that explain `variance_kept` of each view's variance.
CcaResult pwcca_details(const Tensor& x, const Tensor& y, double variance_kept = 0.99);

/// Projection-weighted CCA similarity in [0, 1]; weights come from the first
/// argument, so the measure is asymmetric.
double pwcca(const Tensor& x, const Tensor& y, double variance_kept = 0.99);

struct PwccaPair {
  double ab = 0.0;
  double ba = 0.0;
  double mean() const noexcept { return 0.5 * (ab + ba); }
};

PwccaPair pwcca_both(const Tensor& a, const Tensor& b, double variance_kept = 0.99);

}  // namespace xfer
