#pragma once

#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

/// Thin SVD of an r x c matrix with k = min(r, c): m = u * diag(s) * v^T,
/// u is r x k and v is c x k, both with orthonormal columns, s descending.
struct SvdResult {
  Tensor u;
  std::vector<double> s;
  Tensor v;
};

/// One-sided (Hestenes) Jacobi SVD. Deterministic for a given input; throws
/// kNumeric on non-finite entries.
SvdResult svd(const Tensor& m);

/// Singular values only (same algorithm, skips forming u).
std::vector<double> singular_values(const Tensor& m);

/// Subtracts each column's mean.
Tensor center_columns(const Tensor& m);

}  // namespace xfer
