#pragma once

#include <cstddef>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

struct Assignment {
  /// perm[row] = assigned column.
  std::vector<std::size_t> perm;
  /// Sum over rows of cost(row, perm[row]), accumulated in row order.
  double total_cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// row/column potentials, O(n^3)).
Assignment hungarian(const Tensor& cost);

/// Sum of cost(i, perm[i]) in row order.
double assignment_cost(const Tensor& cost, const std::vector<std::size_t>& perm);

}  // namespace xfer
