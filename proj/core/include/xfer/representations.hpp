#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

struct TokenPosition {
  std::size_t example = 0;
  std::size_t position = 0;
  bool operator==(const TokenPosition&) const = default;
};

/// Hidden vectors at sampled token positions: n_points x hidden_dim, rows in
/// `positions` order.
struct ReprMatrix {
  Tensor values;
  std::vector<TokenPosition> positions;
  std::size_t layer = 0;
};

/// n_points distinct token positions drawn uniformly (without replacement)
/// from all tokens of the dataset, sorted. Depends only on the data and seed,
/// so matrices from different models line up row by row.
std::vector<TokenPosition> sample_positions(const LabeledDataset& data, std::size_t n_points, std::uint64_t seed);

/// Eval-mode hidden states after encoder layer `layer` (1-based) at sampled
/// positions. Requires n_points > hidden_dim.
ReprMatrix collect_representations(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                   std::size_t layer, std::size_t n_points, std::uint64_t seed);

}  // namespace xfer
