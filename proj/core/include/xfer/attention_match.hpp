#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

struct AttnDistanceReport {
  /// Per layer: matched mean-L1 distance averaged over inputs.
  std::vector<double> mean_l1;
  /// Per layer: distance under the identity head assignment.
  std::vector<double> identity_l1;
  /// Per layer, heads x heads: fraction of inputs matching head a of A to head b of B.
  std::vector<Tensor> assignment_freq;
  std::size_t n_inputs = 0;
};

/// H x H cost between two heads x L x L attention maps of one input:
/// cost(a, b) = mean over the valid query/key pairs of |A[a] - B[b]|.
/// `valid` has L entries; only positions with a nonzero flag count.
Tensor attention_cost(const Tensor& maps_a, const Tensor& maps_b, const std::vector<std::uint8_t>& valid);

/// Runs both models on the first n_inputs examples (one at a time, eval mode)
/// and matches heads per layer with the Hungarian algorithm.
AttnDistanceReport attention_match(const Parameters& params_a, const ModelConfig& config_a,
                                   const Parameters& params_b, const ModelConfig& config_b,
                                   const LabeledDataset& data, std::size_t n_inputs);

}  // namespace xfer
