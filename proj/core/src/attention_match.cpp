#include "xfer/attention_match.hpp"

#include <algorithm>
#include <cmath>

#include "xfer/error.hpp"
#include "xfer/hungarian.hpp"

namespace xfer {

namespace {

/// Assignment cost summed in ascending order, so swapping the models (which
/// transposes the cost matrix) reproduces the value bit for bit.
double sorted_cost(const Tensor& cost, const std::vector<std::size_t>& perm) {
  std::vector<double> matched(perm.size());
  for (std::size_t h = 0; h < perm.size(); ++h) matched[h] = cost(h, perm[h]);
  std::sort(matched.begin(), matched.end());
  double total = 0.0;
  for (double c : matched) total += c;
  return total;
}

}  // namespace

Tensor attention_cost(const Tensor& maps_a, const Tensor& maps_b, const std::vector<std::uint8_t>& valid) {
  require(maps_a.rank() == 3 && maps_a.shape() == maps_b.shape(), ErrorKind::kDimension,
          "attention maps must share a heads x L x L shape");
  const std::size_t H = maps_a.dim(0), L = maps_a.dim(1);
  require(maps_a.dim(2) == L && valid.size() == L, ErrorKind::kDimension, "attention maps must be square per head");
  std::size_t n_valid = 0;
  for (auto v : valid) n_valid += v != 0;
  require(n_valid > 0, ErrorKind::kInput, "input has no valid positions");
  const double denom = static_cast<double>(n_valid * n_valid);
  const auto a = maps_a.data();
  const auto b = maps_b.data();
  Tensor cost({H, H});
  for (std::size_t ha = 0; ha < H; ++ha) {
    for (std::size_t hb = 0; hb < H; ++hb) {
      double sum = 0.0;
      for (std::size_t q = 0; q < L; ++q) {
        if (!valid[q]) continue;
        const double* ra = &a[(ha * L + q) * L];
        const double* rb = &b[(hb * L + q) * L];
        for (std::size_t k = 0; k < L; ++k) {
          if (valid[k]) sum += std::abs(ra[k] - rb[k]);
        }
      }
      cost(ha, hb) = sum / denom;
    }
  }
  return cost;
}

AttnDistanceReport attention_match(const Parameters& params_a, const ModelConfig& config_a,
                                   const Parameters& params_b, const ModelConfig& config_b,
                                   const LabeledDataset& data, std::size_t n_inputs) {
  require(config_a.num_layers == config_b.num_layers && config_a.num_heads == config_b.num_heads,
          ErrorKind::kCompatibility, "attention matching needs equal layer and head counts");
  require(n_inputs >= 1, ErrorKind::kInput, "n_inputs must be >= 1");
  require(data.size() >= n_inputs, ErrorKind::kInput,
          "dataset has " + std::to_string(data.size()) + " examples, fewer than n_inputs");
  const std::size_t layers = config_a.num_layers, H = config_a.num_heads;

  AttnDistanceReport report;
  report.n_inputs = n_inputs;
  report.mean_l1.assign(layers, 0.0);
  report.identity_l1.assign(layers, 0.0);
  report.assignment_freq.assign(layers, Tensor({H, H}, 0.0));
  std::vector<std::size_t> identity(H);
  for (std::size_t h = 0; h < H; ++h) identity[h] = h;

  for (std::size_t i = 0; i < n_inputs; ++i) {
    const auto& ids = data.examples[i].ids;
    require(ids.size() <= config_a.max_len && ids.size() <= config_b.max_len, ErrorKind::kLength,
            "input " + std::to_string(i) + " exceeds a model's max_len");
    const std::vector<const std::vector<int>*> seq{&ids};
    const Batch batch = make_batch(seq);
    const auto out_a = forward(params_a, config_a, batch, Head::kMlm, true);
    const auto out_b = forward(params_b, config_b, batch, Head::kMlm, true);
    const Shape per_input{H, batch.seq_len, batch.seq_len};
    for (std::size_t l = 0; l < layers; ++l) {
      const Tensor cost = attention_cost(out_a.attention[l].reshaped(per_input),
                                         out_b.attention[l].reshaped(per_input), batch.mask);
      const Assignment best = hungarian(cost);
      report.mean_l1[l] += sorted_cost(cost, best.perm) / static_cast<double>(H);
      report.identity_l1[l] += sorted_cost(cost, identity) / static_cast<double>(H);
      for (std::size_t h = 0; h < H; ++h) report.assignment_freq[l](h, best.perm[h]) += 1.0;
    }
  }
  const double n = static_cast<double>(n_inputs);
  for (std::size_t l = 0; l < layers; ++l) {
    report.mean_l1[l] /= n;
    report.identity_l1[l] /= n;
    for (auto& f : report.assignment_freq[l].data()) f /= n;
  }
  return report;
}

}  // namespace xfer
