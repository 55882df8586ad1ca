#include "xfer/representations.hpp"

#include <algorithm>

#include "xfer/error.hpp"
#include "xfer/rng.hpp"

namespace xfer {

std::vector<TokenPosition> sample_positions(const LabeledDataset& data, std::size_t n_points, std::uint64_t seed) {
  std::vector<std::size_t> offsets(data.size() + 1, 0);
  for (std::size_t i = 0; i < data.size(); ++i) offsets[i + 1] = offsets[i] + data.examples[i].ids.size();
  const std::size_t total = offsets.back();
  require(n_points <= total, ErrorKind::kSampling,
          "asked for " + std::to_string(n_points) + " positions but the data holds " + std::to_string(total) + " tokens");
  Rng rng = Rng(seed).split(stream::kSample);
  // Partial Fisher-Yates over the flat token index.
  std::vector<std::size_t> flat(total);
  for (std::size_t i = 0; i < total; ++i) flat[i] = i;
  for (std::size_t i = 0; i < n_points; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_int(total - i));
    std::swap(flat[i], flat[j]);
  }
  flat.resize(n_points);
  std::sort(flat.begin(), flat.end());
  std::vector<TokenPosition> out;
  out.reserve(n_points);
  std::size_t ex = 0;
  for (auto f : flat) {
    while (offsets[ex + 1] <= f) ++ex;
    out.push_back({ex, f - offsets[ex]});
  }
  return out;
}

ReprMatrix collect_representations(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                   std::size_t layer, std::size_t n_points, std::uint64_t seed) {
  require(layer >= 1 && layer <= config.num_layers, ErrorKind::kIndex,
          "layer " + std::to_string(layer) + " outside [1, " + std::to_string(config.num_layers) + "]");
  require(n_points > config.hidden_dim, ErrorKind::kSampling,
          "n_points must exceed hidden_dim (" + std::to_string(config.hidden_dim) + ")");
  ReprMatrix out;
  out.layer = layer;
  out.positions = sample_positions(data, n_points, seed);
  const std::size_t d = config.hidden_dim;
  out.values = Tensor({n_points, d});

  // Forward the examples that hold sampled positions, a few at a time.
  constexpr std::size_t kChunk = 32;
  std::vector<std::size_t> needed;
  for (const auto& p : out.positions) {
    if (needed.empty() || needed.back() != p.example) needed.push_back(p.example);
  }
  std::size_t row = 0;
  for (std::size_t start = 0; start < needed.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, needed.size() - start);
    std::vector<const std::vector<int>*> seqs;
    for (std::size_t i = 0; i < count; ++i) seqs.push_back(&data.examples[needed[start + i]].ids);
    const Batch batch = make_batch(seqs);
    const Tensor hidden = forward(params, config, batch, Head::kMlm).hidden[layer];
    const auto h = hidden.data();
    for (std::size_t i = 0; i < count; ++i) {
      while (row < n_points && out.positions[row].example == needed[start + i]) {
        const std::size_t base = (i * batch.seq_len + out.positions[row].position) * d;
        std::copy_n(h.begin() + static_cast<std::ptrdiff_t>(base), d,
                    out.values.data().begin() + static_cast<std::ptrdiff_t>(row * d));
        ++row;
      }
    }
  }
  return out;
}

}  // namespace xfer
