#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

/// Largest L * hidden_dim for which the full Jacobian is assembled.
inline constexpr std::size_t kJacobianBudget = 4096;

/// Last-layer hidden states (L x d, eval mode) as a function of the input
/// token embeddings (L x d) of one sequence; positions are still added.
Tensor encoder_output_from_embeddings(const Parameters& params, const ModelConfig& config, std::span<const int> ids,
                                      const Tensor& token_embeddings);

/// Token embeddings of `ids` looked up from the table (L x d).
Tensor lookup_embeddings(const Parameters& params, std::span<const int> ids);

/// d vec(output) / d vec(input embeddings), (L*d) x (L*d), one reverse pass
/// per output coordinate.
Tensor input_output_jacobian(const Parameters& params, const ModelConfig& config, std::span<const int> ids);

struct SingularSpectrum {
  std::vector<double> values;
  std::size_t seq_len = 0;
  std::size_t hidden_dim = 0;
};

SingularSpectrum jacobian_singular_values(const Parameters& params, const ModelConfig& config,
                                          std::span<const int> ids);

/// Flattened gradient of the task loss of one example over every parameter,
/// eval mode.
std::vector<double> example_gradient(const Parameters& params, const ModelConfig& config, const Example& example);

struct GradPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double cosine = 0.0;
};

struct GradConfusionStats {
  std::vector<GradPair> pairs;
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  /// Pairs dropped because a gradient had zero norm.
  std::size_t excluded = 0;
  std::size_t count() const noexcept { return pairs.size(); }
};

/// Samples n_pairs pairs of distinct example indices.
GradConfusionStats gradient_confusion(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                      std::size_t n_pairs, std::uint64_t seed);

enum class OutputSite { kLastHiddenCls, kLogits };
std::string_view to_string(OutputSite site) noexcept;
OutputSite parse_output_site(std::string_view text);

struct PerturbRow {
  double sigma = 0.0;
  double mean_dist = 0.0;
  double std_dist = 0.0;
  std::size_t n_draws = 0;
  std::size_t diverged = 0;
};

struct PerturbReport {
  std::vector<PerturbRow> rows;
  OutputSite site = OutputSite::kLastHiddenCls;
};

inline const std::vector<double> kDefaultSigmas{1e-2, 1e-4, 1e-6, 1e-8};

/// For each sigma and draw, adds sigma * z to every parameter and records the
/// example-averaged L2 distance of the chosen output. Draw d uses the same
/// standard-normal direction z_d for every sigma.
PerturbReport perturbation_variance(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                    const std::vector<double>& sigmas, std::size_t n_draws, std::uint64_t seed,
                                    OutputSite site = OutputSite::kLastHiddenCls);

}  // namespace xfer
