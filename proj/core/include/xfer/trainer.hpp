#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xfer/checkpoint.hpp"
#include "xfer/corpus.hpp"
#include "xfer/dataset.hpp"
#include "xfer/metrics.hpp"
#include "xfer/model.hpp"
#include "xfer/optim.hpp"

namespace xfer {

enum class InitMode { kScratch, kCheckpoint, kReEmbed };
enum class Selection { kFinal, kBestValid };

std::string_view to_string(InitMode mode) noexcept;
InitMode parse_init_mode(std::string_view text);
std::string_view to_string(Selection selection) noexcept;
Selection parse_selection(std::string_view text);

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch_size = 32;
  /// Required; there is no sensible default epoch count.
  std::size_t total_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double subset_fraction = 1.0;
  InitMode init_mode = InitMode::kScratch;
  Selection selection = Selection::kBestValid;
  /// Pretraining only.
  double mask_ratio = 0.15;
  /// Each curve point is the mean batch loss over the preceding window.
  std::size_t log_every = 50;
  /// Validation cadence for best-valid selection and the validation curve.
  std::size_t eval_every = 200;
  /// Reset positional embeddings too under re-emb.
  bool reembed_positions = false;
  std::optional<MetricKind> metric;

  void validate() const;
  AdamConfig adam() const noexcept { return {lr, beta1, beta2, eps, total_steps}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossCurve {
  std::vector<std::pair<std::size_t, double>> train;
  std::vector<std::pair<std::size_t, double>> valid;

  /// Train loss logged at `step`; throws kIndex when no point has that step.
  double train_at(std::size_t step) const;
};

void write_curve_csv(const std::filesystem::path& path, const LossCurve& curve);
void write_metrics_csv(const std::filesystem::path& path, std::string_view run_id,
                       const std::vector<MetricReport>& reports);

/// Called after every optimizer update with (step, batch loss).
using StepCallback = std::function<void(std::size_t, double)>;

struct PretrainResult {
  Checkpoint checkpoint;
  LossCurve curve;
};

/// Masked-LM training on corpus lines wrapped as CLS ... SEP (lines longer
/// than max_len - 2 are cut). Batches follow a seeded per-epoch shuffle; the
/// final batch of an epoch may be short.
PretrainResult pretrain_mlm(const Corpus& corpus, const ModelConfig& config, const TrainConfig& train,
                            std::string vocab_hash = {}, const StepCallback& on_step = {});

struct FinetuneResult {
  MetricReport test;
  MetricReport valid;
  LossCurve curve;
  Checkpoint checkpoint;
  std::size_t train_examples = 0;
  /// Step whose parameters produced the reported scores (0 = before training).
  std::size_t selected_step = 0;
};

/// Fine-tunes on splits.train (subsampled by subset_fraction). The classifier
/// head is freshly initialised in every mode; scratch ignores `pretrained`.
FinetuneResult finetune(const DatasetSplits& splits, const ModelConfig& config, const TrainConfig& train,
                        const Checkpoint* pretrained = nullptr, const StepCallback& on_step = {});

/// Initial parameters for a fine-tuning run.
Parameters initial_finetune_params(const ModelConfig& config, const TrainConfig& train, const Checkpoint* pretrained);

/// Stratified (per class) seeded shuffle-then-prefix of floor(fraction * n)
/// indices, at least one. Scalar labels use a plain shuffle.
std::vector<std::size_t> subset_indices(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// Eval-mode predictions: argmax class id or the regression output.
std::vector<double> predict(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                            std::size_t batch_size = 64);
/// Eval-mode mean task loss over the dataset (example-weighted).
double dataset_loss(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                    std::size_t batch_size = 64);

Batch make_example_batch(const LabeledDataset& data, std::span<const std::size_t> indices);

MetricKind default_metric(const LabeledDataset& data) noexcept;

}  // namespace xfer
