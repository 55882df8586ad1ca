#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xfer {

enum class MetricKind { kAccuracy, kF1, kMcc, kSpearman };

std::string_view to_string(MetricKind kind) noexcept;
MetricKind parse_metric(std::string_view text);

double accuracy(std::span<const double> predictions, std::span<const double> labels);
/// Binary F1 of the positive class (label 1). 0 when there are no true
/// positives.
double f1_score(std::span<const double> predictions, std::span<const double> labels);
/// Matthews correlation from the binary confusion matrix; 0 when any margin
/// is empty.
double mcc(std::span<const double> predictions, std::span<const double> labels);
/// Pearson correlation of average ranks. A constant input is an
/// undefined-correlation error.
double spearman(std::span<const double> a, std::span<const double> b);

/// 1-based ranks with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

struct MetricReport {
  MetricKind metric = MetricKind::kAccuracy;
  double value = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string init_mode;
};

double compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> labels);
MetricReport evaluate(std::span<const double> predictions, std::span<const double> labels, MetricKind kind);

}  // namespace xfer
