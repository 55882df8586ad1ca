#include "xfer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xfer/error.hpp"

namespace xfer {

std::string_view to_string(MetricKind kind) noexcept {
  switch (kind) {
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kF1: return "f1";
    case MetricKind::kMcc: return "mcc";
    case MetricKind::kSpearman: return "spearman";
  }
  return "?";
}

MetricKind parse_metric(std::string_view text) {
  for (auto k : {MetricKind::kAccuracy, MetricKind::kF1, MetricKind::kMcc, MetricKind::kSpearman}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::kConfig, "unknown metric '" + std::string(text) + "'");
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kDimension,
          "prediction/label length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  require(!a.empty(), ErrorKind::kInput, "cannot evaluate zero predictions");
}

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(std::span<const double> pred, std::span<const double> label) {
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1.0;
    const bool y = label[i] == 1.0;
    if (p && y) c.tp += 1;
    else if (p) c.fp += 1;
    else if (y) c.fn += 1;
    else c.tn += 1;
  }
  return c;
}

}  // namespace

double accuracy(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double f1_score(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions, labels);
  const auto c = confusion(predictions, labels);
  const double denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2 * c.tp / denom;
}

double mcc(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions, labels);
  const auto c = confusion(predictions, labels);
  const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (denom == 0) return 0.0;
  return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  require(saa > 0 && sbb > 0, ErrorKind::kUndefinedCorrelation, "spearman correlation of a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> labels) {
  switch (kind) {
    case MetricKind::kAccuracy: return accuracy(predictions, labels);
    case MetricKind::kF1: return f1_score(predictions, labels);
    case MetricKind::kMcc: return mcc(predictions, labels);
    case MetricKind::kSpearman: return spearman(predictions, labels);
  }
  fail(ErrorKind::kConfig, "unknown metric");
}

MetricReport evaluate(std::span<const double> predictions, std::span<const double> labels, MetricKind kind) {
  MetricReport r;
  r.metric = kind;
  r.value = compute_metric(kind, predictions, labels);
  r.n = predictions.size();
  return r;
}

}  // namespace xfer
