#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xfer/vocab.hpp"

namespace xfer {

enum class LabelKind { kClass, kScalar };

struct Example {
  /// Token ids, normally wrapped as CLS ... SEP.
  std::vector<int> ids;
  double label = 0.0;
};

struct LabeledDataset {
  std::vector<Example> examples;
  LabelKind label_kind = LabelKind::kClass;
  std::size_t num_classes = 2;
  std::string vocab_hash;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  /// Every id < vocab_size, class labels < num_classes, no empty sequence.
  void validate(std::size_t vocab_size) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<double> labels() const;
};

struct LoadOptions {
  std::size_t max_len = 512;
  /// Inferred when absent: all labels non-negative integers means classes.
  std::optional<LabelKind> label_kind;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t unknown_tokens = 0;
  std::size_t truncated = 0;
};

/// Reads "label<TAB>tok tok ..." lines. Tokens missing from the vocabulary
/// become UNK (counted in stats); sequences are cut to max_len - 2 tokens and
/// wrapped as CLS ... SEP.
LabeledDataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, const LoadOptions& options = {},
                            LoadStats* stats = nullptr);
LabeledDataset parse_dataset(std::istream& in, const Vocab& vocab, const LoadOptions& options = {},
                             LoadStats* stats = nullptr);

/// Writes the TSV form, dropping the CLS/SEP wrapper.
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data, const Vocab& vocab);

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

/// Seeded shuffle, then valid/test take floor(n * fraction) examples each and
/// train receives the rest.
DatasetSplits split_dataset(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// Consecutive non-overlapping chunks; the last may be shorter.
std::vector<std::vector<int>> segment(std::span<const int> sequence, std::size_t segment_len = 128);
/// Majority class; ties go to the lowest class id.
int vote(std::span<const int> predictions);

}  // namespace xfer
