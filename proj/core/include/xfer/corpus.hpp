#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

enum class CorpusKind { kUniform, kFlat, kNesting, kMotifTask };

std::string_view to_string(CorpusKind kind) noexcept;
CorpusKind parse_corpus_kind(std::string_view text);

struct CorpusSpec {
  CorpusKind kind = CorpusKind::kNesting;
  /// Must match the vocabulary handed to the generator.
  std::size_t vocab_size = 64;
  std::size_t min_len = 16;
  std::size_t max_len = 64;
  std::size_t lines = 1000;
  /// Bracket types; type t opens with active id 2t and closes with 2t+1.
  std::size_t bracket_types = 10;
  double close_prob = 0.4;
  /// 0 means unbounded. Flat corpora always use 1.
  std::size_t max_depth = 0;
  /// Motif as vocabulary ids; drawn at random when empty.
  std::vector<int> motif;
  std::size_t motif_len = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Lines of token ids, without CLS/SEP.
struct Corpus {
  std::vector<std::vector<int>> lines;

  std::size_t size() const noexcept { return lines.size(); }
  std::size_t token_count() const noexcept;
};

Corpus gen_uniform(const CorpusSpec& spec, const Vocab& vocab);
Corpus gen_parens(const CorpusSpec& spec, const Vocab& vocab);
/// Dispatches on spec.kind; motif tasks are rejected (use gen_motif_task).
Corpus generate_corpus(const CorpusSpec& spec, const Vocab& vocab);

/// (open, close) id pairs for the first k bracket types.
std::vector<std::pair<int, int>> bracket_pairs(const Vocab& vocab, std::size_t k);

/// Balanced binary task: floor(n/2) positives carrying the motif at a random
/// offset, the rest rejection-sampled to avoid it; examples are shuffled and
/// wrapped as CLS ... SEP.
LabeledDataset gen_motif_task(const CorpusSpec& spec, const Vocab& vocab);
/// The motif used by gen_motif_task for this spec.
std::vector<int> resolve_motif(const CorpusSpec& spec, const Vocab& vocab);
bool contains_motif(std::span<const int> sequence, std::span<const int> motif) noexcept;

void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& vocab);
/// Unknown tokens are a parse error.
Corpus read_corpus(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace xfer
