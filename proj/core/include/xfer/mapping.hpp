#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xfer/corpus.hpp"
#include "xfer/dataset.hpp"
#include "xfer/vocab.hpp"

namespace xfer {

enum class MappingKind { kShift, kRandom, kFile, kInject, kComposed };

std::string_view to_string(MappingKind kind) noexcept;

/// A total table from source ids [0, domain) into target ids [0, codomain).
class Mapping {
 public:
  Mapping(MappingKind kind, std::vector<int> table, std::size_t codomain);

  MappingKind kind() const noexcept { return kind_; }
  std::size_t domain_size() const noexcept { return table_.size(); }
  std::size_t codomain_size() const noexcept { return codomain_; }
  const std::vector<int>& table() const noexcept { return table_; }

  int apply(int id) const;
  std::vector<int> apply(std::span<const int> ids) const;

  bool is_injective() const;
  bool is_bijective() const;
  /// Requires a bijection.
  Mapping inverse() const;
  /// (this followed by next): id -> next(this(id)).
  Mapping then(const Mapping& next) const;

  static Mapping identity(std::size_t size);

 private:
  MappingKind kind_;
  std::vector<int> table_;
  std::size_t codomain_;
};

/// Content id i maps to 5 + ((i - 5 + offset) mod C), C = D - 5; reserved ids
/// are fixed points.
Mapping make_shift_mapping(const Vocab& vocab, std::int64_t offset);
Mapping make_shift_mapping(std::size_t vocab_size, std::int64_t offset);
/// Uniform random permutation of the content ids.
Mapping make_random_mapping(const Vocab& vocab, std::uint64_t seed);
Mapping make_random_mapping(std::size_t vocab_size, std::uint64_t seed);

/// Reads "src<TAB>dst" lines; ids not listed map to themselves. The table
/// must be a bijection fixing the reserved ids.
Mapping load_mapping(const std::filesystem::path& path, std::size_t vocab_size);
/// Same format for a source vocabulary of `domain` ids mapped into `codomain`
/// ids; the table must be injective and fix the reserved ids.
Mapping load_mapping_table(const std::filesystem::path& path, std::size_t domain, std::size_t codomain);
/// Writes every entry of the table.
void save_mapping(const std::filesystem::path& path, const Mapping& mapping);

/// Random injection from the source content ids into model content ids.
/// Reserved ids map to themselves. With avoid_unused the image excludes the
/// model's unused set; without it the image is drawn from the unused set when
/// that set is large enough to hold the source alphabet, otherwise from all
/// content ids.
Mapping inject_tokens(const Vocab& source, const Vocab& model, std::uint64_t seed, bool avoid_unused = true);

LabeledDataset apply_mapping(const LabeledDataset& data, const Mapping& mapping);
Corpus apply_mapping(const Corpus& corpus, const Mapping& mapping);

}  // namespace xfer
