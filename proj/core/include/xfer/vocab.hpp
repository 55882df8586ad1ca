#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xfer {

/// Token strings indexed by id. Ids 0-4 are the reserved specials; tokens
/// spelled "[unusedN]" form the unused set.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  /// Reserved tokens, content tokens "w5", "w6", ..., and `unused_count`
  /// trailing "[unusedN]" tokens.
  static Vocab synthetic(std::size_t size, std::size_t unused_count = 0);
  /// Reserved tokens followed by the given symbols.
  static Vocab from_symbols(const std::vector<std::string>& symbols);

  /// One token per line; line number is the id.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<int> find(std::string_view token) const;

  bool is_reserved(int id) const noexcept;
  bool is_unused(int id) const noexcept;
  /// Every non-reserved id, including unused ones.
  std::vector<int> content_ids() const;
  /// Content ids that are not in the unused set.
  std::vector<int> active_ids() const;
  const std::vector<int>& unused_ids() const noexcept { return unused_; }

  /// Hex digest of the token list.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> unused_;
};

inline constexpr std::string_view kReservedTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

}  // namespace xfer
