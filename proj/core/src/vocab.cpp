#include "xfer/vocab.hpp"

#include <fstream>

#include "xfer/digest.hpp"
#include "xfer/error.hpp"
#include "xfer/model.hpp"

namespace xfer {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  require(tokens_.size() > static_cast<std::size_t>(special::kFirstContent), ErrorKind::kSpec,
          "vocabulary needs the five reserved tokens and at least one content token");
  for (int i = 0; i < special::kFirstContent; ++i) {
    require(tokens_[static_cast<std::size_t>(i)] == kReservedTokens[i], ErrorKind::kSpec,
            "vocabulary id " + std::to_string(i) + " must be " + std::string(kReservedTokens[i]));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    require(!t.empty() && t.find_first_of(" \t\r\n") == std::string::npos, ErrorKind::kSpec,
            "vocabulary token " + std::to_string(i) + " is empty or contains whitespace");
    require(index_.emplace(t, static_cast<int>(i)).second, ErrorKind::kSpec, "duplicate vocabulary token " + t);
    if (t.rfind("[unused", 0) == 0) unused_.push_back(static_cast<int>(i));
  }
}

Vocab Vocab::synthetic(std::size_t size, std::size_t unused_count) {
  require(size > static_cast<std::size_t>(special::kFirstContent) + unused_count, ErrorKind::kSpec,
          "synthetic vocabulary of " + std::to_string(size) + " cannot hold " + std::to_string(unused_count) +
              " unused tokens and one content token");
  std::vector<std::string> tokens(kReservedTokens, kReservedTokens + special::kFirstContent);
  const std::size_t active_end = size - unused_count;
  for (std::size_t i = special::kFirstContent; i < active_end; ++i) tokens.push_back("w" + std::to_string(i));
  for (std::size_t i = 0; i < unused_count; ++i) tokens.push_back("[unused" + std::to_string(i) + "]");
  return Vocab(std::move(tokens));
}

Vocab Vocab::from_symbols(const std::vector<std::string>& symbols) {
  std::vector<std::string> tokens(kReservedTokens, kReservedTokens + special::kFirstContent);
  tokens.insert(tokens.end(), symbols.begin(), symbols.end());
  return Vocab(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocab::token(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::kIndex,
          "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocab::is_reserved(int id) const noexcept { return id >= 0 && id < special::kFirstContent; }

bool Vocab::is_unused(int id) const noexcept {
  for (int u : unused_)
    if (u == id) return true;
  return false;
}

std::vector<int> Vocab::content_ids() const {
  std::vector<int> ids;
  for (int i = special::kFirstContent; i < static_cast<int>(tokens_.size()); ++i) ids.push_back(i);
  return ids;
}

std::vector<int> Vocab::active_ids() const {
  std::vector<int> ids;
  std::size_t u = 0;
  for (int i = special::kFirstContent; i < static_cast<int>(tokens_.size()); ++i) {
    while (u < unused_.size() && unused_[u] < i) ++u;
    if (u < unused_.size() && unused_[u] == i) continue;
    ids.push_back(i);
  }
  return ids;
}

std::string Vocab::hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return hex64(h);
}

}  // namespace xfer
