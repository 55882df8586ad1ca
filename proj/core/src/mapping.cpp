#include "xfer/mapping.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/rng.hpp"

namespace xfer {

std::string_view to_string(MappingKind kind) noexcept {
  switch (kind) {
    case MappingKind::kShift: return "shift";
    case MappingKind::kRandom: return "random";
    case MappingKind::kFile: return "file";
    case MappingKind::kInject: return "inject";
    case MappingKind::kComposed: return "composed";
  }
  return "?";
}

namespace {

constexpr int kFirstContent = special::kFirstContent;

}  // namespace

Mapping::Mapping(MappingKind kind, std::vector<int> table, std::size_t codomain)
    : kind_(kind), table_(std::move(table)), codomain_(codomain) {
  for (std::size_t i = 0; i < table_.size(); ++i) {
    require(table_[i] >= 0 && static_cast<std::size_t>(table_[i]) < codomain_, ErrorKind::kMapping,
            "entry " + std::to_string(i) + " -> " + std::to_string(table_[i]) + " leaves codomain of " +
                std::to_string(codomain_));
  }
}

int Mapping::apply(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < table_.size(), ErrorKind::kMapping,
          "id " + std::to_string(id) + " outside mapping domain of " + std::to_string(table_.size()));
  return table_[static_cast<std::size_t>(id)];
}

std::vector<int> Mapping::apply(std::span<const int> ids) const {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(apply(id));
  return out;
}

bool Mapping::is_injective() const {
  std::vector<char> seen(codomain_, 0);
  for (int t : table_) {
    if (seen[static_cast<std::size_t>(t)]) return false;
    seen[static_cast<std::size_t>(t)] = 1;
  }
  return true;
}

bool Mapping::is_bijective() const { return table_.size() == codomain_ && is_injective(); }

Mapping Mapping::inverse() const {
  require(is_bijective(), ErrorKind::kMapping, "only bijections can be inverted");
  std::vector<int> inv(table_.size());
  for (std::size_t i = 0; i < table_.size(); ++i) inv[static_cast<std::size_t>(table_[i])] = static_cast<int>(i);
  return Mapping(kind_, std::move(inv), table_.size());
}

Mapping Mapping::then(const Mapping& next) const {
  require(codomain_ <= next.domain_size(), ErrorKind::kMapping, "composition codomain exceeds next domain");
  std::vector<int> out(table_.size());
  for (std::size_t i = 0; i < table_.size(); ++i) out[i] = next.table_[static_cast<std::size_t>(table_[i])];
  return Mapping(MappingKind::kComposed, std::move(out), next.codomain_);
}

Mapping Mapping::identity(std::size_t size) {
  std::vector<int> t(size);
  for (std::size_t i = 0; i < size; ++i) t[i] = static_cast<int>(i);
  return Mapping(MappingKind::kFile, std::move(t), size);
}

Mapping make_shift_mapping(std::size_t vocab_size, std::int64_t offset) {
  require(vocab_size > static_cast<std::size_t>(kFirstContent), ErrorKind::kMapping, "vocabulary has no content ids");
  const auto c = static_cast<std::int64_t>(vocab_size) - kFirstContent;
  std::vector<int> t(vocab_size);
  for (int i = 0; i < kFirstContent; ++i) t[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = kFirstContent; i < static_cast<std::int64_t>(vocab_size); ++i) {
    const std::int64_t r = ((i - kFirstContent + offset) % c + c) % c;
    t[static_cast<std::size_t>(i)] = static_cast<int>(kFirstContent + r);
  }
  return Mapping(MappingKind::kShift, std::move(t), vocab_size);
}

Mapping make_shift_mapping(const Vocab& vocab, std::int64_t offset) { return make_shift_mapping(vocab.size(), offset); }

Mapping make_random_mapping(std::size_t vocab_size, std::uint64_t seed) {
  require(vocab_size > static_cast<std::size_t>(kFirstContent), ErrorKind::kMapping, "vocabulary has no content ids");
  std::vector<int> t(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) t[i] = static_cast<int>(i);
  Rng rng = Rng(seed).split(stream::kMapping);
  rng.shuffle(std::span<int>(t).subspan(kFirstContent));
  return Mapping(MappingKind::kRandom, std::move(t), vocab_size);
}

Mapping make_random_mapping(const Vocab& vocab, std::uint64_t seed) { return make_random_mapping(vocab.size(), seed); }

namespace {

int parse_id(const std::string& text, std::size_t line_no) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size() && !text.empty(), ErrorKind::kParse,
          "mapping line " + std::to_string(line_no) + ": '" + text + "' is not an integer id");
  return v;
}

}  // namespace

Mapping load_mapping_table(const std::filesystem::path& path, std::size_t domain, std::size_t codomain) {
  require(domain <= codomain || domain == 0, ErrorKind::kMapping, "mapping domain larger than its codomain");
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read mapping " + path.string());
  std::vector<int> t(domain);
  for (std::size_t i = 0; i < domain; ++i) t[i] = static_cast<int>(i);
  std::vector<char> listed(domain, 0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::kParse, "mapping line " + std::to_string(line_no) + ": missing TAB");
    const int src = parse_id(line.substr(0, tab), line_no);
    const int dst = parse_id(line.substr(tab + 1), line_no);
    require(src >= 0 && static_cast<std::size_t>(src) < domain && dst >= 0 && static_cast<std::size_t>(dst) < codomain,
            ErrorKind::kMapping, "mapping line " + std::to_string(line_no) + ": id outside vocabulary");
    require(!listed[static_cast<std::size_t>(src)], ErrorKind::kMapping,
            "mapping line " + std::to_string(line_no) + ": source id listed twice");
    listed[static_cast<std::size_t>(src)] = 1;
    t[static_cast<std::size_t>(src)] = dst;
  }
  for (int i = 0; i < kFirstContent && static_cast<std::size_t>(i) < domain; ++i) {
    require(t[static_cast<std::size_t>(i)] == i, ErrorKind::kMapping, "mapping moves reserved id " + std::to_string(i));
  }
  Mapping m(MappingKind::kFile, std::move(t), codomain);
  require(m.is_injective(), ErrorKind::kMapping, "mapping table in " + path.string() + " is not injective");
  return m;
}

Mapping load_mapping(const std::filesystem::path& path, std::size_t vocab_size) {
  Mapping m = load_mapping_table(path, vocab_size, vocab_size);
  require(m.is_bijective(), ErrorKind::kMapping, "mapping table in " + path.string() + " is not a bijection");
  return m;
}

void save_mapping(const std::filesystem::path& path, const Mapping& mapping) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write mapping " + path.string());
  const auto& t = mapping.table();
  for (std::size_t i = 0; i < t.size(); ++i) out << i << '\t' << t[i] << '\n';
}

Mapping inject_tokens(const Vocab& source, const Vocab& model, std::uint64_t seed, bool avoid_unused) {
  const auto src = source.content_ids();
  std::vector<int> eligible;
  if (avoid_unused) {
    eligible = model.active_ids();
  } else if (model.unused_ids().size() >= src.size()) {
    eligible = model.unused_ids();
  } else {
    eligible = model.content_ids();
  }
  require(src.size() <= eligible.size(), ErrorKind::kCapacity,
          std::to_string(src.size()) + " source tokens do not fit " + std::to_string(eligible.size()) +
              " eligible model ids");
  Rng rng = Rng(seed).split(stream::kMapping);
  rng.shuffle(eligible);
  std::vector<int> t(source.size());
  for (int i = 0; i < kFirstContent; ++i) t[static_cast<std::size_t>(i)] = i;
  for (std::size_t j = 0; j < src.size(); ++j) t[static_cast<std::size_t>(src[j])] = eligible[j];
  return Mapping(MappingKind::kInject, std::move(t), model.size());
}

LabeledDataset apply_mapping(const LabeledDataset& data, const Mapping& mapping) {
  LabeledDataset out = data;
  for (auto& ex : out.examples) ex.ids = mapping.apply(ex.ids);
  out.vocab_hash.clear();
  return out;
}

Corpus apply_mapping(const Corpus& corpus, const Mapping& mapping) {
  Corpus out;
  out.lines.reserve(corpus.lines.size());
  for (const auto& line : corpus.lines) out.lines.push_back(mapping.apply(line));
  return out;
}

}  // namespace xfer
