#include "xfer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/rng.hpp"

namespace xfer {

void LabeledDataset::validate(std::size_t vocab_size) const {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    require(!ex.ids.empty(), ErrorKind::kInput, "example " + std::to_string(i) + " is empty");
    for (int id : ex.ids) {
      require(id >= 0 && static_cast<std::size_t>(id) < vocab_size, ErrorKind::kIndex,
              "example " + std::to_string(i) + " holds id " + std::to_string(id) + " outside vocabulary of " +
                  std::to_string(vocab_size));
    }
    if (label_kind == LabelKind::kClass) {
      require(ex.label >= 0 && ex.label < static_cast<double>(num_classes) && std::floor(ex.label) == ex.label,
              ErrorKind::kLabel, "example " + std::to_string(i) + " has invalid class label");
    } else {
      require(std::isfinite(ex.label), ErrorKind::kLabel, "example " + std::to_string(i) + " has a non-finite label");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.label_kind = label_kind;
  out.num_classes = num_classes;
  out.vocab_hash = vocab_hash;
  out.examples.reserve(indices.size());
  for (auto i : indices) out.examples.push_back(examples.at(i));
  return out;
}

std::vector<double> LabeledDataset::labels() const {
  std::vector<double> y;
  y.reserve(examples.size());
  for (const auto& e : examples) y.push_back(e.label);
  return y;
}

LabeledDataset parse_dataset(std::istream& in, const Vocab& vocab, const LoadOptions& options, LoadStats* stats) {
  require(options.max_len >= 3, ErrorKind::kConfig, "max_len must leave room for CLS, SEP and one token");
  LoadStats local;
  LabeledDataset data;
  data.vocab_hash = vocab.hash();
  std::string line;
  std::size_t line_no = 0;
  bool all_integral = true;
  double max_label = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorKind::kParse, "line " + std::to_string(line_no) + ": missing TAB separator");
    const std::string label_text = line.substr(0, tab);
    double label = 0.0;
    const char* first = label_text.data();
    const char* last = first + label_text.size();
    auto [ptr, ec] = std::from_chars(first, last, label);
    require(ec == std::errc() && ptr == last && !label_text.empty() && std::isfinite(label), ErrorKind::kLabel,
            "line " + std::to_string(line_no) + ": label '" + label_text + "' is not numeric");
    if (label < 0 || std::floor(label) != label) all_integral = false;
    max_label = std::max(max_label, label);

    Example ex;
    ex.label = label;
    ex.ids.push_back(special::kCls);
    std::istringstream tokens(line.substr(tab + 1));
    std::string tok;
    std::size_t count = 0;
    const std::size_t budget = options.max_len - 2;
    bool truncated = false;
    while (tokens >> tok) {
      ++count;
      if (count > budget) {
        truncated = true;
        continue;
      }
      auto id = vocab.find(tok);
      if (!id) {
        ++local.unknown_tokens;
        ex.ids.push_back(special::kUnk);
      } else {
        ex.ids.push_back(*id);
      }
    }
    require(count > 0, ErrorKind::kParse, "line " + std::to_string(line_no) + ": no tokens");
    ex.ids.push_back(special::kSep);
    if (truncated) ++local.truncated;
    ++local.lines;
    data.examples.push_back(std::move(ex));
  }
  data.label_kind = options.label_kind.value_or(all_integral ? LabelKind::kClass : LabelKind::kScalar);
  if (data.label_kind == LabelKind::kClass) {
    require(all_integral, ErrorKind::kLabel, "class labels must be non-negative integers");
    data.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  } else {
    data.num_classes = 1;
  }
  if (stats) *stats = local;
  return data;
}

LabeledDataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, const LoadOptions& options,
                            LoadStats* stats) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read dataset " + path.string());
  return parse_dataset(in, vocab, options, stats);
}

namespace {

std::string format_label(double label, LabelKind kind) {
  if (kind == LabelKind::kClass) return std::to_string(static_cast<long long>(label));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", label);
  return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data, const Vocab& vocab) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write dataset " + path.string());
  for (const auto& ex : data.examples) {
    std::size_t begin = 0, end = ex.ids.size();
    if (end > 0 && ex.ids[0] == special::kCls) ++begin;
    if (end > begin && ex.ids[end - 1] == special::kSep) --end;
    out << format_label(ex.label, data.label_kind) << '\t';
    for (std::size_t i = begin; i < end; ++i) {
      if (i > begin) out << ' ';
      out << vocab.token(ex.ids[i]);
    }
    out << '\n';
  }
}

DatasetSplits split_dataset(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) require(f >= 0.0 && f <= 1.0, ErrorKind::kSpec, "split fractions must lie in [0, 1]");
  require(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) < 1e-9, ErrorKind::kSpec,
          "split fractions must sum to 1");
  const std::size_t n = data.size();
  Rng rng = Rng(seed).split(stream::kSplit);
  const auto order = rng.permutation(n);
  const auto n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[2] + 1e-9));
  const std::size_t n_train = n - n_valid - n_test;
  std::span<const std::size_t> all(order);
  return DatasetSplits{data.subset(all.subspan(0, n_train)), data.subset(all.subspan(n_train, n_valid)),
                       data.subset(all.subspan(n_train + n_valid, n_test))};
}

std::vector<std::vector<int>> segment(std::span<const int> sequence, std::size_t segment_len) {
  require(segment_len >= 1, ErrorKind::kConfig, "segment length must be >= 1");
  require(!sequence.empty(), ErrorKind::kInput, "cannot segment an empty sequence");
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < sequence.size(); start += segment_len) {
    const std::size_t len = std::min(segment_len, sequence.size() - start);
    out.emplace_back(sequence.begin() + static_cast<std::ptrdiff_t>(start),
                     sequence.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  return out;
}

int vote(std::span<const int> predictions) {
  require(!predictions.empty(), ErrorKind::kInput, "cannot vote over zero predictions");
  std::map<int, std::size_t> counts;
  for (int p : predictions) ++counts[p];
  int best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, c] : counts) {
    if (c > best_count) {
      best = label;
      best_count = c;
    }
  }
  return best;
}

}  // namespace xfer
