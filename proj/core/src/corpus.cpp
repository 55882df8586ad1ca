#include "xfer/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "xfer/error.hpp"
#include "xfer/model.hpp"
#include "xfer/rng.hpp"

namespace xfer {

std::string_view to_string(CorpusKind kind) noexcept {
  switch (kind) {
    case CorpusKind::kUniform: return "uniform";
    case CorpusKind::kFlat: return "flat";
    case CorpusKind::kNesting: return "nesting";
    case CorpusKind::kMotifTask: return "motif-task";
  }
  return "?";
}

CorpusKind parse_corpus_kind(std::string_view text) {
  for (auto k : {CorpusKind::kUniform, CorpusKind::kFlat, CorpusKind::kNesting, CorpusKind::kMotifTask}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::kSpec, "unknown corpus kind '" + std::string(text) + "'");
}

void CorpusSpec::validate() const {
  require(min_len >= 1 && min_len <= max_len, ErrorKind::kSpec, "line-length range must satisfy 1 <= min <= max");
  require(lines >= 1, ErrorKind::kSpec, "line count must be positive");
  if (kind == CorpusKind::kFlat || kind == CorpusKind::kNesting) {
    require(bracket_types >= 1, ErrorKind::kSpec, "bracket type count must be >= 1");
    require(close_prob >= 0.0 && close_prob <= 1.0, ErrorKind::kSpec, "close probability must lie in [0, 1]");
    require(max_len >= 2 && (min_len % 2 == 0 || min_len < max_len), ErrorKind::kSpec,
            "parenthesis lines need an even length in the range");
  }
}

std::size_t Corpus::token_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : lines) n += l.size();
  return n;
}

namespace {

void check_vocab(const CorpusSpec& spec, const Vocab& vocab) {
  require(vocab.size() == spec.vocab_size, ErrorKind::kSpec,
          "spec vocab size " + std::to_string(spec.vocab_size) + " does not match vocabulary of " +
              std::to_string(vocab.size()));
}

std::size_t draw_length(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
}

}  // namespace

Corpus gen_uniform(const CorpusSpec& spec, const Vocab& vocab) {
  spec.validate();
  check_vocab(spec, vocab);
  const auto alphabet = vocab.active_ids();
  require(!alphabet.empty(), ErrorKind::kSpec, "vocabulary has no active content ids");
  Rng rng = Rng(spec.seed).split(stream::kData);
  Corpus out;
  out.lines.reserve(spec.lines);
  for (std::size_t i = 0; i < spec.lines; ++i) {
    const std::size_t len = draw_length(rng, spec.min_len, spec.max_len);
    std::vector<int> line(len);
    for (auto& t : line) t = alphabet[rng.uniform_int(alphabet.size())];
    out.lines.push_back(std::move(line));
  }
  return out;
}

std::vector<std::pair<int, int>> bracket_pairs(const Vocab& vocab, std::size_t k) {
  const auto alphabet = vocab.active_ids();
  require(2 * k <= alphabet.size(), ErrorKind::kSpec,
          std::to_string(k) + " bracket types need " + std::to_string(2 * k) + " active ids, vocabulary has " +
              std::to_string(alphabet.size()));
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t t = 0; t < k; ++t) pairs.emplace_back(alphabet[2 * t], alphabet[2 * t + 1]);
  return pairs;
}

Corpus gen_parens(const CorpusSpec& spec, const Vocab& vocab) {
  require(spec.kind == CorpusKind::kFlat || spec.kind == CorpusKind::kNesting, ErrorKind::kSpec,
          "gen_parens needs a flat or nesting spec");
  spec.validate();
  check_vocab(spec, vocab);
  const auto pairs = bracket_pairs(vocab, spec.bracket_types);
  const std::size_t cap = spec.kind == CorpusKind::kFlat ? 1 : spec.max_depth;
  // Even lengths in [min_len, max_len].
  const std::size_t lo = spec.min_len + (spec.min_len % 2);
  const std::size_t hi = spec.max_len - (spec.max_len % 2);
  require(lo <= hi && lo >= 2, ErrorKind::kSpec, "no even length in the requested range");

  Rng rng = Rng(spec.seed).split(stream::kData);
  Corpus out;
  out.lines.reserve(spec.lines);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < spec.lines; ++i) {
    const std::size_t len = lo + 2 * static_cast<std::size_t>(rng.uniform_int((hi - lo) / 2 + 1));
    std::vector<int> line;
    line.reserve(len);
    stack.clear();
    while (line.size() < len) {
      const std::size_t remaining = len - line.size();
      bool close;
      if (stack.empty()) {
        close = false;
      } else if (stack.size() == remaining || (cap != 0 && stack.size() >= cap)) {
        close = true;
      } else {
        close = rng.bernoulli(spec.close_prob);
      }
      if (close) {
        line.push_back(pairs[stack.back()].second);
        stack.pop_back();
      } else {
        const auto t = static_cast<std::size_t>(rng.uniform_int(pairs.size()));
        stack.push_back(t);
        line.push_back(pairs[t].first);
      }
    }
    out.lines.push_back(std::move(line));
  }
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec, const Vocab& vocab) {
  switch (spec.kind) {
    case CorpusKind::kUniform: return gen_uniform(spec, vocab);
    case CorpusKind::kFlat:
    case CorpusKind::kNesting: return gen_parens(spec, vocab);
    case CorpusKind::kMotifTask: break;
  }
  fail(ErrorKind::kSpec, "motif tasks produce datasets, not corpora");
}

bool contains_motif(std::span<const int> sequence, std::span<const int> motif) noexcept {
  if (motif.empty()) return true;
  return std::search(sequence.begin(), sequence.end(), motif.begin(), motif.end()) != sequence.end();
}

std::vector<int> resolve_motif(const CorpusSpec& spec, const Vocab& vocab) {
  const auto alphabet = vocab.active_ids();
  if (!spec.motif.empty()) {
    for (int id : spec.motif) {
      require(std::find(alphabet.begin(), alphabet.end(), id) != alphabet.end(), ErrorKind::kSpec,
              "motif id " + std::to_string(id) + " is not an active content id");
    }
    return spec.motif;
  }
  require(spec.motif_len >= 1, ErrorKind::kSpec, "motif length must be >= 1");
  Rng rng = Rng(spec.seed).split(stream::kSample);
  std::vector<int> motif(spec.motif_len);
  for (auto& t : motif) t = alphabet[rng.uniform_int(alphabet.size())];
  return motif;
}

LabeledDataset gen_motif_task(const CorpusSpec& spec, const Vocab& vocab) {
  spec.validate();
  check_vocab(spec, vocab);
  const auto alphabet = vocab.active_ids();
  require(alphabet.size() >= 4, ErrorKind::kSpec, "motif task needs at least 4 active content ids");
  const auto motif = resolve_motif(spec, vocab);
  require(motif.size() < spec.min_len, ErrorKind::kSpec, "motif must be shorter than the minimum sequence length");

  constexpr std::size_t kMaxAttempts = 10000;
  Rng rng = Rng(spec.seed).split(stream::kData);
  const std::size_t n = spec.lines;
  const std::size_t positives = n / 2;

  LabeledDataset data;
  data.label_kind = LabelKind::kClass;
  data.num_classes = 2;
  data.vocab_hash = vocab.hash();
  data.examples.reserve(n);
  auto draw = [&](std::size_t len) {
    std::vector<int> seq(len);
    for (auto& t : seq) t = alphabet[rng.uniform_int(alphabet.size())];
    return seq;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = i < positives;
    const std::size_t len = draw_length(rng, spec.min_len, spec.max_len);
    std::vector<int> seq;
    if (positive) {
      seq = draw(len);
      const auto at = static_cast<std::size_t>(rng.uniform_int(len - motif.size() + 1));
      std::copy(motif.begin(), motif.end(), seq.begin() + static_cast<std::ptrdiff_t>(at));
    } else {
      std::size_t attempt = 0;
      do {
        require(attempt++ < kMaxAttempts, ErrorKind::kSpec,
                "could not sample a negative without the motif; motif too short for this alphabet");
        seq = draw(len);
      } while (contains_motif(seq, motif));
    }
    Example ex;
    ex.label = positive ? 1.0 : 0.0;
    ex.ids.reserve(seq.size() + 2);
    ex.ids.push_back(special::kCls);
    ex.ids.insert(ex.ids.end(), seq.begin(), seq.end());
    ex.ids.push_back(special::kSep);
    data.examples.push_back(std::move(ex));
  }
  Rng order = Rng(spec.seed).split(stream::kSplit);
  order.shuffle(data.examples);
  return data;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& vocab) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write corpus " + path.string());
  for (const auto& line : corpus.lines) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(line[i]);
    }
    out << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read corpus " + path.string());
  Corpus out;
  std::string line, tok;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream tokens(line);
    std::vector<int> ids;
    while (tokens >> tok) {
      auto id = vocab.find(tok);
      require(id.has_value(), ErrorKind::kParse,
              "line " + std::to_string(line_no) + ": token '" + tok + "' not in vocabulary");
      ids.push_back(*id);
    }
    if (!ids.empty()) out.lines.push_back(std::move(ids));
  }
  return out;
}

}  // namespace xfer
