#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "xfer/attention_match.hpp"
#include "xfer/checkpoint.hpp"
#include "xfer/corpus.hpp"
#include "xfer/dataset.hpp"
#include "xfer/digest.hpp"
#include "xfer/error.hpp"
#include "xfer/mapping.hpp"
#include "xfer/pwcca.hpp"
#include "xfer/representations.hpp"
#include "xfer/stability.hpp"
#include "xfer/trainer.hpp"

namespace xfer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    cur.erase(0, cur.find_first_not_of(" \t"));
    cur.erase(cur.find_last_not_of(" \t") + 1);
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : split_list(text, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == p.size(), ErrorKind::kConfig, "'" + p + "' is not a number");
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run manifests

/// Every option of `app` with its resolved value (given or default).
// Numbers and booleans stay typed in the manifest; everything else is text.
json typed(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  return !v.is_discarded() && (v.is_number() || v.is_boolean()) ? v : json(text);
}

json resolved_options(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "--config") continue;
    const std::string name = opt->get_single_name();
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (r.size() == 1) {
        j[name] = typed(r.front());
      } else {
        json list = json::array();
        for (const auto& item : r) list.push_back(typed(item));
        j[name] = list;
      }
    } else {
      j[name] = typed(opt->get_default_str());
    }
  }
  return j;
}

struct Manifest {
  Manifest(std::string cmd, json resolved) : command(std::move(cmd)), config(std::move(resolved)) {}

  std::string command;
  json config;
  std::map<std::string, std::string> inputs;
  std::vector<std::uint64_t> seeds;
  json outputs = json::array();

  std::string run_id() const {
    return hex64(fnv1a64(command + "\n" + config.dump()));
  }

  void input(const std::string& label, const fs::path& path) {
    if (!path.empty()) inputs[label] = file_digest(path);
  }

  void write(const fs::path& path) const {
    json j;
    j["run_id"] = run_id();
    j["command"] = command;
    j["tool_version"] = std::string(kToolVersion);
    j["config"] = config;
    j["inputs"] = inputs;
    j["seeds"] = seeds;
    j["outputs"] = outputs;
    open_out(path) << j.dump(2) << '\n';
  }
};

fs::path manifest_for(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

// ---------------------------------------------------------------------------
// Shared option groups

struct ModelFlags {
  std::size_t layers = 2, hidden = 64, heads = 4, ffn = 256, max_len = 64;
  double dropout = 0.1;

  void add(CLI::App& app) {
    app.add_option("--layers", layers, "encoder layers");
    app.add_option("--hidden", hidden, "hidden width");
    app.add_option("--heads", heads, "attention heads");
    app.add_option("--ffn", ffn, "feed-forward width");
    app.add_option("--max-len", max_len, "maximum sequence length incl. CLS/SEP");
    app.add_option("--dropout", dropout, "dropout probability during training");
  }
  ModelConfig config(std::size_t vocab_size) const {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = hidden;
    c.num_heads = heads;
    c.ffn_dim = ffn;
    c.max_len = max_len;
    c.dropout_prob = dropout;
    c.vocab_size = vocab_size;
    return c;
  }
};

struct TrainFlags {
  double lr = 1e-5;
  std::size_t batch_size = 32, steps = 0, log_every = 50;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--lr", lr, "peak learning rate (linear decay to 0)");
    app.add_option("--batch-size", batch_size, "batch size");
    app.add_option("--steps", steps, "optimizer steps")->required();
    app.add_option("--seed", seed, "run seed");
    app.add_option("--log-every", log_every, "loss-curve window");
  }
  TrainConfig config() const {
    TrainConfig t;
    t.lr = lr;
    t.batch_size = batch_size;
    t.total_steps = steps;
    t.seed = seed;
    t.log_every = log_every;
    return t;
  }
};

std::vector<std::string> vocab_tokens_from(const Checkpoint& ck) {
  const auto& p = ck.manifest.provenance;
  if (p.is_object() && p.contains("vocab")) return p.at("vocab").get<std::vector<std::string>>();
  return {};
}

/// Vocabulary for reading data against a checkpoint: explicit file, else the
/// one recorded in the checkpoint, else the synthetic layout of its size.
Vocab vocab_for(const fs::path& explicit_path, const Checkpoint& ck) {
  if (!explicit_path.empty()) return Vocab::load(explicit_path);
  auto tokens = vocab_tokens_from(ck);
  if (!tokens.empty()) return Vocab(std::move(tokens));
  return Vocab::synthetic(ck.manifest.config.vocab_size);
}

LabeledDataset load_for(const fs::path& path, const Vocab& vocab, const ModelConfig& config, std::ostream& err) {
  LoadStats stats;
  LoadOptions opts;
  opts.max_len = config.max_len;
  LabeledDataset data = load_dataset(path, vocab, opts, &stats);
  if (stats.unknown_tokens > 0) err << "warning: " << stats.unknown_tokens << " unknown tokens mapped to [UNK]\n";
  if (stats.truncated > 0) err << "warning: " << stats.truncated << " sequences truncated\n";
  return data;
}

// ---------------------------------------------------------------------------
// Commands. Each registers its options and returns the action to run.

using Action = std::function<void(const CLI::App&, std::ostream&, std::ostream&)>;

Action gen_corpus(CLI::App& app) {
  struct S {
    std::string kind, vocab, vocab_out;
    std::size_t lines = 1000, min_len = 16, max_len = 64, vocab_size = 64, unused = 0, k = 10, max_depth = 0;
    double q = 0.4;
    std::uint64_t seed = 0;
    fs::path out;
  };
  auto s = std::make_shared<S>();
  app.add_option("--kind", s->kind, "uniform | flat | nesting")
      ->required()
      ->check(CLI::IsMember({"uniform", "flat", "nesting"}));
  app.add_option("--lines", s->lines, "number of lines");
  app.add_option("--min-len", s->min_len, "minimum line length");
  app.add_option("--max-len", s->max_len, "maximum line length");
  app.add_option("--vocab-size", s->vocab_size, "synthetic vocabulary size");
  app.add_option("--unused", s->unused, "trailing [unusedN] tokens in the synthetic vocabulary");
  app.add_option("--vocab", s->vocab, "existing vocabulary file (overrides --vocab-size/--unused)");
  app.add_option("--vocab-out", s->vocab_out, "write the vocabulary here");
  app.add_option("--bracket-types", s->k, "bracket types k");
  app.add_option("--close-prob", s->q, "close probability q");
  app.add_option("--max-depth", s->max_depth, "nesting depth cap (0 = none)");
  app.add_option("--seed", s->seed, "generator seed");
  app.add_option("--out", s->out, "corpus file")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    const Vocab vocab = s->vocab.empty() ? Vocab::synthetic(s->vocab_size, s->unused) : Vocab::load(s->vocab);
    CorpusSpec spec;
    spec.kind = parse_corpus_kind(s->kind);
    spec.vocab_size = vocab.size();
    spec.lines = s->lines;
    spec.min_len = s->min_len;
    spec.max_len = s->max_len;
    spec.bracket_types = s->k;
    spec.close_prob = s->q;
    spec.max_depth = s->max_depth;
    spec.seed = s->seed;
    const Corpus corpus = generate_corpus(spec, vocab);
    write_corpus(s->out, corpus, vocab);
    Manifest m{"gen-corpus", resolved_options(self)};
    m.input("vocab", s->vocab);
    m.seeds = {s->seed};
    m.outputs.push_back(s->out.string());
    if (!s->vocab_out.empty()) {
      vocab.save(s->vocab_out);
      m.outputs.push_back(s->vocab_out);
    }
    m.write(manifest_for(s->out));
    out << "wrote " << corpus.size() << " lines to " << s->out.string() << '\n';
  };
}

Action gen_task(CLI::App& app) {
  struct S {
    std::size_t n = 1000, min_len = 20, max_len = 40, alphabet = 20, motif_len = 4;
    std::string symbols, vocab, motif, vocab_out;
    std::uint64_t seed = 0;
    fs::path out;
  };
  auto s = std::make_shared<S>();
  app.add_option("--n", s->n, "number of examples");
  app.add_option("--min-len", s->min_len, "minimum sequence length");
  app.add_option("--max-len", s->max_len, "maximum sequence length");
  app.add_option("--alphabet-size", s->alphabet, "symbols s0..s{n-1} when no vocabulary is given");
  app.add_option("--symbols", s->symbols, "comma-separated alphabet (overrides --alphabet-size)");
  app.add_option("--vocab", s->vocab, "existing source vocabulary file");
  app.add_option("--motif", s->motif, "space-separated motif tokens (random when absent)");
  app.add_option("--motif-len", s->motif_len, "length of a random motif");
  app.add_option("--seed", s->seed, "generator seed");
  app.add_option("--vocab-out", s->vocab_out, "write the source vocabulary here");
  app.add_option("--out", s->out, "dataset TSV")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    Vocab vocab;
    if (!s->vocab.empty()) {
      vocab = Vocab::load(s->vocab);
    } else {
      std::vector<std::string> symbols = split_list(s->symbols, ',');
      if (symbols.empty())
        for (std::size_t i = 0; i < s->alphabet; ++i) symbols.push_back("s" + std::to_string(i));
      vocab = Vocab::from_symbols(symbols);
    }
    CorpusSpec spec;
    spec.kind = CorpusKind::kMotifTask;
    spec.vocab_size = vocab.size();
    spec.lines = s->n;
    spec.min_len = s->min_len;
    spec.max_len = s->max_len;
    spec.motif_len = s->motif_len;
    spec.seed = s->seed;
    for (const auto& tok : split_list(s->motif, ' ')) {
      auto id = vocab.find(tok);
      require(id.has_value(), ErrorKind::kSpec, "motif token '" + tok + "' not in vocabulary");
      spec.motif.push_back(*id);
    }
    const LabeledDataset data = gen_motif_task(spec, vocab);
    save_dataset(s->out, data, vocab);
    Manifest m{"gen-task", resolved_options(self)};
    m.input("vocab", s->vocab);
    m.seeds = {s->seed};
    std::string motif_text;
    for (int id : resolve_motif(spec, vocab)) motif_text += (motif_text.empty() ? "" : " ") + vocab.token(id);
    m.config["resolved_motif"] = motif_text;
    m.outputs.push_back(s->out.string());
    if (!s->vocab_out.empty()) {
      vocab.save(s->vocab_out);
      m.outputs.push_back(s->vocab_out);
    }
    m.write(manifest_for(s->out));
    out << "wrote " << data.size() << " examples to " << s->out.string() << " (motif: " << motif_text << ")\n";
  };
}

Action make_map(CLI::App& app) {
  struct S {
    std::string kind, vocab, source_vocab, in;
    std::size_t vocab_size = 64;
    std::int64_t offset = 1000;
    std::uint64_t seed = 0;
    bool allow_unused = false;
    fs::path out;
  };
  auto s = std::make_shared<S>();
  app.add_option("--kind", s->kind, "shift | random | file | inject")
      ->required()
      ->check(CLI::IsMember({"shift", "random", "file", "inject"}));
  app.add_option("--vocab", s->vocab, "model vocabulary file");
  app.add_option("--vocab-size", s->vocab_size, "model vocabulary size when no file is given");
  app.add_option("--offset", s->offset, "shift offset");
  app.add_option("--seed", s->seed, "seed for random and inject mappings");
  app.add_option("--source-vocab", s->source_vocab, "source vocabulary (inject)");
  app.add_flag("--allow-unused", s->allow_unused, "inject: target the unused ids instead of avoiding them");
  app.add_option("--in", s->in, "mapping table to validate (file)");
  app.add_option("--out", s->out, "mapping TSV")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    std::optional<Vocab> model;
    if (!s->vocab.empty()) model = Vocab::load(s->vocab);
    const std::size_t size = model ? model->size() : s->vocab_size;
    Manifest m{"make-map", resolved_options(self)};
    m.input("vocab", s->vocab);
    std::optional<Mapping> map;
    if (s->kind == "shift") {
      map = make_shift_mapping(size, s->offset);
    } else if (s->kind == "random") {
      map = make_random_mapping(size, s->seed);
      m.seeds = {s->seed};
    } else if (s->kind == "file") {
      require(!s->in.empty(), ErrorKind::kConfig, "--kind file needs --in");
      map = load_mapping(s->in, size);
      m.input("in", s->in);
    } else {
      require(!s->source_vocab.empty(), ErrorKind::kConfig, "--kind inject needs --source-vocab");
      const Vocab target = model ? *model : Vocab::synthetic(size);
      map = inject_tokens(Vocab::load(s->source_vocab), target, s->seed, !s->allow_unused);
      m.input("source_vocab", s->source_vocab);
      m.seeds = {s->seed};
    }
    save_mapping(s->out, *map);
    m.outputs.push_back(s->out.string());
    m.write(manifest_for(s->out));
    out << "wrote " << to_string(map->kind()) << " mapping over " << map->domain_size() << " ids to "
        << s->out.string() << '\n';
  };
}

Action remap(CLI::App& app) {
  struct S {
    fs::path map, src_vocab, dst_vocab, data, corpus, out;
  };
  auto s = std::make_shared<S>();
  app.add_option("--map", s->map, "mapping TSV")->required();
  app.add_option("--src-vocab", s->src_vocab, "vocabulary of the input")->required();
  app.add_option("--dst-vocab", s->dst_vocab, "vocabulary of the output (default: source)");
  auto* data = app.add_option("--data", s->data, "dataset TSV to remap");
  auto* corpus = app.add_option("--corpus", s->corpus, "corpus file to remap");
  data->excludes(corpus);
  app.add_option("--out", s->out, "output file")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    require(!s->data.empty() || !s->corpus.empty(), ErrorKind::kConfig, "give --data or --corpus");
    const Vocab src = Vocab::load(s->src_vocab);
    const Vocab dst = s->dst_vocab.empty() ? src : Vocab::load(s->dst_vocab);
    const Mapping map = load_mapping_table(s->map, src.size(), dst.size());
    Manifest m{"remap", resolved_options(self)};
    m.input("map", s->map);
    m.input("src_vocab", s->src_vocab);
    m.input("dst_vocab", s->dst_vocab);
    std::size_t count = 0;
    if (!s->data.empty()) {
      m.input("data", s->data);
      LoadOptions opts;
      opts.max_len = std::numeric_limits<std::size_t>::max() / 2;
      const LabeledDataset mapped = apply_mapping(load_dataset(s->data, src, opts), map);
      save_dataset(s->out, mapped, dst);
      count = mapped.size();
    } else {
      m.input("corpus", s->corpus);
      const Corpus mapped = apply_mapping(read_corpus(s->corpus, src), map);
      write_corpus(s->out, mapped, dst);
      count = mapped.size();
    }
    m.outputs.push_back(s->out.string());
    m.write(manifest_for(s->out));
    out << "remapped " << count << " records into " << s->out.string() << '\n';
  };
}

Action pretrain(CLI::App& app) {
  struct S {
    fs::path corpus, vocab, out, curve;
    ModelFlags model;
    TrainFlags train;
    double mask_ratio = 0.15;
  };
  auto s = std::make_shared<S>();
  app.add_option("--corpus", s->corpus, "corpus file")->required();
  app.add_option("--vocab", s->vocab, "vocabulary file")->required();
  s->model.add(app);
  s->train.add(app);
  app.add_option("--mask-ratio", s->mask_ratio, "MLM selection probability");
  app.add_option("--out", s->out, "checkpoint path")->required();
  app.add_option("--curve", s->curve, "loss curve CSV (default: <out>.curve.csv)");
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    const Vocab vocab = Vocab::load(s->vocab);
    const Corpus corpus = read_corpus(s->corpus, vocab);
    const ModelConfig config = s->model.config(vocab.size());
    TrainConfig train = s->train.config();
    train.mask_ratio = s->mask_ratio;
    PretrainResult r = pretrain_mlm(corpus, config, train, vocab.hash());
    r.checkpoint.manifest.provenance["vocab"] = vocab.tokens();
    save_checkpoint(s->out, r.checkpoint.params, r.checkpoint.manifest);
    const fs::path curve = s->curve.empty() ? fs::path(s->out.string() + ".curve.csv") : s->curve;
    write_curve_csv(curve, r.curve);
    Manifest m{"pretrain", resolved_options(self)};
    m.input("corpus", s->corpus);
    m.input("vocab", s->vocab);
    m.seeds = {train.seed};
    m.outputs = {s->out.string(), curve.string()};
    m.write(manifest_for(s->out));
    out << "final loss " << num(r.curve.train.back().second) << ", checkpoint " << s->out.string() << '\n';
  };
}

Action finetune_cmd(CLI::App& app) {
  struct S {
    fs::path data, train_path, valid_path, test_path, vocab, ckpt, out_dir;
    std::string split = "0.9,0.05,0.05", init = "scratch", selection = "best-valid", metric, task = "task", run_id;
    ModelFlags model;
    TrainFlags train;
    double subset = 1.0;
    std::size_t eval_every = 200;
    bool reembed_positions = false;
  };
  auto s = std::make_shared<S>();
  auto* data = app.add_option("--data", s->data, "full dataset TSV, split with --split");
  auto* tr = app.add_option("--train", s->train_path, "training split TSV");
  app.add_option("--valid", s->valid_path, "validation split TSV");
  app.add_option("--test", s->test_path, "test split TSV");
  data->excludes(tr);
  app.add_option("--split", s->split, "train,valid,test fractions for --data");
  app.add_option("--vocab", s->vocab, "vocabulary (default: the checkpoint's)");
  app.add_option("--init", s->init, "scratch | checkpoint | re-emb")
      ->check(CLI::IsMember({"scratch", "checkpoint", "re-emb"}));
  app.add_option("--ckpt", s->ckpt, "pretrained checkpoint");
  s->model.add(app);
  s->train.add(app);
  app.add_option("--subset", s->subset, "fraction of the training split to use");
  app.add_option("--selection", s->selection, "final | best-valid")->check(CLI::IsMember({"final", "best-valid"}));
  app.add_option("--metric", s->metric, "accuracy | f1 | mcc | spearman (default by label kind)");
  app.add_option("--eval-every", s->eval_every, "validation cadence in steps");
  app.add_flag("--reembed-positions", s->reembed_positions, "re-emb also resets positional embeddings");
  app.add_option("--task", s->task, "task name used by report");
  app.add_option("--run-id", s->run_id, "run identifier (default: derived from the config)");
  app.add_option("--out-dir", s->out_dir, "run directory")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    std::optional<Checkpoint> ck;
    if (!s->ckpt.empty()) ck = load_checkpoint(s->ckpt);
    const InitMode mode = parse_init_mode(s->init);
    require(mode == InitMode::kScratch || ck.has_value(), ErrorKind::kCompatibility,
            "--init " + s->init + " needs --ckpt");
    Vocab vocab = ck ? vocab_for(s->vocab, *ck) : Vocab::load(s->vocab);
    // The checkpoint, when given, fixes the encoder; dropout stays a flag.
    ModelConfig config = ck ? ck->manifest.config : s->model.config(vocab.size());
    config.dropout_prob = s->model.dropout;
    require(config.vocab_size == vocab.size(), ErrorKind::kCompatibility,
            "vocabulary size differs from the model's");

    DatasetSplits splits;
    if (!s->data.empty()) {
      const auto f = parse_doubles(s->split);
      require(f.size() == 3, ErrorKind::kConfig, "--split needs three fractions");
      splits = split_dataset(load_for(s->data, vocab, config, err), {f[0], f[1], f[2]}, s->train.seed);
    } else {
      require(!s->train_path.empty() && !s->test_path.empty(), ErrorKind::kConfig, "give --data or --train/--test");
      splits.train = load_for(s->train_path, vocab, config, err);
      splits.test = load_for(s->test_path, vocab, config, err);
      if (!s->valid_path.empty()) splits.valid = load_for(s->valid_path, vocab, config, err);
      splits.valid.label_kind = splits.train.label_kind;
      splits.valid.num_classes = splits.train.num_classes;
    }
    config.regression = splits.train.label_kind == LabelKind::kScalar;
    config.num_classes = config.regression ? 1 : std::max<std::size_t>(2, splits.train.num_classes);

    TrainConfig train = s->train.config();
    train.init_mode = mode;
    train.subset_fraction = s->subset;
    train.selection = parse_selection(s->selection);
    train.eval_every = s->eval_every;
    train.reembed_positions = s->reembed_positions;
    if (!s->metric.empty()) train.metric = parse_metric(s->metric);

    const FinetuneResult r = finetune(splits, config, train, ck ? &*ck : nullptr);

    Manifest m{"finetune", resolved_options(self)};
    m.config["task"] = s->task;
    const std::string run_id = s->run_id.empty() ? s->task + "-" + s->init + "-s" + std::to_string(train.seed)
                                                 : s->run_id;
    m.config["run_id"] = run_id;
    for (auto [label, path] : {std::pair{"data", s->data}, {"train", s->train_path}, {"valid", s->valid_path},
                               {"test", s->test_path}, {"vocab", s->vocab}})
      m.input(label, path);
    if (mode != InitMode::kScratch) m.input("ckpt", s->ckpt);
    m.seeds = {train.seed};

    fs::create_directories(s->out_dir);
    write_metrics_csv(s->out_dir / "metrics.csv", run_id, {r.test});
    write_metrics_csv(s->out_dir / "valid_metrics.csv", run_id, {r.valid});
    write_curve_csv(s->out_dir / "curve.csv", r.curve);
    {
      auto vc = open_out(s->out_dir / "valid_curve.csv");
      vc << "step,score\n";
      for (const auto& [step, v] : r.curve.valid) vc << step << ',' << num(v) << '\n';
    }
    Checkpoint saved = r.checkpoint;
    saved.manifest.provenance["vocab"] = vocab.tokens();
    saved.manifest.vocab_hash = vocab.hash();
    save_checkpoint(s->out_dir / "model.ck", saved.params, saved.manifest);
    m.outputs = {"metrics.csv", "valid_metrics.csv", "curve.csv", "valid_curve.csv", "model.ck"};
    m.write(s->out_dir / "manifest.json");
    out << run_id << ": test " << to_string(r.test.metric) << " = " << num(r.test.value) << " on " << r.test.n
        << " examples (" << r.train_examples << " training examples)\n";
  };
}

// diagnose subcommands ------------------------------------------------------

struct PairInputs {
  fs::path ckpt_a, ckpt_b, data, vocab, out;
  void add(CLI::App& app) {
    app.add_option("--ckpt-a", ckpt_a, "first (probe) checkpoint")->required();
    app.add_option("--ckpt-b", ckpt_b, "second checkpoint")->required();
    app.add_option("--data", data, "dataset TSV")->required();
    app.add_option("--vocab", vocab, "vocabulary (default: the first checkpoint's)");
    app.add_option("--out", out, "output CSV")->required();
  }
};

struct SingleInputs {
  fs::path ckpt, data, vocab, out;
  void add(CLI::App& app) {
    app.add_option("--ckpt", ckpt, "checkpoint")->required();
    app.add_option("--data", data, "dataset TSV")->required();
    app.add_option("--vocab", vocab, "vocabulary (default: the checkpoint's)");
    app.add_option("--out", out, "output CSV")->required();
  }
};

Action diagnose_pwcca(CLI::App& app) {
  struct S {
    PairInputs in;
    std::size_t layer = 0, n_points = 0;
    std::uint64_t seed = 0;
    double variance = 0.99;
  };
  auto s = std::make_shared<S>();
  s->in.add(app);
  app.add_option("--layer", s->layer, "encoder layer (1-based; 0 = every layer)");
  app.add_option("--n-points", s->n_points, "sampled token positions; must exceed the hidden size")->required();
  app.add_option("--seed", s->seed, "sampling seed");
  app.add_option("--variance", s->variance, "SVD variance kept before CCA");
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    const Checkpoint a = load_checkpoint(s->in.ckpt_a);
    const Checkpoint b = load_checkpoint(s->in.ckpt_b);
    const Vocab vocab = vocab_for(s->in.vocab, a);
    const auto& ca = a.manifest.config;
    const auto& cb = b.manifest.config;
    const LabeledDataset data = load_for(s->in.data, vocab, ca, err);
    const std::size_t n = s->n_points;
    require(ca.num_layers == cb.num_layers || s->layer != 0, ErrorKind::kCompatibility,
            "layer counts differ; pick a --layer");
    std::vector<std::size_t> layers;
    if (s->layer == 0) {
      for (std::size_t l = 1; l <= ca.num_layers; ++l) layers.push_back(l);
    } else {
      layers.push_back(s->layer);
    }
    auto csv = open_out(s->in.out);
    csv << "dir,layer,value\n";
    for (auto l : layers) {
      const ReprMatrix x = collect_representations(a.params, ca, data, l, n, s->seed);
      const ReprMatrix y = collect_representations(b.params, cb, data, l, n, s->seed);
      const PwccaPair p = pwcca_both(x.values, y.values, s->variance);
      csv << "ab," << l << ',' << num(p.ab) << '\n';
      csv << "ba," << l << ',' << num(p.ba) << '\n';
      csv << "mean," << l << ',' << num(p.mean()) << '\n';
      out << "layer " << l << ": pwcca(a,b) = " << num(p.ab) << '\n';
    }
    Manifest m{"diagnose pwcca", resolved_options(self)};
    m.input("ckpt_a", s->in.ckpt_a);
    m.input("ckpt_b", s->in.ckpt_b);
    m.input("data", s->in.data);
    m.input("vocab", s->in.vocab);
    m.seeds = {s->seed};
    m.outputs.push_back(s->in.out.string());
    m.write(manifest_for(s->in.out));
  };
}

Action diagnose_attention(CLI::App& app) {
  struct S {
    PairInputs in;
    std::size_t n_inputs = 50;
  };
  auto s = std::make_shared<S>();
  s->in.add(app);
  app.add_option("--n-inputs", s->n_inputs, "number of inputs (taken from the start of the data)");
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    const Checkpoint a = load_checkpoint(s->in.ckpt_a);
    const Checkpoint b = load_checkpoint(s->in.ckpt_b);
    const Vocab vocab = vocab_for(s->in.vocab, a);
    const LabeledDataset data = load_for(s->in.data, vocab, a.manifest.config, err);
    const std::size_t n = std::min(s->n_inputs, data.size());
    const AttnDistanceReport r = attention_match(a.params, a.manifest.config, b.params, b.manifest.config, data, n);
    auto csv = open_out(s->in.out);
    csv << "layer,mean_l1,n_inputs\n";
    for (std::size_t l = 0; l < r.mean_l1.size(); ++l) {
      csv << l + 1 << ',' << num(r.mean_l1[l]) << ',' << r.n_inputs << '\n';
      out << "layer " << l + 1 << ": matched " << num(r.mean_l1[l]) << ", identity " << num(r.identity_l1[l]) << '\n';
    }
    Manifest m{"diagnose attention", resolved_options(self)};
    m.input("ckpt_a", s->in.ckpt_a);
    m.input("ckpt_b", s->in.ckpt_b);
    m.input("data", s->in.data);
    m.input("vocab", s->in.vocab);
    m.outputs.push_back(s->in.out.string());
    m.write(manifest_for(s->in.out));
  };
}

Action diagnose_isometry(CLI::App& app) {
  struct S {
    SingleInputs in;
    std::size_t index = 0;
  };
  auto s = std::make_shared<S>();
  s->in.add(app);
  app.add_option("--index", s->index, "example index in the data");
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(s->in.ckpt);
    const Vocab vocab = vocab_for(s->in.vocab, ck);
    const LabeledDataset data = load_for(s->in.data, vocab, ck.manifest.config, err);
    require(s->index < data.size(), ErrorKind::kIndex, "--index beyond the dataset");
    const SingularSpectrum sp = jacobian_singular_values(ck.params, ck.manifest.config, data.examples[s->index].ids);
    auto csv = open_out(s->in.out);
    csv << "rank,sigma\n";
    for (std::size_t i = 0; i < sp.values.size(); ++i) csv << i + 1 << ',' << num(sp.values[i]) << '\n';
    out << sp.values.size() << " singular values, max " << num(sp.values.front()) << ", min "
        << num(sp.values.back()) << '\n';
    Manifest m{"diagnose isometry", resolved_options(self)};
    m.input("ckpt", s->in.ckpt);
    m.input("data", s->in.data);
    m.input("vocab", s->in.vocab);
    m.outputs.push_back(s->in.out.string());
    m.write(manifest_for(s->in.out));
  };
}

Action diagnose_confusion(CLI::App& app) {
  struct S {
    SingleInputs in;
    std::size_t pairs = 100;
    std::uint64_t seed = 0;
  };
  auto s = std::make_shared<S>();
  s->in.add(app);
  app.add_option("--pairs", s->pairs, "number of example pairs");
  app.add_option("--seed", s->seed, "pair sampling seed");
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(s->in.ckpt);
    const Vocab vocab = vocab_for(s->in.vocab, ck);
    const LabeledDataset data = load_for(s->in.data, vocab, ck.manifest.config, err);
    const GradConfusionStats st = gradient_confusion(ck.params, ck.manifest.config, data, s->pairs, s->seed);
    auto csv = open_out(s->in.out);
    csv << "pair_id,cosine\n";
    for (std::size_t i = 0; i < st.pairs.size(); ++i) csv << i << ',' << num(st.pairs[i].cosine) << '\n';
    csv << "mean," << num(st.mean) << '\n';
    csv << "median," << num(st.median) << '\n';
    csv << "min," << num(st.min) << '\n';
    out << st.count() << " pairs (" << st.excluded << " excluded), mean cosine " << num(st.mean) << '\n';
    Manifest m{"diagnose confusion", resolved_options(self)};
    m.input("ckpt", s->in.ckpt);
    m.input("data", s->in.data);
    m.input("vocab", s->in.vocab);
    m.seeds = {s->seed};
    m.config["excluded_pairs"] = st.excluded;
    m.outputs.push_back(s->in.out.string());
    m.write(manifest_for(s->in.out));
  };
}

Action diagnose_perturb(CLI::App& app) {
  struct S {
    SingleInputs in;
    std::string sigmas = "1e-2,1e-4,1e-6,1e-8", site = "last-hidden-cls";
    std::size_t draws = 20, max_examples = 0;
    std::uint64_t seed = 0;
  };
  auto s = std::make_shared<S>();
  s->in.add(app);
  app.add_option("--sigmas", s->sigmas, "comma-separated noise standard deviations");
  app.add_option("--draws", s->draws, "draws per sigma");
  app.add_option("--seed", s->seed, "noise seed");
  app.add_option("--site", s->site, "last-hidden-cls | logits")->check(CLI::IsMember({"last-hidden-cls", "logits"}));
  app.add_option("--max-examples", s->max_examples, "use only the first N examples (0 = all)");
  return [s](const CLI::App& self, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(s->in.ckpt);
    const Vocab vocab = vocab_for(s->in.vocab, ck);
    LabeledDataset data = load_for(s->in.data, vocab, ck.manifest.config, err);
    if (s->max_examples > 0 && data.size() > s->max_examples) data.examples.resize(s->max_examples);
    const PerturbReport r = perturbation_variance(ck.params, ck.manifest.config, data, parse_doubles(s->sigmas),
                                                  s->draws, s->seed, parse_output_site(s->site));
    auto csv = open_out(s->in.out);
    csv << "sigma,mean_dist,std_dist,n_draws\n";
    for (const auto& row : r.rows) {
      csv << num(row.sigma) << ',' << num(row.mean_dist) << ',' << num(row.std_dist) << ',' << row.n_draws << '\n';
      if (row.diverged) err << "warning: sigma " << num(row.sigma) << ": " << row.diverged << " diverged draws\n";
      out << "sigma " << num(row.sigma) << ": mean distance " << num(row.mean_dist) << '\n';
    }
    Manifest m{"diagnose perturb", resolved_options(self)};
    m.input("ckpt", s->in.ckpt);
    m.input("data", s->in.data);
    m.input("vocab", s->in.vocab);
    m.seeds = {s->seed};
    m.outputs.push_back(s->in.out.string());
    m.write(manifest_for(s->in.out));
  };
}

// report ----------------------------------------------------------------------

struct MetricRow {
  std::string run_id, init_mode, metric;
  std::uint64_t seed = 0;
  double value = 0;
};

std::vector<MetricRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "run_id,init_mode,seed,metric,value,n", ErrorKind::kParse, path.string() + ": unexpected header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_list(line, ',');
    require(f.size() == 6, ErrorKind::kParse, path.string() + ": malformed row");
    rows.push_back({f[0], f[1], f[3], std::stoull(f[2]), std::stod(f[4])});
  }
  return rows;
}

Action report(CLI::App& app) {
  struct S {
    std::vector<fs::path> runs;
    fs::path out;
  };
  auto s = std::make_shared<S>();
  app.add_option("runs", s->runs, "run directories (searched recursively for metrics.csv)")->required();
  app.add_option("--out", s->out, "summary CSV")->required();
  return [s](const CLI::App& self, std::ostream& out, std::ostream&) {
    std::vector<fs::path> files;
    for (const auto& root : s->runs) {
      require(fs::is_directory(root), ErrorKind::kInput, root.string() + " is not a directory");
      for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    require(!files.empty(), ErrorKind::kInput, "no runs with metrics.csv found");

    // (task, init_mode, metric) -> values, in file order.
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
    Manifest m{"report", resolved_options(self)};
    for (const auto& f : files) {
      std::string task = f.parent_path().filename().string();
      const fs::path man = f.parent_path() / "manifest.json";
      if (fs::exists(man)) {
        std::ifstream in(man);
        const json j = json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.contains("config") && j["config"].contains("task"))
          task = j["config"]["task"].get<std::string>();
      }
      for (const auto& row : read_metrics(f)) groups[{task, row.init_mode, row.metric}].push_back(row.value);
      m.input(f.string(), f);
    }
    auto csv = open_out(s->out);
    csv << "task,init_mode,metric,mean,std,n_runs\n";
    for (const auto& [key, values] : groups) {
      const double n = static_cast<double>(values.size());
      double mean = 0;
      for (double v : values) mean += v;
      mean /= n;
      double ss = 0;
      for (double v : values) ss += (v - mean) * (v - mean);
      const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
      const auto& [task, mode, metric] = key;
      csv << task << ',' << mode << ',' << metric << ',' << num(mean) << ',' << num(sd) << ',' << values.size()
          << '\n';
      out << task << " / " << mode << ": " << metric << " " << num(mean) << " +- " << num(sd) << " (" << values.size()
          << " runs)\n";
    }
    m.outputs.push_back(s->out.string());
    m.write(manifest_for(s->out));
  };
}

// ---------------------------------------------------------------------------
// Config overlay: --config FILE supplies defaults for the selected command.

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void apply_overlay(CLI::App& cmd, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError("config file " + path.string() + " is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (!opt) throw UsageError("config key '" + key + "' is not an option of " + cmd.get_name());
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else {
      text = value.dump();
    }
    opt->required(false);
    opt->default_val(text);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discipline-transfer testbed: corpora, MLM pretraining, fine-tuning and diagnostics", "xfer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.option_defaults()->always_capture_default();

  std::map<const CLI::App*, Action> actions;
  auto command = [&](CLI::App& parent, const std::string& name, const std::string& help,
                     Action (*make)(CLI::App&)) {
    CLI::App* sub = parent.add_subcommand(name, help);
    sub->option_defaults()->always_capture_default();
    sub->add_option("--config", "JSON file of option defaults (flags still win)");
    actions[sub] = make(*sub);
  };
  command(app, "gen-corpus", "generate a uniform, flat or nesting corpus", gen_corpus);
  command(app, "gen-task", "generate a balanced motif classification dataset", gen_task);
  command(app, "make-map", "build a shift, random, file or inject token mapping", make_map);
  command(app, "remap", "apply a mapping to a dataset or corpus", remap);
  command(app, "pretrain", "masked-LM pretraining", pretrain);
  command(app, "finetune", "fine-tune (scratch | checkpoint | re-emb) and evaluate", finetune_cmd);
  CLI::App* diag = app.add_subcommand("diagnose", "representation and stability diagnostics");
  diag->require_subcommand(1);
  command(*diag, "pwcca", "PWCCA similarity of two checkpoints", diagnose_pwcca);
  command(*diag, "attention", "Hungarian-matched attention distance", diagnose_attention);
  command(*diag, "isometry", "input-output Jacobian singular values", diagnose_isometry);
  command(*diag, "confusion", "pairwise gradient cosines", diagnose_confusion);
  command(*diag, "perturb", "output change under parameter noise", diagnose_perturb);
  command(app, "report", "mean/std of run metrics over seeds", report);

  std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"xfer"} : args;
  try {
    // Locate the selected command and its --config before the real parse so
    // the file can seed defaults that explicit flags then override.
    CLI::App* target = &app;
    std::optional<fs::path> config;
    for (std::size_t i = 1; i < argv_store.size(); ++i) {
      const std::string& a = argv_store[i];
      if (a == "--config" && i + 1 < argv_store.size()) {
        config = argv_store[++i];
      } else if (a.rfind("--config=", 0) == 0) {
        config = a.substr(9);
      } else if (!a.empty() && a[0] != '-') {
        if (CLI::App* sub = target->get_subcommand_no_throw(a)) target = sub;
      }
    }
    if (config) {
      if (!actions.count(target)) throw UsageError("--config needs a command");
      apply_overlay(*target, *config);
    }
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front(); sub;
         sub = sub->get_subcommands().empty() ? nullptr : sub->get_subcommands().front())
      target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const CLI::App* selected = &app;
  while (!selected->get_subcommands().empty()) selected = selected->get_subcommands().front();
  const auto it = actions.find(selected);
  if (it == actions.end()) {
    err << selected->help();
    return 2;
  }
  try {
    it->second(*selected, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace xfer::cli
