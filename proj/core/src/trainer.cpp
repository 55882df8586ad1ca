#include "xfer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "xfer/error.hpp"
#include "xfer/graph.hpp"
#include "xfer/rng.hpp"

namespace xfer {

std::string_view to_string(InitMode mode) noexcept {
  switch (mode) {
    case InitMode::kScratch: return "scratch";
    case InitMode::kCheckpoint: return "checkpoint";
    case InitMode::kReEmbed: return "re-emb";
  }
  return "?";
}

InitMode parse_init_mode(std::string_view text) {
  for (auto m : {InitMode::kScratch, InitMode::kCheckpoint, InitMode::kReEmbed}) {
    if (to_string(m) == text) return m;
  }
  fail(ErrorKind::kConfig, "unknown init mode '" + std::string(text) + "'");
}

std::string_view to_string(Selection selection) noexcept {
  return selection == Selection::kFinal ? "final" : "best-valid";
}

Selection parse_selection(std::string_view text) {
  if (text == "final") return Selection::kFinal;
  if (text == "best-valid") return Selection::kBestValid;
  fail(ErrorKind::kConfig, "unknown checkpoint selection '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  require(lr > 0 && std::isfinite(lr), ErrorKind::kConfig, "lr must be positive");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(total_steps >= 1, ErrorKind::kConfig, "total_steps must be set (>= 1)");
  require(subset_fraction > 0.0 && subset_fraction <= 1.0, ErrorKind::kConfig, "subset_fraction must lie in (0, 1]");
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, ErrorKind::kConfig, "mask_ratio must lie in [0, 1]");
  require(log_every >= 1 && eval_every >= 1, ErrorKind::kConfig, "log_every and eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"total_steps", c.total_steps},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"seed", c.seed},
                     {"subset_fraction", c.subset_fraction},
                     {"init_mode", to_string(c.init_mode)},
                     {"selection", to_string(c.selection)},
                     {"mask_ratio", c.mask_ratio},
                     {"log_every", c.log_every},
                     {"eval_every", c.eval_every},
                     {"reembed_positions", c.reembed_positions},
                     {"metric", c.metric ? nlohmann::json(to_string(*c.metric)) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.seed = j.value("seed", c.seed);
  c.subset_fraction = j.value("subset_fraction", c.subset_fraction);
  if (j.contains("init_mode")) c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.log_every = j.value("log_every", c.log_every);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.reembed_positions = j.value("reembed_positions", c.reembed_positions);
  if (j.contains("metric") && !j.at("metric").is_null()) c.metric = parse_metric(j.at("metric").get<std::string>());
}

double LossCurve::train_at(std::size_t step) const {
  for (const auto& [s, v] : train) {
    if (s == step) return v;
  }
  fail(ErrorKind::kIndex, "no training-loss point logged at step " + std::to_string(step));
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Seeded per-epoch shuffle over [0, n), ragged last batch.
class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::size_t batch_size, Rng rng) : n_(n), batch_(batch_size), rng_(rng) {}

  std::vector<std::size_t> next() {
    if (pos_ >= order_.size()) {
      order_ = rng_.permutation(n_);
      pos_ = 0;
    }
    const std::size_t take = std::min(batch_, order_.size() - pos_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
    pos_ += take;
    return out;
  }

 private:
  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Accumulates batch losses into windowed curve points.
class CurveLogger {
 public:
  CurveLogger(LossCurve& curve, std::size_t every) : curve_(curve), every_(every) {}
  void add(std::size_t step, double loss, bool last) {
    sum_ += loss;
    ++count_;
    if (step % every_ == 0 || last) {
      curve_.train.emplace_back(step, sum_ / static_cast<double>(count_));
      sum_ = 0;
      count_ = 0;
    }
  }

 private:
  LossCurve& curve_;
  std::size_t every_;
  double sum_ = 0;
  std::size_t count_ = 0;
};

/// Forward + backward; returns the loss and fills grads.
template <typename LossFn>
double gradient_step(const Parameters& params, std::vector<Tensor>& grads, LossFn&& loss_fn) {
  Graph g;
  BoundParameters bp = bind_parameters(g, params, true);
  Var loss = loss_fn(g, bp);
  const double value = g.value(loss).item();
  require(std::isfinite(value), ErrorKind::kDivergence, "loss became non-finite");
  g.backward(loss);
  grads.clear();
  grads.reserve(bp.vars.size());
  for (Var v : bp.vars) grads.push_back(g.grad(v));
  return value;
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const LossCurve& curve) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << "step,loss\n";
  for (const auto& [s, v] : curve.train) out << s << ',' << fmt(v) << '\n';
}

void write_metrics_csv(const std::filesystem::path& path, std::string_view run_id,
                       const std::vector<MetricReport>& reports) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << "run_id,init_mode,seed,metric,value,n\n";
  for (const auto& r : reports) {
    out << run_id << ',' << r.init_mode << ',' << r.seed << ',' << to_string(r.metric) << ',' << fmt(r.value) << ','
        << r.n << '\n';
  }
}

PretrainResult pretrain_mlm(const Corpus& corpus, const ModelConfig& config, const TrainConfig& train,
                            std::string vocab_hash, const StepCallback& on_step) {
  config.validate();
  train.validate();
  require(!corpus.lines.empty(), ErrorKind::kInput, "pretraining corpus is empty");

  const std::size_t budget = config.max_len - 2;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.lines.size());
  for (const auto& line : corpus.lines) {
    require(!line.empty(), ErrorKind::kInput, "empty corpus line");
    std::vector<int> s;
    s.reserve(std::min(line.size(), budget) + 2);
    s.push_back(special::kCls);
    s.insert(s.end(), line.begin(), line.begin() + static_cast<std::ptrdiff_t>(std::min(line.size(), budget)));
    s.push_back(special::kSep);
    seqs.push_back(std::move(s));
  }

  const Rng root(train.seed);
  Parameters params = init_params(config, train.seed);
  Adam adam(params, train.adam());
  BatchOrder order(seqs.size(), train.batch_size, root.split(stream::kData));
  Rng mask_rng = root.split(stream::kMask);
  Rng dropout_rng = root.split(stream::kDropout);

  PretrainResult result;
  CurveLogger logger(result.curve, train.log_every);
  std::vector<Tensor> grads;
  std::vector<const std::vector<int>*> rows;
  for (std::size_t step = 1; step <= train.total_steps; ++step) {
    rows.clear();
    for (auto i : order.next()) rows.push_back(&seqs[i]);
    Batch batch = mask_tokens(make_batch(rows), train.mask_ratio, config.vocab_size, mask_rng);
    ForwardContext ctx{true, &dropout_rng, false};
    const double loss = gradient_step(params, grads, [&](Graph& g, const BoundParameters& bp) {
      return mlm_loss(g, bp, config, batch, ctx);
    });
    adam.step(params, grads);
    logger.add(step, loss, step == train.total_steps);
    if (on_step) on_step(step, loss);
  }
  require(params.all_finite(), ErrorKind::kDivergence, "parameters became non-finite");

  result.checkpoint.params = std::move(params);
  auto& m = result.checkpoint.manifest;
  m.config = config;
  m.vocab_hash = std::move(vocab_hash);
  nlohmann::json tj = train;
  m.provenance = {{"stage", "pretrain"}, {"train", tj}, {"corpus_lines", corpus.lines.size()},
                  {"corpus_tokens", corpus.token_count()}};
  return result;
}

std::vector<std::size_t> subset_indices(const LabeledDataset& data, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::kConfig, "subset fraction must lie in (0, 1]");
  const std::size_t n = data.size();
  require(n > 0, ErrorKind::kInput, "cannot subsample an empty dataset");
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9)));
  Rng rng = Rng(seed).split(stream::kSubset);
  if (data.label_kind != LabelKind::kClass) {
    auto order = rng.permutation(n);
    order.resize(k);
    return order;
  }
  // Largest-remainder allocation of k across classes, then a seeded prefix of
  // each class's shuffled members.
  std::map<long long, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<long long>(data.examples[i].label)].push_back(i);
  std::vector<std::size_t> quota;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0, c = 0;
  for (const auto& [label, members] : by_class) {
    const double exact = static_cast<double>(k) * static_cast<double>(members.size()) / static_cast<double>(n);
    const auto q = static_cast<std::size_t>(std::floor(exact));
    quota.push_back(q);
    remainders.emplace_back(exact - static_cast<double>(q), c++);
    assigned += q;
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < k; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];
  std::vector<std::size_t> out;
  c = 0;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    const std::size_t take = std::min(quota[c++], members.size());
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  rng.shuffle(out);
  return out;
}

Batch make_example_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  std::vector<const std::vector<int>*> rows;
  std::vector<double> labels;
  rows.reserve(indices.size());
  labels.reserve(indices.size());
  for (auto i : indices) {
    rows.push_back(&data.examples.at(i).ids);
    labels.push_back(data.examples[i].label);
  }
  return make_batch(rows, std::move(labels));
}

MetricKind default_metric(const LabeledDataset& data) noexcept {
  return data.label_kind == LabelKind::kScalar ? MetricKind::kSpearman : MetricKind::kAccuracy;
}

std::vector<double> predict(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                            std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_example_batch(data, idx);
    const Tensor logits = forward(params, config, batch, Head::kClassify).logits;
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      if (config.regression) {
        out.push_back(logits(b, 0));
        continue;
      }
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits(b, c) > logits(b, best)) best = c;
      }
      out.push_back(static_cast<double>(best));
    }
  }
  return out;
}

double dataset_loss(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                    std::size_t batch_size) {
  require(!data.empty(), ErrorKind::kInput, "cannot compute the loss of an empty dataset");
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_example_batch(data, idx);
    Graph g;
    BoundParameters bp = bind_parameters(g, params, false);
    const double mean = g.value(task_loss(g, bp, config, batch, ForwardContext{})).item();
    total += mean * static_cast<double>(batch.batch_size);
  }
  return total / static_cast<double>(data.size());
}

Parameters initial_finetune_params(const ModelConfig& config, const TrainConfig& train, const Checkpoint* pretrained) {
  Parameters params;
  if (train.init_mode == InitMode::kScratch) {
    params = init_params(config, train.seed);
  } else {
    require(pretrained != nullptr, ErrorKind::kCompatibility,
            std::string(to_string(train.init_mode)) + " mode needs a pretrained checkpoint");
    require(pretrained->manifest.config.same_encoder(config), ErrorKind::kCompatibility,
            "checkpoint encoder configuration does not match the fine-tuning model");
    params = pretrained->params;
    if (train.init_mode == InitMode::kReEmbed) params = re_embed(params, config, train.seed, train.reembed_positions);
  }
  reset_classifier_head(params, config, train.seed);
  return params;
}

FinetuneResult finetune(const DatasetSplits& splits, const ModelConfig& config, const TrainConfig& train,
                        const Checkpoint* pretrained, const StepCallback& on_step) {
  config.validate();
  train.validate();
  require(!splits.train.empty(), ErrorKind::kInput, "training split is empty");
  require(!splits.test.empty(), ErrorKind::kInput, "test split is empty");
  for (const auto* part : {&splits.train, &splits.valid, &splits.test}) part->validate(config.vocab_size);
  require((splits.train.label_kind == LabelKind::kScalar) == config.regression, ErrorKind::kConfig,
          "dataset label kind does not match the model head");
  if (!config.regression) {
    require(splits.train.num_classes <= config.num_classes, ErrorKind::kConfig,
            "dataset has more classes than the classifier head");
  }
  const MetricKind metric = train.metric.value_or(default_metric(splits.train));

  const auto chosen = subset_indices(splits.train, train.subset_fraction, train.seed);
  const LabeledDataset train_set = splits.train.subset(chosen);

  Parameters params = initial_finetune_params(config, train, pretrained);
  const Rng root(train.seed);
  Adam adam(params, train.adam());
  BatchOrder order(train_set.size(), train.batch_size, root.split(stream::kData));
  Rng dropout_rng = root.split(stream::kDropout);

  FinetuneResult result;
  result.train_examples = train_set.size();
  CurveLogger logger(result.curve, train.log_every);
  const bool track_best = train.selection == Selection::kBestValid && !splits.valid.empty();
  Parameters best = params;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  auto score_valid = [&](std::size_t step) {
    const auto preds = predict(params, config, splits.valid);
    const double score = compute_metric(metric, preds, splits.valid.labels());
    result.curve.valid.emplace_back(step, score);
    if (track_best && score > best_score) {
      best_score = score;
      best = params;
      best_step = step;
    }
  };

  std::vector<Tensor> grads;
  for (std::size_t step = 1; step <= train.total_steps; ++step) {
    const auto idx = order.next();
    const Batch batch = make_example_batch(train_set, idx);
    ForwardContext ctx{true, &dropout_rng, false};
    const double loss = gradient_step(params, grads, [&](Graph& g, const BoundParameters& bp) {
      return task_loss(g, bp, config, batch, ctx);
    });
    adam.step(params, grads);
    logger.add(step, loss, step == train.total_steps);
    if (on_step) on_step(step, loss);
    if (!splits.valid.empty() && (step % train.eval_every == 0 || step == train.total_steps)) score_valid(step);
  }
  require(params.all_finite(), ErrorKind::kDivergence, "parameters became non-finite");

  if (track_best) {
    params = std::move(best);
    result.selected_step = best_step;
  } else {
    result.selected_step = train.total_steps;
  }

  const std::string mode(to_string(train.init_mode));
  auto report = [&](const LabeledDataset& part) {
    MetricReport r;
    r.metric = metric;
    r.n = part.size();
    r.seed = train.seed;
    r.init_mode = mode;
    if (!part.empty()) r.value = compute_metric(metric, predict(params, config, part), part.labels());
    return r;
  };
  result.valid = report(splits.valid);
  result.test = report(splits.test);

  result.checkpoint.params = std::move(params);
  auto& m = result.checkpoint.manifest;
  m.config = config;
  m.vocab_hash = splits.train.vocab_hash;
  nlohmann::json tj = train;
  m.provenance = {{"stage", "finetune"},
                  {"init_mode", mode},
                  {"train", tj},
                  {"train_examples", result.train_examples},
                  {"selected_step", result.selected_step}};
  if (pretrained && train.init_mode != InitMode::kScratch) m.provenance["pretrained"] = pretrained->manifest.provenance;
  return result;
}

}  // namespace xfer
