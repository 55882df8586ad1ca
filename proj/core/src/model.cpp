#include "xfer/model.hpp"

#include <algorithm>
#include <cstring>

#include "xfer/digest.hpp"
#include "xfer/error.hpp"
#include "xfer/ops.hpp"

namespace xfer {

void ModelConfig::validate() const {
  require(num_layers >= 1, ErrorKind::kConfig, "num_layers must be >= 1");
  require(num_heads >= 1 && hidden_dim % num_heads == 0, ErrorKind::kConfig,
          "hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
  require(ffn_dim >= 1, ErrorKind::kConfig, "ffn_dim must be >= 1");
  require(vocab_size >= static_cast<std::size_t>(special::kFirstContent) + 1, ErrorKind::kConfig,
          "vocab_size must leave room for at least one content token");
  require(max_len >= 2, ErrorKind::kConfig, "max_len must be >= 2");
  require(dropout_prob >= 0.0 && dropout_prob < 1.0, ErrorKind::kConfig, "dropout_prob must lie in [0, 1)");
  require(regression || num_classes >= 2, ErrorKind::kConfig, "classification needs at least two classes");
  require(layer_norm_eps > 0.0 && init_std > 0.0, ErrorKind::kConfig, "layer_norm_eps and init_std must be positive");
}

bool ModelConfig::same_encoder(const ModelConfig& o) const noexcept {
  return num_layers == o.num_layers && hidden_dim == o.hidden_dim && num_heads == o.num_heads &&
         ffn_dim == o.ffn_dim && vocab_size == o.vocab_size && max_len == o.max_len;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},     {"ffn_dim", c.ffn_dim},
                     {"vocab_size", c.vocab_size},   {"max_len", c.max_len},
                     {"dropout_prob", c.dropout_prob}, {"num_classes", c.num_classes},
                     {"regression", c.regression},   {"layer_norm_eps", c.layer_norm_eps},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("num_heads").get_to(c.num_heads);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_len").get_to(c.max_len);
  j.at("dropout_prob").get_to(c.dropout_prob);
  j.at("num_classes").get_to(c.num_classes);
  j.at("regression").get_to(c.regression);
  j.at("layer_norm_eps").get_to(c.layer_norm_eps);
  j.at("init_std").get_to(c.init_std);
}

// ---------------------------------------------------------------------------
// Parameters

void Parameters::add(std::string name, Tensor value) {
  require(!contains(name), ErrorKind::kContract, "duplicate parameter " + name);
  entries_.push_back({std::move(name), std::move(value)});
}

bool Parameters::contains(std::string_view name) const noexcept {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t Parameters::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  fail(ErrorKind::kIndex, "no parameter named " + std::string(name));
}

Tensor& Parameters::at(std::string_view name) { return entries_[index_of(name)].value; }
const Tensor& Parameters::at(std::string_view name) const { return entries_[index_of(name)].value; }

std::size_t Parameters::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool Parameters::bitwise_equal(const Parameters& other) const noexcept {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].value.bitwise_equal(other.entries_[i].value)) return false;
  }
  return true;
}

bool Parameters::all_finite() const noexcept {
  return std::all_of(entries_.begin(), entries_.end(), [](const NamedTensor& e) { return e.value.all_finite(); });
}

std::string names::layer(std::size_t index, std::string_view leaf) {
  return "layer" + std::to_string(index) + "." + std::string(leaf);
}

// ---------------------------------------------------------------------------
// Initialisation

namespace {

Tensor gaussian(Shape shape, double stddev, std::uint64_t seed, std::string_view name) {
  Rng rng = Rng(seed).split(stream::kInit).split(fnv1a64(name));
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal(0.0, stddev);
  return t;
}

void add_linear(Parameters& p, const std::string& prefix, std::size_t in, std::size_t out, double stddev,
                std::uint64_t seed) {
  p.add(prefix + ".weight", gaussian({in, out}, stddev, seed, prefix + ".weight"));
  p.add(prefix + ".bias", Tensor({out}, 0.0));
}

void add_norm(Parameters& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".gain", Tensor({d}, 1.0));
  p.add(prefix + ".bias", Tensor({d}, 0.0));
}

}  // namespace

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.hidden_dim;
  const double sd = config.init_std;
  Parameters p;
  p.add(std::string(names::kTokenEmbedding),
        gaussian({config.vocab_size, d}, sd, seed, names::kTokenEmbedding));
  p.add(std::string(names::kPositionEmbedding),
        gaussian({config.max_len, d}, sd, seed, names::kPositionEmbedding));
  add_norm(p, "embeddings.norm", d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    add_linear(p, names::layer(l, "attn.query"), d, d, sd, seed);
    add_linear(p, names::layer(l, "attn.key"), d, d, sd, seed);
    add_linear(p, names::layer(l, "attn.value"), d, d, sd, seed);
    add_linear(p, names::layer(l, "attn.output"), d, d, sd, seed);
    add_norm(p, names::layer(l, "attn.norm"), d);
    add_linear(p, names::layer(l, "ffn.in"), d, config.ffn_dim, sd, seed);
    add_linear(p, names::layer(l, "ffn.out"), config.ffn_dim, d, sd, seed);
    add_norm(p, names::layer(l, "ffn.norm"), d);
  }
  add_linear(p, "mlm", d, config.vocab_size, sd, seed);
  add_linear(p, "classifier", d, config.head_width(), sd, seed);
  return p;
}

void reset_classifier_head(Parameters& params, const ModelConfig& config, std::uint64_t seed) {
  Tensor w = gaussian({config.hidden_dim, config.head_width()}, config.init_std, Rng(seed).split(stream::kHead).seed(),
                      names::kClassifierWeight);
  Tensor b({config.head_width()}, 0.0);
  if (params.contains(names::kClassifierWeight)) {
    params.at(names::kClassifierWeight) = std::move(w);
    params.at(names::kClassifierBias) = std::move(b);
  } else {
    params.add(std::string(names::kClassifierWeight), std::move(w));
    params.add(std::string(names::kClassifierBias), std::move(b));
  }
}

Parameters re_embed(const Parameters& params, const ModelConfig& config, std::uint64_t seed, bool include_positions) {
  Parameters out = params;
  const std::uint64_t key = Rng(seed).split(stream::kReembed).seed();
  auto& tok = out.at(names::kTokenEmbedding);
  tok = gaussian(tok.shape(), config.init_std, key, names::kTokenEmbedding);
  if (include_positions) {
    auto& pos = out.at(names::kPositionEmbedding);
    pos = gaussian(pos.shape(), config.init_std, key, names::kPositionEmbedding);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches

void Batch::validate(const ModelConfig& config) const {
  require(batch_size > 0 && seq_len > 0, ErrorKind::kInput, "empty batch");
  require(ids.size() == batch_size * seq_len && mask.size() == ids.size(), ErrorKind::kDimension,
          "batch ids/mask size differs from batch_size x seq_len");
  require(seq_len <= config.max_len, ErrorKind::kLength,
          "sequence length " + std::to_string(seq_len) + " exceeds max_len " + std::to_string(config.max_len));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < config.vocab_size, ErrorKind::kIndex,
            "token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(config.vocab_size));
    require(mask[i] <= 1, ErrorKind::kInput, "attention mask must be 0/1");
  }
  require(mlm_targets.empty() || mlm_targets.size() == ids.size(), ErrorKind::kDimension,
          "mlm target size differs from ids");
}

Batch make_batch(std::span<const std::vector<int>* const> sequences, std::vector<double> labels) {
  require(!sequences.empty(), ErrorKind::kInput, "cannot batch zero sequences");
  Batch b;
  b.batch_size = sequences.size();
  for (const auto* s : sequences) {
    require(!s->empty(), ErrorKind::kInput, "empty sequence in batch");
    b.seq_len = std::max(b.seq_len, s->size());
  }
  b.ids.assign(b.batch_size * b.seq_len, special::kPad);
  b.mask.assign(b.ids.size(), 0);
  for (std::size_t i = 0; i < b.batch_size; ++i) {
    const auto& s = *sequences[i];
    std::copy(s.begin(), s.end(), b.ids.begin() + i * b.seq_len);
    std::fill_n(b.mask.begin() + i * b.seq_len, s.size(), 1);
  }
  require(labels.empty() || labels.size() == b.batch_size, ErrorKind::kDimension, "label count differs from batch");
  b.labels = std::move(labels);
  return b;
}

Batch mask_tokens(const Batch& batch, double ratio, std::size_t vocab_size, Rng& rng) {
  require(ratio >= 0.0 && ratio <= 1.0, ErrorKind::kConfig, "mask ratio must lie in [0, 1]");
  require(vocab_size > static_cast<std::size_t>(special::kFirstContent), ErrorKind::kConfig,
          "vocabulary has no content tokens");
  Batch out = batch;
  out.mlm_targets.assign(batch.ids.size(), -1);
  if (ratio == 0.0) {
    out.mlm_targets.clear();
    return out;
  }
  const auto content = vocab_size - static_cast<std::size_t>(special::kFirstContent);
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (!batch.mask[i] || batch.ids[i] < special::kFirstContent) continue;
    if (!rng.bernoulli(ratio)) continue;
    out.mlm_targets[i] = batch.ids[i];
    const double action = rng.uniform();
    if (action < 0.8) {
      out.ids[i] = special::kMask;
    } else if (action < 0.9) {
      out.ids[i] = special::kFirstContent + static_cast<int>(rng.uniform_int(content));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

Var BoundParameters::get(std::string_view name) const { return vars[source->index_of(name)]; }

BoundParameters bind_parameters(Graph& g, const Parameters& params, bool requires_grad) {
  BoundParameters b;
  b.source = &params;
  b.vars.reserve(params.size());
  for (const auto& e : params.entries()) b.vars.push_back(g.leaf(e.value, requires_grad));
  return b;
}

namespace {

Var maybe_dropout(Graph& g, Var x, const ModelConfig& config, const ForwardContext& ctx) {
  if (!ctx.training || config.dropout_prob == 0.0) return x;
  require(ctx.dropout_rng != nullptr, ErrorKind::kContract, "training forward needs a dropout generator");
  return ops::dropout(g, x, config.dropout_prob, *ctx.dropout_rng);
}

Var dense(Graph& g, const BoundParameters& p, Var x, const std::string& prefix) {
  return ops::linear(g, x, p.get(prefix + ".weight"), p.get(prefix + ".bias"));
}

Var norm(Graph& g, const BoundParameters& p, Var x, const std::string& prefix, double eps) {
  return ops::layer_norm(g, x, p.get(prefix + ".gain"), p.get(prefix + ".bias"), eps);
}

}  // namespace

EncoderTrace encode(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
                    const ForwardContext& ctx, std::optional<Var> token_embeddings) {
  batch.validate(config);
  const std::size_t B = batch.batch_size, L = batch.seq_len, d = config.hidden_dim;
  EncoderTrace trace;
  if (token_embeddings) {
    require(g.value(*token_embeddings).shape() == Shape{B * L, d}, ErrorKind::kDimension,
            "token embedding override must be (batch * seq_len) x hidden_dim");
    trace.token_embeddings = *token_embeddings;
  } else {
    trace.token_embeddings = ops::embedding(g, p.get(names::kTokenEmbedding), batch.ids);
  }
  std::vector<int> positions(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) positions[b * L + t] = static_cast<int>(t);
  Var pos = ops::embedding(g, p.get(names::kPositionEmbedding), positions);
  Var x = ops::add(g, trace.token_embeddings, pos);
  x = norm(g, p, x, "embeddings.norm", config.layer_norm_eps);
  x = maybe_dropout(g, x, config, ctx);
  trace.hidden.push_back(x);

  const ops::AttentionShape shape{B, L, config.num_heads};
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    Var q = dense(g, p, x, names::layer(l, "attn.query"));
    Var k = dense(g, p, x, names::layer(l, "attn.key"));
    Var v = dense(g, p, x, names::layer(l, "attn.value"));
    Tensor probs;
    Var context = ops::attention(g, q, k, v, shape, batch.mask, ctx.record_attention ? &probs : nullptr);
    if (ctx.record_attention) trace.attention.push_back(std::move(probs));
    Var attn = maybe_dropout(g, dense(g, p, context, names::layer(l, "attn.output")), config, ctx);
    Var h = norm(g, p, ops::add(g, x, attn), names::layer(l, "attn.norm"), config.layer_norm_eps);
    Var f = ops::gelu(g, dense(g, p, h, names::layer(l, "ffn.in")));
    f = maybe_dropout(g, dense(g, p, f, names::layer(l, "ffn.out")), config, ctx);
    x = norm(g, p, ops::add(g, h, f), names::layer(l, "ffn.norm"), config.layer_norm_eps);
    trace.hidden.push_back(x);
  }
  return trace;
}

Var mlm_logits(Graph& g, const BoundParameters& p, Var hidden_rows) {
  return ops::linear(g, hidden_rows, p.get(names::kMlmWeight), p.get(names::kMlmBias));
}

Var classifier_logits(Graph& g, const BoundParameters& p, const Batch& batch, Var last_hidden) {
  std::vector<std::size_t> cls_rows(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    require(batch.ids[b * batch.seq_len] == special::kCls, ErrorKind::kContract,
            "classification input " + std::to_string(b) + " does not start with CLS");
    cls_rows[b] = b * batch.seq_len;
  }
  Var pooled = ops::select_rows(g, last_hidden, cls_rows);
  return ops::linear(g, pooled, p.get(names::kClassifierWeight), p.get(names::kClassifierBias));
}

Var mlm_loss(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
             const ForwardContext& ctx) {
  require(batch.mlm_targets.size() == batch.ids.size(), ErrorKind::kContract, "batch carries no MLM targets");
  EncoderTrace trace = encode(g, p, config, batch, ctx);
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < batch.mlm_targets.size(); ++i) {
    if (batch.mlm_targets[i] < 0) continue;
    rows.push_back(i);
    targets.push_back(batch.mlm_targets[i]);
  }
  if (rows.empty()) return g.constant(Tensor::scalar(0.0));
  Var selected = ops::select_rows(g, trace.hidden.back(), rows);
  return ops::cross_entropy(g, mlm_logits(g, p, selected), targets);
}

Var task_loss(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
              const ForwardContext& ctx) {
  require(batch.labels.size() == batch.batch_size, ErrorKind::kContract, "batch carries no labels");
  EncoderTrace trace = encode(g, p, config, batch, ctx);
  Var logits = classifier_logits(g, p, batch, trace.hidden.back());
  if (config.regression) return ops::mse(g, logits, batch.labels);
  std::vector<int> targets(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const double y = batch.labels[b];
    require(y >= 0.0 && y < static_cast<double>(config.num_classes) && y == static_cast<double>(static_cast<int>(y)),
            ErrorKind::kLabel, "class label " + std::to_string(y) + " outside [0, num_classes)");
    targets[b] = static_cast<int>(y);
  }
  return ops::cross_entropy(g, logits, targets);
}

ForwardOutput forward(const Parameters& params, const ModelConfig& config, const Batch& batch, Head head,
                      bool record_attention) {
  Graph g;
  BoundParameters p = bind_parameters(g, params, false);
  ForwardContext ctx;
  ctx.record_attention = record_attention;
  EncoderTrace trace = encode(g, p, config, batch, ctx);
  const std::size_t B = batch.batch_size, L = batch.seq_len, d = config.hidden_dim;
  ForwardOutput out;
  for (Var h : trace.hidden) out.hidden.push_back(g.value(h).reshaped({B, L, d}));
  if (head == Head::kMlm) {
    out.logits = g.value(mlm_logits(g, p, trace.hidden.back())).reshaped({B, L, config.vocab_size});
  } else {
    out.logits = g.value(classifier_logits(g, p, batch, trace.hidden.back()));
  }
  out.attention = std::move(trace.attention);
  return out;
}

}  // namespace xfer
