#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xfer/graph.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

/// Reserved vocabulary ids shared by every vocabulary and mapping.
namespace special {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;
inline constexpr int kFirstContent = 5;
}  // namespace special

/// Post-LN transformer encoder with learned positions (BERT layout).
struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 64;
  std::size_t max_len = 64;
  double dropout_prob = 0.1;
  std::size_t num_classes = 2;
  bool regression = false;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  void validate() const;
  std::size_t head_width() const noexcept { return regression ? 1 : num_classes; }
  /// True when every encoder and MLM-head shape agrees; the task head may differ.
  bool same_encoder(const ModelConfig& other) const noexcept;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered set of named tensors. The order is the checkpoint payload order.
class Parameters {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const noexcept;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t element_count() const noexcept;

  bool bitwise_equal(const Parameters& other) const noexcept;
  bool all_finite() const noexcept;

 private:
  std::vector<NamedTensor> entries_;
};

namespace names {
inline constexpr std::string_view kTokenEmbedding = "embeddings.token";
inline constexpr std::string_view kPositionEmbedding = "embeddings.position";
inline constexpr std::string_view kEmbeddingNormGain = "embeddings.norm.gain";
inline constexpr std::string_view kEmbeddingNormBias = "embeddings.norm.bias";
inline constexpr std::string_view kMlmWeight = "mlm.weight";
inline constexpr std::string_view kMlmBias = "mlm.bias";
inline constexpr std::string_view kClassifierWeight = "classifier.weight";
inline constexpr std::string_view kClassifierBias = "classifier.bias";
std::string layer(std::size_t index, std::string_view leaf);
}  // namespace names

/// Weights ~ N(0, init_std^2), layer-norm gains 1, biases 0. Each tensor draws
/// from its own stream keyed by name, so head shape changes leave encoder
/// weights untouched.
Parameters init_params(const ModelConfig& config, std::uint64_t seed);

/// Fresh classifier head sized for `config`, replacing any existing one.
void reset_classifier_head(Parameters& params, const ModelConfig& config, std::uint64_t seed);

/// Resamples the token embedding (and optionally the positional embedding);
/// every other tensor is left bitwise unchanged.
Parameters re_embed(const Parameters& params, const ModelConfig& config, std::uint64_t seed,
                    bool include_positions = false);

/// Padded batch. ids and mask are batch_size x seq_len, row-major.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  std::vector<double> labels;
  /// Empty, or batch_size x seq_len with -1 where no prediction is required.
  std::vector<int> mlm_targets;

  void validate(const ModelConfig& config) const;
};

/// Pads the given sequences with PAD to the longest one.
Batch make_batch(std::span<const std::vector<int>* const> sequences, std::vector<double> labels = {});

/// BERT-style masking. Each content position (id >= first content id) is
/// selected with probability `ratio`; selected positions become MASK (80%), a
/// uniform random content token (10%) or stay unchanged (10%).
Batch mask_tokens(const Batch& batch, double ratio, std::size_t vocab_size, Rng& rng);

enum class Head { kMlm, kClassify };

struct ForwardOutput {
  /// hidden[0] is the embedding output, hidden[i] the output of layer i; each
  /// batch x seq_len x hidden_dim.
  std::vector<Tensor> hidden;
  /// MLM: batch x seq_len x vocab. Classify: batch x classes (or batch x 1).
  Tensor logits;
  /// Per layer, batch x heads x seq_len x seq_len when recording.
  std::vector<Tensor> attention;
};

/// Eval-mode forward (no dropout); a pure function of its arguments.
ForwardOutput forward(const Parameters& params, const ModelConfig& config, const Batch& batch, Head head,
                      bool record_attention = false);

// Graph-level building blocks used by training and diagnostics.

struct BoundParameters {
  const Parameters* source = nullptr;
  std::vector<Var> vars;
  Var get(std::string_view name) const;
};

BoundParameters bind_parameters(Graph& g, const Parameters& params, bool requires_grad);

struct ForwardContext {
  bool training = false;
  Rng* dropout_rng = nullptr;
  bool record_attention = false;
};

struct EncoderTrace {
  /// (batch * seq_len) x hidden_dim nodes, embedding output first.
  std::vector<Var> hidden;
  std::vector<Tensor> attention;
  /// Token-embedding lookup before positions are added.
  Var token_embeddings;
};

/// Runs the encoder. When `token_embeddings` is given it replaces the lookup
/// of the token embedding table, which lets callers differentiate with respect
/// to the input embeddings.
EncoderTrace encode(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
                    const ForwardContext& ctx, std::optional<Var> token_embeddings = std::nullopt);

Var mlm_logits(Graph& g, const BoundParameters& p, Var hidden_rows);
/// Classifier logits from each sequence's position-0 hidden state.
Var classifier_logits(Graph& g, const BoundParameters& p, const Batch& batch, Var last_hidden);

/// Mean cross-entropy over positions with an MLM target.
Var mlm_loss(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
             const ForwardContext& ctx);
/// Cross-entropy (classification) or squared error (regression) on batch labels.
Var task_loss(Graph& g, const BoundParameters& p, const ModelConfig& config, const Batch& batch,
              const ForwardContext& ctx);

}  // namespace xfer
