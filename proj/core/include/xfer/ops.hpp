#pragma once

#include <cstdint>
#include <span>

#include "xfer/graph.hpp"
#include "xfer/rng.hpp"

// Differentiable primitives. Every op validates shapes, computes its value
// eagerly, and records a vector-Jacobian product on the graph.
namespace xfer::ops {

Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);
Var sum(Graph& g, Var a);
Var reshape(Graph& g, Var a, Shape shape);
Var tanh(Graph& g, Var a);

/// (m x k) * (k x n).
Var matmul(Graph& g, Var a, Var b);
/// x (n x in) * w (in x out) + bias (out), broadcast over rows.
Var linear(Graph& g, Var x, Var w, Var bias);

/// Rows of `table` (rows x d) gathered by id.
Var embedding(Graph& g, Var table, std::span<const int> ids);
/// Rows of x picked by index; repeated indices are allowed.
Var select_rows(Graph& g, Var x, std::span<const std::size_t> rows);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Graph& g, Var x);
/// Normalises each row over its last dimension.
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps);
/// Inverted dropout; identity when p == 0.
Var dropout(Graph& g, Var x, double p, Rng& rng);

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
};

/// Scaled dot-product self-attention over (batch * seq_len) x d projections.
///
/// `key_mask` is batch x seq_len with 1 for real tokens; masked keys receive
/// exactly zero probability. When `probs_out` is non-null it receives the
/// batch x heads x seq_len x seq_len probabilities.
Var attention(Graph& g, Var q, Var k, Var v, AttentionShape shape, std::span<const std::uint8_t> key_mask,
              Tensor* probs_out = nullptr);

/// Mean softmax cross-entropy over rows with target >= 0; rows with a
/// negative target are ignored. Zero when no row has a target.
Var cross_entropy(Graph& g, Var logits, std::span<const int> targets);
/// Mean squared error of an n x 1 (or n) prediction.
Var mse(Graph& g, Var prediction, std::span<const double> targets);

}  // namespace xfer::ops
