#include "xfer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "xfer/error.hpp"

namespace xfer::ops {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
}

void axpy(Tensor& dst, const Tensor& src, double alpha = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

std::size_t row_width(const Tensor& t) { return t.shape().back(); }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using HeadView = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstHeadView = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

/// rows x cols block of a row-major matrix whose rows are `stride` apart.
HeadView head_view(double* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return HeadView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                  Eigen::OuterStride<>(static_cast<Eigen::Index>(stride)));
}
ConstHeadView head_view(const double* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return ConstHeadView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(stride)));
}
ConstHeadView square_view(const double* p, std::size_t n) { return head_view(p, n, n, n); }

}  // namespace

Var add(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  same_shape(av, bv, "add");
  Tensor out = av + bv;
  return g.record(OpKind::kAdd, std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    if (gr.requires_grad(a)) axpy(gr.grad_buffer(a), dy);
    if (gr.requires_grad(b)) axpy(gr.grad_buffer(b), dy);
  });
}

Var mul(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record(OpKind::kMul, std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    const auto& av = gr.value(a);
    const auto& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * av[i];
    }
  });
}

Var scale(Graph& g, Var a, double factor) {
  Tensor out = factor * g.value(a);
  return g.record(OpKind::kScale, std::move(out), {a},
                  [a, factor](Graph& gr, const Tensor& dy) { axpy(gr.grad_buffer(a), dy, factor); });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double x : g.value(a).data()) s += x;
  return g.record(OpKind::kSum, Tensor::scalar(s), {a}, [a](Graph& gr, const Tensor& dy) {
    auto& ga = gr.grad_buffer(a);
    const double d = dy[0];
    for (auto& x : ga.data()) x += d;
  });
}

Var reshape(Graph& g, Var a, Shape shape) {
  Tensor out = g.value(a).reshaped(std::move(shape));
  return g.record(OpKind::kReshape, std::move(out), {a}, [a](Graph& gr, const Tensor& dy) {
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
  });
}

Var tanh(Graph& g, Var a) {
  Tensor out = g.value(a);
  for (auto& x : out.data()) x = std::tanh(x);
  Tensor kept = out;
  return g.record(OpKind::kTanh, std::move(out), {a}, [a, kept = std::move(kept)](Graph& gr, const Tensor& dy) {
    auto ga = gr.grad_buffer(a).data();
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * (1.0 - kept[i] * kept[i]);
  });
}

Var matmul(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  Tensor out = xfer::matmul(av, bv);
  return g.record(OpKind::kMatmul, std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    const auto& av = gr.value(a);
    const auto& bv = gr.value(b);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (gr.requires_grad(a)) {
      kernels::gemm(false, true, m, k, n, 1.0, dy.data().data(), bv.data().data(), 1.0,
                    gr.grad_buffer(a).data().data());
    }
    if (gr.requires_grad(b)) {
      kernels::gemm(true, false, k, n, m, 1.0, av.data().data(), dy.data().data(), 1.0,
                    gr.grad_buffer(b).data().data());
    }
  });
}

Var linear(Graph& g, Var x, Var w, Var bias) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  const auto& bv = g.value(bias);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.cols() == wv.rows(), ErrorKind::kDimension,
          "linear: input " + shape_string(xv.shape()) + " incompatible with weight " + shape_string(wv.shape()));
  require(bv.size() == wv.cols(), ErrorKind::kDimension, "linear: bias length differs from output width");
  const std::size_t n = xv.rows(), in = xv.cols(), out_w = wv.cols();
  Tensor out({n, out_w});
  for (std::size_t r = 0; r < n; ++r) std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + r * out_w);
  kernels::gemm(false, false, n, out_w, in, 1.0, xv.data().data(), wv.data().data(), 1.0, out.data().data());
  return g.record(OpKind::kLinear, std::move(out), {x, w, bias}, [x, w, bias](Graph& gr, const Tensor& dy) {
    const auto& xv = gr.value(x);
    const auto& wv = gr.value(w);
    const std::size_t n = xv.rows(), in = xv.cols(), out_w = wv.cols();
    if (gr.requires_grad(x)) {
      kernels::gemm(false, true, n, in, out_w, 1.0, dy.data().data(), wv.data().data(), 1.0,
                    gr.grad_buffer(x).data().data());
    }
    if (gr.requires_grad(w)) {
      kernels::gemm(true, false, in, out_w, n, 1.0, xv.data().data(), dy.data().data(), 1.0,
                    gr.grad_buffer(w).data().data());
    }
    if (gr.requires_grad(bias)) {
      auto gb = gr.grad_buffer(bias).data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out_w; ++c) gb[c] += dy[r * out_w + c];
    }
  });
}

Var embedding(Graph& g, Var table, std::span<const int> ids) {
  const auto& tv = g.value(table);
  require(tv.rank() == 2, ErrorKind::kDimension, "embedding table must be a matrix");
  const std::size_t rows = tv.rows(), d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < rows, ErrorKind::kIndex,
            "embedding id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows));
    std::copy_n(tv.data().begin() + static_cast<std::size_t>(ids[i]) * d, d, out.data().begin() + i * d);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return g.record(OpKind::kEmbedding, std::move(out), {table},
                  [table, kept = std::move(kept), d](Graph& gr, const Tensor& dy) {
                    auto gt = gr.grad_buffer(table).data();
                    for (std::size_t i = 0; i < kept.size(); ++i) {
                      const std::size_t base = static_cast<std::size_t>(kept[i]) * d;
                      for (std::size_t c = 0; c < d; ++c) gt[base + c] += dy[i * d + c];
                    }
                  });
}

Var select_rows(Graph& g, Var x, std::span<const std::size_t> rows) {
  const auto& xv = g.value(x);
  const std::size_t n = xv.dim(0);
  const std::size_t d = xv.size() / n;
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < n, ErrorKind::kIndex, "select_rows index out of range");
    std::copy_n(xv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
  }
  std::vector<std::size_t> kept(rows.begin(), rows.end());
  return g.record(OpKind::kSelectRows, std::move(out), {x}, [x, kept = std::move(kept), d](Graph& gr, const Tensor& dy) {
    auto gx = gr.grad_buffer(x).data();
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gx[kept[i] * d + c] += dy[i * d + c];
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

Var gelu(Graph& g, Var x) {
  Tensor out = g.value(x);
  // The CDF is kept for the backward pass; erf dominates this op's cost.
  auto cdf = std::make_shared<std::vector<double>>(out.size());
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    (*cdf)[i] = 0.5 * (1.0 + std::erf(ov[i] * kInvSqrt2));
    ov[i] *= (*cdf)[i];
  }
  return g.record(OpKind::kGelu, std::move(out), {x}, [x, cdf](Graph& gr, const Tensor& dy) {
    const auto& xv = gr.value(x);
    auto gx = gr.grad_buffer(x).data();
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double v = xv[i];
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += dy[i] * ((*cdf)[i] + v * pdf);
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const auto& xv = g.value(x);
  const auto& gv = g.value(gain);
  const auto& bv = g.value(bias);
  const std::size_t d = row_width(xv);
  require(gv.size() == d && bv.size() == d, ErrorKind::kDimension, "layer_norm: gain/bias width differs from input");
  const std::size_t n = xv.size() / d;
  Tensor out(xv.shape());
  Tensor normed(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * is;
      normed[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return g.record(OpKind::kLayerNorm, std::move(out), {x, gain, bias},
                  [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std), d, n](Graph& gr,
                                                                                                  const Tensor& dy) {
                    const auto& gv = gr.value(gain);
                    if (gr.requires_grad(gain)) {
                      auto gg = gr.grad_buffer(gain).data();
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) gg[c] += dy[r * d + c] * normed[r * d + c];
                    }
                    if (gr.requires_grad(bias)) {
                      auto gb = gr.grad_buffer(bias).data();
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) gb[c] += dy[r * d + c];
                    }
                    if (gr.requires_grad(x)) {
                      auto gx = gr.grad_buffer(x).data();
                      const double inv_d = 1.0 / static_cast<double>(d);
                      for (std::size_t r = 0; r < n; ++r) {
                        double mean_dh = 0.0, mean_dh_h = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = dy[r * d + c] * gv[c];
                          mean_dh += dh;
                          mean_dh_h += dh * normed[r * d + c];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = dy[r * d + c] * gv[c];
                          gx[r * d + c] += inv_std[r] * (dh - mean_dh - normed[r * d + c] * mean_dh_h);
                        }
                      }
                    }
                  });
}

Var dropout(Graph& g, Var x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::kConfig, "dropout probability must lie in [0, 1)");
  if (p == 0.0) return x;
  const auto& xv = g.value(x);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(xv.shape());
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return g.record(OpKind::kDropout, std::move(out), {x}, [x, mask = std::move(mask)](Graph& gr, const Tensor& dy) {
    auto gx = gr.grad_buffer(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * mask[i];
  });
}

Var attention(Graph& g, Var q, Var k, Var v, AttentionShape shape, std::span<const std::uint8_t> key_mask,
              Tensor* probs_out) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  const std::size_t B = shape.batch, L = shape.seq_len, H = shape.heads;
  require(qv.rank() == 2 && qv.rows() == B * L, ErrorKind::kDimension, "attention: query rows != batch * seq_len");
  same_shape(qv, kv, "attention");
  same_shape(qv, vv, "attention");
  require(key_mask.size() == B * L, ErrorKind::kDimension, "attention: key mask size != batch * seq_len");
  const std::size_t d = qv.cols();
  require(H > 0 && d % H == 0, ErrorKind::kDimension, "attention: width not divisible by head count");
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor probs({B, H, L, L});
  Tensor out({B * L, d});
  RowMat scores(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
  for (std::size_t b = 0; b < B; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * L;
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = b * L * d + h * dh;
      const auto qh = head_view(qv.data().data() + off, L, dh, d);
      const auto kh = head_view(kv.data().data() + off, L, dh, d);
      const auto vh = head_view(vv.data().data() + off, L, dh, d);
      scores.noalias() = scale * qh * kh.transpose();
      double* p = probs.data().data() + (b * H + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const double* si = scores.data() + i * L;
        double* pi = p + i * L;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j)
          if (mask[j]) mx = std::max(mx, si[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          pi[j] = mask[j] ? std::exp(si[j] - mx) : 0.0;
          z += pi[j];
        }
        if (z > 0.0)
          for (std::size_t j = 0; j < L; ++j) pi[j] /= z;
      }
      auto oh = head_view(out.data().data() + off, L, dh, d);
      oh.noalias() = square_view(p, L) * vh;
    }
  }
  if (probs_out) *probs_out = probs;
  return g.record(
      OpKind::kAttention, std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), B, L, H, d, dh, scale](Graph& gr, const Tensor& dy) {
        const auto& qv = gr.value(q);
        const auto& kv = gr.value(k);
        const auto& vv = gr.value(v);
        double* gq = gr.requires_grad(q) ? gr.grad_buffer(q).data().data() : nullptr;
        double* gk = gr.requires_grad(k) ? gr.grad_buffer(k).data().data() : nullptr;
        double* gv = gr.requires_grad(v) ? gr.grad_buffer(v).data().data() : nullptr;
        const auto n = static_cast<Eigen::Index>(L);
        RowMat dp(n, n), ds(n, n);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = b * L * d + h * dh;
            const auto p = square_view(probs.data().data() + (b * H + h) * L * L, L);
            const auto dyh = head_view(dy.data().data() + off, L, dh, d);
            if (gv) head_view(gv + off, L, dh, d).noalias() += p.transpose() * dyh;
            if (!gq && !gk) continue;
            dp.noalias() = dyh * head_view(vv.data().data() + off, L, dh, d).transpose();
            // Softmax VJP: ds = p * (dp - rowsum(p * dp)), masked keys have p = 0.
            const Eigen::VectorXd weighted = p.cwiseProduct(dp).rowwise().sum();
            ds = scale * p.cwiseProduct(dp.colwise() - weighted);
            if (gq) head_view(gq + off, L, dh, d).noalias() += ds * head_view(kv.data().data() + off, L, dh, d);
            if (gk)
              head_view(gk + off, L, dh, d).noalias() += ds.transpose() * head_view(qv.data().data() + off, L, dh, d);
          }
        }
      });
}

Var cross_entropy(Graph& g, Var logits, std::span<const int> targets) {
  const auto& lv = g.value(logits);
  require(lv.rank() == 2 && lv.rows() == targets.size(), ErrorKind::kDimension,
          "cross_entropy: logits rows differ from target count");
  const std::size_t n = lv.rows(), c = lv.cols();
  Tensor softmax({n, c});
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0) continue;
    require(static_cast<std::size_t>(targets[r]) < c, ErrorKind::kIndex, "cross_entropy: target outside class range");
    const double* row = lv.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      softmax[r * c + j] = std::exp(row[j] - mx);
      z += softmax[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) softmax[r * c + j] /= z;
    total += std::log(z) + mx - row[targets[r]];
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  std::vector<int> kept(targets.begin(), targets.end());
  return g.record(OpKind::kCrossEntropy, Tensor::scalar(total / denom), {logits},
                  [logits, softmax = std::move(softmax), kept = std::move(kept), denom, c](Graph& gr,
                                                                                          const Tensor& dy) {
                    auto gl = gr.grad_buffer(logits).data();
                    const double s = dy[0] / denom;
                    for (std::size_t r = 0; r < kept.size(); ++r) {
                      if (kept[r] < 0) continue;
                      for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += s * softmax[r * c + j];
                      gl[r * c + static_cast<std::size_t>(kept[r])] -= s;
                    }
                  });
}

Var mse(Graph& g, Var prediction, std::span<const double> targets) {
  const auto& pv = g.value(prediction);
  require(pv.size() == targets.size() && !targets.empty(), ErrorKind::kDimension,
          "mse: prediction size differs from target count");
  const double n = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) total += (pv[i] - targets[i]) * (pv[i] - targets[i]);
  std::vector<double> kept(targets.begin(), targets.end());
  return g.record(OpKind::kMse, Tensor::scalar(total / n), {prediction},
                  [prediction, kept = std::move(kept), n](Graph& gr, const Tensor& dy) {
                    const auto& pv = gr.value(prediction);
                    auto gp = gr.grad_buffer(prediction).data();
                    for (std::size_t i = 0; i < kept.size(); ++i) gp[i] += dy[0] * 2.0 * (pv[i] - kept[i]) / n;
                  });
}

}  // namespace xfer::ops
