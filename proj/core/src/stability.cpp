#include "xfer/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "xfer/error.hpp"
#include "xfer/graph.hpp"
#include "xfer/linalg.hpp"
#include "xfer/rng.hpp"

namespace xfer {

namespace {

Batch single_batch(std::span<const int> ids) {
  const std::vector<int> seq(ids.begin(), ids.end());
  const std::vector<const std::vector<int>*> rows{&seq};
  return make_batch(rows);
}

}  // namespace

Tensor lookup_embeddings(const Parameters& params, std::span<const int> ids) {
  const Tensor& table = params.at(names::kTokenEmbedding);
  const std::size_t d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < table.rows(), ErrorKind::kIndex, "token id out of range");
    std::copy_n(&table.data()[static_cast<std::size_t>(ids[i]) * d], d, &out.data()[i * d]);
  }
  return out;
}

Tensor encoder_output_from_embeddings(const Parameters& params, const ModelConfig& config, std::span<const int> ids,
                                      const Tensor& token_embeddings) {
  const Batch batch = single_batch(ids);
  Graph g;
  BoundParameters bp = bind_parameters(g, params, false);
  Var e = g.constant(token_embeddings);
  const EncoderTrace trace = encode(g, bp, config, batch, ForwardContext{}, e);
  return g.value(trace.hidden.back());
}

Tensor input_output_jacobian(const Parameters& params, const ModelConfig& config, std::span<const int> ids) {
  require(!ids.empty(), ErrorKind::kInput, "jacobian needs a non-empty sequence");
  const std::size_t n = ids.size() * config.hidden_dim;
  require(n <= kJacobianBudget, ErrorKind::kSize,
          "L * hidden_dim = " + std::to_string(n) + " exceeds the Jacobian budget of " + std::to_string(kJacobianBudget));
  const Batch batch = single_batch(ids);
  Graph g;
  BoundParameters bp = bind_parameters(g, params, false);
  Var e = g.leaf(lookup_embeddings(params, ids), true);
  const EncoderTrace trace = encode(g, bp, config, batch, ForwardContext{}, e);
  const Var out = trace.hidden.back();
  Tensor jac({n, n});
  Tensor seed(g.value(out).shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    seed[r] = 1.0;
    g.backward(out, seed);
    seed[r] = 0.0;
    const Tensor row = g.grad(e);
    std::copy(row.data().begin(), row.data().end(), &jac.data()[r * n]);
  }
  return jac;
}

SingularSpectrum jacobian_singular_values(const Parameters& params, const ModelConfig& config,
                                          std::span<const int> ids) {
  SingularSpectrum s;
  s.values = singular_values(input_output_jacobian(params, config, ids));
  s.seq_len = ids.size();
  s.hidden_dim = config.hidden_dim;
  return s;
}

std::vector<double> example_gradient(const Parameters& params, const ModelConfig& config, const Example& example) {
  const std::vector<const std::vector<int>*> rows{&example.ids};
  const Batch batch = make_batch(rows, {example.label});
  Graph g;
  BoundParameters bp = bind_parameters(g, params, true);
  const Var loss = task_loss(g, bp, config, batch, ForwardContext{});
  g.backward(loss);
  std::vector<double> flat;
  flat.reserve(params.element_count());
  for (Var v : bp.vars) {
    const Tensor gv = g.grad(v);
    flat.insert(flat.end(), gv.data().begin(), gv.data().end());
  }
  return flat;
}

GradConfusionStats gradient_confusion(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                      std::size_t n_pairs, std::uint64_t seed) {
  require(data.size() >= 2, ErrorKind::kInput, "gradient confusion needs at least two examples");
  require(n_pairs >= 1, ErrorKind::kInput, "n_pairs must be >= 1");
  Rng rng = Rng(seed).split(stream::kSample);
  std::map<std::size_t, std::vector<double>> cache;
  auto grad_of = [&](std::size_t i) -> const std::vector<double>& {
    auto it = cache.find(i);
    if (it == cache.end()) it = cache.emplace(i, example_gradient(params, config, data.examples[i])).first;
    return it->second;
  };
  GradConfusionStats stats;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const auto a = static_cast<std::size_t>(rng.uniform_int(data.size()));
    auto b = static_cast<std::size_t>(rng.uniform_int(data.size() - 1));
    if (b >= a) ++b;
    try {
      stats.pairs.push_back({a, b, cosine(grad_of(a), grad_of(b))});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedSimilarity) throw;
      ++stats.excluded;
    }
  }
  require(!stats.pairs.empty(), ErrorKind::kUndefinedSimilarity, "every sampled pair had a zero-norm gradient");
  std::vector<double> values;
  for (const auto& p : stats.pairs) values.push_back(p.cosine);
  stats.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size();
  stats.median = m % 2 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
  stats.min = values.front();
  return stats;
}

std::string_view to_string(OutputSite site) noexcept {
  return site == OutputSite::kLogits ? "logits" : "last-hidden-cls";
}

OutputSite parse_output_site(std::string_view text) {
  if (text == "logits") return OutputSite::kLogits;
  if (text == "last-hidden-cls") return OutputSite::kLastHiddenCls;
  fail(ErrorKind::kConfig, "unknown output site '" + std::string(text) + "'");
}

namespace {

/// Per-example output vectors, concatenated (n x width).
std::vector<std::vector<double>> outputs(const Parameters& params, const ModelConfig& config,
                                         const std::vector<Batch>& batches, OutputSite site) {
  std::vector<std::vector<double>> out;
  for (const auto& batch : batches) {
    const Head head = site == OutputSite::kLogits ? Head::kClassify : Head::kMlm;
    const ForwardOutput f = forward(params, config, batch, head);
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      if (site == OutputSite::kLogits) {
        const auto w = f.logits.cols();
        out.emplace_back(&f.logits.data()[b * w], &f.logits.data()[b * w] + w);
      } else {
        const std::size_t d = config.hidden_dim;
        const double* row = &f.hidden.back().data()[b * batch.seq_len * d];
        out.emplace_back(row, row + d);
      }
    }
  }
  return out;
}

}  // namespace

PerturbReport perturbation_variance(const Parameters& params, const ModelConfig& config, const LabeledDataset& data,
                                    const std::vector<double>& sigmas, std::size_t n_draws, std::uint64_t seed,
                                    OutputSite site) {
  require(!data.empty(), ErrorKind::kInput, "perturbation needs at least one example");
  require(n_draws >= 1, ErrorKind::kInput, "n_draws must be >= 1");
  for (double s : sigmas) require(s >= 0.0 && std::isfinite(s), ErrorKind::kConfig, "sigmas must be finite and >= 0");

  constexpr std::size_t kChunk = 64;
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<const std::vector<int>*> rows;
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) rows.push_back(&data.examples[i].ids);
    batches.push_back(make_batch(rows));
  }
  const auto clean = outputs(params, config, batches, site);

  PerturbReport report;
  report.site = site;
  std::vector<std::vector<double>> dist(sigmas.size());
  std::vector<std::size_t> diverged(sigmas.size(), 0);
  const Rng root = Rng(seed).split(stream::kNoise);
  for (std::size_t d = 0; d < n_draws; ++d) {
    // One direction per draw, shared by every sigma.
    Rng rng = root.split(d);
    std::vector<Tensor> noise;
    for (const auto& e : params.entries()) {
      Tensor z(e.value.shape());
      for (auto& x : z.data()) x = rng.normal();
      noise.push_back(std::move(z));
    }
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      Parameters noisy = params;
      for (std::size_t t = 0; t < noise.size(); ++t) {
        auto p = noisy.entries()[t].value.data();
        const auto z = noise[t].data();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] += sigmas[s] * z[j];
      }
      const auto perturbed = outputs(noisy, config, batches, site);
      double total = 0.0;
      for (std::size_t i = 0; i < clean.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < clean[i].size(); ++j) {
          const double diff = perturbed[i][j] - clean[i][j];
          sq += diff * diff;
        }
        total += std::sqrt(sq);
      }
      const double mean = total / static_cast<double>(clean.size());
      if (std::isfinite(mean)) {
        dist[s].push_back(mean);
      } else {
        ++diverged[s];
      }
    }
  }
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    PerturbRow row;
    row.sigma = sigmas[s];
    row.n_draws = n_draws;
    row.diverged = diverged[s];
    const auto& v = dist[s];
    if (!v.empty()) {
      row.mean_dist = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - row.mean_dist) * (x - row.mean_dist);
      row.std_dist = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    } else {
      row.mean_dist = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace xfer
