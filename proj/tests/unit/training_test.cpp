#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "oracles.hpp"
#include "xfer/corpus.hpp"
#include "xfer/error.hpp"
#include "xfer/metrics.hpp"
#include "xfer/optim.hpp"
#include "xfer/rng.hpp"
#include "xfer/trainer.hpp"
#include "xfer/vocab.hpp"

using namespace xfer;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an xfer::Error");
  return ErrorKind::kContract;
}

struct Counts {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Counts confusion(const std::vector<double>& pred, const std::vector<double>& gold) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && gold[i] == 1) c.tp += 1;
    if (pred[i] == 0 && gold[i] == 0) c.tn += 1;
    if (pred[i] == 1 && gold[i] == 0) c.fp += 1;
    if (pred[i] == 0 && gold[i] == 1) c.fn += 1;
  }
  return c;
}

// Rank by counting: #smaller + (#equal + 1) / 2.
std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      less += x < v[i];
      equal += x == v[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

ModelConfig small_model(std::size_t vocab) {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.vocab_size = vocab;
  c.max_len = 24;
  c.dropout_prob = 0.1;
  return c;
}

DatasetSplits motif_splits(std::size_t n, std::uint64_t seed) {
  const Vocab v = Vocab::synthetic(16);
  CorpusSpec s;
  s.kind = CorpusKind::kMotifTask;
  s.vocab_size = 16;
  s.lines = n;
  s.min_len = 8;
  s.max_len = 12;
  s.motif_len = 3;
  s.seed = seed;
  return split_dataset(gen_motif_task(s, v), {0.8, 0.1, 0.1}, seed);
}

}  // namespace

TEST_CASE("binary metrics match confusion-count formulas") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pred(40), gold(40);
    for (std::size_t i = 0; i < 40; ++i) {
      pred[i] = static_cast<double>(rng.uniform_int(2));
      gold[i] = static_cast<double>(rng.uniform_int(2));
    }
    const Counts c = confusion(pred, gold);
    CHECK(accuracy(pred, gold) == doctest::Approx((c.tp + c.tn) / 40.0).epsilon(1e-12));
    const double f1 = c.tp == 0 ? 0.0 : 2 * c.tp / (2 * c.tp + c.fp + c.fn);
    CHECK(f1_score(pred, gold) == doctest::Approx(f1).epsilon(1e-12));
    const double den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
    const double m = den == 0 ? 0.0 : (c.tp * c.tn - c.fp * c.fn) / std::sqrt(den);
    CHECK(mcc(pred, gold) == doctest::Approx(m).epsilon(1e-12));
  }
}

TEST_CASE("metric edge cases") {
  const std::vector<double> gold{1, 1, 0, 0}, pred{1, 0, 1, 0};
  CHECK(mcc(pred, gold) == 0.0);
  CHECK(mcc(std::vector<double>{1, 1, 1, 1}, gold) == 0.0);
  CHECK(f1_score(std::vector<double>{0, 0, 0, 0}, gold) == 0.0);
  CHECK(accuracy(gold, gold) == 1.0);
  CHECK(mcc(gold, gold) == doctest::Approx(1.0));
  CHECK(kind_of([&] { accuracy(std::vector<double>{1}, gold); }) == ErrorKind::kDimension);
  CHECK(kind_of([] { accuracy(std::vector<double>{}, std::vector<double>{}); }) == ErrorKind::kInput);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5}, rev{5, 4, 3, 2, 1};
  CHECK(spearman(a, rev) == doctest::Approx(-1.0));
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  const std::vector<double> ties{1, 2, 2, 3, 5, 5, 5, 0}, other{3, 1, 4, 1, 5, 9, 2, 6};
  CHECK(average_ranks(ties) == counting_ranks(ties));
  CHECK(spearman(ties, other) == doctest::Approx(pearson(counting_ranks(ties), counting_ranks(other))).epsilon(1e-12));
  CHECK(kind_of([] { spearman(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}); }) ==
        ErrorKind::kUndefinedCorrelation);
}

TEST_CASE("Adam matches a hand-computed update") {
  Parameters p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  Adam adam(p, {0.1, 0.9, 0.999, 1e-8, 10});
  std::vector<Tensor> g{Tensor::vector({0.5, -1.0})};
  adam.step(p, g);
  // First update: m_hat = g, v_hat = g^2, so the step is lr * sign(g) (minus eps).
  CHECK(p.at("w").data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p.at("w").data()[1] == doctest::Approx(-2.0 + 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-14));

  g[0] = Tensor::vector({0.25, 0.0});
  const double w0 = p.at("w").data()[0];
  adam.step(p, g);
  const double m = 0.9 * 0.05 + 0.1 * 0.25, v = 0.999 * 0.00025 + 0.001 * 0.0625;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double lr = 0.1 * (1 - 1.0 / 10);
  CHECK(p.at("w").data()[0] == doctest::Approx(w0 - lr * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-13));
}

TEST_CASE("Adam with a zero gradient leaves parameters unchanged") {
  Parameters p;
  p.add("w", Tensor::vector({0.3, -0.7, 1.5}));
  const Parameters before = p;
  Adam adam(p, {1e-3, 0.9, 0.999, 1e-8, 100});
  adam.step(p, {Tensor({3}, 0.0)});
  CHECK(p.bitwise_equal(before));
}

TEST_CASE("Adam rejects non-finite gradients before touching anything") {
  Parameters p;
  p.add("w", Tensor::vector({1.0, 2.0}));
  const Parameters before = p;
  Adam adam(p, {});
  CHECK(kind_of([&] { adam.step(p, {Tensor::vector({1.0, std::nan("")})}); }) == ErrorKind::kDivergence);
  CHECK(p.bitwise_equal(before));
  CHECK(adam.steps() == 0);
}

TEST_CASE("learning-rate schedule") {
  Parameters p;
  p.add("w", Tensor::vector({0.0}));
  Adam adam(p, {2e-5, 0.9, 0.999, 1e-8, 100});
  CHECK(adam.lr_at(0) == 2e-5);
  CHECK(adam.lr_at(50) == doctest::Approx(1e-5));
  CHECK(adam.lr_at(99) == doctest::Approx(2e-7));
  CHECK(adam.lr_at(100) == 0.0);
  CHECK(adam.lr_at(1000) == 0.0);
  for (std::size_t t = 1; t < 100; ++t) CHECK(adam.lr_at(t) < adam.lr_at(t - 1));
}

TEST_CASE("subset_indices") {
  LabeledDataset d;
  for (int i = 0; i < 10000; ++i) d.examples.push_back({{special::kCls, 5, special::kSep}, double(i % 2)});
  const auto idx = subset_indices(d, 0.01, 3);
  CHECK(idx.size() == 100);
  std::map<double, int> per_class;
  for (auto i : idx) per_class[d.examples[i].label] += 1;
  CHECK(per_class[0.0] == 50);
  CHECK(per_class[1.0] == 50);
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 100);
  CHECK(subset_indices(d, 0.01, 3) == idx);
  CHECK(subset_indices(d, 0.01, 4) != idx);
  CHECK(subset_indices(d, 1e-9, 3).size() == 1);
  CHECK(subset_indices(d, 1.0, 3).size() == 10000);
  CHECK(kind_of([&] { subset_indices(d, 0.0, 3); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { subset_indices(d, 1.5, 3); }) == ErrorKind::kConfig);
}

TEST_CASE("initial MLM loss is close to ln V") {
  const Vocab v = Vocab::synthetic(64);
  CorpusSpec s;
  s.kind = CorpusKind::kUniform;
  s.lines = 64;
  s.min_len = 10;
  s.max_len = 20;
  s.seed = 2;
  TrainConfig t;
  t.total_steps = 1;
  t.batch_size = 64;
  t.lr = 1e-5;
  double first = 0;
  pretrain_mlm(gen_uniform(s, v), small_model(64), t, v.hash(), [&](std::size_t, double loss) { first = loss; });
  CHECK(std::abs(first - std::log(64.0)) < 0.1);
}

TEST_CASE("pretraining reduces MLM loss and is deterministic") {
  const Vocab v = Vocab::synthetic(32);
  CorpusSpec s;
  s.kind = CorpusKind::kNesting;
  s.vocab_size = 32;
  s.lines = 400;
  s.min_len = 6;
  s.max_len = 16;
  s.bracket_types = 4;
  s.seed = 1;
  const Corpus c = gen_parens(s, v);
  TrainConfig t;
  t.total_steps = 150;
  t.batch_size = 16;
  t.lr = 3e-3;
  t.log_every = 25;
  t.seed = 9;
  const auto a = pretrain_mlm(c, small_model(32), t, v.hash());
  const auto b = pretrain_mlm(c, small_model(32), t, v.hash());
  CHECK(a.checkpoint.params.bitwise_equal(b.checkpoint.params));
  REQUIRE(a.curve.train.size() == 6);
  CHECK(a.curve.train.front().first == 25);
  CHECK(a.curve.train.back().first == 150);
  CHECK(a.curve.train.back().second < a.curve.train.front().second);
  CHECK(a.curve.train_at(150) == a.curve.train.back().second);
  CHECK(kind_of([&] { a.curve.train_at(151); }) == ErrorKind::kIndex);
  CHECK(a.checkpoint.manifest.vocab_hash == v.hash());
}

TEST_CASE("curve points are window means of step losses") {
  const Vocab v = Vocab::synthetic(32);
  CorpusSpec s;
  s.kind = CorpusKind::kUniform;
  s.vocab_size = 32;
  s.lines = 100;
  s.min_len = 4;
  s.max_len = 8;
  TrainConfig t;
  t.total_steps = 12;
  t.batch_size = 8;
  t.lr = 1e-3;
  t.log_every = 4;
  std::vector<double> losses;
  const auto r = pretrain_mlm(gen_uniform(s, v), small_model(32), t, v.hash(),
                              [&](std::size_t, double l) { losses.push_back(l); });
  REQUIRE(losses.size() == 12);
  REQUIRE(r.curve.train.size() == 3);
  for (std::size_t w = 0; w < 3; ++w) {
    const double mean = (losses[4 * w] + losses[4 * w + 1] + losses[4 * w + 2] + losses[4 * w + 3]) / 4;
    CHECK(r.curve.train[w].second == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("fine-tuning is deterministic and learns a separable task") {
  const DatasetSplits splits = motif_splits(400, 2);
  ModelConfig m = small_model(16);
  TrainConfig t;
  t.total_steps = 300;
  t.batch_size = 16;
  t.lr = 3e-3;
  t.eval_every = 100;
  t.seed = 4;
  const auto a = finetune(splits, m, t);
  const auto b = finetune(splits, m, t);
  CHECK(a.checkpoint.params.bitwise_equal(b.checkpoint.params));
  CHECK(a.test.value == b.test.value);
  CHECK(a.train_examples == splits.train.size());
  CHECK(a.curve.valid.size() == 3);
  CHECK(a.test.n == splits.test.size());
  CHECK(a.test.init_mode == "scratch");
  CHECK(a.curve.train.back().second < a.curve.train.front().second);
  CHECK(a.selected_step % 100 == 0);

  t.seed = 5;
  const auto c = finetune(splits, m, t);
  CHECK_FALSE(c.checkpoint.params.bitwise_equal(a.checkpoint.params));
}

TEST_CASE("checkpoint init copies the encoder and resets the head") {
  ModelConfig m = small_model(16);
  Checkpoint pre{{m, "h", {}}, init_params(m, 77)};
  TrainConfig t;
  t.total_steps = 1;
  t.init_mode = InitMode::kCheckpoint;
  t.seed = 3;
  const Parameters p = initial_finetune_params(m, t, &pre);
  for (const auto& e : p.entries()) {
    // Biases start at zero in both, so only the head weight must differ.
    const bool head = e.name == names::kClassifierWeight;
    CHECK(e.value.bitwise_equal(pre.params.at(e.name)) != head);
  }
  t.init_mode = InitMode::kReEmbed;
  const Parameters r = initial_finetune_params(m, t, &pre);
  CHECK_FALSE(r.at(names::kTokenEmbedding).bitwise_equal(pre.params.at(names::kTokenEmbedding)));
  CHECK(r.at(names::kPositionEmbedding).bitwise_equal(pre.params.at(names::kPositionEmbedding)));
  CHECK(r.at(names::layer(0, "attn.query.weight")).bitwise_equal(pre.params.at(names::layer(0, "attn.query.weight"))));

  t.init_mode = InitMode::kCheckpoint;
  CHECK(kind_of([&] { initial_finetune_params(m, t, nullptr); }) == ErrorKind::kCompatibility);
  ModelConfig other = m;
  other.hidden_dim = 32;
  other.ffn_dim = 64;
  CHECK(kind_of([&] { initial_finetune_params(other, t, &pre); }) == ErrorKind::kCompatibility);
}

TEST_CASE("curve and metrics CSV") {
  LossCurve c;
  c.train = {{50, 1.5}, {100, 0.75}};
  c.valid = {{100, 0.5}};
  const auto path = fs::temp_directory_path() / "xfer_training_test_curve.csv";
  write_curve_csv(path, c);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "step,loss");
  CHECK(first == "50,1.5");
  fs::remove(path);
}
