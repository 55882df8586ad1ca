#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "xfer/checkpoint.hpp"
#include "xfer/error.hpp"
#include "xfer/graph.hpp"
#include "xfer/model.hpp"
#include "xfer/rng.hpp"

using namespace xfer;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(std::size_t d = 16) {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_dim = d;
  c.num_heads = 2;
  c.ffn_dim = 2 * d;
  c.vocab_size = 12;
  c.max_len = 10;
  c.dropout_prob = 0.0;
  return c;
}

Batch sample_batch(std::size_t vocab, std::uint64_t seed, std::vector<std::size_t> lengths = {6, 4, 8}) {
  Rng rng(seed);
  std::vector<std::vector<int>> seqs;
  for (auto len : lengths) {
    std::vector<int> s{special::kCls};
    for (std::size_t i = 0; i < len; ++i)
      s.push_back(special::kFirstContent + static_cast<int>(rng.uniform_int(vocab - special::kFirstContent)));
    s.push_back(special::kSep);
    seqs.push_back(std::move(s));
  }
  std::vector<const std::vector<int>*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  std::vector<double> labels;
  for (std::size_t i = 0; i < seqs.size(); ++i) labels.push_back(static_cast<double>(i % 2));
  return make_batch(ptrs, labels);
}

std::pair<double, double> mean_std(std::span<const double> v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("xfer_model_test_" + name); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.vocab_size = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.max_len = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(tiny().validate());
}

TEST_CASE("init_params") {
  ModelConfig c = tiny(256);
  c.num_heads = 4;
  c.num_layers = 1;
  const Parameters p = init_params(c, 1);
  for (const auto& e : p.entries()) {
    if (e.name.ends_with(".gain")) {
      for (double v : e.value.data()) CHECK(v == 1.0);
    } else if (e.name.ends_with(".bias")) {
      for (double v : e.value.data()) CHECK(v == 0.0);
    }
  }
  const auto [m, s] = mean_std(p.at(names::layer(0, "attn.query.weight")).data());
  CHECK(std::abs(m) < 0.005);
  CHECK(std::abs(s - 0.02) < 0.002);
  CHECK(init_params(c, 1).bitwise_equal(p));
  CHECK_FALSE(init_params(c, 2).bitwise_equal(p));
}

TEST_CASE("changing the head leaves the encoder initialisation untouched") {
  ModelConfig a = tiny(), b = tiny();
  b.num_classes = 5;
  const Parameters pa = init_params(a, 3), pb = init_params(b, 3);
  for (const auto& e : pa.entries())
    if (!e.name.starts_with("classifier")) CHECK(e.value.bitwise_equal(pb.at(e.name)));
}

TEST_CASE("forward contracts") {
  const ModelConfig c = tiny();
  const Parameters p = init_params(c, 5);
  const Batch b = sample_batch(c.vocab_size, 9);
  const auto out = forward(p, c, b, Head::kMlm, true);
  CHECK(out.logits.shape() == Shape{3, 10, 12});
  CHECK(out.hidden.size() == c.num_layers + 1);
  REQUIRE(out.attention.size() == c.num_layers);
  const std::size_t L = b.seq_len, H = c.num_heads;
  for (const auto& att : out.attention) {
    CHECK(att.shape() == Shape{3, H, L, L});
    for (std::size_t bi = 0; bi < 3; ++bi)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < L; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < L; ++j) {
            const double v = att[((bi * H + h) * L + i) * L + j];
            s += v;
            if (!b.mask[bi * L + j]) CHECK(v == 0.0);
          }
          CHECK(std::abs(s - 1.0) < 1e-9);
        }
  }
  const auto cls = forward(p, c, b, Head::kClassify);
  CHECK(cls.logits.shape() == Shape{3, 2});
  CHECK(forward(p, c, b, Head::kClassify).logits.bitwise_equal(cls.logits));

  Batch too_long = sample_batch(c.vocab_size, 1, {12});
  CHECK_THROWS_AS(forward(p, c, too_long, Head::kMlm), Error);
  try {
    forward(p, c, too_long, Head::kMlm);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kLength);
  }
}

TEST_CASE("classification requires CLS at position 0") {
  const ModelConfig c = tiny();
  const Parameters p = init_params(c, 5);
  Batch b = sample_batch(c.vocab_size, 9);
  b.ids[0] = special::kFirstContent;
  CHECK_THROWS_AS(forward(p, c, b, Head::kClassify), Error);
}

TEST_CASE("padding does not change the encoding of real tokens") {
  const ModelConfig c = tiny();
  const Parameters p = init_params(c, 5);
  const Batch alone = sample_batch(c.vocab_size, 4, {3});
  const std::vector<int> first(alone.ids.begin(), alone.ids.end());
  const std::vector<int> second{special::kCls, 6, 7, 8, 9, 10, 6, special::kSep};
  const std::vector<const std::vector<int>*> ptrs{&first, &second};
  const Batch padded = make_batch(ptrs);
  const auto a = forward(p, c, alone, Head::kMlm);
  const auto b = forward(p, c, padded, Head::kMlm);
  const std::size_t d = c.hidden_dim;
  for (std::size_t i = 0; i < alone.seq_len * d; ++i)
    CHECK(std::abs(a.hidden.back()[i] - b.hidden.back()[i]) < 1e-12);
}

TEST_CASE("mask_tokens") {
  const Batch b = sample_batch(12, 2, std::vector<std::size_t>(64, 8));
  SUBCASE("ratio 0") {
    Rng rng(1);
    const Batch m = mask_tokens(b, 0.0, 12, rng);
    CHECK(m.ids == b.ids);
    for (int t : m.mlm_targets) CHECK(t == -1);
  }
  SUBCASE("specials never selected; selection rate and split") {
    std::size_t content = 0, selected = 0, masked = 0, kept = 0;
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
      const Batch m = mask_tokens(b, 0.15, 12, rng);
      for (std::size_t i = 0; i < b.ids.size(); ++i) {
        if (b.ids[i] < special::kFirstContent) {
          CHECK(m.mlm_targets[i] == -1);
          CHECK(m.ids[i] == b.ids[i]);
          continue;
        }
        ++content;
        if (m.mlm_targets[i] < 0) {
          CHECK(m.ids[i] == b.ids[i]);
          continue;
        }
        ++selected;
        CHECK(m.mlm_targets[i] == b.ids[i]);
        if (m.ids[i] == special::kMask) ++masked;
        if (m.ids[i] == b.ids[i]) ++kept;
        CHECK(m.ids[i] >= special::kFirstContent - 1);
      }
    }
    REQUIRE(content >= 100000);
    CHECK(std::abs(static_cast<double>(selected) / content - 0.15) < 0.005);
    CHECK(std::abs(static_cast<double>(masked) / selected - 0.8) < 0.01);
    // Unchanged = the 10% keep branch plus random draws that hit the original.
    CHECK(std::abs(static_cast<double>(kept) / selected - (0.1 + 0.1 / 7.0)) < 0.01);
  }
}

TEST_CASE("re_embed") {
  const ModelConfig c = tiny();
  const Parameters p = init_params(c, 5);
  const Parameters r = re_embed(p, c, 77);
  std::size_t changed_tensors = 0;
  for (const auto& e : p.entries()) {
    if (!e.value.bitwise_equal(r.at(e.name))) ++changed_tensors;
  }
  CHECK(changed_tensors == 1);
  const auto& before = p.at(names::kTokenEmbedding);
  const auto& after = r.at(names::kTokenEmbedding);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < before.size(); ++i) differ += before[i] != after[i];
  CHECK(differ >= before.size() * 99 / 100);
  CHECK(r.at(names::kPositionEmbedding).bitwise_equal(p.at(names::kPositionEmbedding)));

  const Parameters rp = re_embed(p, c, 77, true);
  CHECK_FALSE(rp.at(names::kPositionEmbedding).bitwise_equal(p.at(names::kPositionEmbedding)));

  ModelConfig big = tiny(256);
  big.vocab_size = 300;
  big.num_heads = 4;
  big.num_layers = 1;
  const auto [m, s] = mean_std(re_embed(init_params(big, 1), big, 2).at(names::kTokenEmbedding).data());
  CHECK(std::abs(m) < 0.005);
  CHECK(std::abs(s - 0.02) < 0.002);
}

TEST_CASE("MLM loss gradient matches central differences") {
  const ModelConfig c = tiny();
  Parameters p = init_params(c, 11);
  // Larger weights than the 0.02 init so every path carries signal.
  Rng noise(3);
  for (auto& e : p.entries())
    for (auto& v : e.value.data()) v += 0.3 * noise.normal();
  Rng mrng(4);
  const Batch b = mask_tokens(sample_batch(c.vocab_size, 6), 0.5, c.vocab_size, mrng);

  Graph g;
  const auto bound = bind_parameters(g, p, true);
  const ForwardContext eval{};
  g.backward(mlm_loss(g, bound, c, b, eval));

  const auto loss_at = [&] {
    Graph h;
    return h.value(mlm_loss(h, bind_parameters(h, p, false), c, b, eval)).item();
  };
  Rng pick(5);
  std::size_t checked = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p.entries()[k].name.starts_with("classifier")) continue;
    const Tensor grad = g.grad(bound.vars[k]);
    for (int rep = 0; rep < 6; ++rep) {
      const auto i = static_cast<std::size_t>(pick.uniform_int(grad.size()));
      const double numeric = oracle::central_difference(loss_at, p.entries()[k].value[i], 1e-5);
      CHECK(oracle::relative_error(grad[i], numeric, 1e-6) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("classification loss gradient matches central differences") {
  ModelConfig c = tiny(8);
  c.num_classes = 3;
  Parameters p = init_params(c, 12);
  Rng noise(9);
  for (auto& e : p.entries())
    for (auto& v : e.value.data()) v += 0.3 * noise.normal();
  const Batch b = sample_batch(c.vocab_size, 7);
  Graph g;
  const auto bound = bind_parameters(g, p, true);
  g.backward(task_loss(g, bound, c, b, {}));
  const auto loss_at = [&] {
    Graph h;
    return h.value(task_loss(h, bind_parameters(h, p, false), c, b, {})).item();
  };
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p.entries()[k].name.starts_with("mlm")) continue;
    const Tensor grad = g.grad(bound.vars[k]);
    for (std::size_t i = 0; i < std::min<std::size_t>(grad.size(), 3); ++i) {
      const double numeric = oracle::central_difference(loss_at, p.entries()[k].value[i], 1e-5);
      CHECK(oracle::relative_error(grad[i], numeric, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const ModelConfig c = tiny();
  const Parameters p = init_params(c, 21);
  CheckpointManifest m{c, "abc123", {{"stage", "test"}}};
  const auto path = temp_path("a.ck"), path2 = temp_path("b.ck");
  save_checkpoint(path, p, m);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params.bitwise_equal(p));
  CHECK(ck.manifest.config == c);
  CHECK(ck.manifest.vocab_hash == "abc123");
  save_checkpoint(path2, ck.params, ck.manifest);
  std::ifstream fa(path, std::ios::binary), fb(path2, std::ios::binary);
  const std::string a((std::istreambuf_iterator<char>(fa)), {}), b((std::istreambuf_iterator<char>(fb)), {});
  CHECK(a == b);

  const Batch batch = sample_batch(c.vocab_size, 3);
  CHECK(forward(ck.params, c, batch, Head::kMlm).logits.bitwise_equal(forward(p, c, batch, Head::kMlm).logits));

  const auto kind = [](const std::string& bytes) {
    try {
      decode_checkpoint(bytes);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kContract;
  };
  CHECK(kind(a.substr(0, a.size() - 3)) == ErrorKind::kCorruption);
  CHECK(kind(a.substr(0, 10)) == ErrorKind::kCorruption);
  std::string bad = a;
  bad[0] = 'Y';
  CHECK(kind(bad) == ErrorKind::kFormat);

  ModelConfig other = c;
  other.hidden_dim = 8;
  try {
    load_checkpoint_for(path, other);
    FAIL("expected a compatibility error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCompatibility);
  }
  fs::remove(path);
  fs::remove(path2);
}
