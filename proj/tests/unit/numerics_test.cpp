#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "xfer/error.hpp"
#include "xfer/graph.hpp"
#include "xfer/hungarian.hpp"
#include "xfer/linalg.hpp"
#include "xfer/ops.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

using namespace xfer;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor m({r, c});
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

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

/// Checks d(loss)/d(inputs) of a graph-building closure against central
/// differences on every input coordinate.
void check_gradients(std::vector<Tensor> inputs, const std::function<Var(Graph&, const std::vector<Var>&)>& build,
                     double tol = 1e-6) {
  Graph g;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(g.leaf(t));
  const Var loss = build(g, vars);
  g.backward(loss);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const auto f = [&] {
        Graph h;
        std::vector<Var> hv;
        for (auto& t : inputs) hv.push_back(h.leaf(t, false));
        return h.value(build(h, hv)).item();
      };
      const double numeric = oracle::central_difference(f, inputs[k][i], 1e-5);
      CHECK(oracle::relative_error(analytic[i], numeric, 1e-6) < tol);
    }
  }
}

}  // namespace

TEST_CASE("tensor construction and shape contracts") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 1.5);
  CHECK(kind_of([] { Tensor({2, 0}); }) == ErrorKind::kDimension);
  CHECK(kind_of([] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); }) == ErrorKind::kDimension);
  CHECK(kind_of([] { Tensor::matrix({{1, 2}, {3}}); }) == ErrorKind::kDimension);
  CHECK(kind_of([&] { (void)t.item(); }) == ErrorKind::kContract);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("bitwise equality distinguishes signed zero") {
  const Tensor a = Tensor::vector({0.0});
  const Tensor b = Tensor::vector({-0.0});
  CHECK_FALSE(a.bitwise_equal(b));
  CHECK(a.bitwise_equal(Tensor::vector({0.0})));
}

TEST_CASE("matmul") {
  Rng rng(11);
  const Tensor m = random_matrix(3, 3, rng);
  CHECK(matmul(Tensor::identity(3), m).bitwise_equal(m));
  CHECK(matmul(Tensor::matrix({{2}}), Tensor::matrix({{3}})).item() == 6.0);

  const Tensor a = random_matrix(7, 5, rng);
  const Tensor b = random_matrix(5, 4, rng);
  const Tensor c = matmul(a, b);
  const Tensor ref = oracle::triple_loop(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - ref[i]) < 1e-12);

  CHECK(kind_of([&] { matmul(a, a); }) == ErrorKind::kDimension);
}

TEST_CASE("gemm transposition variants match the triple loop") {
  Rng rng(12);
  const Tensor a = random_matrix(6, 4, rng);
  const Tensor b = random_matrix(4, 5, rng);
  const Tensor ref = oracle::triple_loop(a, b);
  const Tensor at = transpose(a), bt = transpose(b);
  for (int variant = 0; variant < 4; ++variant) {
    const bool ta = variant & 1, tb = variant & 2;
    Tensor c({6, 5}, 2.0);
    kernels::gemm(ta, tb, 6, 5, 4, 0.5, (ta ? at : a).data().data(), (tb ? bt : b).data().data(), 1.0,
                  c.data().data());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - (2.0 + 0.5 * ref[i])) < 1e-12);
  }
}

TEST_CASE("cosine") {
  const std::vector<double> v{1.0, -2.0, 3.0};
  const std::vector<double> neg{-1.0, 2.0, -3.0};
  CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(v, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> x{1.0, 0.0}, y{1.0, 1.0};
  CHECK(cosine(x, y) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  const std::vector<double> zero{0.0, 0.0};
  CHECK(kind_of([&] { cosine(zero, x); }) == ErrorKind::kUndefinedSimilarity);
}

TEST_CASE("rng determinism and splitting") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  const Rng child1 = c.split(stream::kInit), child2 = c.split(stream::kInit);
  CHECK(child1.seed() == child2.seed());
  CHECK(c.split(stream::kInit).seed() != c.split(stream::kData).seed());
  CHECK(c.position() == 0);

  Rng u(7);
  double sum = 0, sumsq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sumsq / n - 1.0) < 0.02);

  auto p = Rng(3).permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}

TEST_CASE("uniform_int is unbiased on a small range") {
  Rng rng(5);
  std::vector<int> counts(3, 0);
  const int n = 300000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(3)];
  for (int c : counts) CHECK(std::abs(c - n / 3) < 1500);
}

TEST_CASE("svd") {
  SUBCASE("identity") {
    const auto r = svd(Tensor::identity(4));
    for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("signed diagonal") {
    const auto r = svd(Tensor::matrix({{3, 0}, {0, -2}}));
    CHECK(r.s[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(r.s[1] == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("random matrices: residuals and a Gram-matrix oracle") {
    Rng rng(21);
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{20, 12}, {12, 20}, {64, 64}}) {
      const Tensor m = random_matrix(r, c, rng);
      const auto res = svd(m);
      const std::size_t k = std::min(r, c);
      Tensor rec({r, c});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t t = 0; t < k; ++t) rec(i, j) += res.u(i, t) * res.s[t] * res.v(j, t);
      CHECK(frobenius_norm(rec - m) <= 1e-8 * std::max(1.0, frobenius_norm(m)));
      const Tensor utu = matmul(transpose(res.u), res.u);
      const Tensor vtv = matmul(transpose(res.v), res.v);
      CHECK(max_abs(utu - Tensor::identity(k)) < 1e-8);
      CHECK(max_abs(vtv - Tensor::identity(k)) < 1e-8);
      for (std::size_t t = 0; t + 1 < k; ++t) CHECK(res.s[t] >= res.s[t + 1]);
      const auto ref = oracle::singular_values_via_gram(c <= r ? m : transpose(m));
      for (std::size_t t = 0; t < k; ++t) CHECK(std::abs(res.s[t] - ref[t]) < 1e-8 * std::max(1.0, ref[0]));
      CHECK(singular_values(m) == res.s);
    }
  }
  SUBCASE("deterministic") {
    Rng rng(3);
    const Tensor m = random_matrix(9, 6, rng);
    const auto a = svd(m), b = svd(m);
    CHECK(a.u.bitwise_equal(b.u));
    CHECK(a.s == b.s);
  }
  SUBCASE("non-finite input") {
    Tensor m = Tensor::identity(3);
    m(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK(kind_of([&] { svd(m); }) == ErrorKind::kNumeric);
  }
}

TEST_CASE("hungarian") {
  SUBCASE("zero diagonal") {
    const auto a = hungarian(Tensor::matrix({{0, 9, 9}, {9, 0, 9}, {9, 9, 0}}));
    CHECK(a.perm == std::vector<std::size_t>{0, 1, 2});
    CHECK(a.total_cost == 0.0);
  }
  SUBCASE("two by two") {
    const auto a = hungarian(Tensor::matrix({{1, 2}, {3, 0}}));
    CHECK(a.perm == std::vector<std::size_t>{0, 1});
    CHECK(a.total_cost == 1.0);
  }
  SUBCASE("random matrices against exhaustive search") {
    Rng rng(99);
    for (std::size_t n = 1; n <= 6; ++n)
      for (int rep = 0; rep < 30; ++rep) {
        Tensor cost({n, n});
        for (auto& v : cost.data()) v = rng.uniform() * 10.0;
        const auto a = hungarian(cost);
        auto sorted = a.perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) CHECK(sorted[i] == i);
        CHECK(a.total_cost == assignment_cost(cost, a.perm));
        CHECK(a.total_cost == oracle::brute_force_assignment(cost));
      }
  }
  SUBCASE("non-square") { CHECK(kind_of([] { hungarian(Tensor({2, 3})); }) == ErrorKind::kDimension); }
}

TEST_CASE("backward basics") {
  SUBCASE("x squared") {
    Graph g;
    const Var x = g.leaf(Tensor::scalar(3.0));
    g.backward(ops::mul(g, x, x));
    CHECK(g.grad(x).item() == 6.0);
  }
  SUBCASE("constant loss") {
    Graph g;
    const Var p = g.leaf(Tensor::vector({1.0, 2.0}));
    const Var c = g.leaf(Tensor::scalar(5.0));
    const Var unrelated = ops::sum(g, ops::scale(g, p, 0.0));
    g.backward(ops::add(g, c, unrelated));
    CHECK(g.grad(p)[0] == 0.0);
    CHECK(g.grad(p)[1] == 0.0);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    const Var p = g.leaf(Tensor::vector({1.0, 2.0}));
    CHECK(kind_of([&] { g.backward(p); }) == ErrorKind::kContract);
  }
  SUBCASE("shared subexpression visited once, gradients accumulate") {
    Graph g;
    const Var x = g.leaf(Tensor::scalar(2.0));
    const Var y = ops::mul(g, x, x);
    const Var z = ops::add(g, y, y);
    g.backward(z);
    CHECK(g.grad(x).item() == 8.0);
    CHECK(g.backward_visits() == 2);
  }
}

TEST_CASE("primitive ops match finite differences") {
  Rng rng(8);
  const auto r = [&](std::size_t a, std::size_t b) { return random_matrix(a, b, rng); };

  SUBCASE("add, mul, scale, tanh") {
    check_gradients({r(3, 4), r(3, 4)}, [](Graph& g, const std::vector<Var>& v) {
      return ops::sum(g, ops::tanh(g, ops::mul(g, ops::add(g, v[0], v[1]), ops::scale(g, v[1], 0.7))));
    });
  }
  SUBCASE("matmul and reshape") {
    check_gradients({r(3, 4), r(4, 2)}, [](Graph& g, const std::vector<Var>& v) {
      const Var m = ops::reshape(g, ops::matmul(g, v[0], v[1]), {2, 3});
      return ops::sum(g, ops::mul(g, m, m));
    });
  }
  SUBCASE("linear") {
    check_gradients({r(5, 3), r(3, 4), r(1, 4).reshaped({4})}, [](Graph& g, const std::vector<Var>& v) {
      const Var y = ops::linear(g, v[0], v[1], v[2]);
      return ops::sum(g, ops::tanh(g, y));
    });
  }
  SUBCASE("gelu") {
    check_gradients({r(4, 5)}, [](Graph& g, const std::vector<Var>& v) {
      const Var y = ops::gelu(g, v[0]);
      return ops::sum(g, ops::mul(g, y, y));
    });
  }
  SUBCASE("layer norm") {
    Tensor gain = r(1, 6).reshaped({6});
    check_gradients({r(4, 6), gain, r(1, 6).reshaped({6})}, [](Graph& g, const std::vector<Var>& v) {
      const Var y = ops::layer_norm(g, v[0], v[1], v[2], 1e-12);
      return ops::sum(g, ops::tanh(g, y));
    });
  }
  SUBCASE("embedding and select_rows with repeats") {
    const std::vector<int> ids{2, 0, 2, 1};
    const std::vector<std::size_t> rows{3, 3, 0};
    check_gradients({r(3, 4)}, [&](Graph& g, const std::vector<Var>& v) {
      const Var e = ops::embedding(g, v[0], ids);
      const Var s = ops::select_rows(g, e, rows);
      return ops::sum(g, ops::mul(g, s, s));
    });
  }
  SUBCASE("attention with a padded key") {
    const ops::AttentionShape shape{2, 3, 2};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
    check_gradients({r(6, 4), r(6, 4), r(6, 4)}, [&](Graph& g, const std::vector<Var>& v) {
      const Var y = ops::attention(g, v[0], v[1], v[2], shape, mask);
      return ops::sum(g, ops::tanh(g, y));
    });
  }
  SUBCASE("cross entropy with ignored rows") {
    const std::vector<int> targets{2, -1, 0, 1};
    check_gradients({r(4, 3)}, [&](Graph& g, const std::vector<Var>& v) {
      return ops::cross_entropy(g, v[0], targets);
    });
  }
  SUBCASE("mse") {
    const std::vector<double> targets{0.5, -1.0, 2.0};
    check_gradients({r(3, 1)}, [&](Graph& g, const std::vector<Var>& v) { return ops::mse(g, v[0], targets); });
  }
}

TEST_CASE("attention probabilities") {
  Rng rng(4);
  const ops::AttentionShape shape{1, 4, 2};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0};
  Graph g;
  const Var q = g.leaf(random_matrix(4, 6, rng)), k = g.leaf(random_matrix(4, 6, rng));
  const Var v = g.leaf(random_matrix(4, 6, rng));
  Tensor probs;
  ops::attention(g, q, k, v, shape, mask, &probs);
  REQUIRE(probs.shape() == Shape{1, 2, 4, 4});
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double p = probs[(h * 4 + i) * 4 + j];
        CHECK(p >= 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
      CHECK(probs[(h * 4 + i) * 4 + 3] == 0.0);
    }
}

TEST_CASE("dropout") {
  Graph g;
  const Var x = g.leaf(Tensor({100, 10}, 1.0));
  Rng rng(1);
  const Var same = ops::dropout(g, x, 0.0, rng);
  CHECK(g.value(same).bitwise_equal(g.value(x)));
  const Var y = ops::dropout(g, x, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : g.value(y).data()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(1.0 / 0.75));
    }
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
}
