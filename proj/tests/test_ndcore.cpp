#include "doctest.h"
#include "support.hpp"

#include "rejgen/adam.hpp"
#include "rejgen/autodiff.hpp"

#include <cstring>

using namespace rejgen;
using namespace rejgen::nd;
using testing::G;
using testing::Mat;
using testing::V;

namespace {

Mat row(std::initializer_list<double> xs) {
  Mat m(1, static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("forward examples") {
  G g;
  const V s = softmax_rows(g.constant(row({0.0, 0.0})));
  CHECK(s.value()(0, 0) == doctest::Approx(0.5));
  CHECK(s.value()(0, 1) == doctest::Approx(0.5));
  CHECK(log(g.constant(row({1.0}))).value()(0, 0) == 0.0);

  Rng rng(3);
  const Mat a = testing::random_mat(rng, 3, 4);
  CHECK(matmul(g.constant(Mat::Identity(3, 3)), g.constant(a)).value() == a);
}

TEST_CASE("log clamps at eps") {
  G g;
  const V x = g.leaf(row({0.0, -1.0}));
  const V y = log(x);
  CHECK(y.value()(0, 0) == doctest::Approx(std::log(kEps)));
  CHECK(y.value()(0, 1) == doctest::Approx(std::log(kEps)));
  g.backward(sum(y));
  CHECK(g.grad(x).isZero());
}

TEST_CASE("softmax is stable for large logits and rows sum to one") {
  G g;
  Rng rng(11);
  Mat big = testing::random_mat(rng, 5, 7, -800, 800);
  const V s = softmax_rows(g.constant(big));
  for (Index r = 0; r < 5; ++r) CHECK(std::abs(s.value().row(r).sum() - 1.0) < 1e-12);
  CHECK(s.value().allFinite());
  Mat bad = big;
  bad(2, 3) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax_rows(g.constant(bad)), std::domain_error);
}

TEST_CASE("shape errors name both shapes") {
  G g;
  const V a = g.constant(Mat::Zero(2, 3));
  const V b = g.constant(Mat::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("[2 x 3]") != std::string::npos);
    CHECK(what.find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, g.constant(Mat::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(mul(a, g.constant(Mat::Zero(1, 3))), ShapeError);
}

TEST_CASE("backward examples") {
  {
    G g;
    const V x = g.leaf(row({3.0}));
    g.backward(mul(x, x));
    CHECK(g.grad(x)(0, 0) == doctest::Approx(6.0));
  }
  {
    G g;
    const V p = g.leaf(row({0.5}));
    g.backward(scale(log(p), -1.0));
    CHECK(g.grad(p)(0, 0) == doctest::Approx(-2.0));
  }
}

TEST_CASE("backward requires a scalar root") {
  G g;
  const V x = g.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("fan-out accumulates and unreachable leaves get zero") {
  G g;
  const V x = g.leaf(row({2.0}));
  const V unused = g.leaf(row({5.0, 1.0}));
  const V y = add(add(x, x), mul(x, x));  // 2x + x^2
  g.backward(y);
  CHECK(g.grad(x)(0, 0) == doctest::Approx(6.0));
  CHECK(g.grad(unused) == Mat::Zero(1, 2));
}

TEST_CASE("gradient check: elementwise and reductions") {
  Rng rng(7);
  using Leaves = std::vector<V>;
  const Mat a = testing::random_mat(rng, 3, 4);
  const Mat b = testing::random_mat(rng, 3, 4);
  const Mat w = testing::random_mat(rng, 4, 2);
  const Mat r = testing::random_mat(rng, 1, 4);

  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(matmul(x[0], x[1])); }, {a, w}) < 1e-6);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return mean(mul(add(x[0], x[1]), sub(x[0], x[1]))); }, {a, b}) < 1e-6);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(mul(add_rowwise(x[0], x[1]), x[0])); }, {a, r}) < 1e-6);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(rsub(1.5, scale(x[0], 0.3))); }, {a}) < 1e-6);
  const Mat pos = testing::random_mat(rng, 2, 3, 0.2, 2.0);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(log(x[0])); }, {pos}) < 1e-6);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(mul(relu(x[0]), x[0])); }, {a}) < 1e-6);
  CHECK(testing::gradcheck([](G&, Leaves& x) { return sum(max_rows(mul(x[0], x[1]))); }, {a, b}) < 1e-6);
}

TEST_CASE("gradient check: softmax, layer norm, structural ops") {
  Rng rng(8);
  using Leaves = std::vector<V>;
  const Mat a = testing::random_mat(rng, 3, 5);
  const Mat c = testing::random_mat(rng, 3, 5);
  const Mat gain = testing::random_mat(rng, 1, 5, 0.5, 1.5);
  const Mat bias = testing::random_mat(rng, 1, 5);

  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          return sum(mul(softmax_rows(x[0]), g.constant(c)));
        }, {a}) < 1e-6);
  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          return sum(mul(layer_norm(x[0], x[1], x[2]), g.constant(c)));
        }, {a, gain, bias}) < 1e-5);
  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          const std::vector<V> parts{x[0], slice_rows(x[1], 1, 2)};
          Rng local(1);
          return sum(mul(concat_rows<double>(parts), g.constant(testing::random_mat(local, 5, 5))));
        }, {a, c}) < 1e-6);
  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          const std::vector<V> parts{x[0], x[1]};
          Rng local(2);
          return sum(mul(concat_cols<double>(parts), g.constant(testing::random_mat(local, 3, 10))));
        }, {a, c}) < 1e-6);
  const std::vector<int> ids{2, 0, 2, 1};
  const std::vector<int> cols{4, 0, 3};
  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          Rng local(3);
          return sum(mul(embed(x[0], std::span<const int>(ids)), g.constant(testing::random_mat(local, 4, 5))));
        }, {a}) < 1e-6);
  CHECK(testing::gradcheck([&](G&, Leaves& x) { return sum(pick(mul(x[0], x[0]), std::span<const int>(cols))); }, {a}) < 1e-6);
  Mat mask = Mat::Zero(3, 5);
  mask(0, 1) = mask(2, 4) = 1.0;
  CHECK(testing::gradcheck([&](G& g, Leaves& x) {
          return sum(mul(softmax_rows(mask_fill(x[0], mask, -1e9)), g.constant(c)));
        }, {a}) < 1e-6);
}

TEST_CASE("gradient check: segmented attention") {
  Rng rng(9);
  const Mat q = testing::random_mat(rng, 5, 4);
  const Mat k = testing::random_mat(rng, 7, 4);
  const Mat v = testing::random_mat(rng, 7, 3);
  const Mat w = testing::random_mat(rng, 5, 3);
  const std::vector<AttentionSegment> cross{{0, 2, 0, 3}, {2, 3, 3, 4}};
  const std::vector<AttentionSegment> causal{{0, 2, 0, 2}, {2, 3, 2, 3}};
  for (bool is_causal : {false, true}) {
    const auto& segs = is_causal ? causal : cross;
    CHECK(testing::gradcheck([&](G& g, std::vector<V>& x) {
            return sum(mul(attention(x[0], x[1], x[2], std::span<const AttentionSegment>(segs), is_causal),
                           g.constant(w)));
          }, {q, k, v}) < 1e-6);
  }
}

TEST_CASE("causal attention ignores later keys") {
  Rng rng(10);
  Mat q = testing::random_mat(rng, 3, 4), k = testing::random_mat(rng, 3, 4), v = testing::random_mat(rng, 3, 2);
  const std::vector<AttentionSegment> seg{{0, 3, 0, 3}};
  G g;
  const Mat before = attention(g.constant(q), g.constant(k), g.constant(v), std::span<const AttentionSegment>(seg), true).value();
  k.row(2).setConstant(9.0);
  v.row(2).setConstant(-4.0);
  const Mat after = attention(g.constant(q), g.constant(k), g.constant(v), std::span<const AttentionSegment>(seg), true).value();
  CHECK(before.topRows(2) == after.topRows(2));
  CHECK(before.row(2) != after.row(2));
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    Rng rng(42);
    G g;
    const V a = g.leaf(testing::random_mat(rng, 4, 6));
    const V w = g.leaf(testing::random_mat(rng, 6, 6));
    const V out = mean(log(softmax_rows(matmul(a, w))));
    g.backward(out);
    return std::pair{g.grad(a), g.grad(w)};
  };
  const auto [a1, w1] = run();
  const auto [a2, w2] = run();
  CHECK(std::memcmp(a1.data(), a2.data(), sizeof(double) * a1.size()) == 0);
  CHECK(std::memcmp(w1.data(), w2.data(), sizeof(double) * w1.size()) == 0);
}

TEST_CASE("property: softmax rows sum to one on random inputs") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 1 + rng.uniform_int(6), c = 1 + rng.uniform_int(40);
    const double spread = std::pow(10.0, rng.uniform() * 3.0);
    G g;
    const V s = softmax_rows(g.constant(testing::random_mat(rng, r, c, -spread, spread)));
    for (Index i = 0; i < r; ++i) REQUIRE(std::abs(s.value().row(i).sum() - 1.0) < 1e-12);
    REQUIRE((s.value().array() >= 0.0).all());
  }
}

// ---------------------------------------------------------------- Adam

TEST_CASE("adam: first step from zero state moves by about lr") {
  Mat p = row({1.0});
  std::vector<Mat*> params{&p};
  std::vector<Mat> grads{row({1.0})};
  AdamState<double> st;
  adam_step<double>(params, grads, st, {.lr = 0.1});
  CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(st.step == 1);
}

TEST_CASE("adam: zero gradient leaves params unchanged") {
  Mat p = row({0.3, -2.0});
  const Mat before = p;
  std::vector<Mat*> params{&p};
  std::vector<Mat> grads{Mat::Zero(1, 2)};
  AdamState<double> st;
  adam_step<double>(params, grads, st, {});
  CHECK(p == before);
  CHECK(st.step == 1);
}

TEST_CASE("adam: identical params and gradients update identically") {
  Mat a = row({0.5, 0.25}), b = a;
  std::vector<Mat*> params{&a, &b};
  std::vector<Mat> grads{row({0.1, -3.0}), row({0.1, -3.0})};
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step<double>(params, grads, st, {});
  CHECK(a == b);
}

TEST_CASE("adam: non-finite gradient aborts before mutating") {
  Mat a = row({1.0}), b = row({2.0});
  std::vector<Mat*> params{&a, &b};
  std::vector<Mat> grads{row({1.0}), row({std::nan("")})};
  AdamState<double> st;
  CHECK_THROWS_AS(adam_step<double>(params, grads, st, {}), NonFiniteGradient);
  CHECK(a(0, 0) == 1.0);
  CHECK(st.step == 0);
  CHECK(st.m.empty());
  std::vector<Mat> wrong{row({1.0})};
  CHECK_THROWS_AS(adam_step<double>(params, wrong, st, {}), ShapeError);
}

TEST_CASE("adam: matches a hand-rolled recurrence over several steps") {
  Mat p = row({0.7});
  std::vector<Mat*> params{&p};
  AdamState<double> st;
  double x = 0.7, m = 0, v = 0;
  const double gs[] = {0.3, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    std::vector<Mat> grads{row({gs[t - 1]})};
    adam_step<double>(params, grads, st, {.lr = 0.01});
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(p(0, 0) == doctest::Approx(x).epsilon(1e-14));
}
