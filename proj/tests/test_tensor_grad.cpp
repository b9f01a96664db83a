// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "mtdet/autodiff.hpp"
#include "mtdet/params.hpp"
#include "mtdet_verify/oracles.hpp"

using namespace mtdet;
using testing::random_tensor;

TEST_SUITE("tensor-grad") {
  TEST_CASE("tensor construction and shape errors") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.at(1, 2) == 1.5);
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    t[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
  }

  TEST_CASE("elementwise ops reject mismatched shapes") {
    Graph g;
    const Var a = g.constant(Tensor({2, 2}, 1.0)), b = g.constant(Tensor({2, 3}, 1.0));
    CHECK_THROWS_AS(add(g, a, b), ShapeError);
    CHECK_THROWS_AS(mul(g, a, b), ShapeError);
    CHECK_THROWS_AS(g.backward(a), ShapeError);  // non-scalar loss
  }

  TEST_CASE("gradient accumulates over repeated use") {
    Graph g;
    const Var x = g.leaf(Tensor({3}, std::vector<double>{1, -2, 3}));
    g.backward(sum(g, mul(g, x, x)));
    const Tensor gx = g.grad(x);
    CHECK(gx[0] == 2.0);
    CHECK(gx[1] == -4.0);
    CHECK(gx[2] == 6.0);
  }

  TEST_CASE("constants receive no gradient") {
    Graph g;
    const Var c = g.constant(Tensor({2}, 3.0));
    const Var x = g.leaf(Tensor({2}, 2.0));
    g.backward(sum(g, mul(g, c, x)));
    CHECK(g.grad(c)[0] == 0.0);
    CHECK(g.grad(x)[0] == 3.0);
  }

  TEST_CASE("relu passes positive entries only") {
    Graph g;
    const Var x = g.leaf(Tensor({4}, std::vector<double>{-1, 0.5, 2, -0.1}));
    const Var y = relu(g, x);
    CHECK(g.value(y) == Tensor({4}, std::vector<double>{0, 0.5, 2, 0}));
    g.backward(sum(g, y));
    CHECK(g.grad(x) == Tensor({4}, std::vector<double>{0, 1, 1, 0}));
  }

  TEST_CASE("softmax is stable for large logits") {
    const Tensor p = softmax_rows(Tensor({1, 3}, std::vector<double>{1000, 1000, -1000}));
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    CHECK(p[2] == doctest::Approx(0.0));
  }

  TEST_CASE("loss values match closed forms") {
    Graph g;
    const Var logits = g.constant(Tensor({2, 2}, std::vector<double>{0, 0, 3, 1}));
    const double ce = g.value(cross_entropy_rows(g, logits, {0, 1}))[0];
    CHECK(ce == doctest::Approx(std::log(2.0) + (std::log(std::exp(3.0) + std::exp(1.0)) - 1.0)));

    const double beta = 1.0 / 9.0;
    const Var pred = g.constant(Tensor({1, 2}, std::vector<double>{0.05, -2.0}));
    const double sl = g.value(smooth_l1(g, pred, Tensor({1, 2}, 0.0)))[0];
    CHECK(sl == doctest::Approx(0.5 * 0.05 * 0.05 / beta + (2.0 - 0.5 * beta)));

    const Var r = g.constant(Tensor({2, 2}, std::vector<double>{3, 4, 0, 1}));
    CHECK(g.value(row_l2_norm_sum(g, r, Tensor({2, 2}, 0.0)))[0] == doctest::Approx(6.0));
    CHECK(g.value(l2_residual_norm(g, r, Tensor({2, 2}, 0.0)))[0] == doctest::Approx(std::sqrt(26.0)));
  }

  TEST_CASE("kl divergence matches the reference and is zero on identical rows") {
    std::mt19937_64 rng(4);
    const Tensor p = oracle::softmax_rows(random_tensor({3, 4}, rng, -2, 2));
    const Tensor q = oracle::softmax_rows(random_tensor({3, 4}, rng, -2, 2));
    Graph g;
    CHECK(g.value(kl_div(g, p, g.constant(q)))[0] == doctest::Approx(oracle::kl(p, q)));
    CHECK(g.value(kl_div(g, p, g.constant(p)))[0] == 0.0);
  }

  TEST_CASE("conv2d and linear match naive loops") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
      const Tensor x = random_tensor({3, 9, 7}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
      Graph g;
      const Tensor got = g.value(conv2d(g, g.constant(x), g.constant(k), g.constant(b), 1 + i % 2, i % 2));
      const Tensor want = oracle::conv2d(x, k, b, 1 + i % 2, i % 2);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t j = 0; j < got.size(); ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
    }
    const Tensor x = random_tensor({5, 6}, rng), w = random_tensor({3, 6}, rng), b = random_tensor({3}, rng);
    Graph g;
    const Tensor got = g.value(linear(g, g.constant(x), g.constant(w), g.constant(b)));
    const Tensor want = oracle::linear(x, w, b);
    for (std::size_t j = 0; j < got.size(); ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
  }

  TEST_CASE("composite gradient agrees with central differences") {
    std::mt19937_64 rng(6);
    ParamSet p;
    p.add("k", random_tensor({2, 2, 3, 3}, rng));
    p.add("b", random_tensor({2}, rng, 0.1, 0.2));
    p.add("w", random_tensor({3, 8}, rng));
    p.add("c", random_tensor({3}, rng));
    const Tensor x = random_tensor({2, 4, 4}, rng);
    auto loss = [&](Graph& g, const BoundParams& bp) {
      const Var f = max_pool2d(g, relu(g, conv2d(g, g.constant(x), bp["k"], bp["b"], 1, 1)), 2);
      const Var logits = linear(g, reshape(g, f, {1, 8}), bp["w"], bp["c"]);
      return cross_entropy_rows(g, logits, {1});
    };
    Graph g;
    BoundParams bp(g, p, true);
    g.backward(loss(g, bp));
    const ParamSet analytic = bp.gradients(g);
    const ParamSet numeric = oracle::numeric_gradient(
        [&](const ParamSet& q) {
          Graph h;
          BoundParams b2(h, q, false);
          return h.value(loss(h, b2))[0];
        },
        p, 1e-6);
    CHECK(oracle::max_rel_error(analytic, numeric, 1e-6) < 1e-5);
  }

  TEST_CASE("roi_pool rejects proposals outside the feature map") {
    Graph g;
    const Var f = g.constant(Tensor({1, 4, 4}, 1.0));
    CHECK_THROWS(roi_pool(g, f, {{100, 100, 120, 120}}, 8, 2));
    CHECK(g.value(roi_pool(g, f, {{0, 0, 16, 16}}, 8, 2)).shape() == Shape{1, 4});
  }

  TEST_CASE("parameter sets save and load exactly") {
    std::mt19937_64 rng(7);
    ParamSet p;
    p.add("a.weight", random_tensor({2, 3}, rng));
    p.add("a.bias", random_tensor({3}, rng));
    p.meta()["note"] = "x";
    std::stringstream ss;
    p.save(ss);
    const ParamSet q = ParamSet::load(ss);
    CHECK(q == p);
    CHECK(q.numel() == 9);
    std::stringstream bad("garbage");
    CHECK_THROWS(ParamSet::load(bad));
  }

  TEST_CASE("sgd with momentum follows v = m v + g, w -= lr v") {
    ParamSet w;
    w.add("x", Tensor({1}, 1.0));
    ParamSet g;
    g.add("x", Tensor({1}, 2.0));
    SgdMomentum opt(0.1, 0.9);
    opt.step(w, g);
    CHECK(w.get("x")[0] == doctest::Approx(0.8));
    opt.step(w, g);
    CHECK(w.get("x")[0] == doctest::Approx(0.8 - 0.1 * (0.9 * 2 + 2)));
  }

  TEST_CASE("ema update blends toward the student") {
    ParamSet t, s;
    t.add("x", Tensor({1}, 1.0));
    s.add("x", Tensor({1}, 0.0));
    ema_update(t, s, 0.9);
    CHECK(t.get("x")[0] == doctest::Approx(0.9));
    ParamSet other;
    other.add("y", Tensor({1}, 0.0));
    CHECK_THROWS_AS(ema_update(t, other, 0.9), ShapeError);
  }
}
