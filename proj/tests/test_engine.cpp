#include <cmath>
#include <vector>

#include "doctest.h"
#include "mixenc/math_fast.hpp"
#include "mixenc/ops.hpp"
#include "mixenc/rng.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mixenc;
using testutil::from_f64;
using testutil::max_rel_err;
using testutil::random_tensor;
using testutil::to_f64;

namespace {
template <class T>
constexpr double fwd_tol() {
  return std::is_same_v<T, float> ? 1e-5 : 1e-10;
}
}  // namespace

TEST_CASE("philox stream is reproducible and splittable") {
  Philox a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());
  Philox c = Philox(42).split(1), d = Philox(42).split(2);
  CHECK(c.next_u64() != d.next_u64());
  // normal() draws stay finite and roughly centered
  Philox e(7);
  double acc = 0;
  for (int i = 0; i < 1000; ++i) {
    const double v = e.normal(0.0, 1.0);
    CHECK(std::isfinite(v));
    acc += v;
  }
  CHECK(std::abs(acc / 1000.0) < 0.15);
}

TEST_CASE("fast float exp/tanh stay within a few ulp of libm") {
  Philox rng(3);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const float x = static_cast<float>(rng.uniform(-30.0, 10.0));
    const double want = std::exp(static_cast<double>(x));
    worst = std::max(worst, std::abs(fm::fast_expf(x) - want) / want);
  }
  CHECK(worst < 3e-7);
  worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const float x = static_cast<float>(rng.uniform(-12.0, 12.0));
    const double want = std::tanh(static_cast<double>(x));
    worst = std::max(worst, std::abs(fm::fast_tanhf(x) - want));
  }
  CHECK(worst < 3e-7);
}

TEST_CASE_TEMPLATE("matmul identity and hand example", T, float, double) {
  auto x = from_f64<T>({3, -1, 2, 5}, {2, 2});
  auto eye = from_f64<T>({1, 0, 0, 1}, {2, 2});
  auto y = matmul(eye, x);
  for (int i = 0; i < 4; ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]));

  auto a = from_f64<T>({1, 2, 3, 4}, {2, 2});
  auto b = from_f64<T>({5, 6}, {2, 1});
  auto c = matmul(a, b);
  CHECK(c.values()[0] == doctest::Approx(17));
  CHECK(c.values()[1] == doctest::Approx(39));
}

TEST_CASE_TEMPLATE("matmul matches triple-loop oracle", T, float, double) {
  Philox rng(11);
  auto a = random_tensor<T>(rng, {7, 5});
  auto b = random_tensor<T>(rng, {5, 3});
  auto c = matmul(a, b);
  auto want = oracle::matmul(to_f64(a), to_f64(b), 7, 5, 3);
  CHECK(max_rel_err(c, want) < fwd_tol<T>());
  CHECK(max_rel_err(c, want) < 1e-6);  // the hand-loop tolerance
}

TEST_CASE_TEMPLATE("matmul dimension mismatch raises", T, float, double) {
  Philox rng(1);
  auto a = random_tensor<T>(rng, {2, 3});
  auto b = random_tensor<T>(rng, {4, 2});
  CHECK_THROWS_AS((void)matmul(a, b), EngineError);
}

TEST_CASE("batched matmul broadcasts leading dims and is slice-exact") {
  Philox rng(5);
  auto a = random_tensor<float>(rng, {4, 3, 5});
  auto w = random_tensor<float>(rng, {5, 2});
  auto c = matmul(a, w);
  CHECK(c.shape() == Shape{4, 3, 2});
  for (int s = 0; s < 4; ++s) {
    auto slice_a = slice(a, 0, s, 1);
    auto cs = matmul(reshape(slice_a, {3, 5}), w);
    for (int i = 0; i < 6; ++i)
      CHECK(c.values()[s * 6 + i] == cs.values()[i]);  // bitwise
  }
}

TEST_CASE_TEMPLATE("softmax symmetry, mask and oracle", T, float, double) {
  auto x = from_f64<T>({0, 0, 0}, {1, 3});
  auto y = softmax_lastdim(x);
  for (int i = 0; i < 3; ++i)
    CHECK(y.values()[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));

  // big logits + mask: stabilized, masked entry exactly zero
  auto z = from_f64<T>({1000, 1000, -5}, {1, 3});
  auto m = from_f64<T>({1, 1, 0}, {1, 3});
  auto w = softmax_lastdim(z, &m);
  CHECK(w.values()[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(w.values()[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(w.values()[2] == T(0));

  Philox rng(17);
  auto r = random_tensor<T>(rng, {4, 6}, -3, 3);
  auto yr = softmax_lastdim(r);
  auto want = oracle::softmax_rows(to_f64(r), 4, 6);
  CHECK(max_rel_err(yr, want) < fwd_tol<T>());
  // rows sum to one
  for (int row = 0; row < 4; ++row) {
    T s = 0;
    for (int j = 0; j < 6; ++j) s += yr.values()[row * 6 + j];
    CHECK(std::abs(static_cast<double>(s) - 1.0) < 1e-6);
  }

  auto all_masked = from_f64<T>({0, 0}, {1, 2});
  auto zero_mask = from_f64<T>({0, 0}, {1, 2});
  CHECK_THROWS_AS((void)softmax_lastdim(all_masked, &zero_mask), EngineError);
}

TEST_CASE_TEMPLATE("linear identity and hand example", T, float, double) {
  auto x = from_f64<T>({1, 1}, {1, 2});
  auto w = from_f64<T>({2, 3}, {2, 1});
  auto b = from_f64<T>({1}, {1});
  auto y = linear(x, w, b);
  CHECK(y.values()[0] == doctest::Approx(6));

  auto eye = from_f64<T>({1, 0, 0, 1}, {2, 2});
  auto zero_b = from_f64<T>({0, 0}, {2});
  auto idy = linear(x, eye, zero_b);
  CHECK(idy.values()[0] == doctest::Approx(1));
  CHECK(idy.values()[1] == doctest::Approx(1));
}

TEST_CASE_TEMPLATE("attention singleton key returns V up to projection", T,
                   float, double) {
  Philox rng(23);
  auto q = random_tensor<T>(rng, {3, 8});
  auto k = random_tensor<T>(rng, {1, 8});
  auto v = random_tensor<T>(rng, {1, 8});
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 8 + i] = 1.0;
  auto wo = from_f64<T>(eye, {8, 8});
  Tensor<T> no_bias;
  auto y = multihead_attention(q, k, v, 2, wo, no_bias);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(static_cast<double>(y.values()[i * 8 + j]) ==
            doctest::Approx(static_cast<double>(v.values()[j])).epsilon(1e-5));
}

TEST_CASE_TEMPLATE("attention matches loop oracle", T, float, double) {
  Philox rng(29);
  auto q = random_tensor<T>(rng, {3, 8});
  auto k = random_tensor<T>(rng, {4, 8});
  auto v = random_tensor<T>(rng, {4, 8});
  auto wo = random_tensor<T>(rng, {8, 8});
  auto bo = random_tensor<T>(rng, {8});
  auto y = multihead_attention(q, k, v, 2, wo, bo);
  auto want = oracle::attention(to_f64(q), to_f64(k), to_f64(v), 3, 4, 8, 2,
                                to_f64(wo), to_f64(bo));
  CHECK(max_rel_err(y, want) < (std::is_same_v<T, float> ? 1e-5 : 1e-10));

  auto bad = random_tensor<T>(rng, {4, 9});
  CHECK_THROWS_AS(
      (void)multihead_attention(bad, bad, bad, 2, wo, bo), EngineError);
}

TEST_CASE_TEMPLATE("layer_norm constant row is zero before scale/shift", T,
                   float, double) {
  auto x = from_f64<T>({5, 5, 5, 5}, {1, 4});
  auto g = from_f64<T>({1, 1, 1, 1}, {4});
  auto b = from_f64<T>({0, 0, 0, 0}, {4});
  auto y = layer_norm(x, g, b);
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(static_cast<double>(y.values()[i])) < 1e-6);
}

TEST_CASE_TEMPLATE("gelu(0) == 0 and ffn matches composed oracle", T, float,
                   double) {
  auto z = from_f64<T>({0}, {1, 1});
  CHECK(gelu(z).values()[0] == T(0));

  Philox rng(31);
  auto x = random_tensor<T>(rng, {3, 4});
  auto w1 = random_tensor<T>(rng, {4, 16});
  auto b1 = random_tensor<T>(rng, {16});
  auto w2 = random_tensor<T>(rng, {16, 4});
  auto b2 = random_tensor<T>(rng, {4});
  auto y = ffn(x, w1, b1, w2, b2);
  auto want = oracle::ffn(to_f64(x), to_f64(w1), to_f64(b1), to_f64(w2),
                          to_f64(b2), 3, 4, 16);
  CHECK(max_rel_err(y, want) < (std::is_same_v<T, float> ? 1e-5 : 1e-10));
}

TEST_CASE("movement ops round-trip") {
  Philox rng(37);
  auto x = random_tensor<float>(rng, {2, 3, 4});
  auto p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  auto back = permute(p, {1, 2, 0});
  for (int i = 0; i < 24; ++i) CHECK(back.values()[i] == x.values()[i]);

  auto r = reshape(x, {6, 4});
  CHECK(r.data() == x.data());  // zero-copy view

  auto s = slice(x, 1, 1, 2);
  CHECK(s.shape() == Shape{2, 2, 4});
  auto s2 = slice(x, 1, 0, 1);
  auto cat = concat({s2, s}, 1);
  for (int i = 0; i < 24; ++i) CHECK(cat.values()[i] == x.values()[i]);

  auto b = broadcast_to(reshape(slice(x, 0, 0, 1), {1, 3, 4}), {5, 3, 4});
  CHECK(b.shape() == Shape{5, 3, 4});
  for (int s5 = 0; s5 < 5; ++s5)
    for (int i = 0; i < 12; ++i)
      CHECK(b.values()[s5 * 12 + i] == x.values()[i]);
}

TEST_CASE("reductions") {
  auto x = from_f64<float>({1, 2, 3, 4, 5, 6}, {2, 3});
  auto s0 = reduce_sum(x, 0);
  CHECK(s0.shape() == Shape{3});
  CHECK(s0.values()[0] == 5);
  auto s1 = reduce_sum(x, 1, true);
  CHECK(s1.shape() == Shape{2, 1});
  CHECK(s1.values()[1] == 15);
  auto m = reduce_mean(x, 1);
  CHECK(m.values()[0] == doctest::Approx(2.0));
  auto mx = reduce_max(x, 1);
  CHECK(mx.values()[0] == 3);
  CHECK(mx.values()[1] == 6);
  auto all = reduce_sum_all(x);
  CHECK(all.item() == 21);
}

TEST_CASE("broadcast binary ops against manual expectation") {
  auto a = from_f64<float>({1, 2, 3, 4, 5, 6}, {2, 3});
  auto b = from_f64<float>({10, 20, 30}, {3});
  auto y = add(a, b);
  CHECK(y.values()[0] == 11);
  CHECK(y.values()[5] == 36);
  auto col = from_f64<float>({100, 200}, {2, 1});
  auto z = add(a, col);
  CHECK(z.values()[2] == 103);
  CHECK(z.values()[3] == 204);
  auto d = div(a, b);
  CHECK(d.values()[4] == doctest::Approx(0.25));
}

TEST_CASE("backward: sum gives ones; twice without reset throws") {
  Philox rng(41);
  auto x = random_tensor<double>(rng, {3, 4}, -1, 1, true);
  auto loss = reduce_sum_all(x);
  loss.backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  CHECK_THROWS_AS(loss.backward(), EngineError);
}

TEST_CASE("backward: matmul sum matches finite differences") {
  Philox rng(43);
  auto a = random_tensor<double>(rng, {3, 4}, -1, 1, true);
  auto b = random_tensor<double>(rng, {4, 2}, -1, 1, true);
  const double err = testutil::gradcheck(
      {a, b}, [&] { return reduce_sum_all(matmul(a, b)); });
  CHECK(err < 1e-4);
}

TEST_CASE("backward: primitive op gradients vs finite differences") {
  Philox rng(47);
  auto check = [&](const std::function<Tensor<double>()>& f,
                   std::vector<Tensor<double>> params, double tol = 1e-4) {
    CHECK(testutil::gradcheck(std::move(params), f) < tol);
  };

  auto x = random_tensor<double>(rng, {2, 5}, -2, 2, true);
  check([&] { return reduce_sum_all(gelu(x)); }, {x});
  check([&] { return reduce_sum_all(sigmoid(x)); }, {x});
  check([&] { return reduce_sum_all(exp_(scale(x, 0.3))); }, {x});
  check([&] { return reduce_sum_all(mul(x, x)); }, {x});
  check([&] { return reduce_sum_all(softmax_lastdim(x)); }, {x});
  check([&] { return reduce_sum_all(mul(softmax_lastdim(x), x)); }, {x});

  auto g = random_tensor<double>(rng, {5}, 0.5, 1.5, true);
  auto b = random_tensor<double>(rng, {5}, -0.5, 0.5, true);
  check([&] { return reduce_sum_all(mul(layer_norm(x, g, b), x)); }, {x, g, b});

  auto w = random_tensor<double>(rng, {5, 3}, -1, 1, true);
  auto bias = random_tensor<double>(rng, {3}, -1, 1, true);
  check([&] { return reduce_sum_all(abs_(linear(x, w, bias))); }, {x, w, bias});

  auto q = random_tensor<double>(rng, {3, 8}, -1, 1, true);
  auto k = random_tensor<double>(rng, {4, 8}, -1, 1, true);
  auto v = random_tensor<double>(rng, {4, 8}, -1, 1, true);
  auto wo = random_tensor<double>(rng, {8, 8}, -1, 1, true);
  auto bo = random_tensor<double>(rng, {8}, -1, 1, true);
  check(
      [&] {
        auto y = multihead_attention(q, k, v, 2, wo, bo);
        return reduce_sum_all(mul(y, y));
      },
      {q, k, v, wo, bo}, 1e-3);

  // reductions and movement
  check([&] { return reduce_sum_all(reduce_max(x, 1)); }, {x});
  check([&] { return reduce_sum_all(mul(broadcast_to(reduce_mean(x, 0, true),
                                                     {2, 5}),
                                        x)); },
        {x});
  check(
      [&] {
        std::vector<Tensor<double>> parts = {slice(x, 1, 0, 2), x};
        return reduce_sum_all(concat(parts, 1));
      },
      {x});
  check([&] { return reduce_sum_all(permute(mul(x, x), {1, 0})); }, {x});
  check([&] { return reduce_sum_all(div(x, exp_(x))); }, {x});
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  auto y = reduce_sum_all(mul(x, x));
  CHECK_THROWS_AS(y.backward(), EngineError);
}

TEST_CASE("embedding rows gather and scatter gradients") {
  auto table = Tensor<double>::from_data({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  auto out = embedding_rows(table, {1, 3, 1});
  CHECK(out.values()[0] == 2);
  CHECK(out.values()[2] == 6);
  auto loss = reduce_sum_all(out);
  loss.backward();
  CHECK(table.grad()[2] == 2.0);  // row 1 used twice
  CHECK(table.grad()[6] == 1.0);
  CHECK(table.grad()[0] == 0.0);
  CHECK_THROWS_AS((void)embedding_rows(table, {4}), EngineError);
}

TEST_CASE("engine determinism: same seed, same op sequence, same bits") {
  auto run = [] {
    Philox rng(123);
    auto a = random_tensor<float>(rng, {6, 6});
    auto b = random_tensor<float>(rng, {6, 6});
    auto y = softmax_lastdim(matmul(gelu(a), b));
    return y.values();
  };
  auto v1 = run();
  auto v2 = run();
  CHECK(v1 == v2);
}
