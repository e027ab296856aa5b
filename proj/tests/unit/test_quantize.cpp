// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "tetra/quantize.hpp"

using namespace tetra;
using namespace tetra::quant;

TEST_CASE("ternary_quantize worked example") {
  const auto t = ternary_quantize(Matrix::row_vector({0.5, -0.2, 1.5, -1.0}));
  CHECK(t.gamma == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(t.codes == std::vector<std::int8_t>{1, 0, 1, -1});
  for (std::size_t i = 0; i < 4; ++i) {
    const double w[] = {0.5, -0.2, 1.5, -1.0};
    CHECK(t.codes[i] == testing::ternary_code(w[i], 0.8));
  }
  CHECK(ternary_dequantize(t) == Matrix::row_vector({0.8, 0.0, 0.8, -0.8}));
}

TEST_CASE("ternary_quantize zero and symmetric inputs") {
  const auto z = ternary_quantize(Matrix(1, 4));
  CHECK(z.gamma == 0.0);
  CHECK(z.codes == std::vector<std::int8_t>{0, 0, 0, 0});
  for (const double c : {1e-3, 0.7, 5.0}) {
    const auto t = ternary_quantize(Matrix::row_vector({c, -c}));
    CHECK(t.gamma == doctest::Approx(c));
    CHECK(t.codes == std::vector<std::int8_t>{1, -1});
  }
}

TEST_CASE("ternary_quantize rejects bad input") {
  CHECK_THROWS_AS(ternary_quantize(Matrix()), std::invalid_argument);
  CHECK_THROWS_AS(ternary_quantize(Matrix::row_vector({1.0, std::nan("")})), std::invalid_argument);
  CHECK_THROWS_AS(ternary_quantize(Matrix::row_vector({std::numeric_limits<double>::infinity()})),
                  std::invalid_argument);
}

TEST_CASE("ternary rounding is half away from zero") {
  // w / gamma = +-0.5 exactly when the other entries fix gamma.
  // |0.5|, |-0.5|, |1.5|, |1.5| -> gamma = 1.0, ratios 0.5 / (1 + 1e-6) fall just below the tie.
  const auto t = ternary_quantize(Matrix::row_vector({0.5, -0.5, 1.5, -1.5}));
  CHECK(t.codes == std::vector<std::int8_t>{0, 0, 1, -1});
  CHECK(testing::ternary_code(0.5000011, 1.0) == 1);
  CHECK(testing::ternary_code(-0.5000011, 1.0) == -1);
}

TEST_CASE("ternary codes agree with the scalar oracle and are idempotent") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const Matrix w = testing::random_matrix(rng, 1 + rng.below(9), 1 + rng.below(9), rng.uniform(0.01, 3.0));
    const auto t = ternary_quantize(w);
    CHECK(t.gamma == doctest::Approx(testing::mean_abs(w)).epsilon(1e-12));
    for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(t.codes[i] == testing::ternary_code(w[i], t.gamma));
    CHECK(ternary_quantize(ternary_dequantize(t)).codes == t.codes);
  }
}

TEST_CASE("act_quantize worked examples") {
  const auto a = act_quantize(Matrix::row_vector({127.0, -64.0, 1.0}));
  CHECK(a.scales[0] == 1.0);
  CHECK(a.codes == std::vector<std::int8_t>{127, -64, 1});
  CHECK(act_dequantize(a) == Matrix::row_vector({127.0, -64.0, 1.0}));

  const auto z = act_quantize(Matrix(1, 3));
  CHECK(z.scales[0] == 0.0);
  CHECK(z.codes == std::vector<std::int8_t>{0, 0, 0});
  CHECK(act_dequantize(z) == Matrix(1, 3));

  const auto b = act_quantize(Matrix::row_vector({2.54, -1.27, 0.635}));
  CHECK(b.scales[0] == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(b.codes == std::vector<std::int8_t>{127, -64, 32});
  const Matrix back = act_dequantize(b);
  CHECK(back[0] == doctest::Approx(2.54));
  CHECK(back[1] == doctest::Approx(-1.28));
  CHECK(back[2] == doctest::Approx(0.64));
}

TEST_CASE("act_quantize per-row scales, oracle codes and reconstruction bound") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix x = testing::random_matrix(rng, 1 + rng.below(6), 1 + rng.below(20), rng.uniform(0.001, 100.0));
    if (trial % 7 == 0) {
      for (double& v : x.row(0)) v = 0.0;
    }
    const auto q = act_quantize(x);
    const Matrix back = act_dequantize(q);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double amax = 0.0;
      for (double v : x.row(r)) amax = std::max(amax, std::fabs(v));
      CHECK(q.scales[r] == doctest::Approx(amax / 127.0).epsilon(1e-12));
      for (std::size_t c = 0; c < x.cols(); ++c) {
        REQUIRE(std::abs(q.code(r, c)) <= 127);
        REQUIRE(q.code(r, c) == testing::int8_code(x(r, c), amax / 127.0));
        REQUIRE(std::fabs(back(r, c) - x(r, c)) <= q.scales[r] / 2.0 * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("act_quantize validates bit width and values") {
  CHECK_THROWS_AS(act_quantize(Matrix::row_vector({1.0}), 1), std::invalid_argument);
  CHECK_THROWS_AS(act_quantize(Matrix::row_vector({1.0}), 9), std::invalid_argument);
  CHECK_THROWS_AS(act_quantize(Matrix::row_vector({std::nan("")})), std::invalid_argument);
  const auto four = act_quantize(Matrix::row_vector({7.0, -3.5}), 4);
  CHECK(four.scales[0] == 1.0);
  CHECK(four.codes == std::vector<std::int8_t>{7, -4});
}

TEST_CASE("lambda schedule") {
  CHECK(lambda_schedule({2.0, 6.0, 3}) == 0.5);
  CHECK(lambda_at(0.37, 1.11, 1.11 / 0.37) == 0.5);
  CHECK(lambda_schedule({1.0, 5.0, 0}) == doctest::Approx(1.0 / (1.0 + std::exp(5.0))).epsilon(1e-12));
  CHECK(lambda_schedule({1.0, 5.0, 0}) == doctest::Approx(0.006693).epsilon(1e-4));
  CHECK(std::fabs(lambda_schedule({1.0, 0.0, 45}) - 1.0) <= 1e-15);
  double prev = 0.0;
  for (std::uint64_t t = 0; t < 60; ++t) {
    const double l = lambda_schedule({0.3, 9.0, t});
    CHECK(l > prev);
    CHECK(l < 1.0);
    prev = l;
  }
  CHECK_THROWS_AS(lambda_schedule({0.0, 1.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(lambda_schedule({-1.0, 1.0, 0}), std::invalid_argument);
}

TEST_CASE("blend_weights") {
  const Matrix w = Matrix::row_vector({0.5, -0.2, 1.5, -1.0});
  CHECK(blend_weights(w, 0.0) == w);
  CHECK(blend_weights(w, 1.0) == Matrix::row_vector({0.8, 0.0, 0.8, -0.8}));
  const Matrix half = blend_weights(w, 0.5);
  const double expected[] = {0.65, -0.1, 1.15, -0.9};
  for (std::size_t i = 0; i < 4; ++i) CHECK(half[i] == doctest::Approx(expected[i]).epsilon(1e-14));
  CHECK_THROWS_AS(blend_weights(w, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(blend_weights(w, 1.1), std::invalid_argument);

  Rng rng(3);
  const Matrix r = testing::random_matrix(rng, 5, 7);
  const Matrix q = ternary_dequantize(ternary_quantize(r));
  for (const double l : {0.1, 0.33, 0.9}) {
    const Matrix b = blend_weights(r, l);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(b[i] == doctest::Approx(r[i] + l * (q[i] - r[i])).epsilon(1e-14));
  }
}

TEST_CASE("ste_weight_grad masks outside gamma, boundary included") {
  const Matrix g = Matrix::row_vector({3.0, 4.0});
  CHECK(ste_weight_grad(g, Matrix::row_vector({0.5, 2.0}), 1.0) == Matrix::row_vector({3.0, 0.0}));
  CHECK(ste_weight_grad(Matrix::row_vector({7.0}), Matrix::row_vector({-1.0}), 1.0) == Matrix::row_vector({7.0}));
  CHECK(ste_weight_grad(g, Matrix::row_vector({50.0, -80.0}), std::numeric_limits<double>::infinity()) == g);
  CHECK_THROWS_AS(ste_weight_grad(g, Matrix::row_vector({1.0}), 1.0), std::invalid_argument);
}

TEST_CASE("ste_weight_grad is the derivative of the clamp surrogate") {
  Rng rng(8);
  const double eps = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix w = testing::random_matrix(rng, 3, 4);
    const double gamma = testing::mean_abs(w);
    const Matrix up = testing::random_matrix(rng, 3, 4);
    const Matrix g = ste_weight_grad(up, w, gamma);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (std::fabs(std::fabs(w[i]) - gamma) < 1e-3) continue;
      auto f = [&](double x) { return gamma * std::clamp(x / (gamma + eps), -1.0, 1.0); };
      const double h = 1e-5;
      const double fd = up[i] * (f(w[i] + h) - f(w[i] - h)) / (2 * h);
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("sign_binarize") {
  const std::vector<double> y = {0.3, -0.1, 0.0};
  const auto b = sign_binarize(y);
  CHECK(b.dim() == 3);
  CHECK(b.bit(0));
  CHECK_FALSE(b.bit(1));
  CHECK_FALSE(b.bit(2));
  CHECK(b.to_signs() == std::vector<double>{1.0, -1.0, -1.0});

  const std::vector<double> pos(70, 0.5);
  const auto all = sign_binarize(pos);
  for (std::size_t i = 0; i < 70; ++i) CHECK(all.bit(i));
  CHECK(all.words()[1] == (std::uint64_t{1} << 6) - 1);  // padding stays clear

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + rng.below(200));
    for (double& x : v) x = rng.normal();
    std::vector<double> scaled = v;
    for (double& x : scaled) x *= rng.uniform(0.01, 100.0);
    const auto e = sign_binarize(v);
    CHECK(e == sign_binarize(scaled));
    CHECK(sign_binarize(e.to_signs()) == e);
  }
  CHECK_THROWS_AS(sign_binarize(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(sign_binarize(std::vector<double>{std::nan("")}), std::invalid_argument);
}

TEST_CASE("BinaryEmbedding rejects padding bits and wrong word counts") {
  CHECK_NOTHROW(BinaryEmbedding(64, {~0ULL}));
  CHECK_THROWS_AS(BinaryEmbedding(3, {0b1000}), std::invalid_argument);
  CHECK_THROWS_AS(BinaryEmbedding(65, {0}), std::invalid_argument);
  BinaryEmbedding e(130);
  e.set_bit(129, true);
  CHECK(e.bit(129));
  e.set_bit(129, false);
  CHECK_FALSE(e.bit(129));
}
