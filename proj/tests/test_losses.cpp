#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "saek/losses.hpp"

using namespace saek;

namespace {

double ce(const std::vector<std::size_t>& labels, const TensorD& logits) {
  Tape<double> tape;
  return cross_entropy(tape.leaf(logits), labels).value()[0];
}

double bce(const TensorD& logits, const TensorD& targets) {
  Tape<double> tape;
  return bce_with_logits(tape.leaf(logits), targets).value()[0];
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("cross-entropy reference values") {
    CHECK(ce({0}, TensorD::from({1, 4}, {1000, 0, 0, 0})) == doctest::Approx(0.0));
    CHECK(std::abs(ce({2}, TensorD::from({1, 4}, {0, 0, 0, 0})) - std::log(4.0)) < 1e-12);
    // Naive two-step oracle: softmax then log.
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(ce({2}, TensorD::from({1, 3}, {1, 2, 3})) + std::log(std::exp(3.0) / z)) < 1e-12);
  }

  TEST_CASE("cross-entropy is a mean over rows and matches the naive oracle for |logits| <= 20") {
    const auto logits = test::random<double>(Shape{16, 5}, 3, -20, 20);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 16; ++i) labels.push_back(i % 5);
    double naive = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      double z = 0.0;
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits[i * 5 + c]);
      naive -= std::log(std::exp(logits[i * 5 + labels[i]]) / z);
    }
    CHECK(std::abs(ce(labels, logits) - naive / 16) < 1e-6);
  }

  TEST_CASE("cross-entropy errors") {
    CHECK_THROWS_AS(ce({4}, TensorD(Shape{1, 4})), ValidationError);
    CHECK_THROWS_AS(ce({0, 1}, TensorD(Shape{1, 4})), ShapeError);
  }

  TEST_CASE("cross-entropy gradient is (softmax - onehot) / N") {
    Tape<double> tape;
    auto x = tape.leaf(TensorD::from({2, 2}, {0, 0, 1, -1}), true);
    const auto g = tape.backward(cross_entropy(x, {0, 1})).of(x);
    const double p = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(g[0] == doctest::Approx(-0.25));
    CHECK(g[1] == doctest::Approx(0.25));
    CHECK(g[2] == doctest::Approx(p / 2));
    CHECK(g[3] == doctest::Approx((1 - p - 1) / 2));
  }

  TEST_CASE("BCE-with-logits reference values") {
    CHECK(std::abs(bce(TensorD::from({1}, {0}), TensorD::from({1}, {1})) - std::log(2.0)) < 1e-12);
    const double big = bce(TensorD::from({1}, {1000}), TensorD::from({1}, {1}));
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(0.0));
    CHECK(std::isfinite(bce(TensorD::from({1}, {-1000}), TensorD::from({1}, {1}))));

    const auto x = test::random<double>(Shape{3, 3}, 5, -10, 10);
    TensorD y(Shape{3, 3});
    for (std::size_t i = 0; i < 9; ++i) y[i] = double(i % 2);
    double naive = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-x[i]));
      naive -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
    }
    CHECK(std::abs(bce(x, y) - naive / 9) < 1e-6);
  }

  TEST_CASE("BCE-with-logits symmetry under (x, y) -> (-x, 1 - y)") {
    const auto x = test::random<double>(Shape{4, 6}, 7, -10, 10);
    TensorD y(Shape{4, 6}), flipped(Shape{4, 6}), neg(Shape{4, 6});
    for (std::size_t i = 0; i < 24; ++i) {
      y[i] = double((i * 7) % 3 == 0);
      flipped[i] = 1 - y[i];
      neg[i] = -x[i];
    }
    CHECK(std::abs(bce(x, y) - bce(neg, flipped)) < 1e-9);
  }

  TEST_CASE("BCE-with-logits errors") {
    CHECK_THROWS_AS(bce(TensorD(Shape{2}), TensorD::from({2}, {0, 0.5})), ValidationError);
    CHECK_THROWS_AS(bce(TensorD(Shape{2}), TensorD(Shape{3})), ShapeError);
  }
}
