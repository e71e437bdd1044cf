#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "saek/nn.hpp"

using namespace saek;

namespace {

struct Run {
  Tape<double> tape;
  Var<double> in(TensorD t, bool grad = false) { return tape.leaf(std::move(t), grad); }
};

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("conv2d: hand case, identity kernel, stem arithmetic") {
    Run r;
    auto x = r.in(TensorD::from({1, 1, 2, 2}, {1, 2, 3, 4}));
    auto w = r.in(TensorD::from({1, 1, 2, 2}, {1, 0, 0, 1}));
    CHECK(nn::conv2d<double>(x, w, nullptr, {1, 0}).value() == TensorD::from({1, 1, 1, 1}, {5}));

    auto img = r.in(test::random<double>(Shape{1, 1, 5, 5}, 1));
    auto one = r.in(TensorD::from({1, 1, 1, 1}, {1}));
    CHECK(nn::conv2d<double>(img, one, nullptr, {1, 0}).value() == img.value());

    Tape<float> tape;
    tape.set_shape_only(true);
    auto big = tape.leaf(Tensor(Shape{1, 3, 224, 224}));
    auto k7 = tape.leaf(Tensor(Shape{64, 3, 7, 7}));
    CHECK(nn::conv2d<float>(big, k7, nullptr, {2, 3}).shape() == Shape{1, 64, 112, 112});
  }

  TEST_CASE("conv2d shape formula over a grid of geometries") {
    Tape<float> tape;
    tape.set_shape_only(true);
    for (std::size_t h : {5u, 8u, 13u})
      for (std::size_t k : {1u, 3u, 5u})
        for (std::size_t s : {1u, 2u})
          for (std::size_t p = 0; p < k; ++p) {
            if (h + 2 * p < k) continue;
            auto x = tape.leaf(Tensor(Shape{1, 2, h, h}));
            auto w = tape.leaf(Tensor(Shape{3, 2, k, k}));
            const std::size_t expect = (h + 2 * p - k) / s + 1;
            CHECK(nn::conv2d<float>(x, w, nullptr, {s, p}).shape() == Shape{1, 3, expect, expect});
          }
  }

  TEST_CASE("conv2d errors") {
    Run r;
    auto x = r.in(TensorD(Shape{1, 3, 4, 4}));
    CHECK_THROWS_AS(nn::conv2d<double>(x, r.in(TensorD(Shape{2, 2, 3, 3})), nullptr, {1, 0}), ShapeError);
    CHECK_THROWS_AS(nn::conv2d<double>(x, r.in(TensorD(Shape{2, 3, 7, 7})), nullptr, {1, 0}), ShapeError);
  }

  TEST_CASE("transposed conv: scatter case and shape") {
    Run r;
    auto x = r.in(TensorD::from({1, 1, 1, 1}, {1}));
    auto w = r.in(TensorD(Shape{1, 1, 2, 2}, 1.0));
    CHECK(nn::conv_transpose2d<double>(x, w, nullptr, {2, 0}).value() == TensorD(Shape{1, 1, 2, 2}, 1.0));
    auto x7 = r.in(TensorD(Shape{1, 2, 7, 7}));
    auto w7 = r.in(TensorD(Shape{2, 3, 2, 2}));
    CHECK(nn::conv_transpose2d<double>(x7, w7, nullptr, {2, 0}).shape() == Shape{1, 3, 14, 14});
    CHECK_THROWS_AS(nn::conv_transpose2d<double>(x7, r.in(TensorD(Shape{3, 3, 2, 2})), nullptr, {2, 0}),
                    ShapeError);
  }

  TEST_CASE("batchnorm: hand case, eval identity, train normalization") {
    TensorD rm(Shape{1}), rv(Shape{1}, 1.0);
    Run r;
    auto gamma = r.in(TensorD(Shape{1}, 1.0));
    auto beta = r.in(TensorD(Shape{1}, 0.0));
    auto x = r.in(TensorD::from({2, 1, 1, 1}, {1, 3}));
    nn::BatchNormOptions opts{0.0, 0.1, nn::Mode::train, true};
    auto y = nn::batchnorm2d(x, gamma, beta, rm, rv, opts);
    CHECK(y.value() == TensorD::from({2, 1, 1, 1}, {-1, 1}));
    // Running stats: mean 0.1 * 2, var 0.9 + 0.1 * 2 (unbiased batch variance).
    CHECK(rm[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(rv[0] == doctest::Approx(1.1).epsilon(1e-15));

    TensorD m0(Shape{3}), v0(Shape{3}, 1.0);
    auto g3 = r.in(TensorD(Shape{3}, 1.0));
    auto b3 = r.in(TensorD(Shape{3}, 0.0));
    auto z = r.in(test::random<double>(Shape{2, 3, 4, 4}, 2));
    auto eval = nn::batchnorm2d(z, g3, b3, m0, v0, {1e-5, 0.1, nn::Mode::eval, true});
    for (std::size_t i = 0; i < z.value().size(); ++i)
      CHECK(eval.value()[i] == doctest::Approx(z.value()[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));

    auto train = nn::batchnorm2d(z, g3, b3, m0, v0, {1e-5, 0.1, nn::Mode::train, false}).value();
    CHECK(m0 == TensorD(Shape{3}));
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, s2 = 0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          const double v = train[(n * 3 + c) * 16 + i];
          s += v;
          s2 += v * v;
        }
      CHECK(std::abs(s / 32) < 1e-5);
      CHECK(std::abs(s2 / 32 - 1.0) < 1e-3);  // eps shrinks the variance slightly
    }
  }

  TEST_CASE("batchnorm: singleton batch in train mode is an error") {
    TensorD rm(Shape{1}), rv(Shape{1}, 1.0);
    Run r;
    auto g = r.in(TensorD(Shape{1}, 1.0));
    auto b = r.in(TensorD(Shape{1}));
    auto x = r.in(TensorD(Shape{1, 1, 1, 1}, 2.0));
    CHECK_THROWS_AS(nn::batchnorm2d(x, g, b, rm, rv, {}), ValidationError);
    CHECK_NOTHROW(nn::batchnorm2d(x, g, b, rm, rv, {1e-5, 0.1, nn::Mode::eval, true}));
  }

  TEST_CASE("maxpool: values, shape, tie-break and gradient mass") {
    Run r;
    auto x = r.in(TensorD::from({1, 1, 2, 2}, {1, 2, 3, 4}), true);
    CHECK(nn::maxpool2d(x, {2, 2, 2, 0}).value() == TensorD::from({1, 1, 1, 1}, {4}));

    auto y = r.in(test::random<double>(Shape{1, 2, 7, 7}, 3));
    CHECK(nn::maxpool2d(y, {3, 3, 1, 1}).shape() == Shape{1, 2, 7, 7});

    auto flat = r.in(TensorD(Shape{1, 1, 4, 4}, 0.5), true);
    auto g = r.tape.backward(sum(nn::maxpool2d(flat, {2, 2, 2, 0}))).of(flat);
    CHECK(g == TensorD::from({1, 1, 4, 4}, {1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0}));

    // Padding never wins even when every real value is negative.
    auto neg = r.in(TensorD(Shape{1, 1, 2, 2}, -3.0));
    CHECK(nn::maxpool2d(neg, {3, 3, 1, 1}).value() == TensorD(Shape{1, 1, 2, 2}, -3.0));

    // Each window's routed gradient sums to its incoming gradient.
    Tape<double> t2;
    auto z = t2.leaf(test::random<double>(Shape{1, 1, 6, 6}, 4), true);
    const auto w = test::random<double>(Shape{1, 1, 3, 3}, 5);
    auto gz = t2.backward(weighted_sum(nn::maxpool2d(z, {2, 2, 2, 0}), w)).of(z);
    double mass = 0, expect = 0;
    for (double v : gz.data()) mass += v;
    for (double v : w.data()) expect += v;
    CHECK(mass == doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("avgpool counts padding; adaptive pool is the spatial mean") {
    Run r;
    auto x = r.in(TensorD(Shape{1, 1, 2, 2}, 1.0));
    auto y = nn::avgpool2d(x, {3, 3, 1, 1});
    CHECK(y.value()[0] == doctest::Approx(4.0 / 9.0));
    CHECK(nn::adaptive_avgpool_1x1(r.in(TensorD(Shape{1, 2, 3, 3}, 2.5))).value() == TensorD(Shape{1, 2, 1, 1}, 2.5));
    CHECK(nn::adaptive_avgpool_1x1(r.in(TensorD::from({1, 1, 2, 2}, {1, 3, 5, 7}))).value()[0] == 4.0);
    Tape<float> tape;
    tape.set_shape_only(true);
    CHECK(nn::adaptive_avgpool_1x1(tape.leaf(Tensor(Shape{2, 2048, 7, 7}))).shape() == Shape{2, 2048, 1, 1});
  }

  TEST_CASE("relu, linear, softmax") {
    Run r;
    CHECK(nn::relu(r.in(TensorD::from({3}, {-2, 0, 3}))).value() == TensorD::from({3}, {0, 0, 3}));

    auto x = r.in(TensorD::from({1, 2}, {1, 2}));
    auto w = r.in(TensorD::from({3, 2}, {1, 0, 0, 1, 1, 1}));
    auto b = r.in(TensorD::from({3}, {0.5, 0, -1}));
    CHECK(nn::linear(x, w, &b).value() == TensorD::from({1, 3}, {1.5, 2, 2}));
    CHECK_THROWS_AS(nn::linear(x, r.in(TensorD(Shape{3, 3})), static_cast<const Var<double>*>(nullptr)), ShapeError);

    CHECK(nn::softmax(TensorD::from({1, 4}, {0, 0, 0, 0})) == TensorD(Shape{1, 4}, 0.25));
    const auto big = nn::softmax(TensorD::from({1, 2}, {1000, 0}));
    CHECK(big.all_finite());
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(nn::softmax(TensorD(Shape{4})), ShapeError);

    const auto p = nn::softmax(test::random<double>(Shape{50, 7}, 6, -20, 20));
    for (std::size_t i = 0; i < 50; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p[i * 7 + c] >= 0.0);
        CHECK(p[i * 7 + c] <= 1.0);
        s += p[i * 7 + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }

  TEST_CASE("1x1 identity convolution is bit-exact in single precision") {
    Tape<float> tape;
    auto x = tape.leaf(test::random(Shape{2, 3, 5, 5}, 7));
    Tensor w(Shape{3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
    CHECK(nn::conv2d<float>(x, tape.leaf(w), nullptr, {1, 0}).value() == x.value());
  }
}
