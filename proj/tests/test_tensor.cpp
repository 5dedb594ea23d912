#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "atv/gradcheck.hpp"
#include "atv/ops.hpp"
#include "atv/tensor.hpp"

using namespace atv;

TEST_CASE("shape validation") {
  CHECK(Shape({2, 3, 4, 5}).elements() == 120);
  CHECK(Shape({7}).rank() == 1);
  CHECK_THROWS_AS(Shape({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Shape({2, -1}), std::invalid_argument);
  CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), std::invalid_argument);
}

TEST_CASE("create: zeros, constant, seeded determinism") {
  const auto z = zeros<float>(Shape{1, 1, 2, 2});
  for (int64_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);

  const auto c = constant<float>(Shape{1, 1, 1, 1}, 3.5f);
  CHECK(c[0] == 3.5f);

  const auto u1 = uniform<float>(Shape{1, 2, 2, 2}, 0.0f, 1.0f, 7);
  const auto u2 = uniform<float>(Shape{1, 2, 2, 2}, 0.0f, 1.0f, 7);
  CHECK(u1.vec() == u2.vec());  // bitwise identical
  const auto u3 = uniform<float>(Shape{1, 2, 2, 2}, 0.0f, 1.0f, 8);
  CHECK(u1.vec() != u3.vec());

  const auto n1 = normal<double>(Shape{16}, 0.0, 1.0, 11);
  const auto n2 = normal<double>(Shape{16}, 0.0, 1.0, 11);
  CHECK(n1.vec() == n2.vec());
}

TEST_CASE("elementwise ops") {
  const Tensor<float> a(Shape{2}, {1.0f, 2.0f});
  const Tensor<float> b(Shape{2}, {3.0f, 4.0f});
  const auto sum = add(a, b);
  CHECK(sum[0] == 4.0f);
  CHECK(sum[1] == 6.0f);

  const auto z = mul(a, zeros<float>(Shape{2}));
  CHECK(z[0] == 0.0f);
  CHECK(z[1] == 0.0f);

  const auto s = scale(Tensor<float>(Shape{2}, {2.0f, 4.0f}), 0.5f);
  CHECK(s[0] == 1.0f);
  CHECK(s[1] == 2.0f);

  CHECK_THROWS_AS(add(a, zeros<float>(Shape{3})), std::invalid_argument);
  // purity: operands unchanged
  CHECK(a[0] == 1.0f);
  CHECK(b[1] == 4.0f);
}

TEST_CASE("activations") {
  const Tensor<float> x(Shape{3}, {-1.0f, 0.0f, 2.0f});
  const auto r = relu(x);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 0.0f);
  CHECK(r[2] == 2.0f);

  const auto s = sigmoid(Tensor<float>(Shape{1}, {0.0f}));
  CHECK(s[0] == doctest::Approx(0.5f));

  const auto dx = relu_backward(Tensor<float>(Shape{2}, {-1.0f, 2.0f}),
                                Tensor<float>(Shape{2}, {5.0f, 5.0f}));
  CHECK(dx[0] == 0.0f);
  CHECK(dx[1] == 5.0f);
}

TEST_CASE("softmax over channels") {
  // uniform logits -> uniform distribution
  const auto y0 = softmax_channels(zeros<double>(Shape{1, 3, 1, 1}));
  for (int64_t i = 0; i < 3; ++i) CHECK(y0[i] == doctest::Approx(1.0 / 3));

  // shift invariance
  const auto x = uniform<double>(Shape{2, 4, 3, 3}, -2.0, 2.0, 3);
  auto shifted = x;
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t c = 0; c < 4; ++c) {
      for (int64_t i = 0; i < 9; ++i) {
        shifted[((n * 4 + c) * 3 + i / 3) * 3 + i % 3] += 0.7;
      }
    }
  }
  const auto ya = softmax_channels(x);
  const auto yb = softmax_channels(shifted);
  for (int64_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-12));

  // direct formula oracle on (1,2,3)
  const Tensor<double> t(Shape{1, 3, 1, 1}, {1.0, 2.0, 3.0});
  const auto y = softmax_channels(t);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(y[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));

  // positivity and normalization at every site
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t i = 0; i < 9; ++i) {
      double sum = 0;
      for (int64_t c = 0; c < 4; ++c) {
        const double v = ya.at(n, c, i / 3, i % 3);
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  // extreme logits stay finite thanks to max subtraction
  const Tensor<double> big(Shape{1, 2, 1, 1}, {1000.0, -1000.0});
  const auto ybig = softmax_channels(big);
  CHECK(ybig[0] == doctest::Approx(1.0));
}

TEST_CASE("global average pool") {
  const auto c = constant<float>(Shape{2, 3, 4, 4}, 2.25f);
  const auto y = global_avg_pool(c);
  CHECK(y.shape() == Shape({2, 3, 1, 1}));
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2.25f));

  const Tensor<double> t(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(t)[0] == doctest::Approx(2.5));

  const auto dx = global_avg_pool_backward(constant<double>(Shape{1, 1, 1, 1}, 1.0), 2, 2);
  for (int64_t i = 0; i < 4; ++i) CHECK(dx[i] == doctest::Approx(0.25));

  // gradient mass conservation: dy = 1 everywhere -> sum dx = N*C
  const auto dy = constant<double>(Shape{3, 5, 1, 1}, 1.0);
  const auto dxx = global_avg_pool_backward(dy, 7, 9);
  double total = 0;
  for (int64_t i = 0; i < dxx.size(); ++i) total += dxx[i];
  CHECK(total == doctest::Approx(15.0).epsilon(1e-9));
}

TEST_CASE("bilinear upsample") {
  const auto x = uniform<double>(Shape{1, 2, 3, 3}, -1.0, 1.0, 5);
  CHECK(bilinear_upsample(x, 1) == x);  // identity

  const auto c = constant<double>(Shape{1, 1, 3, 3}, 0.7);
  const auto yc = bilinear_upsample(c, 4);
  CHECK(yc.shape() == Shape({1, 1, 12, 12}));
  for (int64_t i = 0; i < yc.size(); ++i) CHECK(yc[i] == doctest::Approx(0.7).epsilon(1e-12));

  // brute-force per-output-pixel interpolation oracle, 2x2 input factor 2
  const Tensor<double> t(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const auto y = bilinear_upsample(t, 2);
  for (int64_t oy = 0; oy < 4; ++oy) {
    for (int64_t ox = 0; ox < 4; ++ox) {
      auto src = [&](double o) {
        double v = (o + 0.5) / 2.0 - 0.5;
        return std::min(std::max(v, 0.0), 1.0);
      };
      const double fy = src(static_cast<double>(oy)), fx = src(static_cast<double>(ox));
      const int64_t y0 = static_cast<int64_t>(std::floor(fy)), x0 = static_cast<int64_t>(std::floor(fx));
      const int64_t y1 = std::min<int64_t>(y0 + 1, 1), x1 = std::min<int64_t>(x0 + 1, 1);
      const double wy = fy - y0, wx = fx - x0;
      const double expect = (1 - wy) * ((1 - wx) * t.at(0, 0, y0, x0) + wx * t.at(0, 0, y0, x1)) +
                            wy * ((1 - wx) * t.at(0, 0, y1, x0) + wx * t.at(0, 0, y1, x1));
      CHECK(y.at(0, 0, oy, ox) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("primitive backward passes match finite differences") {
  // shared scalarization: L = sum(w * f(x))
  auto run = [](const char* name, const Tensor<double>& x, auto&& fwd, auto&& bwd) {
    const auto y = fwd(x);
    const auto w = uniform<double>(y.shape(), -1.0, 1.0, 99);
    const auto dx = bwd(x, y, w);
    auto f = [&](const std::vector<double>& v) {
      Tensor<double> xx(x.shape(), v);
      const auto yy = fwd(xx);
      double acc = 0;
      for (int64_t i = 0; i < yy.size(); ++i) acc += yy[i] * w[i];
      return acc;
    };
    const GradCheckReport r = check_gradient(name, x.vec(), dx.vec(), f);
    INFO(name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  };

  Tensor<double> xr = uniform<double>(Shape{2, 3, 4, 4}, -1.0, 1.0, 21);
  for (int64_t i = 0; i < xr.size(); ++i) {
    if (std::abs(xr[i]) < 1e-3) xr[i] = 0.002;
  }
  run("relu", xr,
      [](const Tensor<double>& x) { return relu(x); },
      [](const Tensor<double>& x, const Tensor<double>&, const Tensor<double>& w) {
        return relu_backward(x, w);
      });
  run("sigmoid", uniform<double>(Shape{2, 3, 4, 4}, -3.0, 3.0, 22),
      [](const Tensor<double>& x) { return sigmoid(x); },
      [](const Tensor<double>& x, const Tensor<double>&, const Tensor<double>& w) {
        return sigmoid_backward(x, w);
      });
  run("softmax", uniform<double>(Shape{2, 5, 2, 2}, -2.0, 2.0, 23),
      [](const Tensor<double>& x) { return softmax_channels(x); },
      [](const Tensor<double>&, const Tensor<double>& y, const Tensor<double>& w) {
        return softmax_channels_backward(y, w);
      });
  run("global_avg_pool", uniform<double>(Shape{2, 3, 5, 5}, -1.0, 1.0, 24),
      [](const Tensor<double>& x) { return global_avg_pool(x); },
      [](const Tensor<double>&, const Tensor<double>&, const Tensor<double>& w) {
        return global_avg_pool_backward(w, 5, 5);
      });
  run("bilinear_upsample", uniform<double>(Shape{1, 2, 3, 3}, -1.0, 1.0, 25),
      [](const Tensor<double>& x) { return bilinear_upsample(x, 3); },
      [](const Tensor<double>&, const Tensor<double>&, const Tensor<double>& w) {
        return bilinear_upsample_backward(w, 3);
      });
}

TEST_CASE("non-finite values are rejected") {
  Tensor<float> a(Shape{2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(scale(a, 1.0f), std::runtime_error);
  CHECK_THROWS_AS(constant<float>(Shape{1}, std::nanf("")), std::invalid_argument);
}
