#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ctbound/tensor.hpp"
#include "gradcheck.hpp"

using namespace ctbound;

namespace {

Tensor<double> randn(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = d(rng);
  Tensor<double> t(s, std::move(v));
  t.set_requires_grad();
  return t;
}

}  // namespace

TEST_CASE("shape bookkeeping and errors") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), ConfigError);
  Tensor<double> a({2, 3}, 1.0);
  CHECK(a.numel() == 6);
  Tensor<double> b({4, 3}, 1.0);
  CHECK_THROWS_AS(a + b, ConfigError);
  CHECK_THROWS_AS(matmul(a, a), ConfigError);
}

TEST_CASE("broadcasting add of a row vector") {
  Tensor<double> a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor<double> b({3}, std::vector<double>{10, 20, 30});
  Tensor<double> c = a + b;
  CHECK(c.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
}

TEST_CASE("elementwise gradcheck") {
  std::mt19937_64 rng(1);
  Tensor<double> a = randn({3, 4}, rng);
  Tensor<double> b = randn({3, 4}, rng);
  for (auto& v : b.data()) v += 3.0;  // keep division well conditioned
  auto r = gradcheck::check({a, b}, [&] { return sum(square(a / b) + a * b - a + b); });
  CHECK(r.ok);
}

TEST_CASE("unary op gradcheck") {
  std::mt19937_64 rng(2);
  Tensor<double> a = randn({7}, rng, 0.5);
  auto r = gradcheck::check({a}, [&] {
    return sum(sin(a) * cos(a) + atan(a) + exp(a) + sqrt(square(a) + scalar_tensor(1.0)));
  });
  CHECK(r.ok);
}

TEST_CASE("relu values") {
  Tensor<double> a({4}, std::vector<double>{-2, -0.5, 0.5, 2});
  Tensor<double> y = relu(a);
  CHECK(y.data() == std::vector<double>{0, 0, 0.5, 2});
}

TEST_CASE("matmul identity and gradcheck") {
  Tensor<double> eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(3);
  Tensor<double> x = randn({2, 3}, rng);
  Tensor<double> y = matmul(x, eye);
  for (size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  Tensor<double> a = randn({3, 4}, rng), b = randn({4, 2}, rng);
  auto r = gradcheck::check({a, b}, [&] { return sum(square(matmul(a, b))); });
  CHECK(r.ok);
}

TEST_CASE("softmax rows sum to one and gradcheck") {
  std::mt19937_64 rng(4);
  Tensor<double> a = randn({5, 6}, rng, 2.0);
  Tensor<double> s = softmax(a);
  for (int row = 0; row < 5; ++row) {
    double total = 0;
    for (int i = 0; i < 6; ++i) total += s.data()[row * 6 + i];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
  Tensor<double> w = randn({5, 6}, rng);
  w.set_requires_grad(false);
  auto r = gradcheck::check({a}, [&] { return sum(softmax(a) * w); });
  CHECK(r.ok);
}

TEST_CASE("layer_norm statistics and gradcheck") {
  std::mt19937_64 rng(5);
  Tensor<double> x = randn({4, 8}, rng, 3.0);
  Tensor<double> gain({8}, 1.0), bias({8}, 0.0);
  Tensor<double> y = layer_norm(x, gain, bias);
  for (int row = 0; row < 4; ++row) {
    double mu = 0, var = 0;
    for (int i = 0; i < 8; ++i) mu += y.data()[row * 8 + i];
    mu /= 8;
    for (int i = 0; i < 8; ++i) var += std::pow(y.data()[row * 8 + i] - mu, 2);
    var /= 8;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  Tensor<double> g2 = randn({8}, rng), b2 = randn({8}, rng);
  Tensor<double> w = randn({4, 8}, rng);
  w.set_requires_grad(false);
  auto r = gradcheck::check({x, g2, b2}, [&] { return sum(layer_norm(x, g2, b2) * w); });
  CHECK(r.ok);
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel passes input through") {
    std::mt19937_64 rng(6);
    Tensor<double> x = randn({1, 5, 5}, rng);
    Tensor<double> w({1, 1, 1, 1}, std::vector<double>{1.0});
    Tensor<double> b({1}, 0.0);
    Tensor<double> y = conv2d(x, w, b, 1, 0);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
  }
  SUBCASE("output geometry") {
    Tensor<double> x({3, 81, 81}, 0.5);
    std::mt19937_64 rng(7);
    Tensor<double> w = randn({96, 3, 5, 5}, rng, 0.1);
    Tensor<double> b({96}, 0.0);
    Tensor<double> y = conv2d(x, w, b, 4, 2);
    CHECK(y.shape() == Shape{96, 21, 21});
  }
  SUBCASE("shape errors name the offending axis") {
    Tensor<double> x({2, 5, 5}, 0.0);
    Tensor<double> w({1, 3, 3, 3}, 0.0);
    Tensor<double> b({1}, 0.0);
    CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 0),
                         doctest::Contains("channel axis mismatch"), ConfigError);
  }
  SUBCASE("gradcheck on a 7x7 input") {
    std::mt19937_64 rng(8);
    Tensor<double> x = randn({2, 7, 7}, rng);
    Tensor<double> w = randn({3, 2, 3, 3}, rng, 0.5);
    Tensor<double> b = randn({3}, rng);
    auto r = gradcheck::check({x, w, b}, [&] { return sum(square(conv2d(x, w, b, 2, 1))); });
    CHECK(r.ok);
  }
}

TEST_CASE("maxpool2d") {
  SUBCASE("constant input stays constant") {
    Tensor<double> x({2, 6, 6}, 1.5);
    Tensor<double> y = maxpool2d(x, 2, 2);
    CHECK(y.shape() == Shape{2, 3, 3});
    for (double v : y.data()) CHECK(v == doctest::Approx(1.5));
  }
  SUBCASE("kernel larger than input is an error") {
    Tensor<double> x({1, 2, 2}, 0.0);
    CHECK_THROWS_AS(maxpool2d(x, 3, 1), ConfigError);
  }
  SUBCASE("gradcheck with jittered input (no ties)") {
    std::mt19937_64 rng(9);
    Tensor<double> x = randn({2, 6, 6}, rng);
    auto r = gradcheck::check({x}, [&] { return sum(square(maxpool2d(x, 2, 2))); });
    CHECK(r.ok);
  }
}

TEST_CASE("min / wrap / slice / concat / gather") {
  std::mt19937_64 rng(10);
  Tensor<double> a = randn({9}, rng);
  Tensor<double> b = randn({9}, rng);
  auto r = gradcheck::check({a, b}, [&] { return sum(square(minimum(a, b))); });
  CHECK(r.ok);

  Tensor<double> c({3}, std::vector<double>{-1.0, 7.0, 3.0});
  Tensor<double> w = wrap_2pi(c);
  CHECK(w.data()[0] == doctest::Approx(kTwoPi - 1.0));
  CHECK(w.data()[1] == doctest::Approx(7.0 - kTwoPi));

  Tensor<double> m = randn({4, 3}, rng);
  auto r2 = gradcheck::check({m}, [&] {
    auto top = slice0(m, 0, 2);
    auto bot = slice0(m, 2, 2);
    auto back = concat0<double>({bot, top});
    return sum(square(back)) + sum(gather1d(reshape(back, {12}), {0, 5, 5, 11}));
  });
  CHECK(r2.ok);

  auto r3 = gradcheck::check({m}, [&] {
    auto left = slice_cols(m, 0, 2);
    auto right = slice_cols(m, 2, 1);
    return sum(square(concat_cols<double>({right, left}))) + sum(square(transpose2d(m)));
  });
  CHECK(r3.ok);
}

TEST_CASE("embed_patch places and back-propagates") {
  std::mt19937_64 rng(11);
  Tensor<double> p = randn({2, 2}, rng);
  Tensor<double> y = embed_patch(p, 4, 5, 1, 2);
  CHECK(y.shape() == Shape{4, 5});
  CHECK(y.data()[1 * 5 + 2] == doctest::Approx(p.data()[0]));
  CHECK(y.data()[0] == 0.0);
  auto r = gradcheck::check({p}, [&] { return sum(square(embed_patch(p, 4, 5, 1, 2))); });
  CHECK(r.ok);
}

TEST_CASE("no-grad mode records no tape") {
  Tensor<double> a({3}, std::vector<double>{1, 2, 3});
  a.set_requires_grad();
  {
    NoGradGuard ng;
    Tensor<double> y = sum(square(a));
    CHECK(y.node()->parents.empty());
    CHECK_FALSE(y.node()->backward_fn);
  }
}
