#include <doctest.h>

#include <random>

#include "fsda/nn/layers.hpp"
#include "fsda/nn/optim.hpp"
#include "fsda/nn/resample.hpp"
#include "support.hpp"

using namespace fsda;
using namespace fsda::nn;
using test::fill_uniform;
using test::random_tensor;

namespace {

double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) { return (y.data.array() * r.data.array()).sum(); }

}  // namespace

TEST_CASE("same padding sizes") {
  CHECK(SamePadding::of(8, 3, 1).out == 8);
  CHECK(SamePadding::of(8, 3, 1).before == 1);
  CHECK(SamePadding::of(8, 4, 2).out == 4);
  CHECK(SamePadding::of(8, 4, 2).before == 1);
  CHECK(SamePadding::of(7, 3, 2).out == 4);
  CHECK(SamePadding::of(1, 4, 2).out == 1);
}

TEST_CASE("convolution gradients") {
  std::mt19937_64 rng(11);
  struct Case {
    int k, stride, h, w;
  };
  for (const Case c : {Case{1, 1, 5, 4}, Case{3, 1, 6, 5}, Case{3, 2, 7, 6}, Case{4, 2, 8, 8}, Case{4, 2, 3, 5}}) {
    CAPTURE(c.k);
    CAPTURE(c.stride);
    ParamStore<double> store;
    Conv2d<double> conv(store, "c", 3, 4, c.k, c.stride, true, Init::HeNormal, rng);
    fill_uniform(store.value(conv.bias_index()), rng);
    Tensor<double> x = random_tensor(3, c.h, c.w, rng);
    const Tensor<double> probe = conv.forward(store, x, nullptr);
    const Tensor<double> r = random_tensor(4, probe.height, probe.width, rng);
    Conv2d<double>::Cache cache;
    conv.forward(store, x, &cache);
    auto grads = store.zero_grads();
    const Tensor<double> dx = conv.backward(store, cache, r, &grads);
    auto loss = [&] { return weighted_sum(conv.forward(store, x, nullptr), r); };
    CHECK(test::max_param_grad_error(store, grads, loss, rng, 8) < 1e-6);
    CHECK(test::max_input_grad_error(x, dx, loss, rng) < 1e-6);
  }
}

TEST_CASE("convolution rejects a channel mismatch") {
  std::mt19937_64 rng(1);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 3, 4, 3, 1, false, Init::HeNormal, rng);
  CHECK_THROWS_AS(conv.forward(store, Tensor<double>(2, 4, 4), nullptr), ConfigError);
  CHECK_THROWS_AS(Conv2d<double>(store, "c", 3, 4, 3, 1, false, Init::HeNormal, rng), ConfigError);
}

TEST_CASE("group norm normalizes and back-propagates") {
  std::mt19937_64 rng(5);
  for (int groups : {1, 2, 4}) {
    ParamStore<double> store;
    GroupNorm<double> gn(store, "gn", 4, groups);
    fill_uniform(store.value(0), rng, 0.5, 1.5);
    fill_uniform(store.value(1), rng);
    Tensor<double> x = random_tensor(4, 5, 3, rng);
    x.data *= 3.0;
    GroupNorm<double>::Cache cache;
    gn.forward(store, x, &cache);
    const int per = 4 / groups;
    for (int g = 0; g < groups; ++g) {
      auto blk = cache.xhat.middleRows(g * per, per);
      CHECK(std::abs(blk.mean()) < 1e-12);
      CHECK((blk.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-3));
    }
    const Tensor<double> r = random_tensor(4, 5, 3, rng);
    auto grads = store.zero_grads();
    const Tensor<double> dx = gn.backward(store, cache, r, &grads);
    auto loss = [&] { return weighted_sum(gn.forward(store, x, nullptr), r); };
    CHECK(test::max_param_grad_error(store, grads, loss, rng, 4) < 1e-6);
    CHECK(test::max_input_grad_error(x, dx, loss, rng) < 1e-5);
  }
  ParamStore<double> store;
  CHECK_THROWS_AS(GroupNorm<double>(store, "gn", 6, 4), ConfigError);
}

TEST_CASE("leaky relu uses the configured slope") {
  Tensor<double> x(1, 1, 3);
  x.data << -2.0, 0.0, 3.0;
  const Tensor<double> y = leaky_relu(x, 0.2);
  CHECK(y.data(0, 0) == doctest::Approx(-0.4));
  CHECK(y.data(0, 1) == 0.0);
  CHECK(y.data(0, 2) == 3.0);
  Tensor<double> dy(1, 1, 3);
  dy.data.setOnes();
  const Tensor<double> dx = leaky_relu_backward(x, dy, 0.2);
  CHECK(dx.data(0, 0) == doctest::Approx(0.2));
  CHECK(dx.data(0, 2) == 1.0);
}

TEST_CASE("sigmoid is stable at large magnitudes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0f)));
  CHECK(sigmoid(2.0) + sigmoid(-2.0) == doctest::Approx(1.0));
}

TEST_CASE("resampling weights and adjoints") {
  std::mt19937_64 rng(2);
  SUBCASE("identity at equal size") {
    CHECK(bilinear_weights<double>(5, 5).isIdentity());
    CHECK(area_weights<double>(5, 5).isIdentity());
  }
  SUBCASE("rows sum to one") {
    for (auto [o, i] : {std::pair{8, 3}, {3, 8}, {7, 5}, {16, 2}}) {
      CHECK(bilinear_weights<double>(o, i).rowwise().sum().isOnes(1e-12));
      if (o <= i) CHECK(area_weights<double>(o, i).rowwise().sum().isOnes(1e-12));
    }
  }
  SUBCASE("area downsampling averages blocks") {
    Plane<double> p(4, 4);
    for (int k = 0; k < 16; ++k) p.data()[k] = k;
    const Plane<double> q = area_resampler<double>(4, 4, 2, 2).apply(p);
    CHECK(q(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(q(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK_THROWS_AS(area_resampler<double>(4, 4, 5, 4), ConfigError);
  }
  SUBCASE("adjoint identity <R x, y> = <x, R^T y>") {
    for (auto r : {bilinear_resampler<double>(3, 5, 8, 9), area_resampler<double>(9, 7, 4, 3)}) {
      Plane<double> x(r.in_height(), r.in_width()), y(r.out_height(), r.out_width());
      fill_uniform(x, rng);
      fill_uniform(y, rng);
      CHECK((r.apply(x) * y).sum() == doctest::Approx((x * r.adjoint(y)).sum()).epsilon(1e-12));
    }
  }
  SUBCASE("nearest resize of masks") {
    Mask m(2, 2);
    m << 1, 0, 0, 1;
    const Mask up = nearest_resize(m, 4, 4);
    CHECK(up(0, 1) == 1);
    CHECK(up(0, 2) == 0);
    CHECK(up(3, 3) == 1);
    CHECK((nearest_resize(up, 2, 2) == m).all());
  }
}

TEST_CASE("sgd with momentum and weight decay") {
  ParamStore<double> store;
  store.add("w", Mat<double>::Constant(1, 1, 1.0));
  Sgd<double> opt(store, 0.9, 0.1);
  Grads<double> g{Mat<double>::Constant(1, 1, 0.5)};
  opt.step(store, g, 0.1);
  // d = 0.5 + 0.1*1 = 0.6, v = 0.6, w = 1 - 0.06
  CHECK(store.value(0)(0, 0) == doctest::Approx(0.94));
  opt.step(store, g, 0.1);
  // d = 0.5 + 0.094 = 0.594, v = 0.9*0.6 + 0.594 = 1.134
  CHECK(store.value(0)(0, 0) == doctest::Approx(0.94 - 0.1134));
}

TEST_CASE("adam first step moves by the learning rate") {
  ParamStore<double> store;
  store.add("w", Mat<double>::Constant(2, 1, 1.0));
  Adam<double> opt(store);
  Grads<double> g{Mat<double>(2, 1)};
  g[0] << 3.0, -0.01;
  opt.step(store, g, 0.01);
  CHECK(store.value(0)(0, 0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(store.value(0)(1, 0) == doctest::Approx(1.01).epsilon(1e-6));
}

TEST_CASE("parameter hashes track prefixes") {
  ParamStore<double> store;
  store.add("a.w", Mat<double>::Ones(2, 2));
  store.add("b.w", Mat<double>::Ones(2, 2));
  const auto ha = store.hash("a."), hb = store.hash("b.");
  store.value(1)(0, 0) = 2.0;
  CHECK(store.hash("a.") == ha);
  CHECK(store.hash("b.") != hb);
  CHECK_THROWS_AS(store.add("a.w", Mat<double>::Ones(1, 1)), ConfigError);
}
