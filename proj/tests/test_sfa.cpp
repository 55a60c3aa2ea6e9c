#include <doctest.h>

#include <cmath>
#include <random>

#include "fsda/sfa.hpp"
#include "support.hpp"

using namespace fsda;
using test::random_tensor;

namespace {

Plane<double> plane(int h, int w, std::initializer_list<double> v) {
  Plane<double> p(h, w);
  int i = 0;
  for (double x : v) p.data()[i++] = x;
  return p;
}

FeatureMap<double> rgb_feature(const Tensor<double>& t, DomainTag d = DomainTag::Source) {
  return FeatureMap<double>{t, Modality::RGB, d, 0};
}

}  // namespace

TEST_CASE("attention downsampling") {
  CHECK((downsample_attention<double>(Plane<double>::Ones(8, 6), 4, 3) == 1.0).all());
  CHECK(downsample_attention<double>(plane(2, 2, {1, 0, 0, 1}), 1, 1)(0, 0) == doctest::Approx(0.5));
  std::mt19937_64 rng(1);
  Plane<double> a(5, 7);
  test::fill_uniform(a, rng, 0.0, 1.0);
  CHECK((downsample_attention<double>(a, 5, 7) == a).all());
  const Plane<double> d = downsample_attention<double>(a, 2, 3);
  CHECK(((d >= 0.0) && (d <= 1.0)).all());
  CHECK_THROWS_AS(downsample_attention<double>(a, 6, 7), ConfigError);
}

TEST_CASE("foreground selection") {
  Tensor<double> g(1, 2, 2);
  g.data << 1, 2, 3, 4;
  const auto sel = select_foreground<double>(rgb_feature(g, DomainTag::Target), plane(2, 2, {1, 0, 0.5, 1}));
  CHECK(sel.data.data(0, 0) == 1);
  CHECK(sel.data.data(0, 1) == 0);
  CHECK(sel.data.data(0, 2) == 1.5);
  CHECK(sel.data.data(0, 3) == 4);
  CHECK(sel.domain == DomainTag::Target);
  CHECK(sel.modality == Modality::RGB);
  CHECK(select_foreground<double>(rgb_feature(g), Plane<double>::Ones(2, 2)).data.data == g.data);
  CHECK(select_foreground<double>(rgb_feature(g), Plane<double>::Zero(2, 2)).data.data.isZero(0.0));
  CHECK_THROWS_AS(select_foreground<double>(rgb_feature(g), Plane<double>::Ones(1, 2)), ConfigError);
}

TEST_CASE("surface-normal features are not aligned by default") {
  Tensor<double> g(2, 2, 2);
  const FeatureMap<double> sn{g, Modality::SN, DomainTag::Source, 0};
  CHECK_THROWS_AS(select_foreground<double>(sn, Plane<double>::Ones(2, 2)), ContractError);
  CHECK(select_foreground<double>(sn, Plane<double>::Ones(2, 2), true).modality == Modality::SN);
}

TEST_CASE("adversarial objective values") {
  const Plane<double> half = Plane<double>::Constant(2, 2, 0.5);
  CHECK(adversarial_objective<double>(half, half).value == doctest::Approx(8 * std::log(0.5)));
  CHECK(adversarial_objective<double>(half, half).value == doctest::Approx(-5.5452).epsilon(1e-4));
  CHECK(adversarial_objective<double>(half, half, Reduction::Mean).value == doctest::Approx(2 * std::log(0.5)));
  CHECK(adversarial_objective<double>(plane(1, 1, {0.3}), plane(1, 1, {0.8})).value == doctest::Approx(-0.5798).epsilon(1e-4));
  const double best = adversarial_objective<double>(Plane<double>::Zero(2, 2), Plane<double>::Ones(2, 2)).value;
  CHECK(best <= 0.0);
  CHECK(best > -1e-5);
  CHECK(std::isfinite(adversarial_objective<double>(Plane<double>::Ones(2, 2), Plane<double>::Zero(2, 2)).value));
  CHECK_THROWS_AS(adversarial_objective<double>(plane(1, 1, {1.5}), half.topLeftCorner(1, 1).eval()), NumericError);
  CHECK_THROWS_AS(adversarial_objective<double>(plane(1, 1, {std::nan("")}), plane(1, 1, {0.5})), NumericError);
  CHECK_THROWS_AS(adversarial_objective<double>(half, Plane<double>::Constant(1, 2, 0.5)), ConfigError);
}

TEST_CASE("fooling loss values") {
  CHECK(generator_fool_loss<double>(Plane<double>::Constant(2, 2, 0.5)).value == doctest::Approx(2.7726).epsilon(1e-4));
  CHECK(generator_fool_loss<double>(Plane<double>::Zero(2, 2)).value == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(generator_fool_loss<double>(plane(1, 1, {0.9})).value == doctest::Approx(2.3026).epsilon(1e-4));
  CHECK(generator_fool_loss<double>(Plane<double>::Constant(2, 2, 0.5), Reduction::Mean).value ==
        doctest::Approx(-std::log(0.5)));
}

TEST_CASE("score gradients match finite differences") {
  std::mt19937_64 rng(3);
  Plane<double> ds(2, 3), dt(2, 3);
  test::fill_uniform(ds, rng, 0.05, 0.95);
  test::fill_uniform(dt, rng, 0.05, 0.95);
  for (auto red : {Reduction::Sum, Reduction::Mean}) {
    const auto obj = adversarial_objective<double>(ds, dt, red);
    const auto fool = generator_fool_loss<double>(dt, red);
    for (int i = 0; i < 6; ++i) {
      CHECK(test::relative_error(obj.grad_source.data()[i],
                                 test::numeric_derivative(ds.data() + i, [&] { return adversarial_objective<double>(ds, dt, red).value; })) < 1e-6);
      CHECK(test::relative_error(obj.grad_target.data()[i],
                                 test::numeric_derivative(dt.data() + i, [&] { return adversarial_objective<double>(ds, dt, red).value; })) < 1e-6);
      CHECK(test::relative_error(fool.grad_target.data()[i],
                                 test::numeric_derivative(dt.data() + i, [&] { return generator_fool_loss<double>(dt, red).value; })) < 1e-6);
    }
  }
}

TEST_CASE("objective and fooling loss through the discriminator") {
  std::mt19937_64 rng(5);
  DiscriminatorSpec spec;
  spec.ladder = {4, 4};
  nn::ParamStore<double> store;
  Discriminator<double> d(store, "d", 3, spec, rng);
  // scale the 0.02-std init up so input gradients sit well above finite-difference noise
  for (int i = 0; i < store.size(); ++i) store.value(i) *= 20.0;
  Tensor<double> fs = random_tensor(3, 8, 8, rng), ft = random_tensor(3, 8, 8, rng);
  Plane<double> a(8, 8);
  test::fill_uniform(a, rng, 0.0, 1.0);

  auto objective = [&] {
    const auto os = d.forward(store, select_foreground<double>(rgb_feature(fs), a).data, nullptr);
    const auto ot = d.forward(store, select_foreground<double>(rgb_feature(ft), a).data, nullptr);
    return adversarial_objective<double>(os.scores, ot.scores).value;
  };
  auto fool = [&] {
    return generator_fool_loss<double>(d.forward(store, select_foreground<double>(rgb_feature(ft), a).data, nullptr).scores).value;
  };

  Discriminator<double>::Cache cs, ct;
  const auto os = d.forward(store, select_foreground<double>(rgb_feature(fs), a).data, &cs);
  const auto ot = d.forward(store, select_foreground<double>(rgb_feature(ft), a).data, &ct);
  const auto obj = adversarial_objective<double>(os.scores, ot.scores);
  auto grads = store.zero_grads();
  d.backward(store, cs, obj.grad_source * os.scores * (1 - os.scores), &grads);
  Tensor<double> dft = d.backward(store, ct, obj.grad_target * ot.scores * (1 - ot.scores), &grads);
  dft.data.array().rowwise() *= flat_row<double>(a).array();
  CHECK(test::max_param_grad_error(store, grads, objective, rng, 6) < 1e-4);
  CHECK(test::max_input_grad_error(ft, dft, objective, rng) < 1e-4);

  const auto fl = generator_fool_loss<double>(ot.scores);
  Tensor<double> dfool = d.backward(store, ct, fl.grad_target * ot.scores * (1 - ot.scores), nullptr);
  dfool.data.array().rowwise() *= flat_row<double>(a).array();
  CHECK(test::max_input_grad_error(ft, dfool, fool, rng) < 1e-4);

  SUBCASE("zero attention blocks the gradient at that pixel") {
    a(3, 5) = 0.0;
    a(0, 0) = 0.0;
    Discriminator<double>::Cache c;
    const auto o = d.forward(store, select_foreground<double>(rgb_feature(ft), a).data, &c);
    const auto f = generator_fool_loss<double>(o.scores);
    Tensor<double> dx = d.backward(store, c, f.grad_target * o.scores * (1 - o.scores), nullptr);
    dx.data.array().rowwise() *= flat_row<double>(a).array();
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(dx.at(ch, 3, 5) == 0.0);
      CHECK(dx.at(ch, 0, 0) == 0.0);
      // perturbing a masked pixel leaves the loss unchanged
      const double before = fool();
      ft.at(ch, 3, 5) += 1.0;
      CHECK(fool() == before);
    }
    CHECK(dx.data.cwiseAbs().maxCoeff() > 0.0);
  }
}
