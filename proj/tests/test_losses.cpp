#include "doctest.h"
#include "support.hpp"

#include "satsynth/losses.hpp"

using namespace satsynth;
using namespace satsynth::testing;

namespace {

Var<double> constant(Shape shape, double v) { return Var<double>(TensorD(std::move(shape), v)); }

/// Three-parameter toy generator on flattened inputs: tanh(θ₀ z + θ₁ x + θ₂ z x).
Var<double> toy_generator(const Var<double>& theta, const TensorD& x, const TensorD& z) {
  const Index n = z.size();
  TensorD feats({n, 3});
  for (Index i = 0; i < n; ++i) {
    feats[i * 3] = z[i];
    feats[i * 3 + 1] = x[i];
    feats[i * 3 + 2] = z[i] * x[i];
  }
  return reshape(tanh(linear(Var<double>(feats), reshape(theta, Shape{1, 3}), Var<double>())),
                 z.shape());
}

}  // namespace

TEST_CASE("diversity term: zero numerator, clamp, linear oracle") {
  const DiversityConfig cfg{1.0, 10.0};
  Rng rng(1);
  const Eigen::VectorXd img = Eigen::VectorXd::Random(20);
  const Eigen::VectorXd z1 = Eigen::VectorXd::Random(5), z2 = Eigen::VectorXd::Random(5);
  CHECK(diversity_term(img, img, z1, z2, cfg) == 0.0);

  // Image distance 50× the latent distance.
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(4), b = Eigen::VectorXd::Constant(4, 5.0);
  const Eigen::VectorXd za = Eigen::VectorXd::Zero(2), zb = Eigen::VectorXd::Constant(2, 0.1);
  CHECK(diversity_term(a, b, za, zb, cfg) == 10.0);

  // G(x, z) = z broadcast over pixels: the mean-abs ratio is exactly 1.
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_int(8)), pixels = 1 + rng.uniform_int(16);
    Eigen::VectorXd u(d), v(d);
    for (Index i = 0; i < d; ++i) {
      u[i] = rng.uniform(-2, 2);
      v[i] = rng.uniform(-2, 2);
    }
    const Eigen::VectorXd gu = u.replicate(pixels, 1), gv = v.replicate(pixels, 1);
    CHECK(std::abs(diversity_term(gu, gv, u, v, cfg) - 1.0) < 1e-14);
  }
  CHECK_THROWS_AS(diversity_term(a, b, za, za, cfg), std::invalid_argument);
  CHECK_THROWS_AS(diversity_term(a, b, za, zb, DiversityConfig{1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("diversity term graph form agrees with the value form per sample") {
  Rng rng(2);
  const DiversityConfig cfg{2.0, 3.0};
  const TensorD i1 = random_tensor<double>(rng, {3, 2, 4, 4}), i2 = random_tensor<double>(rng, {3, 2, 4, 4});
  const TensorD z1 = random_tensor<double>(rng, {3, 5}), z2 = random_tensor<double>(rng, {3, 5});
  double expect = 0;
  for (Index n = 0; n < 3; ++n) {
    expect += diversity_term(i1.data().segment(n * 32, 32), i2.data().segment(n * 32, 32),
                             z1.data().segment(n * 5, 5), z2.data().segment(n * 5, 5), cfg);
  }
  const double got =
      diversity_term(Var<double>(i1), Var<double>(i2), Var<double>(z1), Var<double>(z2), cfg).item();
  CHECK(got == doctest::Approx(expect / 3).epsilon(1e-12));
}

TEST_CASE("diversity gradient on a 3-parameter generator matches central differences") {
  Rng rng(3);
  const DiversityConfig cfg{4.0, 10.0};
  const TensorD x = random_tensor<double>(rng, {2, 6});
  const TensorD z1 = random_tensor<double>(rng, {2, 6}), z2 = random_tensor<double>(rng, {2, 6});
  for (int trial = 0; trial < 10; ++trial) {
    const TensorD theta = random_tensor<double>(rng, {3}, -1.5, 1.5);
    auto f = [&](const std::vector<Var<double>>& v) {
      return scale(diversity_term(toy_generator(v[0], x, z1), toy_generator(v[0], x, z2),
                                  Var<double>(z1), Var<double>(z2), cfg),
                   cfg.weight);
    };
    const double ratio = f({Var<double>(theta)}).item() / cfg.weight;
    REQUIRE(ratio < 0.9 * cfg.tau);
    CHECK(gradient_check(f, {theta}, 1e-6) < 1e-4);
  }
}

TEST_CASE("kld term closed forms") {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(7);
  CHECK(kld_term(zero, zero) == 0.0);
  CHECK(kld_term(Eigen::VectorXd::Ones(7), zero) == doctest::Approx(3.5));
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd mu(4), lv(4);
    for (int d = 0; d < 4; ++d) {
      mu[d] = rng.uniform(-3, 3);
      lv[d] = rng.uniform(-4, 4);
    }
    CHECK(kld_term(mu, lv) >= 0.0);
  }
  const Var<double> g = kld_term(constant({2, 7}, 1.0), constant({2, 7}, 0.0));
  CHECK(g.item() == doctest::Approx(3.5));
}

TEST_CASE("hinge losses closed forms") {
  const Eigen::VectorXd p10 = Eigen::VectorXd::Constant(6, 10), m10 = -p10, z = Eigen::VectorXd::Zero(6);
  CHECK(hinge_d(p10, m10) == 0.0);
  CHECK(hinge_d(z, z) == 2.0);
  CHECK(hinge_g(z) == 0.0);
  CHECK(hinge_g(Eigen::VectorXd::Constant(6, 3.0)) == -3.0);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd r(5), f(5);
    for (int i = 0; i < 5; ++i) {
      r[i] = rng.uniform(-3, 3);
      f[i] = rng.uniform(-3, 3);
    }
    CHECK(hinge_g(f) == doctest::Approx(-hinge_g(Eigen::VectorXd(-f))));
    const double before = hinge_d(r, f);
    Eigen::VectorXd r2 = r;
    const auto k = static_cast<Index>(rng.uniform_int(5));
    if (r2[k] > 1) {
      r2[k] += rng.uniform(0, 5);
      CHECK(hinge_d(r2, f) <= before);
    }
  }
  const std::vector<Var<double>> real{constant({1, 1, 2, 2}, 0.0), constant({1, 1, 1, 1}, 10.0)};
  const std::vector<Var<double>> fake{constant({1, 1, 2, 2}, 0.0), constant({1, 1, 1, 1}, -10.0)};
  CHECK(hinge_d(real, fake).item() == doctest::Approx(1.0));
  CHECK(hinge_g(std::vector<Var<double>>{constant({1, 1, 2, 2}, 3.0), constant({1, 1, 1, 1}, 1.0)})
            .item() == doctest::Approx(-2.0));
}

TEST_CASE("feature matching: identity, hand case, symmetry") {
  using Feats = std::vector<std::vector<Var<double>>>;
  Rng rng(6);
  const Feats a{{Var<double>(random_tensor<double>(rng, {1, 2, 3, 3}))}};
  CHECK(feature_matching(a, a).item() == 0.0);
  const Feats one{{constant({1}, 1.0)}}, three{{constant({1}, 3.0)}};
  CHECK(feature_matching(one, three).item() == 2.0);
  const Feats b{{Var<double>(random_tensor<double>(rng, {1, 2, 3, 3}))}};
  CHECK(feature_matching(a, b).item() == feature_matching(b, a).item());
}

TEST_CASE("generator objective is the weighted sum of its parts") {
  const LossWeights w{1.0, 10.0, 0.05};
  GeneratorLossParts<double> zero{constant({1}, 0), constant({1}, 0), constant({1}, 0),
                                  constant({1}, 0)};
  CHECK(generator_objective(zero, w, DiversityConfig{3.0, 10.0}).total.item() == 0.0);

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double g = rng.uniform(-2, 2), fm = rng.uniform(0, 2), k = rng.uniform(0, 2),
                 d = rng.uniform(0, 10), lambda = rng.uniform(0, 10);
    GeneratorLossParts<double> parts{constant({1}, g), constant({1}, fm), constant({1}, k),
                                     constant({1}, d)};
    const auto out = generator_objective(parts, w, DiversityConfig{lambda, 10.0});
    const double expect =
        w.gan * out.gan + w.feature_matching * out.feature_matching + w.kld * out.kld - lambda * out.diversity;
    CHECK(std::abs(out.total.item() - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
  }
  GeneratorLossParts<double> no_div{constant({1}, 1), constant({1}, 1), constant({1}, 1), {}};
  CHECK(generator_objective(no_div, w, DiversityConfig{}).total.item() == doctest::Approx(11.05));
}
