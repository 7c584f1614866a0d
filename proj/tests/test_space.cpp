#include <doctest.h>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmlab/rng.hpp"
#include "mmlab/space.hpp"
#include "support/random_spaces.hpp"

using namespace mmlab;

namespace {

FiniteEnergySpace two_point() {
  Eigen::MatrixXd w(2, 2);
  w << 0, 1, 1, 0;
  return make_space(Eigen::Vector2d(1.0, 1.0), w);
}

Function vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("two-point closed forms for the form operators") {
  const auto sp = two_point();
  CHECK(sp.m.isApprox(Eigen::Vector2d(0.5, 0.5)));

  const Function f01 = vec({0, 1});
  CHECK(energy(sp, f01, f01) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(energy(sp, f01, vec({1, 0})) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(energy(sp, vec({3, 3})) == 0.0);

  CHECK(gamma(sp, f01).isApprox(vec({1, 1}), 1e-15));
  CHECK(gamma(sp, vec({0, 2})).isApprox(vec({4, 4}), 1e-15));
  CHECK(gamma(sp, vec({5, 5})).norm() == 0.0);

  CHECK(laplacian(sp, f01).isApprox(vec({2, -2}), 1e-15));
  CHECK(laplacian(sp, vec({7, 7})).norm() == 0.0);
  // (1,-1) is an eigenvector with eigenvalue -4.
  CHECK(laplacian(sp, vec({1, -1})).isApprox(vec({-4, 4}), 1e-15));

  CHECK(integrate(sp, Function::Ones(2)) == doctest::Approx(1.0));
  CHECK(integrate(sp, f01) == doctest::Approx(0.5));
  CHECK(integrate(sp, vec({2, 0})) == doctest::Approx(1.0));
}

TEST_CASE("carre du champ identity and integration by parts on random spaces") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(19));
    testing::SpaceOptions opt;
    opt.connected = (trial % 3 != 0);
    const auto sp = testing::random_space(rng, n, opt);
    const Function f = rng.uniform_vector(n, -2.0, 2.0);
    const Function g = rng.uniform_vector(n, -2.0, 2.0);
    const Function phi = rng.uniform_vector(n, -2.0, 2.0);

    // integral of Gamma(f) phi dm == -E(f^2, phi)/2 + E(f, f*phi)
    const double lhs = integrate(sp, gamma(sp, f).cwiseProduct(phi));
    const double rhs = -0.5 * energy(sp, f.cwiseProduct(f), phi) +
                       energy(sp, f, f.cwiseProduct(phi));
    const double scale = 1.0 + std::abs(lhs);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * scale);

    // integral of (Lap f) g dm == -E(f, g)
    const double ibp = integrate(sp, laplacian(sp, f).cwiseProduct(g));
    CHECK(std::abs(ibp + energy(sp, f, g)) <=
          1e-12 * (1.0 + std::abs(ibp)));

    // sum_i m_i Gamma(f,g)_i == E(f,g)
    CHECK(std::abs(integrate(sp, gamma(sp, f, g)) - energy(sp, f, g)) <=
          1e-12 * (1.0 + std::abs(energy(sp, f, g))));

    // integral of Lap f dm == 0
    CHECK(std::abs(integrate(sp, laplacian(sp, f))) <= 1e-12);
  }
}

TEST_CASE("Markov property and pointwise Cauchy-Schwarz for Gamma") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(10));
    const auto sp = testing::random_space(rng, n);
    const Function f = rng.uniform_vector(n, -3.0, 3.0);
    double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    if (a > b) std::swap(a, b);
    const Function clipped = f.cwiseMax(a).cwiseMin(b);
    CHECK(energy(sp, clipped) <= energy(sp, f) + 1e-12);

    const Function g = rng.uniform_vector(n, -3.0, 3.0);
    const Function gf = gamma(sp, f), gg = gamma(sp, g), gfg = gamma(sp, f, g);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(gf[i] >= 0.0);
      CHECK(std::abs(gfg[i]) <= std::sqrt(gf[i] * gg[i]) + 1e-12);
    }
  }
}

TEST_CASE("construction validates and reports the first violation") {
  Eigen::MatrixXd w(2, 2);
  w << 0, 1, 1, 0;

  CHECK_THROWS_WITH_AS(make_space(Eigen::Vector2d(1.0, 0.0), w),
                       doctest::Contains("m[1]"), std::invalid_argument);

  Eigen::MatrixXd diag = w;
  diag(1, 1) = 0.5;
  CHECK_THROWS_WITH_AS(make_space(Eigen::Vector2d(1.0, 1.0), diag),
                       doctest::Contains("(1,1)"), std::invalid_argument);

  Eigen::MatrixXd neg = w;
  neg(0, 1) = neg(1, 0) = -1.0;
  CHECK_THROWS_AS(make_space(Eigen::Vector2d(1.0, 1.0), neg),
                  std::invalid_argument);

  Eigen::MatrixXd asym = w;
  asym(0, 1) = 2.0;
  CHECK_THROWS_WITH_AS(make_space(Eigen::Vector2d(1.0, 1.0), asym),
                       doctest::Contains("(0,1)"), std::invalid_argument);

  Eigen::MatrixXd wrong(3, 3);
  wrong.setZero();
  CHECK_THROWS_AS(make_space(Eigen::Vector2d(1.0, 1.0), wrong),
                  std::invalid_argument);

  const auto sp = two_point();
  CHECK_THROWS_AS(energy(sp, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)),
                  std::invalid_argument);
}

TEST_CASE("weights are normalized and components are labeled") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
  w(0, 1) = w(1, 0) = 2.0;
  w(2, 3) = w(3, 2) = 1.0;
  const auto sp = make_space(Eigen::Vector4d(1, 1, 1, 1), w);
  CHECK(sp.m.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sp.num_components == 2);
  CHECK(sp.same_component(0, 1));
  CHECK(sp.same_component(2, 3));
  CHECK(!sp.same_component(1, 2));
}

TEST_CASE("density helpers") {
  const auto sp = two_point();
  CHECK(is_density(sp, vec({2, 0})));
  CHECK(is_density(sp, vec({1, 1})));
  CHECK(!is_density(sp, vec({2, 2})));
  CHECK(!is_density(sp, vec({3, -1})));
  CHECK_THROWS_AS(require_density(sp, vec({3, 1})), std::invalid_argument);
  const auto rho = to_density(sp, vec({3, 1}));
  CHECK(integrate(sp, rho) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(density_of_mass(sp, mass_of(sp, rho)).isApprox(rho, 1e-14));
}

TEST_CASE("json round trip and loader validation") {
  Rng rng(99);
  const auto sp = testing::random_space(rng, 6);
  const auto j = space_to_json(sp);
  const auto back = space_from_json(j);
  CHECK(back.m.isApprox(sp.m, 1e-15));
  CHECK(back.w.isApprox(sp.w, 1e-15));

  nlohmann::json bad = {{"m", {0.5, 0.5}}, {"w", {{0.0, 1.0}, {2.0, 0.0}}}};
  CHECK_THROWS_WITH_AS(space_from_json(bad), doctest::Contains("(0,1)"),
                       std::invalid_argument);

  nlohmann::json sum = {{"m", {0.5, 0.6}}, {"w", {{0.0, 1.0}, {1.0, 0.0}}}};
  CHECK_THROWS_AS(space_from_json(sum), std::invalid_argument);

  nlohmann::json shape = {{"m", {0.5, 0.5}}, {"w", {{0.0, 1.0}}}};
  CHECK_THROWS_AS(space_from_json(shape), std::invalid_argument);
}
