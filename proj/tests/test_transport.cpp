#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mmlab/rng.hpp"
#include "mmlab/transport.hpp"
#include "support/oracles.hpp"
#include "support/random_spaces.hpp"

using namespace mmlab;
namespace oracle = mmlab::testing::oracle;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ExtendedDistanceMatrix two_point_metric() {
  Eigen::MatrixXd d(2, 2);
  d << 0, 1, 1, 0;
  return make_extended_distance(d);
}

Eigen::VectorXd positive_marginal(Rng& rng, int n) {
  Eigen::VectorXd m = rng.uniform_vector(n, 0.05, 1.0);
  return m / m.sum();
}

// Marginals carrying equal mass on every finite-distance class, so that the
// transport value stays finite.
std::pair<Eigen::VectorXd, Eigen::VectorXd> balanced_marginals(
    Rng& rng, const ExtendedDistanceMatrix& d) {
  const int n = d.n();
  Eigen::VectorXd mu = positive_marginal(rng, n);
  Eigen::VectorXd nu = rng.uniform_vector(n, 0.05, 1.0);
  const std::vector<int> label = finite_distance_classes(d);
  const int classes = 1 + *std::max_element(label.begin(), label.end());
  for (int c = 0; c < classes; ++c) {
    double smu = 0.0, snu = 0.0;
    for (int i = 0; i < n; ++i)
      if (label[i] == c) {
        smu += mu[i];
        snu += nu[i];
      }
    for (int i = 0; i < n; ++i)
      if (label[i] == c) nu[i] *= smu / snu;
  }
  return {mu, nu};
}

void check_duals(const ExtendedDistanceMatrix& d, const TransportResult& res,
                 const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                 int power) {
  const int n = d.n();
  double scale = 1.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (std::isfinite(d(i, j)))
        scale = std::max(scale, power == 1 ? d(i, j) : d(i, j) * d(i, j));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(d(i, j))) continue;
      const double c = power == 1 ? d(i, j) : d(i, j) * d(i, j);
      CHECK(res.psi[j] - res.phi[i] <= c + 1e-9 * scale);
    }
  if (std::isfinite(res.value)) {
    const double dual = res.psi.dot(nu) - res.phi.dot(mu);
    CHECK(std::abs(res.value - dual) <= 1e-8 * (1.0 + std::abs(res.value)));
  }
}

}  // namespace

TEST_CASE("distance validation rejects malformed matrices") {
  Eigen::MatrixXd bad(2, 2);
  bad << 0, 1, 2, 0;
  CHECK_THROWS_WITH_AS(make_extended_distance(bad),
                       doctest::Contains("asymmetric"), std::invalid_argument);

  bad << 0.5, 1, 1, 0;
  CHECK_THROWS_WITH_AS(make_extended_distance(bad), doctest::Contains("diagonal"),
                       std::invalid_argument);

  bad << 0, -1, -1, 0;
  CHECK_THROWS_WITH_AS(make_extended_distance(bad), doctest::Contains("negative"),
                       std::invalid_argument);

  bad << 0, std::nan(""), std::nan(""), 0;
  CHECK_THROWS_WITH_AS(make_extended_distance(bad), doctest::Contains("NaN"),
                       std::invalid_argument);

  Eigen::MatrixXd tri(3, 3);
  tri << 0, 1, 3, 1, 0, 1, 3, 1, 0;
  CHECK_THROWS_WITH_AS(make_extended_distance(tri), doctest::Contains("triangle"),
                       std::invalid_argument);

  // One infinite and one finite entry in a mirror pair is asymmetric.
  Eigen::MatrixXd mixed(2, 2);
  mixed << 0, kInf, 1, 0;
  CHECK_THROWS_AS(make_extended_distance(mixed), std::invalid_argument);

  // A vanishing off-diagonal entry needs the semidistance relaxation.
  Eigen::MatrixXd semi(2, 2);
  semi << 0, 0, 0, 0;
  CHECK_THROWS_AS(make_extended_distance(semi), std::invalid_argument);
  const auto relaxed = make_extended_distance(semi, true);
  CHECK(relaxed.semidistance);
  CHECK_FALSE(two_point_metric().semidistance);

  // Infinite legs absorb the triangle inequality.
  Eigen::MatrixXd ext(3, 3);
  ext << 0, kInf, 1, kInf, 0, kInf, 1, kInf, 0;
  const auto wrapped = make_extended_distance(ext);
  const auto label = finite_distance_classes(wrapped);
  CHECK(label[0] == label[2]);
  CHECK(label[0] != label[1]);
}

TEST_CASE("kantorovich matches brute force enumeration") {
  Rng rng(2024);
  for (int trial = 0; trial < 44; ++trial) {
    // Enumeration cost explodes with size, so most trials stay small.
    const int n = trial < 40 ? 2 + static_cast<int>(rng.index(3)) : 5;
    const int classes = 1 + static_cast<int>(rng.index(2));
    const auto d = make_extended_distance(
        testing::random_extended_metric(rng, n, std::min(classes, n)));
    auto [mu, nu] = balanced_marginals(rng, d);
    for (int power : {1, 2}) {
      const TransportResult res = kantorovich(d, mu, nu, power);
      Eigen::MatrixXd cost = d.d;
      if (power == 2) cost = cost.array().square();
      const auto ref = oracle::transport_brute_force(cost, mu, nu);
      REQUIRE(std::isfinite(res.value));
      CHECK(std::abs(res.value - ref.value) <=
            1e-8 * (1.0 + std::abs(ref.value)));
      require_plan(res.plan, mu, nu);
      CHECK(std::abs(plan_cost(d, res.plan, power) - res.value) <= 1e-9);
      check_duals(d, res, mu, nu, power);
    }
  }
}

TEST_CASE("identical marginals transport for free") {
  Rng rng(7);
  const auto d =
      make_extended_distance(testing::random_extended_metric(rng, 5, 1));
  const Eigen::VectorXd mu = positive_marginal(rng, 5);
  const TransportResult res = kantorovich(d, mu, mu, 2);
  CHECK(std::abs(res.value) < 1e-12);
  CHECK((res.plan.pi - Eigen::MatrixXd(mu.asDiagonal())).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("a forced transfer pays the squared distance") {
  const auto d = two_point_metric();
  const Eigen::VectorXd mu = Eigen::Vector2d(1.0, 0.0);
  const Eigen::VectorXd nu = Eigen::Vector2d(0.0, 1.0);
  const TransportResult quad = kantorovich(d, mu, nu, 2);
  CHECK(quad.value == doctest::Approx(1.0));
  CHECK(quad.distance(2) == doctest::Approx(1.0));
  CHECK(quad.plan.pi(0, 1) == doctest::Approx(1.0));
  const TransportResult lin = kantorovich(d, mu, nu, 1);
  CHECK(lin.value == doctest::Approx(1.0));
}

TEST_CASE("mass split across classes is infeasible") {
  Rng rng(11);
  const auto d =
      make_extended_distance(testing::random_extended_metric(rng, 4, 2));
  const auto label = finite_distance_classes(d);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(4), nu = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < 4; ++i) (label[i] == 0 ? mu : nu)[i] = 1.0;
  mu /= mu.sum();
  nu /= nu.sum();
  for (int power : {1, 2}) {
    const TransportResult res = kantorovich(d, mu, nu, power);
    CHECK(std::isinf(res.value));
    CHECK(std::isinf(res.distance(power)));
    require_plan(res.plan, mu, nu);
    check_duals(d, res, mu, nu, power);

    Eigen::MatrixXd cost = d.d;
    if (power == 2) cost = cost.array().square();
    CHECK(std::isinf(oracle::transport_brute_force(cost, mu, nu).value));
  }
  const W1DualResult dual = w1_dual(d, mu, nu);
  CHECK(std::isinf(dual.value));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (std::isfinite(d(i, j)))
        CHECK(std::abs(dual.witness[i] - dual.witness[j]) <= d(i, j) + 1e-12);
  CHECK(dual.witness.dot(nu - mu) > 0.1);
}

TEST_CASE("zero mass points are dropped and reinserted") {
  Rng rng(5);
  for (int trial = 0; trial < 16; ++trial) {
    const int n = trial < 14 ? 3 + static_cast<int>(rng.index(2)) : 5;
    const auto d = make_extended_distance(
        testing::random_extended_metric(rng, n, 1));
    auto [mu, nu] = balanced_marginals(rng, d);
    const int drop_mu = static_cast<int>(rng.index(n));
    const int drop_nu = static_cast<int>(rng.index(n));
    mu[drop_mu] = 0.0;
    nu[drop_nu] = 0.0;
    mu /= mu.sum();
    nu /= nu.sum();
    for (int power : {1, 2}) {
      const TransportResult res = kantorovich(d, mu, nu, power);
      Eigen::MatrixXd cost = d.d;
      if (power == 2) cost = cost.array().square();
      const auto ref = oracle::transport_brute_force(cost, mu, nu);
      CHECK(std::abs(res.value - ref.value) <=
            1e-8 * (1.0 + std::abs(ref.value)));
      CHECK(res.plan.pi.row(drop_mu).cwiseAbs().maxCoeff() == 0.0);
      CHECK(res.plan.pi.col(drop_nu).cwiseAbs().maxCoeff() == 0.0);
      require_plan(res.plan, mu, nu);
      check_duals(d, res, mu, nu, power);
    }
  }
}

TEST_CASE("linear duality produces an exact Lipschitz witness") {
  Rng rng(29);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(4));
    const int classes = n >= 3 ? 1 + static_cast<int>(rng.index(2)) : 1;
    const auto d = make_extended_distance(
        testing::random_extended_metric(rng, n, classes));
    auto [mu, nu] = balanced_marginals(rng, d);
    const W1DualResult dual = w1_dual(d, mu, nu);
    const TransportResult primal = kantorovich(d, mu, nu, 1);
    REQUIRE(std::isfinite(primal.value));
    CHECK(std::abs(dual.value - primal.value) <= 1e-8 * (1.0 + primal.value));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::isfinite(d(i, j)))
          CHECK(std::abs(dual.witness[i] - dual.witness[j]) <= d(i, j) + 1e-9);
    CHECK(std::abs(dual.witness.dot(nu - mu) - dual.value) <=
          1e-8 * (1.0 + dual.value));
  }

  // Hand-solved two-point extreme: value 1, witness a unit step.
  const auto d2 = two_point_metric();
  const W1DualResult step =
      w1_dual(d2, Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 1.0));
  CHECK(step.value == doctest::Approx(1.0));
  CHECK(step.witness[1] - step.witness[0] == doctest::Approx(1.0));

  // Scaling the metric scales the value.
  Rng rng2(31);
  const auto base = make_extended_distance(
      testing::random_extended_metric(rng2, 4, 1));
  auto [mu, nu] = balanced_marginals(rng2, base);
  const auto scaled = make_extended_distance(2.5 * base.d);
  CHECK(w1_dual(scaled, mu, nu).value ==
        doctest::Approx(2.5 * w1_dual(base, mu, nu).value).epsilon(1e-9));
}

TEST_CASE("inf convolution obeys the defining inequalities") {
  const auto d2 = two_point_metric();
  CHECK(hopf_lax(d2, Eigen::Vector2d(3.0, 3.0), 0.7)
            .isApprox(Eigen::Vector2d(3.0, 3.0)));
  const Function q = hopf_lax(d2, Eigen::Vector2d(0.0, 1.0), 1.0);
  CHECK(q[0] == doctest::Approx(0.0));
  CHECK(q[1] == doctest::Approx(0.5));

  Rng rng(17);
  const auto d = make_extended_distance(
      testing::random_extended_metric(rng, 6, 2));
  const Function phi = rng.uniform_vector(6, -1.0, 1.0);
  Function prev;
  for (double t : {0.05, 0.1, 0.4, 1.0, 3.0, 10.0}) {
    const Function qt = hopf_lax(d, phi, t);
    CHECK((qt.array() <= phi.array() + 1e-12).all());
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        if (std::isfinite(d(x, y)))
          CHECK(qt[y] - phi[x] <= d(x, y) * d(x, y) / (2.0 * t) + 1e-12);
    if (prev.size() > 0) CHECK((qt.array() <= prev.array() + 1e-12).all());
    prev = qt;
  }

  // Small times recover the potential; large times flatten to the class min.
  CHECK((hopf_lax(d, phi, 1e-9) - phi).cwiseAbs().maxCoeff() < 1e-6);
  const Function flat = hopf_lax(d, phi, 1e9);
  const auto label = finite_distance_classes(d);
  for (int y = 0; y < 6; ++y) {
    double lo = kInf;
    for (int x = 0; x < 6; ++x)
      if (label[x] == label[y]) lo = std::min(lo, phi[x]);
    CHECK(flat[y] == doctest::Approx(lo).epsilon(1e-6));
  }
}

TEST_CASE("quadratic duality through the inf convolution") {
  const auto d2 = two_point_metric();
  const Eigen::VectorXd mu = Eigen::Vector2d(1.0, 0.0);
  const Eigen::VectorXd nu = Eigen::Vector2d(0.0, 1.0);
  std::vector<Function> grid;
  for (int k = 0; k <= 80; ++k)
    grid.push_back(Eigen::Vector2d(0.0, -2.0 + 0.05 * k));
  const auto report = hopf_lax_duality_check(d2, mu, nu, grid);
  CHECK(report.half_cost == doctest::Approx(0.5));
  CHECK(report.best_grid_value == doctest::Approx(0.5));
  CHECK(report.dual_value == doctest::Approx(0.5));
  CHECK(report.pass);

  Rng rng(41);
  const auto d = make_extended_distance(
      testing::random_extended_metric(rng, 5, 1));
  auto [rmu, rnu] = balanced_marginals(rng, d);
  std::vector<Function> rgrid;
  for (int k = 0; k < 40; ++k) rgrid.push_back(rng.uniform_vector(5, -2.0, 2.0));
  const auto rreport = hopf_lax_duality_check(d, rmu, rnu, rgrid);
  CHECK(rreport.pass);
  CHECK(rreport.max_violation <= 1e-8);
  CHECK(rreport.best_grid_value <= rreport.half_cost + 1e-8);

  const auto same = hopf_lax_duality_check(d, rmu, rmu, {Function::Zero(5)});
  CHECK(same.half_cost == doctest::Approx(0.0).scale(1e-10));
  CHECK(same.best_grid_value == doctest::Approx(0.0).scale(1e-10));
  CHECK(same.pass);
}

TEST_CASE("gluing composes couplings and certifies the triangle inequality") {
  Rng rng(59);
  const auto d = make_extended_distance(
      testing::random_extended_metric(rng, 4, 1));
  const Eigen::VectorXd mu = positive_marginal(rng, 4);
  const Eigen::VectorXd nu = positive_marginal(rng, 4);
  const Eigen::VectorXd la = positive_marginal(rng, 4);

  const TransportPlan first = kantorovich(d, mu, nu, 1).plan;
  TransportPlan diag;
  diag.pi = nu.asDiagonal();
  CHECK((glue_plans(first, diag).pi - first.pi).cwiseAbs().maxCoeff() < 1e-12);
  TransportPlan mudiag;
  mudiag.pi = mu.asDiagonal();
  CHECK((glue_plans(mudiag, mudiag).pi - mudiag.pi).cwiseAbs().maxCoeff() <
        1e-12);

  const TransportResult left = kantorovich(d, mu, nu, 1);
  const TransportResult right = kantorovich(d, nu, la, 1);
  const TransportPlan glued = glue_plans(left.plan, right.plan);
  require_plan(glued, mu, la);
  const TransportResult direct = kantorovich(d, mu, la, 1);
  CHECK(plan_cost(d, glued, 1) >= direct.value - 1e-9);
  CHECK(direct.value <= left.value + right.value + 1e-9);

  TransportPlan off;
  off.pi = la.asDiagonal();
  CHECK_THROWS_WITH_AS(glue_plans(first, off), doctest::Contains("middle"),
                       std::invalid_argument);
}

TEST_CASE("truncated metrics increase to the extended value") {
  Rng rng(73);
  const auto d = make_extended_distance(
      testing::random_extended_metric(rng, 6, 2));
  auto [mu, nu] = balanced_marginals(rng, d);
  const double full = kantorovich(d, mu, nu, 1).value;
  REQUIRE(std::isfinite(full));
  double prev = -1.0;
  for (double cap : {0.5, 1.0, 2.0, 4.0, 8.0, 1e6}) {
    const auto trunc =
        make_extended_distance(d.d.cwiseMin(cap));
    const double value = kantorovich(trunc, mu, nu, 1).value;
    CHECK(value >= prev - 1e-12);
    CHECK(value <= full + 1e-9);
    prev = value;
  }
  CHECK(prev == doctest::Approx(full).epsilon(1e-9));

  // With imbalanced classes the truncated values grow without bound.
  Eigen::VectorXd mu2 = mu, nu2 = nu;
  const auto label = finite_distance_classes(d);
  for (int i = 0; i < 6; ++i) {
    mu2[i] = label[i] == 0 ? mu[i] : 0.0;
    nu2[i] = label[i] == 0 ? 0.0 : nu[i];
  }
  mu2 /= mu2.sum();
  nu2 /= nu2.sum();
  const double w4 =
      kantorovich(make_extended_distance(d.d.cwiseMin(4.0)), mu2, nu2, 1).value;
  const double w8 =
      kantorovich(make_extended_distance(d.d.cwiseMin(8.0)), mu2, nu2, 1).value;
  CHECK(w8 > w4 + 1e-9);
  CHECK(std::isinf(kantorovich(d, mu2, nu2, 1).value));
}

TEST_CASE("lipschitz observables are controlled by the distance") {
  Rng rng(97);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.index(3));
    const auto d = make_extended_distance(
        testing::random_extended_metric(rng, n, 1));
    auto [mu, nu] = balanced_marginals(rng, d);
    const Function f = rng.uniform_vector(n, -1.0, 1.0);
    double lip = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && std::isfinite(d(i, j)))
          lip = std::max(lip, std::abs(f[i] - f[j]) / d(i, j));
    const double w1 = kantorovich(d, mu, nu, 1).value;
    CHECK(std::abs(f.dot(mu - nu)) <= lip * w1 + 1e-9);
  }
}

TEST_CASE("plans and distances serialize with an inf sentinel") {
  TransportPlan plan;
  plan.pi = Eigen::MatrixXd::Zero(2, 2);
  plan.pi(0, 1) = 0.25;
  plan.pi(1, 1) = 0.75;
  const std::string csv = plan_to_csv(plan);
  CHECK(csv.find("i,j,mass\n") == 0);
  CHECK(csv.find("0,1,0.25") != std::string::npos);
  CHECK(csv.find("1,1,0.75") != std::string::npos);
  CHECK(csv.find("0,0,") == std::string::npos);

  Eigen::MatrixXd ext(3, 3);
  ext << 0, kInf, 1, kInf, 0, kInf, 1, kInf, 0;
  const auto d = make_extended_distance(ext);
  const std::string text = extended_distance_to_json(d);
  CHECK(text.find("\"inf\"") != std::string::npos);
  const auto back = extended_distance_from_json(text);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(std::isinf(back(i, j)) == std::isinf(d(i, j)));
      if (std::isfinite(d(i, j))) CHECK(back(i, j) == doctest::Approx(d(i, j)));
    }

  CHECK_THROWS_AS(extended_distance_from_json("{ not json"),
                  std::invalid_argument);
  CHECK_THROWS_AS(extended_distance_from_json("{\"d\": [[0, \"oops\"]]}"),
                  std::invalid_argument);
}
