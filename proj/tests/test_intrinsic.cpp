#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mmlab/intrinsic.hpp"
#include "mmlab/rng.hpp"
#include "support/oracles.hpp"
#include "support/random_spaces.hpp"

using namespace mmlab;
namespace oracle = mmlab::testing::oracle;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

FiniteEnergySpace two_point() {
  Eigen::Vector2d m(0.5, 0.5);
  Eigen::Matrix2d w;
  w << 0, 1, 1, 0;
  return make_space(m, w);
}

FiniteEnergySpace uniform_path(int n, double conductance = 1.0) {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) w(i, i + 1) = w(i + 1, i) = conductance;
  return make_space(m, w);
}

}  // namespace

TEST_CASE("two point intrinsic distance is certified to one") {
  const auto sp = two_point();
  const auto iv = intrinsic_distance(sp, 0, 1);
  CHECK(iv.converged);
  CHECK(iv.lower <= 1.0 + 1e-9);
  CHECK(iv.upper >= 1.0 - 1e-9);
  CHECK(iv.width() <= 2e-8);
  CHECK(iv.midpoint() == doctest::Approx(1.0).epsilon(1e-7));

  CHECK(intrinsic_distance(sp, 1, 1).lower == 0.0);
  CHECK(intrinsic_distance(sp, 1, 1).upper == 0.0);

  const auto res = GammaBallProgram{sp, 0, 1, {}}.solve();
  CHECK(res.maximizer[1] - res.maximizer[0] == doctest::Approx(res.interval.lower));
  CHECK(gamma(sp, res.maximizer).maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("three point path distances match the hand optimization") {
  // Uniform weights: the one-hop value is sqrt(2/3) (one local constraint
  // binds), the two-hop value is 2/sqrt(3) (the middle constraint binds on
  // both differences at once), strictly less than twice the one-hop value.
  const auto sp = uniform_path(3);
  const auto d01 = intrinsic_distance(sp, 0, 1);
  const auto d02 = intrinsic_distance(sp, 0, 2);
  const auto d12 = intrinsic_distance(sp, 1, 2);
  CHECK(d01.midpoint() == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-6));
  CHECK(d12.midpoint() == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-6));
  CHECK(d02.midpoint() == doctest::Approx(2.0 / std::sqrt(3.0)).epsilon(1e-6));
  CHECK(d02.lower <= d01.upper + d12.upper + 1e-9);
  CHECK(d02.midpoint() < d01.midpoint() + d12.midpoint());
}

TEST_CASE("points in different components are infinitely far") {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(4);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
  w(0, 1) = w(1, 0) = 1.0;
  w(2, 3) = w(3, 2) = 1.0;
  const auto sp = make_space(m, w);
  const auto iv = intrinsic_distance(sp, 0, 2);
  CHECK(std::isinf(iv.lower));
  CHECK(std::isinf(iv.upper));
  CHECK(iv.converged);

  const auto mat = intrinsic_distance_matrix(sp);
  CHECK(std::isinf(mat.lower(1, 3)));
  CHECK(std::isfinite(mat.lower(0, 1)));
}

TEST_CASE("certified brackets behave like a distance on random spaces") {
  Rng rng(331);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 4 + static_cast<int>(rng.index(4));
    const auto sp = testing::random_space(rng, n);
    const auto mat = intrinsic_distance_matrix(sp);
    CHECK(mat.all_converged);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        CHECK(mat.lower(i, j) <= mat.upper(i, j) + 1e-12);
        CHECK(mat.upper(i, j) - mat.lower(i, j) <=
              1e-8 * (1.0 + mat.upper(i, j)));
        CHECK(mat.lower(i, j) > 0.0);
      }
    // The closure-tightened lower bounds form a genuine metric.
    const auto wrapped = make_extended_distance(mat.lower);
    CHECK_FALSE(wrapped.semidistance);

    // Any feasible function is 1-Lipschitz for the certified upper bounds.
    for (int probe = 0; probe < 5; ++probe) {
      Function f = rng.normal_vector(n);
      const double top = gamma(sp, f).maxCoeff();
      if (top > 0.0) f /= std::sqrt(top);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          CHECK(f[i] - f[j] <= mat.upper(i, j) + 1e-8);
    }
  }
}

TEST_CASE("congested objectives certify an unbounded value") {
  // A nonzero component sum slides the component constant without limit.
  const auto sp = two_point();
  Eigen::VectorXd c(2);
  c << 0.3, 0.4;
  const auto res = maximize_linear_over_gamma_ball(sp, c);
  CHECK(std::isinf(res.interval.lower));
  CHECK(res.interval.converged);
  CHECK(res.maximizer.dot(c) > 0.0);
  CHECK(gamma(sp, res.maximizer).maxCoeff() == doctest::Approx(0.0));

  // A balanced objective on the same space stays finite and certified.
  Eigen::VectorXd balanced(2);
  balanced << -0.7, 0.7;
  const auto fin = maximize_linear_over_gamma_ball(sp, balanced);
  CHECK(fin.interval.converged);
  CHECK(fin.interval.midpoint() == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("neighbor distances on a refining path approach the spacing") {
  // Points discretize [0,1]; cell mass h pairs with conductance 2/h so the
  // local constraint allows exactly a unit step per cell in the limit.
  double prev_gap = kInf;
  for (int n : {6, 12, 24}) {
    const double h = 1.0 / (n - 1);
    const auto sp = uniform_path(n, 2.0 / h);
    const auto iv = intrinsic_distance(sp, n / 2, n / 2 + 1);
    const double ratio = iv.midpoint() / h;
    const double gap = std::abs(ratio - 1.0);
    CHECK(gap < 0.15);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 0.03);
}

TEST_CASE("family distances take pointwise sup of increments") {
  std::vector<Function> family;
  family.push_back(Eigen::Vector3d(1.0, 0.0, 0.0) * 0.5);
  family.push_back(Eigen::Vector3d(0.0, 1.0, 0.0) * 2.0);
  const auto res = distance_from_family(family);
  CHECK(res.distance(0, 1) == doctest::Approx(2.0));
  CHECK(res.distance(0, 2) == doctest::Approx(0.5));
  CHECK(res.distance(1, 2) == doctest::Approx(2.0));
  CHECK(res.separates_points);

  const auto flat =
      distance_from_family({Eigen::Vector3d(4.0, 4.0, 4.0)});
  CHECK(flat.distance.d.cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(flat.separates_points);
  CHECK(flat.distance.semidistance);

  // Enlarging the family can only enlarge the distance.
  std::vector<Function> bigger = family;
  bigger.push_back(Eigen::Vector3d(0.0, 0.0, 3.0));
  const auto grown = distance_from_family(bigger);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(grown.distance(i, j) >= res.distance(i, j) - 1e-12);

  CHECK_THROWS_AS(distance_from_family({}), std::invalid_argument);
}

TEST_CASE("chain distances with a hop threshold") {
  Eigen::MatrixXd d(3, 3);
  d << 0, 1, 2, 1, 0, 1, 2, 1, 0;
  const auto metric = make_extended_distance(d);

  const auto one = epsilon_chain_distance(metric, 1.0);
  CHECK(one(0, 2) == doctest::Approx(2.0));
  CHECK(one(0, 1) == doctest::Approx(1.0));

  const auto half = epsilon_chain_distance(metric, 0.5);
  CHECK(std::isinf(half(0, 1)));
  CHECK(std::isinf(half(0, 2)));
  CHECK(half(1, 1) == 0.0);

  const auto big = epsilon_chain_distance(metric, 10.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(big(i, j) == doctest::Approx(d(i, j)));

  // Random check: nonincreasing in the threshold, dominated by no admissible
  // chain shorter than the direct distance, equal to the thresholded
  // shortest-path closure.
  Rng rng(17);
  const auto base = make_extended_distance(
      testing::random_extended_metric(rng, 6, 1));
  double prev_total = kInf;
  for (double eps : {0.4, 0.8, 1.6, 3.2}) {
    const auto chain = epsilon_chain_distance(base, eps);
    Eigen::MatrixXd thresholded(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        thresholded(i, j) =
            (i == j || base(i, j) <= eps) ? base.d(i, j) : kInf;
    const Eigen::MatrixXd closed = oracle::shortest_path_closure(thresholded);
    double total = 0.0;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        CHECK(std::isinf(chain(i, j)) == std::isinf(closed(i, j)));
        if (std::isfinite(chain(i, j))) {
          CHECK(chain(i, j) == doctest::Approx(closed(i, j)));
          CHECK(chain(i, j) >= base(i, j) - 1e-12);
          total += chain(i, j);
        } else {
          total += 1e6;
        }
      }
    CHECK(total <= prev_total + 1e-9);
    prev_total = total;
  }
}

TEST_CASE("midpoint chains divide the distance into admissible hops") {
  Eigen::MatrixXd d(3, 3);
  d << 0, 1, 2, 1, 0, 1, 2, 1, 0;
  const auto metric = make_extended_distance(d);

  const auto chain = midpoint_chain(metric, 0, 2, 2, 1.0);
  REQUIRE(chain.has_value());
  CHECK(*chain == std::vector<int>{0, 1, 2});
  const double hop = std::sqrt(4.0 + 1.0) / 2.0;
  for (size_t k = 0; k + 1 < chain->size(); ++k)
    CHECK(metric((*chain)[k], (*chain)[k + 1]) <= hop + 1e-12);

  const auto trivial = midpoint_chain(metric, 1, 1, 3, 0.5);
  REQUIRE(trivial.has_value());
  CHECK(*trivial == std::vector<int>{1, 1, 1, 1});

  // On two points there is no midpoint, so halving the step fails for any
  // smoothing below sqrt(3).
  Eigen::MatrixXd t2(2, 2);
  t2 << 0, 1, 1, 0;
  const auto none = midpoint_chain(make_extended_distance(t2), 0, 1, 2, 0.5);
  CHECK_FALSE(none.has_value());
  const auto wide = midpoint_chain(make_extended_distance(t2), 0, 1, 2, 2.0);
  REQUIRE(wide.has_value());
  CHECK((*wide)[0] == 0);
  CHECK(wide->back() == 1);
}
