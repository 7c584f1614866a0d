#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmlab/space.hpp"

namespace mmlab {

// Symmetric matrix of pairwise costs with +inf allowed. Off-diagonal zeros
// are rejected unless the matrix was built in semidistance mode, in which
// case `semidistance` records the relaxation.
struct ExtendedDistanceMatrix {
  Eigen::MatrixXd d;
  bool semidistance = false;

  int n() const { return static_cast<int>(d.rows()); }
  double operator()(int i, int j) const { return d(i, j); }
};

// Validates symmetry, zero diagonal, nonnegativity and the triangle
// inequality (with +inf absorbing) before wrapping the matrix. Throws
// std::invalid_argument with the first violation found.
ExtendedDistanceMatrix make_extended_distance(Eigen::MatrixXd d,
                                              bool allow_semidistance = false);

// Labels the classes of mutually finite distance: label[i] == label[j] iff
// d(i,j) < inf. The triangle inequality makes this an equivalence relation.
std::vector<int> finite_distance_classes(const ExtendedDistanceMatrix& d);

// Nonnegative coupling matrix; rows are the source marginal, columns the
// target marginal.
struct TransportPlan {
  Eigen::MatrixXd pi;

  Eigen::VectorXd row_marginal() const { return pi.rowwise().sum(); }
  Eigen::VectorXd col_marginal() const { return pi.colwise().sum(); }
};

// Throws unless the plan couples mu to nu within tol.
void require_plan(const TransportPlan& plan, const Eigen::VectorXd& mu,
                  const Eigen::VectorXd& nu, double tol = 1e-9);

struct TransportResult {
  // Optimal total cost sum_ij pi_ij c_ij with c = d^power; +inf when no
  // finite-cost coupling exists.
  double value = 0.0;
  TransportPlan plan;
  // Dual potentials satisfying psi_j - phi_i <= c_ij on finite-cost pairs,
  // with sum psi_j nu_j - sum phi_i mu_i equal to `value` up to solver
  // tolerance whenever the value is finite.
  Eigen::VectorXd phi;
  Eigen::VectorXd psi;

  // The induced distance: value^(1/power).
  double distance(int power) const;
};

// Optimal transport between unit-mass nonnegative marginals for the cost
// d^power, power in {1, 2}. Points of zero mass never carry mass in the
// returned plan. Returns value +inf (with the independent coupling as plan
// and zero potentials) exactly when some finite-distance class carries
// different mu- and nu-mass.
TransportResult kantorovich(const ExtendedDistanceMatrix& d,
                            const Eigen::VectorXd& mu,
                            const Eigen::VectorXd& nu, int power);

struct W1DualResult {
  double value = 0.0;  // +inf when the linear functional is unbounded
  // 1-Lipschitz on finite-distance pairs; integrates against nu - mu to
  // `value` when finite, and to a positive number scaling without bound
  // when the value is +inf.
  Eigen::VectorXd witness;
};

// Dual form of the power-1 distance: sup of sum_i f_i (nu_i - mu_i) over f
// that are 1-Lipschitz on finite-distance pairs.
W1DualResult w1_dual(const ExtendedDistanceMatrix& d, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& nu);

// Inf-convolution (Q_t phi)(y) = min_x phi(x) + d(x,y)^2 / (2t); +inf costs
// drop out of the minimum and the diagonal keeps it finite.
Function hopf_lax(const ExtendedDistanceMatrix& d, const Function& phi,
                  double t);

struct HopfLaxDualityReport {
  double transport_cost = 0.0;  // optimal cost for power 2
  double half_cost = 0.0;
  double best_grid_value = 0.0;  // max over supplied potentials
  double dual_value = 0.0;       // at the rescaled optimizer
  double max_violation = 0.0;    // positive part of best - half_cost
  bool pass = false;
};

// Evaluates phi -> sum_y (Q_1 phi)_y nu_y - sum_x phi_x mu_x over the given
// potentials plus the rescaled optimal dual potential, and compares against
// half the optimal quadratic cost. Requires a fully finite d.
HopfLaxDualityReport hopf_lax_duality_check(const ExtendedDistanceMatrix& d,
                                            const Eigen::VectorXd& mu,
                                            const Eigen::VectorXd& nu,
                                            const std::vector<Function>& grid);

// Composes a coupling of (mu, nu) with a coupling of (nu, lambda) through
// the shared middle marginal: pi(x,z) = sum_y pi1(x,y) pi2(y,z) / nu_y.
// Throws when the middle marginals disagree beyond tol.
TransportPlan glue_plans(const TransportPlan& first, const TransportPlan& second,
                         double tol = 1e-9);

// Total cost of a plan against c = d^power; +inf if mass sits on an
// infinite-cost cell.
double plan_cost(const ExtendedDistanceMatrix& d, const TransportPlan& plan,
                 int power);

// CSV triplets "i,j,mass" for the cells carrying mass, with a header row.
std::string plan_to_csv(const TransportPlan& plan);

// JSON matrix with the string sentinel "inf" for infinite entries.
std::string extended_distance_to_json(const ExtendedDistanceMatrix& d);
ExtendedDistanceMatrix extended_distance_from_json(const std::string& text,
                                                   bool allow_semidistance =
                                                       false);

}  // namespace mmlab
