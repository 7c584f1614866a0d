#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mmlab/space.hpp"
#include "mmlab/transport.hpp"

namespace mmlab {

// Two-sided bracket produced by a solver: `lower` is attained by an explicit
// feasible point, `upper` comes from a dual certificate, and `converged`
// records whether the bracket closed to the requested tolerance.
struct CertifiedInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool converged = false;

  double width() const { return upper - lower; }
  double midpoint() const { return 0.5 * (lower + upper); }
};

struct GammaBallSettings {
  double tolerance = 1e-8;        // target certified gap, relative to scale
  int max_newton_steps = 60;      // per barrier stage
  int max_barrier_stages = 30;
  double initial_barrier = 1.0;
  double barrier_shrink = 10.0;   // geometric decrease of the barrier weight
  double imbalance_tolerance = 1e-10;  // per-component objective sum cutoff
};

struct GammaBallResult {
  CertifiedInterval interval;
  // Feasible point attaining `interval.lower` (for a finite value), or the
  // unbounded direction (constant on one component) when the value is +inf.
  Function maximizer;
  // Nonnegative multipliers behind the dual upper bound.
  Eigen::VectorXd multipliers;
};

// Certified maximization of a linear functional over the unit ball of the
// pointwise squared gradient: sup c.f over { f : Gamma(f)_i <= 1 for all i }.
// The value is +inf exactly when c has a nonzero sum on some conductance
// component (sliding that component's constant); otherwise a log-barrier
// Newton iteration produces a primal witness and a dual upper bound.
GammaBallResult maximize_linear_over_gamma_ball(const FiniteEnergySpace& sp,
                                                const Eigen::VectorXd& c,
                                                GammaBallSettings settings = {});

// The pairwise instance: sup f(target) - f(source) over the same ball.
struct GammaBallProgram {
  const FiniteEnergySpace& space;
  int source = 0;
  int target = 0;
  GammaBallSettings settings;

  GammaBallResult solve() const;
};

// Certified bracket for the energy-induced point distance
//   sup { f(y) - f(x) : Gamma(f) <= 1 },
// which is +inf exactly when x and y lie in different conductance
// components (detected structurally, never by divergence).
CertifiedInterval intrinsic_distance(const FiniteEnergySpace& sp, int x, int y,
                                     GammaBallSettings settings = {});

struct IntrinsicDistanceMatrix {
  // `lower` is tightened to satisfy the triangle inequality exactly (a
  // min-plus closure can only shrink certified lower bounds, so they stay
  // valid), which makes it directly usable as an extended distance matrix.
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  bool all_converged = false;
};

// All-pairs brackets; off-component pairs are +inf in both matrices. The
// default tolerance is tighter than for single pairs so that downstream
// metric validation sees clean triangle inequalities.
IntrinsicDistanceMatrix intrinsic_distance_matrix(
    const FiniteEnergySpace& sp, GammaBallSettings settings = {1e-10});

struct FamilyDistanceResult {
  ExtendedDistanceMatrix distance;  // always built in semidistance mode
  bool separates_points = false;    // true iff all off-diagonal entries > 0
};

// d(x,y) = max over the family of |f(x) - f(y)|; a semidistance that is a
// distance exactly when the family separates points.
FamilyDistanceResult distance_from_family(const std::vector<Function>& family);

// Length distance over chains whose individual hops are at most eps:
// shortest-path metric of the graph keeping entries d_ij <= eps, +inf when
// no admissible chain joins the pair. Entrywise nonincreasing in eps.
ExtendedDistanceMatrix epsilon_chain_distance(const ExtendedDistanceMatrix& d,
                                              double eps);

// Chain x = z_0, ..., z_N = y whose hops all satisfy
//   d(z_k, z_{k+1}) <= sqrt(d(x,y)^2 + eps^2) / N,
// found by breadth-first search and padded with repeats of y; an empty
// result means no such chain exists.
std::optional<std::vector<int>> midpoint_chain(const ExtendedDistanceMatrix& d,
                                               int x, int y, int N, double eps);

}  // namespace mmlab
