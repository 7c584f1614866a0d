#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmlab/heat.hpp"
#include "mmlab/intrinsic.hpp"
#include "mmlab/space.hpp"

namespace mmlab {

// Graph Laplacian of the density-weighted conductances
// w~_ij = w_ij (rho_i + rho_j) / 2, so that f.L f = sum_i m_i rho_i
// Gamma(f)_i. Symmetric, positive semidefinite, constants in the kernel.
struct WeightedFormOperator {
  const FiniteEnergySpace* space = nullptr;
  Density rho;
  Eigen::MatrixXd matrix;
};

WeightedFormOperator make_weighted_form(const FiniteEnergySpace& sp,
                                        const Density& rho);

// Mass-coordinate curve on the uniform time grid of [0,1]: row k of sigma
// is the mass vector m.*rho at time k/steps. Every slice must carry unit
// total mass.
struct CECurve {
  Eigen::MatrixXd sigma;

  int steps() const { return static_cast<int>(sigma.rows()) - 1; }
  double dt() const { return 1.0 / steps(); }
};

// Straight-line interpolation of the endpoint masses; slices stay on the
// simplex automatically.
CECurve linear_mass_interpolation(const FiniteEnergySpace& sp,
                                  const Density& rho0, const Density& rho1,
                                  int N);

// Throws unless every slice has unit mass and the endpoints match the given
// densities within tol.
void require_curve(const FiniteEnergySpace& sp, const CECurve& curve,
                   const Density& rho0, const Density& rho1,
                   double tol = 1e-9);

// Squared dual norm of a mass flux against the density-weighted form:
// sigma_dot . L_rho^+ sigma_dot, computed spectrally with an eigenvalue
// cutoff of 1e-12 times the largest eigenvalue. Returns +inf when the flux
// has a component outside the range of the operator (mass would have to
// cross a region the weighted form cannot see).
double flux_norm_squared(const FiniteEnergySpace& sp, const Density& rho,
                         const Eigen::VectorXd& sigma_dot);

// Squared speed of step k of the curve, using the midpoint density of the
// two neighboring slices.
double curve_speed(const FiniteEnergySpace& sp, const CECurve& curve, int k);

// Riemann sum of the squared speeds: dt * sum_k curve_speed(k).
double curve_action(const FiniteEnergySpace& sp, const CECurve& curve);

// Discrete Hamilton-Jacobi subsolution on a uniform grid of [0, horizon]:
// row k of phi is the potential at time k*horizon/steps. Feasibility means
//   (phi_{k+1,i} - phi_{k,i})/dt + max(Gamma(phi_k)_i, Gamma(phi_{k+1})_i)/2
// stays below a small slack at every interior step and point, which makes
// the piecewise-linear-in-time interpolant a genuine subsolution.
struct HJSubsolution {
  Eigen::MatrixXd phi;
  double horizon = 1.0;

  int steps() const { return static_cast<int>(phi.rows()) - 1; }
  double dt() const { return horizon / steps(); }
};

// Independent feasibility audit: recomputes every pointwise energy density
// from scratch and returns the largest constraint value (<= 0 is feasible).
double hj_max_violation(const FiniteEnergySpace& sp, const HJSubsolution& hj);

// Endpoint pairing sum m_i (phi_last,i rho1_i - phi_first,i rho0_i).
double hj_value(const FiniteEnergySpace& sp, const HJSubsolution& hj,
                const Density& rho0, const Density& rho1);

struct WeGeodesicSettings {
  int restarts = 2;             // random perturbations beyond the linear start
  int max_iterations = 220;     // gradient steps per start
  double initial_step = 0.25;
  double density_floor = 1e-9;  // solver-only; final action is floorless
  std::uint64_t seed = 20260821;
};

struct WeGeodesicResult {
  double upper = 0.0;   // distance upper bound, sqrt of the action
  double action = 0.0;  // floorless action of the reported curve
  CECurve curve;
};

// Upper bound for the dynamic distance: optimize the interior slices of a
// mass curve by gradient descent in a per-component softmax
// parameterization, keeping the best of the linear start and the restarts.
WeGeodesicResult solve_we_geodesic(const FiniteEnergySpace& sp,
                                   const Density& rho0, const Density& rho1,
                                   int N, WeGeodesicSettings settings = {});

struct HJDualSettings {
  int iterations = 320;
  double penalty = 4.0;          // quadratic penalty weight on violations
  double penalty_growth = 1.5;   // applied every 40 ascent steps
  double step = 0.02;
  double horizon = 1.0;
  GammaBallSettings ball;        // for the flat-witness initialization
  // Optional point metric (typically certified lower bounds for the
  // energy-induced distance): seeds a second start from transport duals
  // evolved by the inf-convolution semigroup before feasibility restoration.
  const ExtendedDistanceMatrix* metric_start = nullptr;
};

struct HJDualResult {
  double lower = 0.0;      // distance lower bound sqrt(2*horizon*objective)
  double objective = 0.0;  // certified endpoint pairing of the subsolution
  HJSubsolution certificate;
  bool feasible = false;   // re-verified by the independent audit
};

// Certified lower bound for the dual dynamic distance via discrete
// Hamilton-Jacobi subsolutions: a flat witness of the unit-gradient ball
// seeds an exactly feasible affine-in-time family, penalized gradient
// ascent improves it, and a backward slope shift restores feasibility
// before anything is reported.
HJDualResult solve_hj_dual(const FiniteEnergySpace& sp, const Density& rho0,
                           const Density& rho1, int N,
                           HJDualSettings settings = {});

// Bracket [dual lower, geodesic upper] for the dynamic transport distances:
// the lower bound certifies the dual distance, the upper bound the primal
// one, and the pair brackets both since dual <= primal.
CertifiedInterval we_distance(const FiniteEnergySpace& sp, const Density& rho0,
                              const Density& rho1, int N, int restarts = 2);
CertifiedInterval we_dual(const FiniteEnergySpace& sp, const Density& rho0,
                          const Density& rho1, int N);

struct L1DualResult {
  CertifiedInterval interval;
  Function witness;  // feasible for Gamma(witness) <= 1
};

// Flat (single-potential) dual distance: sup of sum m_i phi_i
// (rho1_i - rho0_i) over the unit ball of the pointwise energy density;
// +inf exactly when some conductance component carries different masses.
L1DualResult we_dual_l1(const FiniteEnergySpace& sp, const Density& rho0,
                        const Density& rho1, GammaBallSettings settings = {});

struct SandwichReport {
  CertifiedInterval kantorovich_intrinsic;  // transport over the point metric
  double dual_lower = 0.0;                  // HJ certificate distance
  double primal_upper = 0.0;                // geodesic action distance
  double flat_lower = 0.0;                  // single-potential dual distance
  double tolerance = 0.0;
  bool ordered = false;
};

// Evaluates the comparison chain "transport over the intrinsic metric <=
// dual dynamic <= primal dynamic" at certificate level and reports every
// number; `ordered` records whether the certified values respect the chain
// within the tolerance.
SandwichReport sandwich_check(const FiniteEnergySpace& sp, const Density& rho0,
                              const Density& rho1, int N,
                              double tolerance = 2e-3);

struct HeatSpeedReport {
  std::vector<double> times;     // segment midpoints
  std::vector<double> speeds;    // squared segment speeds
  std::vector<double> fishers;   // relative entropy production bound
  std::vector<double> margins;   // fisher + tolerance - speed
  double max_violation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Along the heat flow, the squared metric speed is bounded by the Fisher
// information; checked segment by segment on the sampled trajectory with a
// discretization allowance proportional to the step size.
HeatSpeedReport heat_curve_speed_bound(const FiniteEnergySpace& sp,
                                       const SpectralSemigroup& sg,
                                       const Density& rho0,
                                       const std::vector<double>& tgrid,
                                       double tolerance_scale = 5.0);

// JSON snapshots (time grid plus slices) and CSV tables of the reports.
nlohmann::ordered_json curve_to_json(const CECurve& curve);
nlohmann::ordered_json hj_to_json(const HJSubsolution& hj);
std::string sandwich_to_csv(const SandwichReport& rep);
std::string heat_speed_to_csv(const HeatSpeedReport& rep);

}  // namespace mmlab
