#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmlab/dynamic.hpp"
#include "mmlab/heat.hpp"
#include "mmlab/intrinsic.hpp"
#include "mmlab/space.hpp"

namespace mmlab {

// ---------------------------------------------------------------------------
// Exponential time average I_K(t) = (e^{Kt} - 1) / K, with I_0(t) = t.
// Strictly positive for t > 0 and continuous in K (evaluated through expm1,
// so the K -> 0 limit needs no special-casing beyond the exact K == 0 branch).
// ---------------------------------------------------------------------------
struct IKFunction {
  double K = 0.0;

  double operator()(double t) const;
};

// ---------------------------------------------------------------------------
// Gradient-flow inequality checks. Flows, functionals, and distances enter
// as oracles so the same checkers run against the spectral heat flow, the
// implicit Euler path, or any substitute trajectory. Distance oracles return
// certified intervals and every checker picks the bound direction that makes
// a reported violation trustworthy: a failure can never be an artifact of
// using the optimistic end of a bracket.
// ---------------------------------------------------------------------------
using DensityFlow = std::function<Density(const Density&, double)>;
using DensityFunctional = std::function<double(const Density&)>;
using DistanceOracle =
    std::function<CertifiedInterval(const Density&, const Density&)>;

struct EVIReport {
  std::string check;  // which inequality produced the residuals
  double K = 0.0;
  std::vector<double> times;
  std::vector<double> residuals;  // certified LHS - RHS, violation when > 0
  double max_violation = 0.0;     // largest residual over the grid
  double tolerance = 0.0;
  bool vacuous = false;  // initial distance not certified finite
  bool pass = false;
};

// Integral evolution inequality from `start` against the reference point
// `sigma`: for each t in `times`,
//   (1/2) W^2(x_t, sigma) - (e^{-Kt}/2) W^2(start, sigma)
//       <= I_{-K}(t) (F(sigma) - F(x_t)).
// The left side uses the lower certificate for the evolved distance and the
// upper certificate for the initial one. Throws when the oracle returns a
// crossed interval.
EVIReport evi_integral_check(const DistanceOracle& distance,
                             const DensityFlow& flow,
                             const DensityFunctional& functional,
                             const Density& start, const Density& sigma,
                             double K, const std::vector<double>& times,
                             double tolerance = 1e-8);

// Regularization along the flow: F(x_t) <= F(sigma) + W^2(start, sigma) /
// (2 I_K(t)) for each t > 0, with the upper certificate on the distance.
EVIReport evi_regularization_check(const DistanceOracle& distance,
                                   const DensityFlow& flow,
                                   const DensityFunctional& functional,
                                   const Density& start, const Density& sigma,
                                   double K, const std::vector<double>& times,
                                   double tolerance = 1e-8);

// ---------------------------------------------------------------------------
// Gradient contractivity of the heat semigroup at rate K:
//   Gamma(P_t g) <= e^{-2Kt} P_t Gamma(g)  pointwise.
// ---------------------------------------------------------------------------
struct BEReport {
  double K = 0.0;
  std::vector<double> times;
  std::vector<double> margins;  // per time, min over samples and points
  double margin = 0.0;          // overall minimum; nonnegative means pass
  double tolerance = 0.0;
  bool pass = false;
};

// margin_i(t, g) = e^{-2Kt} (P_t Gamma g)_i - (Gamma P_t g)_i. At t = 0 the
// two sides coincide exactly, so a grid containing 0 always reports a zero
// margin there.
BEReport be_check(const FiniteEnergySpace& sp, const SpectralSemigroup& sg,
                  double K, const std::vector<Function>& samples,
                  const std::vector<double>& times, double tolerance = 1e-10);

// Largest K passing be_check on the given samples, located by bisection to
// the requested width. A sample-based upper estimate of the true constant.
double be_best_K(const FiniteEnergySpace& sp, const SpectralSemigroup& sg,
                 const std::vector<Function>& samples,
                 const std::vector<double>& times, double width = 1e-6);

// ---------------------------------------------------------------------------
// Distance contraction along the heat flow.
// ---------------------------------------------------------------------------

// Which dynamic transport solver backs a distance bracket: the action
// minimization (with restarts) or the subsolution dual alone.
enum class DynamicDistanceKind { action, dual };

struct ContractivitySettings {
  DynamicDistanceKind kind = DynamicDistanceKind::action;
  int grid = 12;      // time slices per distance solve
  int restarts = 2;   // action solver restarts
  double tolerance = 5e-3;
};

struct ContractivityReport {
  double K = 0.0;
  std::vector<double> times;
  CertifiedInterval initial;
  std::vector<CertifiedInterval> evolved;
  // confirmations[j] = e^{-Kt} initial.lower + tol - evolved[j].upper:
  // nonnegative proves contraction at that time. violations[j] =
  // evolved[j].lower - e^{-Kt} initial.upper - tol: positive disproves it.
  // In between the brackets are too wide to decide.
  std::vector<double> confirmations;
  std::vector<double> violations;
  double tolerance = 0.0;
  bool vacuous = false;        // initial distance not certified finite
  bool all_confirmed = false;  // every time certifiably contracts
  bool pass = false;           // no certified violation
};

ContractivityReport contractivity_check(const FiniteEnergySpace& sp,
                                        const SpectralSemigroup& sg,
                                        const Density& rho0,
                                        const Density& rho1, double K,
                                        const std::vector<double>& times,
                                        const ContractivitySettings& settings =
                                            {});

// ---------------------------------------------------------------------------
// Linear backward transport-diffusion problem
//   d/ds zeta_s + t Lap zeta_s + zeta_s Lap phi_s + Gamma(phi_s, zeta_s) = 0
// on s in [0, 1] with final datum zeta_1 > 0, solved by implicit Euler from
// s = 1 down to s = 0. The drift rows integrate to zero against m because
// int zeta Lap phi dm = -int Gamma(phi, zeta) dm holds exactly for the graph
// form, so every step conserves int zeta dm up to the linear-solve residual.
// ---------------------------------------------------------------------------
struct HopfColeCurve {
  Eigen::MatrixXd zeta;  // (steps+1) x n, row k holds zeta at s = k/steps
  double diffusivity = 0.0;  // the coefficient t above
  double mass = 0.0;         // int zeta_1 dm
  double mass_drift = 0.0;   // max deviation of int zeta_s dm from mass
  // Envelope control: with D = max_s |Lap phi_s|_inf, every slice stays in
  // [min(zeta_1) e^{-D(1-s)}, max(zeta_1) e^{D(1-s)}] up to the reported
  // margin (the most negative slack over all slices and points; small
  // negative values are discretization error of the continuum envelope).
  double envelope_rate = 0.0;
  double envelope_margin = 0.0;

  int steps() const { return static_cast<int>(zeta.rows()) - 1; }
};

// `phi` must be a feasible subsolution on horizon 1 (re-audited here) and
// zeta1 strictly positive. Throws std::runtime_error with step diagnostics
// if a slice loses positivity, which happens for coarse steps when the
// drift dominates the diffusion t.
HopfColeCurve hopf_cole_solve(const FiniteEnergySpace& sp, double t,
                              const HJSubsolution& phi, const Function& zeta1,
                              int steps);

// ---------------------------------------------------------------------------
// Entropy-transport certificate assembled from a backward witness curve.
// For a subsolution phi and bounded psi, the pairing
//   int rho P_t(phi_1 + psi) dm - int phi_0 dsigma - t int e^{psi/t} dm
// is bounded by (t / (2 I_{2K}(t))) W^2(rho, sigma) + t Ent(sigma) - t plus
// the mass drift of the witness curve zeta = e^{psi_s/t}. The chain-rule
// defect of Gamma on graphs enters as a measured violation of the witness
// subsolution property; it is reported and granted as slack rather than
// assumed to vanish.
// ---------------------------------------------------------------------------
struct HopfColeWitnessReport {
  double t = 0.0;
  double K = 0.0;
  double pairing = 0.0;  // dual value of the supplied (phi, psi)
  double bound = 0.0;    // certified right-hand side (upper distance bound)
  double pair_residual = 0.0;  // pairing - bound
  // Max positive part of d/ds P_{ts}(phi_s + psi_s) +
  // (e^{2Kts}/2) Gamma(P_{ts}(phi_s + psi_s)) over the sampled grid: the
  // locality defect the continuum argument assumes away.
  double locality_defect = 0.0;
  std::vector<double> defect_times;
  std::vector<double> defect_residuals;
  double mass_initial = 0.0;  // int e^{psi_0/t} dm
  double mass_final = 0.0;    // int e^{psi/t} dm
  // Certified residual of the integrated evolution inequality
  //   (1/2) W^2(P_t rho, sigma) + t Ent(P_t rho)
  //       <= (t / (2 I_{2K}(t))) W^2(rho, sigma) + t Ent(sigma),
  // with the conservative bracket ends on both distances.
  double evi_residual = 0.0;
  double tolerance = 0.0;
  bool evi_implied = false;  // evi_residual <= tolerance + locality slack
  bool pass = false;         // pairing bound holds and mass is conserved
};

struct HopfColeWitnessSettings {
  int steps = 400;      // backward solver steps
  int grid = 12;        // time slices per distance solve
  int restarts = 2;     // action solver restarts
  double tolerance = 1e-8;
};

HopfColeWitnessReport evi_witness_from_hopf_cole(
    const FiniteEnergySpace& sp, const SpectralSemigroup& sg, double t,
    const Density& rho, const Density& sigma, const HJSubsolution& phi,
    const Function& psi, double K = 0.0,
    const HopfColeWitnessSettings& settings = {});

// ---------------------------------------------------------------------------
// Minimizing movement step for the entropy:
//   argmin_rho  Ent(rho) + M(rho, rho_k) / (2 tau)
// over densities with the component masses of rho_k. By default M is the
// one-step quadratic form (sigma - sigma_k)^T L_{rho_k}^+ (sigma - sigma_k)
// frozen at the current density; the full dynamic distance solver can be
// substituted on small spaces.
// ---------------------------------------------------------------------------
struct JKOSettings {
  bool nested = false;  // use the full distance bracket (small n only)
  DynamicDistanceKind kind = DynamicDistanceKind::action;
  int grid = 8;  // time slices for nested distance solves
  int max_iterations = 300;
  double initial_step = 0.25;
  double improvement_tolerance = 1e-13;
};

struct JKOStepResult {
  Density rho;
  double objective = 0.0;  // value at the returned density
  double baseline = 0.0;   // value at the stay-put candidate rho_k
  bool moved = false;      // false when the inner solver made no progress
};

JKOStepResult jko_step(const FiniteEnergySpace& sp, const Density& rhok,
                       double tau, const JKOSettings& settings = {});

// ---------------------------------------------------------------------------
// Spectral-gap, transport-Poincare, Talagrand, and log-Sobolev survey.
// Constants on conductance graphs are reported and cross-compared, not
// asserted against continuum values.
// ---------------------------------------------------------------------------
struct FunctionalInequalitySettings {
  int samples = 6;
  double density_floor = 0.25;  // lower bound of the sampled densities
  int grid = 10;                // time slices per distance solve
  int restarts = 2;
  double tolerance = 5e-3;
  std::uint64_t seed = 20260821;
  std::vector<double> be_times = {0.0, 0.05, 0.2, 0.5};
};

struct FunctionalInequalityReport {
  bool connected = false;
  double spectral_gap = 0.0;       // smallest nonzero eigenvalue
  double poincare_constant = 0.0;  // its reciprocal; +inf when disconnected
  // min over sampled pairs rho0, rho1 >= floor of
  //   (c_P / floor) |rho1 - rho0|_{L^2(m)}^2 - upper W^2(rho0, rho1).
  double transport_margin = 0.0;
  bool transport_pass = false;
  double be_constant = 0.0;  // the K the Talagrand gate was checked at
  bool be_gate = false;      // gradient contractivity held at that K
  // min over samples of Ent(mu) - (K/2) lower W^2(m, mu); only asserted
  // when the gate holds with K > 0, vacuous otherwise.
  double talagrand_margin = 0.0;
  bool talagrand_pass = false;
  // Empirical constants: largest K the samples allow in the Talagrand
  // inequality, smallest c in 2 Ent <= c * Fisher, and the value 2/K the
  // gradient-contractivity constant would predict for the latter.
  double talagrand_constant = 0.0;
  double lsi_constant = 0.0;
  double lsi_reference = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

FunctionalInequalityReport functional_inequalities(
    const FiniteEnergySpace& sp, const SpectralSemigroup& sg, double K,
    const FunctionalInequalitySettings& settings = {});

// ---------------------------------------------------------------------------
// Semiconvexity of the entropy along a transport curve: at each interior
// node t of the curve,
//   Ent(rho_t) <= (1-t) Ent(rho_0) + t Ent(rho_1)
//                 - (K/2) t (1-t) W^2(rho_0, rho_1) + tolerance,
// with the distance bracket end chosen so a flagged violation is certified.
// The flowed variant applies the heat semigroup to every node and grants the
// extra chain allowance eps^2 / (2 I_K(t)) * t(1-t), where eps measures how
// far the discrete curve is from an exact constant-speed chain.
// ---------------------------------------------------------------------------
struct ConvexitySettings {
  double tolerance = 1e-6;
  double heat_time = 0.1;  // flow time of the smoothed variant
  int grid = 12;           // time slices for the endpoint distance solve
  int restarts = 2;
};

struct ConvexityReport {
  double K = 0.0;
  std::vector<double> times;      // interior node times
  std::vector<double> residuals;  // node entropy minus the allowed bound
  double max_violation = 0.0;
  double squared_distance = 0.0;  // certified W^2 used in the modulus
  double epsilon = 0.0;           // measured chain defect
  double flow_time = 0.0;
  std::vector<double> flowed_residuals;
  double flowed_max_violation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool flowed_pass = false;
};

ConvexityReport entropy_convexity_check(const FiniteEnergySpace& sp,
                                        const CECurve& geodesic, double K,
                                        const ConvexitySettings& settings = {});

// ---------------------------------------------------------------------------
// Serialization: every report renders to the shared layout
// {check, params, grid, residuals, max_violation, pass} plus a CSV table of
// the residual grid for plotting.
// ---------------------------------------------------------------------------
nlohmann::ordered_json evi_to_json(const EVIReport& rep);
std::string evi_to_csv(const EVIReport& rep);
nlohmann::ordered_json be_to_json(const BEReport& rep);
std::string be_to_csv(const BEReport& rep);
nlohmann::ordered_json contractivity_to_json(const ContractivityReport& rep);
std::string contractivity_to_csv(const ContractivityReport& rep);
nlohmann::ordered_json witness_to_json(const HopfColeWitnessReport& rep);
std::string witness_to_csv(const HopfColeWitnessReport& rep);
nlohmann::ordered_json inequalities_to_json(
    const FunctionalInequalityReport& rep);
std::string inequalities_to_csv(const FunctionalInequalityReport& rep);
nlohmann::ordered_json convexity_to_json(const ConvexityReport& rep);
std::string convexity_to_csv(const ConvexityReport& rep);

}  // namespace mmlab
