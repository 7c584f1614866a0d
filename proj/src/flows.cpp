#include "mmlab/flows.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "mmlab/rng.hpp"

namespace mmlab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("flows: " + msg);
}

nlohmann::ordered_json json_number(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

nlohmann::ordered_json json_vector(const std::vector<double>& xs) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (double x : xs) arr.push_back(json_number(x));
  return arr;
}

std::string cell(double x) {
  if (std::isfinite(x)) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
  }
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

CertifiedInterval checked(CertifiedInterval iv, const char* what) {
  if (iv.lower > iv.upper + 1e-12 * std::max(1.0, std::abs(iv.upper))) {
    fail(std::string(what) + " returned crossed bounds [" + cell(iv.lower) +
         ", " + cell(iv.upper) + "]");
  }
  return iv;
}

// Matrix of the generator: (lap * f)_i = (1/m_i) sum_j w_ij (f_j - f_i).
Eigen::MatrixXd laplacian_matrix(const FiniteEnergySpace& sp) {
  const int n = sp.n();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      lap(i, j) = sp.w(i, j) / sp.m[i];
      diag += sp.w(i, j);
    }
    lap(i, i) = -diag / sp.m[i];
  }
  return lap;
}

// Matrix of zeta -> Gamma(phi, zeta), the bilinear form frozen in its first
// slot. Row sums against m cancel the ones of diag(lap phi) exactly, which
// is what makes the backward transport-diffusion step conserve mass.
Eigen::MatrixXd gamma_pairing_matrix(const FiniteEnergySpace& sp,
                                     const Function& phi) {
  const int n = sp.n();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double c = sp.w(i, j) * (phi[i] - phi[j]) / (2.0 * sp.m[i]);
      g(i, j) = -c;
      diag += c;
    }
    g(i, i) = diag;
  }
  return g;
}

// Linear interpolation of the subsolution slices over s in [0, 1].
Function subsolution_slice(const HJSubsolution& hj, double s) {
  const int last = static_cast<int>(hj.phi.rows()) - 1;
  const double pos = std::clamp(s, 0.0, 1.0) * last;
  const int k = std::min(static_cast<int>(pos), last - 1);
  const double frac = pos - k;
  return ((1.0 - frac) * hj.phi.row(k) + frac * hj.phi.row(k + 1)).transpose();
}

// Slope of the interval containing s (the last interval at s = 1).
Function subsolution_slope(const HJSubsolution& hj, double s) {
  const int last = static_cast<int>(hj.phi.rows()) - 1;
  const double pos = std::clamp(s, 0.0, 1.0) * last;
  const int k = std::min(static_cast<int>(pos), last - 1);
  return ((hj.phi.row(k + 1) - hj.phi.row(k)) * static_cast<double>(last))
      .transpose();
}

CertifiedInterval solve_bracket(const FiniteEnergySpace& sp, const Density& a,
                                const Density& b, DynamicDistanceKind kind,
                                int grid, int restarts) {
  if (kind == DynamicDistanceKind::dual) return we_dual(sp, a, b, grid);
  return we_distance(sp, a, b, grid, restarts);
}

// Euclidean projection onto {x >= 0, sum x = total}.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v, double total) {
  const int p = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + p);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (int i = 0; i < p; ++i) {
    cumulative += u[i];
    const double candidate = (cumulative - total) / (i + 1);
    if (candidate < u[i]) theta = candidate;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

// Eigendecomposition of the density-weighted form, reused across the many
// quadratic evaluations of one minimizing-movement step.
struct FrozenMetric {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
  double cutoff = 0.0;
};

FrozenMetric freeze_metric(const FiniteEnergySpace& sp, const Density& rho) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      make_weighted_form(sp, rho).matrix);
  FrozenMetric fm;
  fm.vectors = es.eigenvectors();
  fm.values = es.eigenvalues();
  const double lmax =
      fm.values.size() > 0 ? std::max(fm.values[fm.values.size() - 1], 0.0)
                           : 0.0;
  fm.cutoff = 1e-12 * lmax;
  return fm;
}

// Quadratic d^T L^+ d together with its half-gradient L^+ d. Displacements
// with a kernel component cost +inf: mass cannot cross where the frozen
// density carries no conductance.
std::pair<double, Eigen::VectorXd> frozen_quadratic(const FrozenMetric& fm,
                                                    const Eigen::VectorXd& d) {
  Eigen::VectorXd c = fm.vectors.transpose() * d;
  double kernel2 = 0.0;
  double value = 0.0;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (fm.values[i] <= fm.cutoff) {
      kernel2 += c[i] * c[i];
    } else {
      value += c[i] * c[i] / fm.values[i];
      scaled[i] = c[i] / fm.values[i];
    }
  }
  if (std::sqrt(kernel2) > 1e-9 * std::max(d.norm(), 1e-300)) {
    return {kInf, Eigen::VectorXd::Zero(d.size())};
  }
  return {value, fm.vectors * scaled};
}

nlohmann::ordered_json check_layout(const std::string& check,
                                    nlohmann::ordered_json params,
                                    const std::vector<double>& grid,
                                    const std::vector<double>& residuals,
                                    double max_violation, bool pass) {
  nlohmann::ordered_json j;
  j["check"] = check;
  j["params"] = std::move(params);
  j["grid"] = json_vector(grid);
  j["residuals"] = json_vector(residuals);
  j["max_violation"] = json_number(max_violation);
  j["pass"] = pass;
  return j;
}

double max_or_zero(const std::vector<double>& xs) {
  double m = 0.0;
  bool any = false;
  for (double x : xs) {
    if (!any || x > m) m = x;
    any = true;
  }
  return any ? m : 0.0;
}

}  // namespace

double IKFunction::operator()(double t) const {
  if (K == 0.0) return t;
  return std::expm1(K * t) / K;
}

// ---------------------------------------------------------------------------
// Integral inequality checks along a flow.
// ---------------------------------------------------------------------------

EVIReport evi_integral_check(const DistanceOracle& distance,
                             const DensityFlow& flow,
                             const DensityFunctional& functional,
                             const Density& start, const Density& sigma,
                             double K, const std::vector<double>& times,
                             double tolerance) {
  EVIReport rep;
  rep.check = "evi_integral";
  rep.K = K;
  rep.times = times;
  rep.tolerance = tolerance;
  const CertifiedInterval init = checked(distance(start, sigma), "distance");
  if (!std::isfinite(init.upper)) {
    rep.vacuous = true;
    rep.pass = true;
    return rep;
  }
  const IKFunction backward{-K};
  const double f_sigma = functional(sigma);
  for (double t : times) {
    const Density x_t = t == 0.0 ? start : flow(start, t);
    const CertifiedInterval now = checked(distance(x_t, sigma), "distance");
    const double lhs = 0.5 * now.lower * now.lower -
                       0.5 * std::exp(-K * t) * init.upper * init.upper;
    const double rhs = backward(t) * (f_sigma - functional(x_t));
    rep.residuals.push_back(lhs - rhs);
  }
  rep.max_violation = max_or_zero(rep.residuals);
  rep.pass = rep.max_violation <= tolerance;
  return rep;
}

EVIReport evi_regularization_check(const DistanceOracle& distance,
                                   const DensityFlow& flow,
                                   const DensityFunctional& functional,
                                   const Density& start, const Density& sigma,
                                   double K, const std::vector<double>& times,
                                   double tolerance) {
  EVIReport rep;
  rep.check = "evi_regularization";
  rep.K = K;
  rep.times = times;
  rep.tolerance = tolerance;
  const CertifiedInterval init = checked(distance(start, sigma), "distance");
  if (!std::isfinite(init.upper)) {
    rep.vacuous = true;
    rep.pass = true;
    return rep;
  }
  const IKFunction forward{K};
  const double f_sigma = functional(sigma);
  for (double t : times) {
    const Density x_t = t == 0.0 ? start : flow(start, t);
    const double denom = 2.0 * forward(t);
    double penalty;
    if (denom > 0.0) {
      penalty = init.upper * init.upper / denom;
    } else {
      penalty = init.upper > 0.0 ? kInf : 0.0;
    }
    rep.residuals.push_back(functional(x_t) - f_sigma - penalty);
  }
  rep.max_violation = max_or_zero(rep.residuals);
  rep.pass = rep.max_violation <= tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Gradient contractivity.
// ---------------------------------------------------------------------------

BEReport be_check(const FiniteEnergySpace& sp, const SpectralSemigroup& sg,
                  double K, const std::vector<Function>& samples,
                  const std::vector<double>& times, double tolerance) {
  BEReport rep;
  rep.K = K;
  rep.times = times;
  rep.tolerance = tolerance;
  for (const Function& g : samples) require_same_size(sp, g, "be sample");
  double overall = kInf;
  for (double t : times) {
    if (t < 0.0) fail("be_check needs nonnegative times");
    const double decay = std::exp(-2.0 * K * t);
    double worst = kInf;
    for (const Function& g : samples) {
      const Function gam = gamma(sp, g);
      // t == 0 short-circuits the synthesis so both sides are the same
      // doubles and the margin is exactly zero.
      const Function flowed_gamma = t == 0.0 ? gam : heat_apply(sg, gam, t);
      const Function flowed = t == 0.0 ? g : heat_apply(sg, g, t);
      const Function gamma_flowed = gamma(sp, flowed);
      worst = std::min(worst,
                       (decay * flowed_gamma - gamma_flowed).minCoeff());
    }
    rep.margins.push_back(worst);
    overall = std::min(overall, worst);
  }
  rep.margin = overall;
  rep.pass = rep.margin >= -tolerance;
  return rep;
}

double be_best_K(const FiniteEnergySpace& sp, const SpectralSemigroup& sg,
                 const std::vector<Function>& samples,
                 const std::vector<double>& times, double width) {
  if (samples.empty()) fail("be_best_K needs a nonempty sample set");
  if (times.empty()) fail("be_best_K needs a nonempty time grid");
  if (!(width > 0.0)) fail("be_best_K needs a positive bisection width");
  struct Scan {
    double t;
    Function flowed_gamma;
    Function gamma_flowed;
  };
  std::vector<Scan> scans;
  for (double t : times) {
    if (t <= 0.0) continue;  // margin at t = 0 vanishes for every K
    for (const Function& g : samples) {
      require_same_size(sp, g, "be sample");
      scans.push_back(
          {t, heat_apply(sg, gamma(sp, g), t), gamma(sp, heat_apply(sg, g, t))});
    }
  }
  auto passes = [&](double K) {
    for (const Scan& s : scans) {
      const double decay = std::exp(-2.0 * K * s.t);
      if ((decay * s.flowed_gamma - s.gamma_flowed).minCoeff() < -1e-10) {
        return false;
      }
    }
    return true;
  };
  double lo, hi;
  if (passes(0.0)) {
    lo = 0.0;
    hi = 1.0;
    int guard = 0;
    while (passes(hi)) {
      lo = hi;
      hi *= 2.0;
      if (++guard > 60) return lo;  // nothing ever fails: constant samples
    }
  } else {
    hi = 0.0;
    lo = -1.0;
    int guard = 0;
    while (!passes(lo)) {
      hi = lo;
      lo *= 2.0;
      if (++guard > 60) return lo;
    }
  }
  while (hi - lo > width) {
    const double mid = 0.5 * (lo + hi);
    (passes(mid) ? lo : hi) = mid;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Distance contraction along the heat flow.
// ---------------------------------------------------------------------------

ContractivityReport contractivity_check(const FiniteEnergySpace& sp,
                                        const SpectralSemigroup& sg,
                                        const Density& rho0,
                                        const Density& rho1, double K,
                                        const std::vector<double>& times,
                                        const ContractivitySettings& settings) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  ContractivityReport rep;
  rep.K = K;
  rep.times = times;
  rep.tolerance = settings.tolerance;
  rep.initial = checked(solve_bracket(sp, rho0, rho1, settings.kind,
                                      settings.grid, settings.restarts),
                        "initial distance");
  if (!std::isfinite(rep.initial.upper)) {
    rep.vacuous = true;
    rep.pass = true;
    return rep;
  }
  bool all_confirmed = !times.empty();
  bool any_violation = false;
  for (double t : times) {
    if (t < 0.0) fail("contractivity_check needs nonnegative times");
    const Density a =
        t == 0.0 ? rho0 : Density(heat_apply(sg, rho0, t).cwiseMax(0.0));
    const Density b =
        t == 0.0 ? rho1 : Density(heat_apply(sg, rho1, t).cwiseMax(0.0));
    const CertifiedInterval now = checked(
        solve_bracket(sp, a, b, settings.kind, settings.grid,
                      settings.restarts),
        "evolved distance");
    rep.evolved.push_back(now);
    const double decay = std::exp(-K * t);
    rep.confirmations.push_back(decay * rep.initial.lower +
                                settings.tolerance - now.upper);
    rep.violations.push_back(now.lower - decay * rep.initial.upper -
                             settings.tolerance);
    all_confirmed = all_confirmed && rep.confirmations.back() >= 0.0;
    any_violation = any_violation || rep.violations.back() > 0.0;
  }
  rep.all_confirmed = all_confirmed;
  rep.pass = !any_violation;
  return rep;
}

// ---------------------------------------------------------------------------
// Backward transport-diffusion solver.
// ---------------------------------------------------------------------------

HopfColeCurve hopf_cole_solve(const FiniteEnergySpace& sp, double t,
                              const HJSubsolution& phi, const Function& zeta1,
                              int steps) {
  const int n = sp.n();
  if (!(t > 0.0)) fail("hopf_cole_solve needs a positive diffusivity");
  if (steps < 1) fail("hopf_cole_solve needs at least one step");
  require_same_size(sp, zeta1, "final datum");
  if (zeta1.minCoeff() <= 0.0) {
    fail("hopf_cole_solve needs a strictly positive final datum");
  }
  if (phi.phi.cols() != n || phi.phi.rows() < 2) {
    fail("hopf_cole_solve received a malformed subsolution");
  }
  if (std::abs(phi.horizon - 1.0) > 1e-12) {
    fail("hopf_cole_solve expects a unit-horizon subsolution");
  }
  const double audit = hj_max_violation(sp, phi);
  if (!(audit <= 1e-8)) {
    fail("hopf_cole_solve needs a feasible subsolution (audit " + cell(audit) +
         ")");
  }

  const Eigen::MatrixXd lap = laplacian_matrix(sp);
  double rate = 0.0;
  for (Eigen::Index k = 0; k < phi.phi.rows(); ++k) {
    rate = std::max(
        rate, (lap * phi.phi.row(k).transpose()).lpNorm<Eigen::Infinity>());
  }

  HopfColeCurve out;
  out.diffusivity = t;
  out.envelope_rate = rate;
  out.zeta.resize(steps + 1, n);
  out.zeta.row(steps) = zeta1.transpose();
  out.mass = integrate(sp, zeta1);
  const double alpha = zeta1.minCoeff();
  const double beta = zeta1.maxCoeff();
  const double ds = 1.0 / steps;
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);

  double drift = 0.0;
  double margin = std::min(zeta1.minCoeff() - alpha, beta - zeta1.maxCoeff());
  Function cur = zeta1;
  for (int k = steps - 1; k >= 0; --k) {
    const double s = static_cast<double>(k) / steps;
    const Function ph = subsolution_slice(phi, s);
    Eigen::MatrixXd drift_op = t * lap;
    drift_op += Eigen::MatrixXd((lap * ph).asDiagonal());
    drift_op += gamma_pairing_matrix(sp, ph);
    const Function next = (identity - ds * drift_op).partialPivLu().solve(cur);
    if (!(next.minCoeff() > 0.0)) {
      std::ostringstream msg;
      msg << "flows: hopf_cole_solve lost positivity at step " << k << " of "
          << steps << " (s = " << s << ", min zeta = " << next.minCoeff()
          << ", drift rate " << rate << ", diffusivity " << t
          << "); refine the step count";
      throw std::runtime_error(msg.str());
    }
    cur = next;
    out.zeta.row(k) = cur.transpose();
    drift = std::max(drift, std::abs(integrate(sp, cur) - out.mass));
    const double low = alpha * std::exp(-rate * (1.0 - s));
    const double high = beta * std::exp(rate * (1.0 - s));
    margin = std::min({margin, cur.minCoeff() - low, high - cur.maxCoeff()});
  }
  out.mass_drift = drift;
  out.envelope_margin = margin;
  return out;
}

// ---------------------------------------------------------------------------
// Entropy-transport certificate from the backward witness.
// ---------------------------------------------------------------------------

HopfColeWitnessReport evi_witness_from_hopf_cole(
    const FiniteEnergySpace& sp, const SpectralSemigroup& sg, double t,
    const Density& rho, const Density& sigma, const HJSubsolution& phi,
    const Function& psi, double K, const HopfColeWitnessSettings& settings) {
  require_density(sp, rho);
  require_density(sp, sigma);
  require_same_size(sp, psi, "witness datum");
  if (!(t > 0.0)) fail("evi_witness_from_hopf_cole needs a positive time");

  HopfColeWitnessReport rep;
  rep.t = t;
  rep.K = K;
  rep.tolerance = settings.tolerance;

  const Function zeta1 = (psi.array() / t).exp().matrix();
  const HopfColeCurve wc = hopf_cole_solve(sp, t, phi, zeta1, settings.steps);
  rep.mass_final = wc.mass;
  rep.mass_initial = integrate(sp, wc.zeta.row(0).transpose());

  const int last = static_cast<int>(phi.phi.rows()) - 1;
  const Function phi0 = phi.phi.row(0).transpose();
  const Function phi1 = phi.phi.row(last).transpose();
  const Function flowed = heat_apply(sg, phi1 + psi, t);
  rep.pairing = integrate(sp, rho.cwiseProduct(flowed)) -
                integrate(sp, sigma.cwiseProduct(phi0)) - t * rep.mass_final;

  const CertifiedInterval w0 =
      checked(we_distance(sp, rho, sigma, settings.grid, settings.restarts),
              "endpoint distance");
  const IKFunction doubled{2.0 * K};
  const double horizon_ratio = t / doubled(t);
  const double ent_sigma = entropy(sp, sigma);
  const bool finite = std::isfinite(w0.upper);
  if (finite) {
    rep.bound = horizon_ratio * 0.5 * w0.upper * w0.upper + t * ent_sigma - t +
                t * (rep.mass_initial - rep.mass_final);
    rep.pair_residual = rep.pairing - rep.bound;
  } else {
    rep.bound = kInf;
    rep.pair_residual = -kInf;
  }

  // Pointwise audit of the witness subsolution property along the flow. The
  // s-derivative of the witness is taken from the generator identity of the
  // backward problem, so the only discretization entering the measurement is
  // the solver curve itself.
  const Eigen::MatrixXd lap = laplacian_matrix(sp);
  const int rows = wc.steps();
  const int stride = std::max(1, rows / 32);
  double defect = 0.0;
  for (int k = 0; k <= rows; k += stride) {
    const int at = std::min(k, rows);
    const double s = static_cast<double>(at) / rows;
    const Function ze = wc.zeta.row(at).transpose();
    const Function ph = subsolution_slice(phi, s);
    const Function dzeta =
        -(t * (lap * ze) + ze.cwiseProduct(lap * ph) + gamma(sp, ph, ze));
    const Function dpsi = t * dzeta.cwiseQuotient(ze);
    const Function chi = ph + t * ze.array().log().matrix();
    const double ts = t * s;
    const Function u = ts == 0.0 ? chi : heat_apply(sg, chi, ts);
    const Function slope = subsolution_slope(phi, s) + dpsi;
    const Function du =
        t * (lap * u) + (ts == 0.0 ? slope : heat_apply(sg, slope, ts));
    const Function resid = du + 0.5 * std::exp(2.0 * K * ts) * gamma(sp, u);
    rep.defect_times.push_back(s);
    rep.defect_residuals.push_back(resid.maxCoeff());
    defect = std::max(defect, resid.maxCoeff());
  }
  rep.locality_defect = std::max(0.0, defect);

  const Density rho_t = heat_apply(sg, rho, t).cwiseMax(0.0);
  const CertifiedInterval wt =
      checked(we_distance(sp, rho_t, sigma, settings.grid, settings.restarts),
              "evolved distance");
  if (finite) {
    rep.evi_residual = 0.5 * wt.lower * wt.lower + t * entropy(sp, rho_t) -
                       horizon_ratio * 0.5 * w0.upper * w0.upper -
                       t * ent_sigma;
  } else {
    rep.evi_residual = -kInf;
  }
  rep.evi_implied = rep.evi_residual <= rep.tolerance + rep.locality_defect;
  const bool mass_ok =
      std::abs(rep.mass_initial - rep.mass_final) <=
      1e-10 * std::max(1.0, std::abs(rep.mass_final));
  rep.pass = mass_ok && rep.pair_residual <= rep.tolerance + rep.locality_defect;
  return rep;
}

// ---------------------------------------------------------------------------
// Minimizing movement.
// ---------------------------------------------------------------------------

JKOStepResult jko_step(const FiniteEnergySpace& sp, const Density& rhok,
                       double tau, const JKOSettings& settings) {
  require_density(sp, rhok);
  if (!(tau > 0.0)) fail("jko_step needs a positive time step");
  if (settings.nested && sp.n() > 6) {
    fail("nested jko_step is limited to six points");
  }
  const int n = sp.n();
  const MassVector anchor = mass_of(sp, rhok);

  std::vector<std::vector<int>> blocks(sp.num_components);
  for (int i = 0; i < n; ++i) blocks[sp.component[i]].push_back(i);
  std::vector<double> block_mass(sp.num_components, 0.0);
  for (int c = 0; c < sp.num_components; ++c) {
    for (int i : blocks[c]) block_mass[c] += anchor[i];
  }

  FrozenMetric fm;
  if (!settings.nested) fm = freeze_metric(sp, rhok);

  auto transport_cost = [&](const MassVector& s) -> double {
    if (!settings.nested) return frozen_quadratic(fm, s - anchor).first;
    const Density r = density_of_mass(sp, s);
    if (settings.kind == DynamicDistanceKind::dual) {
      const CertifiedInterval b = we_dual(sp, rhok, r, settings.grid);
      return b.upper * b.upper;
    }
    WeGeodesicSettings gs;
    gs.restarts = 1;
    return solve_we_geodesic(sp, rhok, r, settings.grid, gs).upper *
           solve_we_geodesic(sp, rhok, r, settings.grid, gs).upper;
  };
  auto objective = [&](const MassVector& s) -> double {
    const double q = transport_cost(s);
    if (!std::isfinite(q)) return kInf;
    return entropy(sp, density_of_mass(sp, s)) + q / (2.0 * tau);
  };

  MassVector cur = anchor;
  double cur_value = entropy(sp, rhok);  // stay-put cost is exactly zero
  JKOStepResult out;
  out.baseline = cur_value;
  double step = settings.initial_step;
  bool moved = false;

  for (int it = 0; it < settings.max_iterations && step > 1e-15; ++it) {
    Eigen::VectorXd grad(n);
    for (int i = 0; i < n; ++i) {
      grad[i] = std::log(std::max(cur[i] / sp.m[i], 1e-300)) + 1.0;
    }
    if (!settings.nested) {
      const auto quad = frozen_quadratic(fm, cur - anchor);
      if (std::isfinite(quad.first)) grad += quad.second / tau;
    } else {
      // Difference the transport cost along within-component exchanges; the
      // projection step keeps the proposal on the constraint set anyway.
      const double h = 1e-6;
      Eigen::VectorXd g2 = Eigen::VectorXd::Zero(n);
      for (int c = 0; c < sp.num_components; ++c) {
        if (blocks[c].size() < 2) continue;
        const int base = blocks[c][0];
        for (std::size_t j = 1; j < blocks[c].size(); ++j) {
          const int i = blocks[c][j];
          MassVector up = cur, down = cur;
          up[i] += h;
          up[base] -= h;
          down[i] -= h;
          down[base] += h;
          const bool up_ok = up.minCoeff() >= 0.0;
          const bool down_ok = down.minCoeff() >= 0.0;
          double slope = 0.0;
          if (up_ok && down_ok) {
            slope = (transport_cost(up) - transport_cost(down)) / (2.0 * h);
          } else if (up_ok) {
            slope = (transport_cost(up) - transport_cost(cur)) / h;
          } else if (down_ok) {
            slope = (transport_cost(cur) - transport_cost(down)) / h;
          }
          g2[i] += slope;
          g2[base] -= slope;
        }
      }
      grad += g2 / (2.0 * tau);
    }

    bool accepted = false;
    while (step > 1e-15) {
      MassVector proposal(n);
      for (int c = 0; c < sp.num_components; ++c) {
        Eigen::VectorXd v(blocks[c].size());
        for (std::size_t j = 0; j < blocks[c].size(); ++j) {
          const int i = blocks[c][j];
          v[static_cast<Eigen::Index>(j)] = cur[i] - step * grad[i];
        }
        const Eigen::VectorXd proj = project_simplex(v, block_mass[c]);
        for (std::size_t j = 0; j < blocks[c].size(); ++j) {
          proposal[blocks[c][j]] = proj[static_cast<Eigen::Index>(j)];
        }
      }
      const double value = objective(proposal);
      if (value < cur_value - settings.improvement_tolerance *
                                  std::max(1.0, std::abs(cur_value))) {
        cur = proposal;
        cur_value = value;
        step *= 1.3;
        accepted = true;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }

  out.rho = density_of_mass(sp, cur);
  out.objective = cur_value;
  out.moved = moved;
  return out;
}

// ---------------------------------------------------------------------------
// Functional inequality survey.
// ---------------------------------------------------------------------------

FunctionalInequalityReport functional_inequalities(
    const FiniteEnergySpace& sp, const SpectralSemigroup& sg, double K,
    const FunctionalInequalitySettings& settings) {
  if (settings.samples < 1) fail("functional_inequalities needs samples");
  if (!(settings.density_floor > 0.0)) {
    fail("functional_inequalities needs a positive density floor");
  }
  FunctionalInequalityReport rep;
  rep.tolerance = settings.tolerance;
  rep.be_constant = K;
  rep.connected = sp.connected();
  if (rep.connected) {
    rep.spectral_gap = sg.spectral_gap();
    rep.poincare_constant = 1.0 / rep.spectral_gap;
  } else {
    rep.spectral_gap = 0.0;
    rep.poincare_constant = kInf;
  }
  const int n = sp.n();
  Rng rng(settings.seed);
  auto sample_density = [&](Rng r) -> Density {
    const Density raw = Density::Constant(n, settings.density_floor) +
                        r.uniform_vector(n, 0.0, 1.0);
    return raw / integrate(sp, raw);
  };

  double transport_margin = kInf;
  for (int j = 0; j < settings.samples; ++j) {
    Rng r = rng.fork("poincare").fork(static_cast<std::uint64_t>(j));
    const Density a = sample_density(r.fork(0));
    const Density b = sample_density(r.fork(1));
    const double floor_ab = std::min(a.minCoeff(), b.minCoeff());
    const CertifiedInterval w =
        checked(solve_bracket(sp, a, b, DynamicDistanceKind::action,
                              settings.grid, settings.restarts),
                "sampled distance");
    const double rhs =
        rep.poincare_constant / floor_ab * integrate(sp, (b - a).cwiseAbs2());
    const double margin =
        std::isfinite(rhs) ? rhs - w.upper * w.upper : kInf;
    transport_margin = std::min(transport_margin, margin);
  }
  rep.transport_margin = transport_margin;
  rep.transport_pass = transport_margin >= -settings.tolerance;

  std::vector<Function> be_samples;
  Rng rb = rng.fork("gradient");
  const int be_count = std::max(3, settings.samples / 2);
  for (int j = 0; j < be_count; ++j) be_samples.push_back(rb.normal_vector(n));
  const BEReport be = be_check(sp, sg, K, be_samples, settings.be_times);
  rep.be_gate = be.pass && K > 0.0;

  const Density uniform = Density::Ones(n);
  double tal_margin = kInf;
  double tal_constant = kInf;
  double lsi = 0.0;
  for (int j = 0; j < settings.samples; ++j) {
    Rng r = rng.fork("entropy").fork(static_cast<std::uint64_t>(j));
    const Density mu = sample_density(r);
    const double ent = entropy(sp, mu);
    const CertifiedInterval w =
        checked(solve_bracket(sp, uniform, mu, DynamicDistanceKind::action,
                              settings.grid, settings.restarts),
                "sampled distance");
    const double low = std::max(w.lower, 0.0);
    tal_margin = std::min(tal_margin, ent - 0.5 * K * low * low);
    if (low > 1e-9) {
      tal_constant = std::min(tal_constant, 2.0 * ent / (low * low));
    }
    const double fish = fisher(sp, mu);
    if (fish > 1e-14) lsi = std::max(lsi, 2.0 * ent / fish);
  }
  rep.talagrand_margin = tal_margin;
  rep.talagrand_constant = tal_constant;
  rep.talagrand_pass = !rep.be_gate || tal_margin >= -settings.tolerance;
  rep.lsi_constant = lsi;
  rep.lsi_reference = K > 0.0 ? 1.0 / K : kInf;
  rep.pass = rep.transport_pass && rep.talagrand_pass;
  return rep;
}

// ---------------------------------------------------------------------------
// Entropy semiconvexity along a transport curve.
// ---------------------------------------------------------------------------

ConvexityReport entropy_convexity_check(const FiniteEnergySpace& sp,
                                        const CECurve& geodesic, double K,
                                        const ConvexitySettings& settings) {
  const int segments = geodesic.steps();
  if (segments < 1) fail("entropy_convexity_check needs at least one segment");
  if (geodesic.sigma.cols() != sp.n()) {
    fail("entropy_convexity_check curve width mismatch");
  }
  if (!(settings.heat_time > 0.0)) {
    fail("entropy_convexity_check needs a positive flow time");
  }
  ConvexityReport rep;
  rep.K = K;
  rep.tolerance = settings.tolerance;
  rep.flow_time = settings.heat_time;

  auto node_density = [&](int k) -> Density {
    return density_of_mass(sp, geodesic.sigma.row(k).transpose());
  };
  const Density first = node_density(0);
  const Density last = node_density(segments);
  require_curve(sp, geodesic, first, last);

  const CertifiedInterval w = checked(
      we_distance(sp, first, last, settings.grid, settings.restarts),
      "endpoint distance");
  double w2;
  if (K >= 0.0) {
    w2 = std::isfinite(w.lower) ? w.lower * w.lower : 0.0;
  } else {
    w2 = w.upper * w.upper;  // +inf stays +inf: the claim is vacuous there
  }
  rep.squared_distance = w2;

  const double ent0 = entropy(sp, first);
  const double ent1 = entropy(sp, last);
  for (int k = 1; k < segments; ++k) {
    const double tk = static_cast<double>(k) / segments;
    const double allowed =
        (1.0 - tk) * ent0 + tk * ent1 - 0.5 * K * tk * (1.0 - tk) * w2;
    rep.times.push_back(tk);
    rep.residuals.push_back(entropy(sp, node_density(k)) - allowed);
  }
  rep.max_violation = max_or_zero(rep.residuals);
  rep.pass = rep.max_violation <= settings.tolerance;

  // Chain quality of the discrete curve: per-segment distance upper bounds
  // against the equal-partition target.
  double worst_segment2 = 0.0;
  for (int k = 0; k < segments; ++k) {
    const MassVector a = geodesic.sigma.row(k).transpose();
    const MassVector b = geodesic.sigma.row(k + 1).transpose();
    const Density mid = density_of_mass(sp, 0.5 * (a + b));
    worst_segment2 = std::max(worst_segment2, flux_norm_squared(sp, mid, b - a));
  }
  const double base2 = std::isfinite(w.lower) ? w.lower * w.lower : 0.0;
  const double eps2 = std::max(
      0.0, static_cast<double>(segments) * segments * worst_segment2 - base2);
  rep.epsilon = std::sqrt(eps2);

  const SpectralSemigroup sg = make_semigroup(sp);
  const IKFunction ik{K};
  const double chain_allowance = eps2 / (2.0 * ik(settings.heat_time));
  for (int k = 1; k < segments; ++k) {
    const double tk = static_cast<double>(k) / segments;
    const Density flowed =
        heat_apply(sg, node_density(k), settings.heat_time).cwiseMax(0.0);
    const double allowed = (1.0 - tk) * ent0 + tk * ent1 -
                           0.5 * K * tk * (1.0 - tk) * w2 +
                           chain_allowance * tk * (1.0 - tk);
    rep.flowed_residuals.push_back(entropy(sp, flowed) - allowed);
  }
  rep.flowed_max_violation = max_or_zero(rep.flowed_residuals);
  rep.flowed_pass = rep.flowed_max_violation <= settings.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

nlohmann::ordered_json evi_to_json(const EVIReport& rep) {
  nlohmann::ordered_json params;
  params["K"] = json_number(rep.K);
  params["tolerance"] = json_number(rep.tolerance);
  params["vacuous"] = rep.vacuous;
  return check_layout(rep.check, std::move(params), rep.times, rep.residuals,
                      rep.max_violation, rep.pass);
}

std::string evi_to_csv(const EVIReport& rep) {
  std::string out = "time,residual\n";
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    out += cell(rep.times[i]) + "," + cell(rep.residuals[i]) + "\n";
  }
  return out;
}

nlohmann::ordered_json be_to_json(const BEReport& rep) {
  nlohmann::ordered_json params;
  params["K"] = json_number(rep.K);
  params["tolerance"] = json_number(rep.tolerance);
  nlohmann::ordered_json j =
      check_layout("gradient_contractivity", std::move(params), rep.times,
                   rep.margins, std::max(0.0, -rep.margin), rep.pass);
  j["margin"] = json_number(rep.margin);
  return j;
}

std::string be_to_csv(const BEReport& rep) {
  std::string out = "time,margin\n";
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    out += cell(rep.times[i]) + "," + cell(rep.margins[i]) + "\n";
  }
  return out;
}

nlohmann::ordered_json contractivity_to_json(const ContractivityReport& rep) {
  nlohmann::ordered_json params;
  params["K"] = json_number(rep.K);
  params["tolerance"] = json_number(rep.tolerance);
  params["vacuous"] = rep.vacuous;
  nlohmann::ordered_json j =
      check_layout("distance_contraction", std::move(params), rep.times,
                   rep.violations, max_or_zero(rep.violations), rep.pass);
  j["confirmations"] = json_vector(rep.confirmations);
  j["initial_lower"] = json_number(rep.initial.lower);
  j["initial_upper"] = json_number(rep.initial.upper);
  nlohmann::ordered_json lows = nlohmann::ordered_json::array();
  nlohmann::ordered_json highs = nlohmann::ordered_json::array();
  for (const CertifiedInterval& iv : rep.evolved) {
    lows.push_back(json_number(iv.lower));
    highs.push_back(json_number(iv.upper));
  }
  j["evolved_lower"] = std::move(lows);
  j["evolved_upper"] = std::move(highs);
  j["all_confirmed"] = rep.all_confirmed;
  return j;
}

std::string contractivity_to_csv(const ContractivityReport& rep) {
  std::string out = "time,evolved_lower,evolved_upper,confirmation,violation\n";
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    out += cell(rep.times[i]) + "," + cell(rep.evolved[i].lower) + "," +
           cell(rep.evolved[i].upper) + "," + cell(rep.confirmations[i]) +
           "," + cell(rep.violations[i]) + "\n";
  }
  return out;
}

nlohmann::ordered_json witness_to_json(const HopfColeWitnessReport& rep) {
  nlohmann::ordered_json params;
  params["t"] = json_number(rep.t);
  params["K"] = json_number(rep.K);
  params["tolerance"] = json_number(rep.tolerance);
  nlohmann::ordered_json j = check_layout(
      "entropy_transport_witness", std::move(params), rep.defect_times,
      rep.defect_residuals, std::max(0.0, rep.pair_residual), rep.pass);
  j["pairing"] = json_number(rep.pairing);
  j["bound"] = json_number(rep.bound);
  j["pair_residual"] = json_number(rep.pair_residual);
  j["locality_defect"] = json_number(rep.locality_defect);
  j["mass_initial"] = json_number(rep.mass_initial);
  j["mass_final"] = json_number(rep.mass_final);
  j["evi_residual"] = json_number(rep.evi_residual);
  j["evi_implied"] = rep.evi_implied;
  return j;
}

std::string witness_to_csv(const HopfColeWitnessReport& rep) {
  std::string out = "s,defect\n";
  for (std::size_t i = 0; i < rep.defect_times.size(); ++i) {
    out += cell(rep.defect_times[i]) + "," + cell(rep.defect_residuals[i]) +
           "\n";
  }
  return out;
}

nlohmann::ordered_json inequalities_to_json(
    const FunctionalInequalityReport& rep) {
  nlohmann::ordered_json params;
  params["K"] = json_number(rep.be_constant);
  params["tolerance"] = json_number(rep.tolerance);
  params["connected"] = rep.connected;
  const double violation =
      std::max({0.0, -rep.transport_margin,
                rep.be_gate ? -rep.talagrand_margin : 0.0});
  nlohmann::ordered_json j =
      check_layout("functional_inequalities", std::move(params), {}, {},
                   violation, rep.pass);
  j["spectral_gap"] = json_number(rep.spectral_gap);
  j["poincare_constant"] = json_number(rep.poincare_constant);
  j["transport_margin"] = json_number(rep.transport_margin);
  j["transport_pass"] = rep.transport_pass;
  j["be_gate"] = rep.be_gate;
  j["talagrand_margin"] = json_number(rep.talagrand_margin);
  j["talagrand_constant"] = json_number(rep.talagrand_constant);
  j["talagrand_pass"] = rep.talagrand_pass;
  j["lsi_constant"] = json_number(rep.lsi_constant);
  j["lsi_reference"] = json_number(rep.lsi_reference);
  return j;
}

std::string inequalities_to_csv(const FunctionalInequalityReport& rep) {
  std::string out = "quantity,value\n";
  out += "spectral_gap," + cell(rep.spectral_gap) + "\n";
  out += "poincare_constant," + cell(rep.poincare_constant) + "\n";
  out += "transport_margin," + cell(rep.transport_margin) + "\n";
  out += "talagrand_margin," + cell(rep.talagrand_margin) + "\n";
  out += "talagrand_constant," + cell(rep.talagrand_constant) + "\n";
  out += "lsi_constant," + cell(rep.lsi_constant) + "\n";
  out += "lsi_reference," + cell(rep.lsi_reference) + "\n";
  return out;
}

nlohmann::ordered_json convexity_to_json(const ConvexityReport& rep) {
  nlohmann::ordered_json params;
  params["K"] = json_number(rep.K);
  params["tolerance"] = json_number(rep.tolerance);
  params["flow_time"] = json_number(rep.flow_time);
  params["epsilon"] = json_number(rep.epsilon);
  params["squared_distance"] = json_number(rep.squared_distance);
  nlohmann::ordered_json j =
      check_layout("entropy_convexity", std::move(params), rep.times,
                   rep.residuals, rep.max_violation, rep.pass);
  j["flowed_residuals"] = json_vector(rep.flowed_residuals);
  j["flowed_max_violation"] = json_number(rep.flowed_max_violation);
  j["flowed_pass"] = rep.flowed_pass;
  return j;
}

std::string convexity_to_csv(const ConvexityReport& rep) {
  std::string out = "time,residual,flowed_residual\n";
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    out += cell(rep.times[i]) + "," + cell(rep.residuals[i]) + "," +
           cell(rep.flowed_residuals[i]) + "\n";
  }
  return out;
}

}  // namespace mmlab
