#include "mmlab/dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mmlab/log.hpp"
#include "mmlab/rng.hpp"

namespace mmlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("dynamic: " + msg);
}

// Mass per conductance component.
Eigen::VectorXd component_masses(const FiniteEnergySpace& sp,
                                 const MassVector& sigma) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(sp.num_components);
  for (Eigen::Index i = 0; i < sp.n(); ++i)
    out[sp.component[static_cast<std::size_t>(i)]] += sigma[i];
  return out;
}

std::vector<std::vector<int>> component_points(const FiniteEnergySpace& sp) {
  std::vector<std::vector<int>> comps(
      static_cast<std::size_t>(sp.num_components));
  for (Eigen::Index i = 0; i < sp.n(); ++i)
    comps[static_cast<std::size_t>(sp.component[static_cast<std::size_t>(i)])]
        .push_back(static_cast<int>(i));
  return comps;
}

// Dual-norm evaluation against a prebuilt weighted form: value and the
// potential psi = L^+ sigma_dot behind it. `infeasible` reports a flux
// component outside the range of the form.
struct FluxSolve {
  double value = 0.0;
  Eigen::VectorXd psi;
  bool infeasible = false;
};

FluxSolve solve_flux(const Eigen::MatrixXd& L,
                     const Eigen::VectorXd& sigma_dot) {
  const Eigen::Index n = L.rows();
  FluxSolve out;
  out.psi = Eigen::VectorXd::Zero(n);
  const double flux_norm = sigma_dot.norm();
  if (flux_norm == 0.0) return out;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(L);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double lam_max = ev[n - 1];
  if (lam_max <= 0.0) {
    out.infeasible = true;
    return out;
  }
  const double cutoff = 1e-12 * lam_max;
  const Eigen::VectorXd coef = eig.eigenvectors().transpose() * sigma_dot;

  double kernel_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (ev[i] <= cutoff) kernel_sq += coef[i] * coef[i];
  if (std::sqrt(kernel_sq) > 1e-9 * flux_norm) {
    out.infeasible = true;
    return out;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ev[i] <= cutoff) continue;
    out.value += coef[i] * coef[i] / ev[i];
    out.psi += (coef[i] / ev[i]) * eig.eigenvectors().col(i);
  }
  return out;
}

}  // namespace

WeightedFormOperator make_weighted_form(const FiniteEnergySpace& sp,
                                        const Density& rho) {
  require_same_size(sp, rho, "weighted form density");
  if ((rho.array() < 0.0).any()) fail("weighted form density has negative entries");
  const Eigen::Index n = sp.n();
  WeightedFormOperator op;
  op.space = &sp;
  op.rho = rho;
  op.matrix = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double w = sp.w(i, j);
      if (w == 0.0) continue;
      const double wt = w * 0.5 * (rho[i] + rho[j]);
      op.matrix(i, i) += wt;
      op.matrix(j, j) += wt;
      op.matrix(i, j) -= wt;
      op.matrix(j, i) -= wt;
    }
  return op;
}

CECurve linear_mass_interpolation(const FiniteEnergySpace& sp,
                                  const Density& rho0, const Density& rho1,
                                  int N) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  if (N < 1) fail("curve needs at least one step");
  const MassVector s0 = mass_of(sp, rho0);
  const MassVector s1 = mass_of(sp, rho1);
  CECurve curve;
  curve.sigma.resize(N + 1, sp.n());
  for (int k = 0; k <= N; ++k) {
    const double t = static_cast<double>(k) / N;
    curve.sigma.row(k) = ((1.0 - t) * s0 + t * s1).transpose();
  }
  return curve;
}

void require_curve(const FiniteEnergySpace& sp, const CECurve& curve,
                   const Density& rho0, const Density& rho1, double tol) {
  if (curve.sigma.cols() != sp.n()) fail("curve slice size mismatch");
  if (curve.sigma.rows() < 2) fail("curve needs at least two slices");
  if (curve.sigma.minCoeff() < -tol) fail("curve has a negative mass entry");
  for (Eigen::Index k = 0; k < curve.sigma.rows(); ++k)
    if (std::abs(curve.sigma.row(k).sum() - 1.0) > tol)
      fail("curve slice " + std::to_string(k) + " does not have unit mass");
  const MassVector s0 = mass_of(sp, rho0);
  const MassVector s1 = mass_of(sp, rho1);
  if ((curve.sigma.row(0).transpose() - s0).cwiseAbs().maxCoeff() > tol)
    fail("curve does not start at the prescribed density");
  const Eigen::Index last = curve.sigma.rows() - 1;
  if ((curve.sigma.row(last).transpose() - s1).cwiseAbs().maxCoeff() > tol)
    fail("curve does not end at the prescribed density");
}

double flux_norm_squared(const FiniteEnergySpace& sp, const Density& rho,
                         const Eigen::VectorXd& sigma_dot) {
  require_same_size(sp, sigma_dot, "flux");
  const WeightedFormOperator op = make_weighted_form(sp, rho);
  const FluxSolve sol = solve_flux(op.matrix, sigma_dot);
  if (sol.infeasible) {
    log::debug("flux_norm_squared: flux outside the range of the weighted ",
               "form (mass pushed where the density vanishes)");
    return kInf;
  }
  return sol.value;
}

double curve_speed(const FiniteEnergySpace& sp, const CECurve& curve, int k) {
  if (curve.sigma.cols() != sp.n()) fail("curve slice size mismatch");
  if (k < 0 || k >= curve.steps()) fail("curve step index out of range");
  const double dt = curve.dt();
  const Eigen::VectorXd sigma_dot =
      (curve.sigma.row(k + 1) - curve.sigma.row(k)).transpose() / dt;
  const Density rho_mid = density_of_mass(
      sp, 0.5 * (curve.sigma.row(k) + curve.sigma.row(k + 1)).transpose());
  return flux_norm_squared(sp, rho_mid, sigma_dot);
}

double curve_action(const FiniteEnergySpace& sp, const CECurve& curve) {
  const int N = curve.steps();
  const double dt = curve.dt();
  double action = 0.0;
  for (int k = 0; k < N; ++k) {
    const double s = curve_speed(sp, curve, k);
    if (!std::isfinite(s)) return kInf;
    action += dt * s;
  }
  return action;
}

double hj_max_violation(const FiniteEnergySpace& sp, const HJSubsolution& hj) {
  if (hj.phi.cols() != sp.n()) fail("potential slice size mismatch");
  if (hj.phi.rows() < 2) fail("subsolution needs at least two slices");
  if (!(hj.horizon > 0.0)) fail("subsolution horizon must be positive");
  const int N = hj.steps();
  const double dt = hj.dt();
  Eigen::MatrixXd G(N + 1, sp.n());
  for (int k = 0; k <= N; ++k)
    G.row(k) = gamma(sp, hj.phi.row(k).transpose()).transpose();
  double worst = -kInf;
  for (int k = 0; k < N; ++k)
    for (Eigen::Index i = 0; i < sp.n(); ++i) {
      const double v = (hj.phi(k + 1, i) - hj.phi(k, i)) / dt +
                       0.5 * std::max(G(k, i), G(k + 1, i));
      worst = std::max(worst, v);
    }
  return worst;
}

double hj_value(const FiniteEnergySpace& sp, const HJSubsolution& hj,
                const Density& rho0, const Density& rho1) {
  if (hj.phi.cols() != sp.n()) fail("potential slice size mismatch");
  if (hj.phi.rows() < 2) fail("subsolution needs at least two slices");
  require_same_size(sp, rho0, "hj_value rho0");
  require_same_size(sp, rho1, "hj_value rho1");
  const Eigen::Index last = hj.phi.rows() - 1;
  return integrate(sp, hj.phi.row(last).transpose().cwiseProduct(rho1)) -
         integrate(sp, hj.phi.row(0).transpose().cwiseProduct(rho0));
}

// ---------------------------------------------------------------------------
// Geodesic upper bound.
// ---------------------------------------------------------------------------

namespace {

// Interior slices in a per-component softmax chart: slice masses are
// positive and carry exactly the conserved component masses, so admissible
// fluxes stay orthogonal to the kernel of every weighted form by
// construction.
struct GeodesicChart {
  const FiniteEnergySpace* sp = nullptr;
  int N = 0;
  MassVector sigma0, sigma1;
  std::vector<std::vector<int>> comps;
  Eigen::VectorXd comp_mass;  // shared by both endpoints

  Eigen::MatrixXd masses(const Eigen::MatrixXd& theta) const {
    const Eigen::Index n = sp->n();
    Eigen::MatrixXd S(N + 1, n);
    S.row(0) = sigma0.transpose();
    S.row(N) = sigma1.transpose();
    for (int k = 1; k < N; ++k) {
      S.row(k).setZero();
      for (std::size_t c = 0; c < comps.size(); ++c) {
        const double mass = comp_mass[static_cast<Eigen::Index>(c)];
        if (mass <= 0.0) continue;
        double peak = -kInf;
        for (int i : comps[c]) peak = std::max(peak, theta(k - 1, i));
        double z = 0.0;
        for (int i : comps[c]) z += std::exp(theta(k - 1, i) - peak);
        for (int i : comps[c])
          S(k, i) = mass * std::exp(theta(k - 1, i) - peak) / z;
      }
    }
    return S;
  }
};

// Floored action of the slice matrix together with its gradient in the
// interior slice masses. The floor keeps every weighted form positive on
// component edges, so the solve never degenerates mid-iteration.
double floored_action(const GeodesicChart& chart, const Eigen::MatrixXd& S,
                      double floor, Eigen::MatrixXd* grad_sigma) {
  const FiniteEnergySpace& sp = *chart.sp;
  const Eigen::Index n = sp.n();
  const int N = chart.N;
  const double dt = 1.0 / N;
  if (grad_sigma) grad_sigma->setZero(N + 1, n);
  double action = 0.0;
  for (int k = 0; k < N; ++k) {
    const Eigen::VectorXd sigma_dot =
        (S.row(k + 1) - S.row(k)).transpose() / dt;
    const Density rho_raw = density_of_mass(
        sp, 0.5 * (S.row(k) + S.row(k + 1)).transpose());
    const Density rho = rho_raw.cwiseMax(floor);
    const WeightedFormOperator op = make_weighted_form(sp, rho);
    const FluxSolve sol = solve_flux(op.matrix, sigma_dot);
    if (sol.infeasible) return kInf;
    action += dt * sol.value;
    if (!grad_sigma) continue;
    const Eigen::VectorXd& psi = sol.psi;
    grad_sigma->row(k) -= 2.0 * psi.transpose();
    grad_sigma->row(k + 1) += 2.0 * psi.transpose();
    // Density dependence of the dual norm: lowering the density where the
    // potential has large gradients raises the action.
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rho_raw[i] < floor) continue;  // flat region of the floor
      double dens = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = sp.w(i, j);
        if (w == 0.0) continue;
        const double dpsi = psi[i] - psi[j];
        dens -= 0.5 * w * dpsi * dpsi;
      }
      const double contrib = dt * dens / (2.0 * sp.m[i]);
      (*grad_sigma)(k, i) += contrib;
      (*grad_sigma)(k + 1, i) += contrib;
    }
  }
  return action;
}

// Pullback of a slice-mass gradient through the softmax chart.
Eigen::MatrixXd chart_gradient(const GeodesicChart& chart,
                               const Eigen::MatrixXd& S,
                               const Eigen::MatrixXd& grad_sigma) {
  const int N = chart.N;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N - 1, chart.sp->n());
  for (int k = 1; k < N; ++k)
    for (std::size_t c = 0; c < chart.comps.size(); ++c) {
      const double mass = chart.comp_mass[static_cast<Eigen::Index>(c)];
      if (mass <= 0.0) continue;
      double avg = 0.0;
      for (int i : chart.comps[c]) avg += S(k, i) * grad_sigma(k, i);
      avg /= mass;
      for (int i : chart.comps[c])
        g(k - 1, i) = S(k, i) * (grad_sigma(k, i) - avg);
    }
  return g;
}

}  // namespace

WeGeodesicResult solve_we_geodesic(const FiniteEnergySpace& sp,
                                   const Density& rho0, const Density& rho1,
                                   int N, WeGeodesicSettings settings) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  if (N < 2) fail("geodesic needs at least two steps");

  GeodesicChart chart;
  chart.sp = &sp;
  chart.N = N;
  chart.sigma0 = mass_of(sp, rho0);
  chart.sigma1 = mass_of(sp, rho1);
  chart.comps = component_points(sp);
  chart.comp_mass = component_masses(sp, chart.sigma0);

  WeGeodesicResult out;
  out.curve = linear_mass_interpolation(sp, rho0, rho1, N);

  const Eigen::VectorXd m1 = component_masses(sp, chart.sigma1);
  if ((chart.comp_mass - m1).cwiseAbs().maxCoeff() > 1e-10) {
    log::debug("solve_we_geodesic: endpoint component masses differ, no ",
               "finite-action curve exists");
    out.upper = kInf;
    out.action = kInf;
    return out;
  }
  // Align the final slice with the initial component masses exactly, so the
  // admissible fluxes of the chart are exactly kernel-orthogonal. The
  // adjustment is below the component balance tolerance.
  for (std::size_t c = 0; c < chart.comps.size(); ++c) {
    const double target = chart.comp_mass[static_cast<Eigen::Index>(c)];
    const double have = m1[static_cast<Eigen::Index>(c)];
    if (have > 0.0) {
      for (int i : chart.comps[c]) chart.sigma1[i] *= target / have;
    } else if (target > 0.0) {
      for (int i : chart.comps[c]) chart.sigma1[i] = chart.sigma0[i];
    }
  }

  // Initial chart point from the straight-line curve, with a tiny offset so
  // empty slots stay finite in log coordinates.
  Eigen::MatrixXd theta0(N - 1, sp.n());
  {
    const CECurve lin = linear_mass_interpolation(sp, rho0, rho1, N);
    for (int k = 1; k < N; ++k)
      for (Eigen::Index i = 0; i < sp.n(); ++i)
        theta0(k - 1, i) = std::log(lin.sigma(k, i) + 1e-12);
  }

  Rng rng(settings.seed);
  double best_floored = kInf;
  Eigen::MatrixXd best_theta = theta0;
  const int starts = 1 + std::max(0, settings.restarts);
  for (int s = 0; s < starts; ++s) {
    Eigen::MatrixXd theta = theta0;
    if (s > 0) {
      Rng sub = rng.fork(static_cast<std::uint64_t>(s));
      for (int k = 0; k < N - 1; ++k)
        theta.row(k) += 0.8 * sub.normal_vector(sp.n()).transpose();
    }
    Eigen::MatrixXd S = chart.masses(theta);
    Eigen::MatrixXd grad_sigma;
    double value = floored_action(chart, S, settings.density_floor,
                                  &grad_sigma);
    if (!std::isfinite(value)) continue;
    Eigen::MatrixXd grad = chart_gradient(chart, S, grad_sigma);
    double step = settings.initial_step;
    for (int it = 0; it < settings.max_iterations && step > 1e-12; ++it) {
      const Eigen::MatrixXd cand = theta - step * grad;
      const Eigen::MatrixXd Sc = chart.masses(cand);
      Eigen::MatrixXd grad_sigma_c;
      const double vc = floored_action(chart, Sc, settings.density_floor,
                                       &grad_sigma_c);
      if (std::isfinite(vc) && vc < value - 1e-14) {
        theta = cand;
        value = vc;
        grad = chart_gradient(chart, Sc, grad_sigma_c);
        step = std::min(step * 1.25, 16.0);
      } else {
        step *= 0.5;
      }
    }
    if (value < best_floored) {
      best_floored = value;
      best_theta = theta;
    }
  }

  CECurve refined;
  refined.sigma = chart.masses(best_theta);
  double action = curve_action(sp, refined);
  if (!std::isfinite(action)) {
    // Fall back to the straight line; its floorless action can still be
    // infinite, in which case that is the honest upper bound.
    refined = out.curve;
    refined.sigma.row(N) = chart.sigma1.transpose();
    action = curve_action(sp, refined);
  }
  out.curve = refined;
  out.action = action;
  out.upper = std::sqrt(std::max(0.0, action));
  if (!std::isfinite(action)) out.upper = kInf;
  return out;
}

// ---------------------------------------------------------------------------
// Hamilton-Jacobi lower bound.
// ---------------------------------------------------------------------------

namespace {

// Sum of squared positive parts of the feasibility values, plus the ascent
// gradient of the penalized objective when requested.
double hj_penalty(const FiniteEnergySpace& sp, const Eigen::MatrixXd& phi,
                  double dt, Eigen::MatrixXd* grad) {
  const int N = static_cast<int>(phi.rows()) - 1;
  const Eigen::Index n = sp.n();
  Eigen::MatrixXd G(N + 1, n);
  std::vector<Eigen::MatrixXd> dG;
  dG.reserve(static_cast<std::size_t>(N + 1));
  for (int k = 0; k <= N; ++k) {
    G.row(k) = gamma(sp, phi.row(k).transpose()).transpose();
    if (grad) dG.push_back(gamma_gradients(sp, phi.row(k).transpose()));
  }
  double total = 0.0;
  for (int k = 0; k < N; ++k)
    for (Eigen::Index i = 0; i < n; ++i) {
      const int side = G(k, i) >= G(k + 1, i) ? k : k + 1;
      const double v =
          (phi(k + 1, i) - phi(k, i)) / dt + 0.5 * G(side, i);
      if (v <= 0.0) continue;
      total += v * v;
      if (!grad) continue;
      (*grad)(k + 1, i) += 2.0 * v / dt;
      (*grad)(k, i) -= 2.0 * v / dt;
      grad->row(side) += v * dG[static_cast<std::size_t>(side)].row(i);
    }
  return total;
}

// Shifts later slices down until the feasibility audit passes; each unit of
// shift costs exactly `horizon` units of objective.
void hj_restore(const FiniteEnergySpace& sp, HJSubsolution& hj) {
  for (int round = 0; round < 4; ++round) {
    const double v = hj_max_violation(sp, hj);
    if (v <= 0.0) return;
    const double shift = v * (1.0 + 1e-12) + 1e-15;
    const double dt = hj.dt();
    for (int k = 1; k <= hj.steps(); ++k)
      hj.phi.row(k).array() -= k * dt * shift;
  }
}

}  // namespace

HJDualResult solve_hj_dual(const FiniteEnergySpace& sp, const Density& rho0,
                           const Density& rho1, int N,
                           HJDualSettings settings) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  if (N < 2) fail("subsolution needs at least two steps");
  if (!(settings.horizon > 0.0)) fail("horizon must be positive");
  const Eigen::Index n = sp.n();
  const double delta = settings.horizon;
  const double dt = delta / N;
  const Eigen::VectorXd c = mass_of(sp, rho1) - mass_of(sp, rho0);

  HJDualResult out;
  out.certificate.horizon = delta;

  // A component carrying different masses at the endpoints makes the value
  // infinite: its indicator is feasible at every scale. The certificate
  // stores the direction, every multiple of which is feasible.
  {
    const Eigen::VectorXd imbalance = component_masses(sp, c);
    Eigen::Index worst;
    if (imbalance.cwiseAbs().maxCoeff(&worst) >
        settings.ball.imbalance_tolerance) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(n);
      const double sign = imbalance[worst] > 0.0 ? 1.0 : -1.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (sp.component[static_cast<std::size_t>(i)] ==
            static_cast<int>(worst))
          dir[i] = sign;
      out.certificate.phi = dir.transpose().replicate(N + 1, 1);
      out.objective = kInf;
      out.lower = kInf;
      out.feasible = true;
      return out;
    }
  }

  // Flat witness of the unit-gradient ball seeds an affine-in-time family
  // that is feasible by construction and already attains the single-potential
  // dual value.
  const GammaBallResult ball =
      maximize_linear_over_gamma_ball(sp, c, settings.ball);
  Eigen::VectorXd psi = ball.maximizer;
  const double gmax = gamma(sp, psi).maxCoeff();
  if (gmax > 1.0) psi /= std::sqrt(gmax);
  const double v = c.dot(psi);
  const double lambda = v / delta;

  HJSubsolution affine;
  affine.horizon = delta;
  affine.phi.resize(N + 1, n);
  for (int k = 0; k <= N; ++k)
    affine.phi.row(k) =
        (lambda * psi).transpose().array() - k * dt * lambda * lambda * 0.5;
  hj_restore(sp, affine);
  HJSubsolution start = affine;
  double base_value = hj_value(sp, affine, rho0, rho1);

  // Transport duals for the supplied point metric, evolved by the
  // inf-convolution semigroup, give a second start that already pairs to the
  // squared transport distance before restoration.
  if (settings.metric_start != nullptr &&
      settings.metric_start->n() == n) {
    const ExtendedDistanceMatrix& dmat = *settings.metric_start;
    const TransportResult tr =
        kantorovich(dmat, mass_of(sp, rho0), mass_of(sp, rho1), 2);
    if (std::isfinite(tr.value)) {
      HJSubsolution warm;
      warm.horizon = delta;
      warm.phi.resize(N + 1, n);
      const Function phi_half = 0.5 * tr.phi;
      warm.phi.row(0) = phi_half.transpose() / delta;
      for (int k = 1; k <= N; ++k)
        warm.phi.row(k) =
            hopf_lax(dmat, phi_half, static_cast<double>(k) / N).transpose() /
            delta;
      hj_restore(sp, warm);
      const double warm_value = hj_value(sp, warm, rho0, rho1);
      if (warm_value > base_value) {
        start = warm;
        base_value = warm_value;
      }
    }
  }

  // Penalized gradient ascent on the endpoint pairing.
  Eigen::MatrixXd phi = start.phi;
  Eigen::MatrixXd dJ = Eigen::MatrixXd::Zero(N + 1, n);
  dJ.row(0) = -mass_of(sp, rho0).transpose();
  dJ.row(N) = mass_of(sp, rho1).transpose();
  double pen = settings.penalty;
  const auto merit = [&](const Eigen::MatrixXd& p) {
    HJSubsolution probe{p, delta};
    const double raw = hj_value(sp, probe, rho0, rho1);
    return raw - pen * hj_penalty(sp, p, dt, nullptr);
  };
  double cur = merit(phi);
  double step = settings.step;
  for (int it = 0; it < settings.iterations && step > 1e-14; ++it) {
    if (it > 0 && it % 40 == 0) {
      pen *= settings.penalty_growth;
      cur = merit(phi);
    }
    Eigen::MatrixXd dPen = Eigen::MatrixXd::Zero(N + 1, n);
    hj_penalty(sp, phi, dt, &dPen);
    const Eigen::MatrixXd dir = dJ - pen * dPen;
    const Eigen::MatrixXd cand = phi + step * dir;
    const double cv = merit(cand);
    if (cv > cur + 1e-15) {
      phi = cand;
      cur = cv;
      step = std::min(step * 1.2, 1.0);
    } else {
      step *= 0.5;
    }
  }

  HJSubsolution refined{phi, delta};
  hj_restore(sp, refined);
  const double refined_value = hj_value(sp, refined, rho0, rho1);

  if (refined_value > base_value &&
      hj_max_violation(sp, refined) <= 0.0) {
    out.certificate = refined;
    out.objective = refined_value;
  } else {
    out.certificate = start;
    out.objective = base_value;
  }
  out.feasible = hj_max_violation(sp, out.certificate) <= 1e-10;
  out.lower = std::sqrt(2.0 * delta * std::max(0.0, out.objective));
  return out;
}

CertifiedInterval we_distance(const FiniteEnergySpace& sp, const Density& rho0,
                              const Density& rho1, int N, int restarts) {
  WeGeodesicSettings gs;
  gs.restarts = restarts;
  const WeGeodesicResult geo = solve_we_geodesic(sp, rho0, rho1, N, gs);
  const HJDualResult dual = solve_hj_dual(sp, rho0, rho1, N);

  CertifiedInterval out;
  out.upper = geo.upper;
  out.lower = dual.lower;
  if (out.lower > out.upper) {
    if (std::isfinite(out.upper) && out.lower - out.upper > 1e-9)
      log::warn("we_distance: certified bounds crossed by ",
                out.lower - out.upper);
    out.lower = out.upper;
  }
  out.converged =
      dual.feasible && (std::isfinite(geo.upper) || !std::isfinite(dual.lower));
  return out;
}

CertifiedInterval we_dual(const FiniteEnergySpace& sp, const Density& rho0,
                          const Density& rho1, int N) {
  return we_distance(sp, rho0, rho1, N, 1);
}

L1DualResult we_dual_l1(const FiniteEnergySpace& sp, const Density& rho0,
                        const Density& rho1, GammaBallSettings settings) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  const Eigen::VectorXd c = mass_of(sp, rho1) - mass_of(sp, rho0);
  GammaBallResult res = maximize_linear_over_gamma_ball(sp, c, settings);
  return {res.interval, std::move(res.maximizer)};
}

SandwichReport sandwich_check(const FiniteEnergySpace& sp, const Density& rho0,
                              const Density& rho1, int N, double tolerance) {
  require_density(sp, rho0);
  require_density(sp, rho1);
  const Eigen::Index n = sp.n();

  const IntrinsicDistanceMatrix dm = intrinsic_distance_matrix(sp);
  // Shortening paths keeps upper bounds valid and restores the triangle
  // inequality, which the metric constructor checks.
  Eigen::MatrixXd up = dm.upper;
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (std::isfinite(up(i, k)) && std::isfinite(up(k, j)))
          up(i, j) = std::min(up(i, j), up(i, k) + up(k, j));

  const Eigen::VectorXd mu = mass_of(sp, rho0);
  const Eigen::VectorXd nu = mass_of(sp, rho1);
  const ExtendedDistanceMatrix dlo = make_extended_distance(dm.lower, true);
  const TransportResult tlo = kantorovich(dlo, mu, nu, 2);
  const TransportResult tup =
      kantorovich(make_extended_distance(up, true), mu, nu, 2);

  SandwichReport rep;
  rep.tolerance = tolerance;
  rep.kantorovich_intrinsic.lower = tlo.distance(2);
  rep.kantorovich_intrinsic.upper = tup.distance(2);
  rep.kantorovich_intrinsic.converged =
      (std::isfinite(rep.kantorovich_intrinsic.lower) &&
       rep.kantorovich_intrinsic.upper - rep.kantorovich_intrinsic.lower <=
           tolerance) ||
      (!std::isfinite(rep.kantorovich_intrinsic.lower) &&
       !std::isfinite(rep.kantorovich_intrinsic.upper));

  HJDualSettings hs;
  hs.metric_start = &dlo;
  rep.dual_lower = solve_hj_dual(sp, rho0, rho1, N, hs).lower;
  WeGeodesicSettings gs;
  const WeGeodesicResult geo = solve_we_geodesic(sp, rho0, rho1, N, gs);
  rep.primal_upper = geo.upper;
  rep.flat_lower = we_dual_l1(sp, rho0, rho1).interval.lower;

  const auto leq = [&](double a, double b) {
    return a <= b + tolerance || (std::isinf(a) && std::isinf(b) && a == b);
  };
  rep.ordered = leq(rep.kantorovich_intrinsic.lower, rep.dual_lower) &&
                leq(rep.dual_lower, rep.primal_upper) &&
                leq(rep.flat_lower, rep.primal_upper) &&
                leq(rep.kantorovich_intrinsic.lower,
                    rep.kantorovich_intrinsic.upper);
  return rep;
}

HeatSpeedReport heat_curve_speed_bound(const FiniteEnergySpace& sp,
                                       const SpectralSemigroup& sg,
                                       const Density& rho0,
                                       const std::vector<double>& tgrid,
                                       double tolerance_scale) {
  require_density(sp, rho0);
  if (tgrid.size() < 2) fail("heat speed bound needs at least two times");
  for (std::size_t k = 0; k + 1 < tgrid.size(); ++k)
    if (!(tgrid[k] >= 0.0) || !(tgrid[k + 1] > tgrid[k]))
      fail("heat speed bound needs strictly increasing nonnegative times");

  HeatSpeedReport rep;
  double max_dt = 0.0;
  double max_fisher = 0.0;
  for (std::size_t k = 0; k + 1 < tgrid.size(); ++k) {
    const double ta = tgrid[k];
    const double tb = tgrid[k + 1];
    const double dt = tb - ta;
    max_dt = std::max(max_dt, dt);
    const Density ra = heat_apply(sg, rho0, ta).cwiseMax(0.0);
    const Density rb = heat_apply(sg, rho0, tb).cwiseMax(0.0);
    const Eigen::VectorXd sigma_dot =
        (mass_of(sp, rb) - mass_of(sp, ra)) / dt;
    const double speed =
        flux_norm_squared(sp, 0.5 * (ra + rb), sigma_dot);
    const Density rmid = heat_apply(sg, rho0, 0.5 * (ta + tb)).cwiseMax(0.0);
    const double fi = fisher(sp, rmid);
    rep.times.push_back(0.5 * (ta + tb));
    rep.speeds.push_back(speed);
    rep.fishers.push_back(fi);
    if (std::isfinite(fi)) max_fisher = std::max(max_fisher, fi);
  }
  rep.tolerance = tolerance_scale * max_dt * (1.0 + max_fisher);
  rep.max_violation = 0.0;
  for (std::size_t k = 0; k < rep.speeds.size(); ++k) {
    const double margin = rep.fishers[k] + rep.tolerance - rep.speeds[k];
    rep.margins.push_back(margin);
    if (margin < 0.0) rep.max_violation = std::max(rep.max_violation, -margin);
  }
  rep.pass = rep.max_violation == 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

nlohmann::ordered_json curve_to_json(const CECurve& curve) {
  nlohmann::ordered_json j;
  const int N = curve.steps();
  for (int k = 0; k <= N; ++k)
    j["times"].push_back(static_cast<double>(k) / N);
  for (int k = 0; k <= N; ++k) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < curve.sigma.cols(); ++i)
      row.push_back(curve.sigma(k, i));
    j["masses"].push_back(std::move(row));
  }
  return j;
}

nlohmann::ordered_json hj_to_json(const HJSubsolution& hj) {
  nlohmann::ordered_json j;
  j["horizon"] = hj.horizon;
  const int N = hj.steps();
  for (int k = 0; k <= N; ++k) j["times"].push_back(k * hj.dt());
  for (int k = 0; k <= N; ++k) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < hj.phi.cols(); ++i)
      row.push_back(hj.phi(k, i));
    j["potentials"].push_back(std::move(row));
  }
  return j;
}

std::string sandwich_to_csv(const SandwichReport& rep) {
  std::string out =
      "metric_lower,metric_upper,dual_lower,primal_upper,flat_lower,"
      "tolerance,ordered\n";
  const auto cell = [](double x) {
    return std::isfinite(x) ? std::to_string(x) : std::string("inf");
  };
  out += cell(rep.kantorovich_intrinsic.lower) + "," +
         cell(rep.kantorovich_intrinsic.upper) + "," + cell(rep.dual_lower) +
         "," + cell(rep.primal_upper) + "," + cell(rep.flat_lower) + "," +
         cell(rep.tolerance) + "," + (rep.ordered ? "1" : "0") + "\n";
  return out;
}

std::string heat_speed_to_csv(const HeatSpeedReport& rep) {
  std::string out = "time,speed,fisher,margin\n";
  const auto cell = [](double x) {
    return std::isfinite(x) ? std::to_string(x) : std::string("inf");
  };
  for (std::size_t k = 0; k < rep.times.size(); ++k)
    out += cell(rep.times[k]) + "," + cell(rep.speeds[k]) + "," +
           cell(rep.fishers[k]) + "," + cell(rep.margins[k]) + "\n";
  return out;
}

}  // namespace mmlab
