#include "mmlab/heat.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mmlab/log.hpp"

namespace mmlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd plain_laplacian_matrix(const FiniteEnergySpace& sp) {
  // L = diag(row sums) - w; quadratic form f^T L f = 2 * (1/2) sum w (df)^2.
  Eigen::MatrixXd L = -sp.w;
  L.diagonal() += sp.w.rowwise().sum();
  return L;
}

}  // namespace

double SpectralSemigroup::spectral_gap() const {
  const double lmax = eigenvalues.size() ? eigenvalues.tail(1)[0] : 0.0;
  const double zero_tol = 1e-12 * std::max(1.0, lmax);
  int kernel_dim = 0;
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k)
    if (eigenvalues[k] <= zero_tol) ++kernel_dim;
  if (kernel_dim != 1 || eigenvalues.size() < 2) return kInf;
  return eigenvalues[1];
}

SpectralSemigroup make_semigroup(const FiniteEnergySpace& sp) {
  const Eigen::Index n = sp.n();
  const Eigen::VectorXd sqrt_m = sp.m.cwiseSqrt();
  const Eigen::VectorXd inv_sqrt_m = sqrt_m.cwiseInverse();
  Eigen::MatrixXd S = inv_sqrt_m.asDiagonal() * plain_laplacian_matrix(sp) *
                      inv_sqrt_m.asDiagonal();
  S = ((S + S.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("semigroup: eigenproblem failed to converge");
  SpectralSemigroup sg;
  sg.space = sp;
  sg.eigenvalues = es.eigenvalues().cwiseMax(0.0);
  // Rounding can misorder the clamped kernel block; ascending order is part
  // of the contract.
  for (Eigen::Index k = 0; k + 1 < n; ++k)
    if (sg.eigenvalues[k] > sg.eigenvalues[k + 1])
      std::swap(sg.eigenvalues[k], sg.eigenvalues[k + 1]);
  sg.basis = inv_sqrt_m.asDiagonal() * es.eigenvectors();
  return sg;
}

Function heat_apply(const SpectralSemigroup& sg, const Function& f, double t) {
  require_same_size(sg.space, f, "heat_apply f");
  if (t < 0.0) throw std::invalid_argument("heat_apply: negative time");
  const Eigen::VectorXd coeff =
      sg.basis.transpose() * sg.space.m.cwiseProduct(f);
  const Eigen::VectorXd damped =
      (-t * sg.eigenvalues.array()).exp().matrix().cwiseProduct(coeff);
  return sg.basis * damped;
}

Function heat_implicit(const FiniteEnergySpace& sp, const Function& f, double t,
                       int steps) {
  require_same_size(sp, f, "heat_implicit f");
  if (t < 0.0) throw std::invalid_argument("heat_implicit: negative time");
  if (steps < 1) throw std::invalid_argument("heat_implicit: steps < 1");
  if (t == 0.0) return f;
  const double dt = t / steps;
  Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(sp.n(), sp.n()) +
      dt * sp.m.cwiseInverse().asDiagonal() * plain_laplacian_matrix(sp);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const double rcond_probe = (A * lu.solve(Eigen::VectorXd::Ones(sp.n())) -
                              Eigen::VectorXd::Ones(sp.n()))
                                 .cwiseAbs()
                                 .maxCoeff();
  if (!(rcond_probe < 1e-8))
    throw std::runtime_error("heat_implicit: linear solve lost conditioning");
  Function u = f;
  for (int s = 0; s < steps; ++s) u = lu.solve(u);
  return u;
}

double entropy(const FiniteEnergySpace& sp, const Density& rho) {
  require_density(sp, rho);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sp.n(); ++i)
    if (rho[i] > 0.0) acc += sp.m[i] * rho[i] * std::log(rho[i]);
  return acc;
}

double fisher(const FiniteEnergySpace& sp, const Density& rho) {
  require_density(sp, rho);
  const Function g = gamma(sp, rho);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sp.n(); ++i)
    if (rho[i] > 0.0) acc += sp.m[i] * g[i] / rho[i];
  return acc;
}

double fisher_defect(const FiniteEnergySpace& sp, const Density& rho) {
  require_density(sp, rho);
  return std::abs(4.0 * energy(sp, rho.cwiseSqrt()) - fisher(sp, rho));
}

double entropy_dissipation(const FiniteEnergySpace& sp, const Density& rho) {
  require_density(sp, rho);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sp.n(); ++i)
    for (Eigen::Index j = i + 1; j < sp.n(); ++j) {
      if (sp.w(i, j) == 0.0 || rho[i] == rho[j]) continue;
      if (rho[i] == 0.0 || rho[j] == 0.0) return kInf;
      acc += sp.w(i, j) * (rho[i] - rho[j]) *
             (std::log(rho[i]) - std::log(rho[j]));
    }
  return acc;
}

DissipationReport entropy_dissipation_check(const SpectralSemigroup& sg,
                                            const Density& rho0,
                                            const std::vector<double>& tgrid,
                                            double dt) {
  require_density(sg.space, rho0);
  if (!(dt > 0.0))
    throw std::invalid_argument("entropy_dissipation_check: dt must be > 0");
  DissipationReport rep;
  rep.tgrid = tgrid;
  rep.dt = dt;
  for (double t : tgrid) {
    if (t - dt <= 0.0)
      throw std::invalid_argument(
          "entropy_dissipation_check: grid time within dt of 0");
    const Density ahead = heat_apply(sg, rho0, t + dt).cwiseMax(0.0);
    const Density behind = heat_apply(sg, rho0, t - dt).cwiseMax(0.0);
    const Density mid = heat_apply(sg, rho0, t).cwiseMax(0.0);
    const double centered =
        (entropy(sg.space, ahead) - entropy(sg.space, behind)) / (2.0 * dt);
    const double dissipation = entropy_dissipation(sg.space, mid);
    rep.residuals.push_back(std::abs(centered + dissipation));
    rep.chain_rule_gaps.push_back(
        std::abs(fisher(sg.space, mid) - dissipation));
  }
  rep.max_residual = 0.0;
  for (double r : rep.residuals) rep.max_residual = std::max(rep.max_residual, r);
  return rep;
}

Function mollify(const SpectralSemigroup& sg, const Function& f, double eps,
                 double K) {
  require_same_size(sg.space, f, "mollify f");
  if (!(eps > 0.0)) throw std::invalid_argument("mollify: eps must be > 0");
  // Composite Gauss-Legendre: 16 panels x 4 nodes on (0,1).
  static const double nodes[4] = {-0.8611363115940526, -0.3399810435848563,
                                  0.3399810435848563, 0.8611363115940526};
  static const double weights[4] = {0.3478548451374538, 0.6521451548625461,
                                    0.6521451548625461, 0.3478548451374538};
  constexpr int panels = 16;
  const auto eta = [](double r) {
    return (r > 0.0 && r < 1.0) ? std::exp(-1.0 / (r * (1.0 - r))) : 0.0;
  };
  double total = 0.0;
  std::vector<double> qw, qr;
  qw.reserve(4 * panels);
  qr.reserve(4 * panels);
  for (int p = 0; p < panels; ++p) {
    const double a = static_cast<double>(p) / panels;
    const double h = 1.0 / panels;
    for (int q = 0; q < 4; ++q) {
      const double r = a + h * 0.5 * (1.0 + nodes[q]);
      const double wgt = 0.5 * h * weights[q] * eta(r);
      qr.push_back(r);
      qw.push_back(wgt);
      total += wgt;
    }
  }
  if (!(total > 0.0))
    throw std::runtime_error("mollify: quadrature of the kernel vanished");
  const double damp_rate = std::min(K, 0.0);
  Function out = Function::Zero(sg.space.n());
  for (std::size_t q = 0; q < qr.size(); ++q) {
    const double t = eps * qr[q];
    out += (qw[q] / total) * std::exp(damp_rate * t) * heat_apply(sg, f, t);
  }
  return out;
}

}  // namespace mmlab
