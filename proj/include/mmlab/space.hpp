#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mmlab {

// Values of a function on the points of a finite space.
using Function = Eigen::VectorXd;
// Nonnegative values with unit integral against the point weights.
using Density = Eigen::VectorXd;
// Nonnegative values with unit total sum (sigma_i = m_i * rho_i).
using MassVector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Scalar-generic kernels on raw weight data. All downstream operators reduce
// to these three sums; they are evaluated in difference form so that locality
// identities hold to rounding error.
// ---------------------------------------------------------------------------

// (1/2) sum_ij w_ij (f_i - f_j)(g_i - g_j)
template <class WD, class FD, class GD>
typename WD::Scalar dirichlet_energy(const Eigen::MatrixBase<WD>& w,
                                     const Eigen::MatrixBase<FD>& f,
                                     const Eigen::MatrixBase<GD>& g) {
  using Scalar = typename WD::Scalar;
  const Eigen::Index n = f.size();
  Scalar acc{};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      acc += w(i, j) * (f[i] - f[j]) * (g[i] - g[j]);
  return acc;
}

// Pointwise energy density: (1/(2 m_i)) sum_j w_ij (f_i - f_j)(g_i - g_j)
template <class MD, class WD, class FD, class GD>
Eigen::Vector<typename WD::Scalar, Eigen::Dynamic> carre_du_champ(
    const Eigen::MatrixBase<MD>& m, const Eigen::MatrixBase<WD>& w,
    const Eigen::MatrixBase<FD>& f, const Eigen::MatrixBase<GD>& g) {
  using Scalar = typename WD::Scalar;
  const Eigen::Index n = f.size();
  Eigen::Vector<Scalar, Eigen::Dynamic> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar acc{};
    for (Eigen::Index j = 0; j < n; ++j)
      acc += w(i, j) * (f[i] - f[j]) * (g[i] - g[j]);
    out[i] = acc / (Scalar(2) * m[i]);
  }
  return out;
}

// Generator: (1/m_i) sum_j w_ij (f_j - f_i)
template <class MD, class WD, class FD>
Eigen::Vector<typename WD::Scalar, Eigen::Dynamic> graph_laplacian(
    const Eigen::MatrixBase<MD>& m, const Eigen::MatrixBase<WD>& w,
    const Eigen::MatrixBase<FD>& f) {
  using Scalar = typename WD::Scalar;
  const Eigen::Index n = f.size();
  Eigen::Vector<Scalar, Eigen::Dynamic> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar acc{};
    for (Eigen::Index j = 0; j < n; ++j) acc += w(i, j) * (f[j] - f[i]);
    out[i] = acc / m[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite energy-measure space: probability weights m on n points plus a
// symmetric conductance matrix w (zero diagonal, nonnegative entries).
// Immutable after construction; conductance components are precomputed since
// they decide which distances are infinite.
// ---------------------------------------------------------------------------
struct FiniteEnergySpace {
  Eigen::VectorXd m;
  Eigen::MatrixXd w;
  std::vector<int> component;  // component id per point, ids are 0..k-1
  int num_components = 0;

  Eigen::Index n() const { return m.size(); }
  bool connected() const { return num_components == 1; }
  bool same_component(Eigen::Index i, Eigen::Index j) const {
    return component[static_cast<std::size_t>(i)] ==
           component[static_cast<std::size_t>(j)];
  }
};

// Normalizes the weights to unit sum and validates every structural
// invariant; throws std::invalid_argument naming the first violation.
FiniteEnergySpace make_space(Eigen::VectorXd weights,
                             Eigen::MatrixXd conductances);

// {"m": [...], "w": [[...]]}
FiniteEnergySpace space_from_json(const nlohmann::json& j);
nlohmann::ordered_json space_to_json(const FiniteEnergySpace& sp);

// ---------------------------------------------------------------------------
// Form operations.
// ---------------------------------------------------------------------------
double energy(const FiniteEnergySpace& sp, const Function& f,
              const Function& g);
inline double energy(const FiniteEnergySpace& sp, const Function& f) {
  return energy(sp, f, f);
}

Function gamma(const FiniteEnergySpace& sp, const Function& f,
               const Function& g);
inline Function gamma(const FiniteEnergySpace& sp, const Function& f) {
  return gamma(sp, f, f);
}

Function laplacian(const FiniteEnergySpace& sp, const Function& f);

double integrate(const FiniteEnergySpace& sp, const Function& f);

// Jacobian of f -> gamma(sp, f): row i holds the derivative of the
// pointwise energy density at i with respect to every entry of f.
Eigen::MatrixXd gamma_gradients(const FiniteEnergySpace& sp, const Function& f);

// ---------------------------------------------------------------------------
// Density handling. Densities are plain vectors; operations taking a Density
// validate at entry with these helpers.
// ---------------------------------------------------------------------------

// True iff rho >= 0 and integrates to 1 within tol.
bool is_density(const FiniteEnergySpace& sp, const Density& rho,
                double tol = 1e-10);
void require_density(const FiniteEnergySpace& sp, const Density& rho,
                     double tol = 1e-10);

// Scales nonnegative values to unit integral.
Density to_density(const FiniteEnergySpace& sp, Eigen::VectorXd values);

inline MassVector mass_of(const FiniteEnergySpace& sp, const Density& rho) {
  return sp.m.cwiseProduct(rho);
}
inline Density density_of_mass(const FiniteEnergySpace& sp,
                               const MassVector& sigma) {
  return sigma.cwiseQuotient(sp.m);
}

inline void require_same_size(const FiniteEnergySpace& sp,
                              const Eigen::VectorXd& f, const char* what) {
  if (f.size() != sp.n())
    throw std::invalid_argument(std::string(what) + ": size " +
                                std::to_string(f.size()) + " does not match " +
                                std::to_string(sp.n()) + " points");
}

}  // namespace mmlab
