#include "mmlab/space.hpp"

#include <cmath>
#include <queue>

namespace mmlab {

namespace {

std::vector<int> label_components(const Eigen::MatrixXd& w, int& count) {
  const Eigen::Index n = w.rows();
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  count = 0;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    std::queue<Eigen::Index> bfs;
    bfs.push(s);
    comp[static_cast<std::size_t>(s)] = count;
    while (!bfs.empty()) {
      const Eigen::Index i = bfs.front();
      bfs.pop();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (w(i, j) > 0.0 && comp[static_cast<std::size_t>(j)] < 0) {
          comp[static_cast<std::size_t>(j)] = count;
          bfs.push(j);
        }
      }
    }
    ++count;
  }
  return comp;
}

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("space: " + msg);
}

}  // namespace

FiniteEnergySpace make_space(Eigen::VectorXd weights,
                             Eigen::MatrixXd conductances) {
  const Eigen::Index n = weights.size();
  if (n == 0) fail("empty weight vector");
  if (conductances.rows() != n || conductances.cols() != n)
    fail("conductance matrix is " + std::to_string(conductances.rows()) + "x" +
         std::to_string(conductances.cols()) + ", expected " +
         std::to_string(n) + "x" + std::to_string(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      fail("weight m[" + std::to_string(i) + "] = " +
           std::to_string(weights[i]) + " is not positive");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (conductances(i, i) != 0.0)
      fail("nonzero diagonal conductance at (" + std::to_string(i) + "," +
           std::to_string(i) + ")");
    for (Eigen::Index j = 0; j < n; ++j) {
      const double wij = conductances(i, j);
      if (!(wij >= 0.0) || !std::isfinite(wij))
        fail("conductance w[" + std::to_string(i) + "][" + std::to_string(j) +
             "] = " + std::to_string(wij) + " is negative or not finite");
    }
  }
  const double scale = conductances.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (std::abs(conductances(i, j) - conductances(j, i)) >
          1e-12 * std::max(1.0, scale))
        fail("asymmetric conductance at (" + std::to_string(i) + "," +
             std::to_string(j) + ")");
    }
  // Exact symmetrization after the tolerance check, so w == w^T holds
  // bit-for-bit downstream.
  conductances = ((conductances + conductances.transpose()) / 2.0).eval();

  FiniteEnergySpace sp;
  sp.m = weights / weights.sum();
  sp.w = std::move(conductances);
  sp.component = label_components(sp.w, sp.num_components);
  return sp;
}

FiniteEnergySpace space_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("m") || !j.contains("w"))
    fail("expected an object with fields \"m\" and \"w\"");
  const auto& jm = j.at("m");
  const auto& jw = j.at("w");
  if (!jm.is_array() || jm.empty()) fail("\"m\" must be a nonempty array");
  const Eigen::Index n = static_cast<Eigen::Index>(jm.size());
  Eigen::VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = jm.at(static_cast<std::size_t>(i));
    if (!v.is_number()) fail("m[" + std::to_string(i) + "] is not a number");
    m[i] = v.get<double>();
  }
  if (!jw.is_array() || static_cast<Eigen::Index>(jw.size()) != n)
    fail("\"w\" must be an array of " + std::to_string(n) + " rows");
  Eigen::MatrixXd w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = jw.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
      fail("w[" + std::to_string(i) + "] must be an array of " +
           std::to_string(n) + " entries");
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& v = row.at(static_cast<std::size_t>(k));
      if (!v.is_number())
        fail("w[" + std::to_string(i) + "][" + std::to_string(k) +
             "] is not a number");
      w(i, k) = v.get<double>();
    }
  }
  const double total = m.sum();
  if (std::abs(total - 1.0) > 1e-12)
    fail("weights sum to " + std::to_string(total) + ", expected 1");
  return make_space(std::move(m), std::move(w));
}

nlohmann::ordered_json space_to_json(const FiniteEnergySpace& sp) {
  nlohmann::ordered_json j;
  j["m"] = std::vector<double>(sp.m.data(), sp.m.data() + sp.m.size());
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < sp.n(); ++i) {
    rows.push_back(std::vector<double>(sp.w.row(i).begin(), sp.w.row(i).end()));
  }
  j["w"] = std::move(rows);
  return j;
}

double energy(const FiniteEnergySpace& sp, const Function& f,
              const Function& g) {
  require_same_size(sp, f, "energy f");
  require_same_size(sp, g, "energy g");
  return dirichlet_energy(sp.w, f, g);
}

Function gamma(const FiniteEnergySpace& sp, const Function& f,
               const Function& g) {
  require_same_size(sp, f, "gamma f");
  require_same_size(sp, g, "gamma g");
  return carre_du_champ(sp.m, sp.w, f, g);
}

Function laplacian(const FiniteEnergySpace& sp, const Function& f) {
  require_same_size(sp, f, "laplacian f");
  return graph_laplacian(sp.m, sp.w, f);
}

double integrate(const FiniteEnergySpace& sp, const Function& f) {
  require_same_size(sp, f, "integrate f");
  return sp.m.dot(f);
}

Eigen::MatrixXd gamma_gradients(const FiniteEnergySpace& sp,
                                const Function& f) {
  require_same_size(sp, f, "gamma_gradients f");
  const int n = sp.n();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double w = sp.w(i, j);
      if (w == 0.0) continue;
      const double diff = f[i] - f[j];
      const double ci = w * diff / sp.m[i];
      const double cj = -w * diff / sp.m[j];
      g(i, i) += ci;
      g(i, j) -= ci;
      g(j, j) += cj;
      g(j, i) -= cj;
    }
  return g;
}

bool is_density(const FiniteEnergySpace& sp, const Density& rho, double tol) {
  if (rho.size() != sp.n()) return false;
  if ((rho.array() < 0.0).any()) return false;
  return std::abs(sp.m.dot(rho) - 1.0) <= tol;
}

void require_density(const FiniteEnergySpace& sp, const Density& rho,
                     double tol) {
  require_same_size(sp, rho, "density");
  for (Eigen::Index i = 0; i < rho.size(); ++i)
    if (rho[i] < 0.0)
      throw std::invalid_argument("density: negative entry rho[" +
                                  std::to_string(i) + "] = " +
                                  std::to_string(rho[i]));
  const double total = sp.m.dot(rho);
  if (std::abs(total - 1.0) > tol)
    throw std::invalid_argument("density: integral " + std::to_string(total) +
                                " differs from 1 beyond tolerance");
}

Density to_density(const FiniteEnergySpace& sp, Eigen::VectorXd values) {
  require_same_size(sp, values, "to_density");
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (!(values[i] >= 0.0))
      throw std::invalid_argument("to_density: negative entry at " +
                                  std::to_string(i));
  const double total = sp.m.dot(values);
  if (!(total > 0.0))
    throw std::invalid_argument("to_density: zero total mass");
  return values / total;
}

}  // namespace mmlab
