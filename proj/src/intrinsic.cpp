#include "mmlab/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mmlab/log.hpp"

namespace mmlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("intrinsic: " + what);
}

// Accumulates sum_i coef_i A_i into H (symmetric), using the edge structure
// of the quadratic forms.
void add_weighted_forms(const FiniteEnergySpace& sp,
                        const Eigen::VectorXd& coef, Eigen::MatrixXd& h) {
  const int n = sp.n();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double w = sp.w(i, j);
      if (w == 0.0) continue;
      const double alpha =
          w * (coef[i] / (2.0 * sp.m[i]) + coef[j] / (2.0 * sp.m[j]));
      h(i, i) += alpha;
      h(j, j) += alpha;
      h(i, j) -= alpha;
      h(j, i) -= alpha;
    }
}

Eigen::VectorXd reduce(const Eigen::VectorXd& full,
                       const std::vector<int>& free_index) {
  Eigen::VectorXd out(free_index.size());
  for (size_t k = 0; k < free_index.size(); ++k) out[k] = full[free_index[k]];
  return out;
}

Eigen::MatrixXd reduce(const Eigen::MatrixXd& full,
                       const std::vector<int>& free_index) {
  const int r = static_cast<int>(free_index.size());
  Eigen::MatrixXd out(r, r);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) out(a, b) = full(free_index[a], free_index[b]);
  return out;
}

// Dual upper bound sup_f c.f - f^T M f + sum lambda = 1/4 c^T M^+ c + sum
// lambda, valid for every nonnegative lambda; +inf when c leaves the range.
double dual_upper_bound(const FiniteEnergySpace& sp,
                        const Eigen::VectorXd& lambda,
                        const Eigen::VectorXd& c_reduced,
                        const std::vector<int>& free_index) {
  const int n = sp.n();
  Eigen::MatrixXd m_full = Eigen::MatrixXd::Zero(n, n);
  add_weighted_forms(sp, lambda, m_full);
  const Eigen::MatrixXd m_red = reduce(m_full, free_index);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m_red);
  if (ldlt.info() != Eigen::Success) return kInf;
  const Eigen::VectorXd q = ldlt.solve(c_reduced);
  const double residual = (m_red * q - c_reduced).norm();
  if (!(residual <= 1e-8 * (1.0 + c_reduced.norm()))) return kInf;
  return lambda.sum() + 0.25 * c_reduced.dot(q);
}

}  // namespace

GammaBallResult maximize_linear_over_gamma_ball(const FiniteEnergySpace& sp,
                                                const Eigen::VectorXd& c,
                                                GammaBallSettings settings) {
  const int n = sp.n();
  if (static_cast<int>(c.size()) != n) fail("objective has wrong size");

  GammaBallResult out;
  out.multipliers = Eigen::VectorXd::Zero(n);

  // Sliding the constant on a component is free for the constraints, so a
  // nonzero component sum of the objective makes the value +inf.
  std::vector<double> comp_sum(sp.num_components, 0.0);
  std::vector<int> comp_size(sp.num_components, 0);
  for (int i = 0; i < n; ++i) {
    comp_sum[sp.component[i]] += c[i];
    ++comp_size[sp.component[i]];
  }
  for (int cc = 0; cc < sp.num_components; ++cc)
    if (std::abs(comp_sum[cc]) > settings.imbalance_tolerance) {
      out.interval = {kInf, kInf, true};
      out.maximizer = Function::Zero(n);
      for (int i = 0; i < n; ++i)
        if (sp.component[i] == cc)
          out.maximizer[i] = comp_sum[cc] > 0.0 ? 1.0 : -1.0;
      return out;
    }

  Eigen::VectorXd cproj = c;
  for (int i = 0; i < n; ++i)
    cproj[i] -= comp_sum[sp.component[i]] / comp_size[sp.component[i]];
  const double scale = cproj.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    out.interval = {0.0, 0.0, true};
    out.maximizer = Function::Zero(n);
    return out;
  }
  const Eigen::VectorXd chat = cproj / scale;

  // Pin the first point of every component to remove the flat directions.
  std::vector<int> free_index;
  {
    std::vector<char> pinned_comp(sp.num_components, 0);
    for (int i = 0; i < n; ++i) {
      if (!pinned_comp[sp.component[i]])
        pinned_comp[sp.component[i]] = 1;
      else
        free_index.push_back(i);
    }
  }
  const Eigen::VectorXd c_red = reduce(chat, free_index);
  const int nf = static_cast<int>(free_index.size());

  Function f = Function::Zero(n);
  Function best_f = f;
  double best_lower = 0.0;
  double best_upper = kInf;
  double mu = settings.initial_barrier;

  const auto record_bounds = [&](const Function& candidate,
                                 const Eigen::VectorXd& lambda) {
    Function repaired = candidate;
    const double top = gamma(sp, repaired).maxCoeff();
    if (top > 1.0) repaired /= std::sqrt(top) * (1.0 + 1e-15);
    const double value = chat.dot(repaired);
    if (value > best_lower) {
      best_lower = value;
      best_f = repaired;
    }
    const double up = dual_upper_bound(sp, lambda, c_red, free_index);
    if (up < best_upper) {
      best_upper = up;
      out.multipliers = scale * lambda;
    }
  };

  bool converged = false;
  for (int stage = 0; stage < settings.max_barrier_stages; ++stage) {
    for (int step = 0; step < settings.max_newton_steps; ++step) {
      const Eigen::VectorXd gam = gamma(sp, f);
      const Eigen::VectorXd slack = Eigen::VectorXd::Ones(n) - gam;
      const Eigen::MatrixXd grads = gamma_gradients(sp, f);

      Eigen::VectorXd grad_full = -chat;
      grad_full.noalias() += grads.transpose() * slack.cwiseInverse() * mu;
      const Eigen::VectorXd grad = reduce(grad_full, free_index);
      if (grad.norm() <= 1e-11 * (1.0 + mu)) break;

      Eigen::MatrixXd h_full = Eigen::MatrixXd::Zero(n, n);
      add_weighted_forms(sp, 2.0 * mu * slack.cwiseInverse(), h_full);
      for (int i = 0; i < n; ++i)
        h_full.noalias() += (mu / (slack[i] * slack[i])) *
                            (grads.row(i).transpose() * grads.row(i));
      Eigen::MatrixXd h = reduce(h_full, free_index);
      h.diagonal().array() += 1e-14 * (1.0 + h.trace() / nf);

      const Eigen::VectorXd dir_red = Eigen::LDLT<Eigen::MatrixXd>(h).solve(-grad);
      Function dir = Function::Zero(n);
      for (int k = 0; k < nf; ++k) dir[free_index[k]] = dir_red[k];

      const auto barrier_value = [&](const Function& g) {
        const Eigen::VectorXd s = Eigen::VectorXd::Ones(n) - gamma(sp, g);
        if (s.minCoeff() <= 0.0) return kInf;
        return -chat.dot(g) - mu * s.array().log().sum();
      };
      const double base = barrier_value(f);
      const double slope = grad.dot(dir_red);
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const Function trial = f + t * dir;
        if (barrier_value(trial) <= base + 0.25 * t * slope) {
          f = trial;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }

    const Eigen::VectorXd slack =
        Eigen::VectorXd::Ones(n) - gamma(sp, f);
    record_bounds(f, (mu * slack.cwiseInverse()).eval());

    if (best_upper - best_lower <=
        settings.tolerance * (1.0 + std::abs(best_upper))) {
      converged = true;
      break;
    }
    mu /= settings.barrier_shrink;
  }

  if (!converged)
    log::warn("gamma ball solver stopped with certified gap ",
              best_upper - best_lower);
  out.interval = {scale * best_lower, scale * best_upper, converged};
  out.maximizer = best_f;
  return out;
}

GammaBallResult GammaBallProgram::solve() const {
  if (source == target) fail("source and target must differ");
  if (source < 0 || source >= space.n() || target < 0 || target >= space.n())
    fail("point index out of range");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(space.n());
  c[source] = -1.0;
  c[target] = 1.0;
  return maximize_linear_over_gamma_ball(space, c, settings);
}

CertifiedInterval intrinsic_distance(const FiniteEnergySpace& sp, int x, int y,
                                     GammaBallSettings settings) {
  if (x < 0 || x >= sp.n() || y < 0 || y >= sp.n())
    fail("point index out of range");
  if (x == y) return {0.0, 0.0, true};
  if (!sp.same_component(x, y)) return {kInf, kInf, true};
  return GammaBallProgram{sp, x, y, settings}.solve().interval;
}

IntrinsicDistanceMatrix intrinsic_distance_matrix(const FiniteEnergySpace& sp,
                                                  GammaBallSettings settings) {
  const int n = sp.n();
  IntrinsicDistanceMatrix out;
  out.lower = Eigen::MatrixXd::Zero(n, n);
  out.upper = Eigen::MatrixXd::Zero(n, n);
  out.all_converged = true;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const CertifiedInterval iv = intrinsic_distance(sp, i, j, settings);
      out.lower(i, j) = out.lower(j, i) = iv.lower;
      out.upper(i, j) = out.upper(j, i) = iv.upper;
      out.all_converged = out.all_converged && iv.converged;
    }
  // Min-plus closure: shrinking lower bounds keeps them valid and restores
  // the triangle inequality exactly.
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::isfinite(out.lower(i, k)) && std::isfinite(out.lower(k, j)))
          out.lower(i, j) =
              std::min(out.lower(i, j), out.lower(i, k) + out.lower(k, j));
  return out;
}

FamilyDistanceResult distance_from_family(const std::vector<Function>& family) {
  if (family.empty()) fail("empty function family");
  const int n = static_cast<int>(family.front().size());
  for (const Function& f : family)
    if (static_cast<int>(f.size()) != n)
      fail("family members have mismatched sizes");

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (const Function& f : family)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double gap = std::abs(f[i] - f[j]);
        d(i, j) = std::max(d(i, j), gap);
        d(j, i) = d(i, j);
      }

  FamilyDistanceResult out;
  out.separates_points = true;
  for (int i = 0; i < n && out.separates_points; ++i)
    for (int j = i + 1; j < n; ++j)
      if (d(i, j) == 0.0) {
        out.separates_points = false;
        break;
      }
  out.distance = make_extended_distance(std::move(d), true);
  return out;
}

ExtendedDistanceMatrix epsilon_chain_distance(const ExtendedDistanceMatrix& d,
                                              double eps) {
  if (!(eps > 0.0)) fail("hop threshold must be positive");
  const int n = d.n();
  Eigen::MatrixXd chain(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      chain(i, j) = (i == j) ? 0.0 : (d(i, j) <= eps ? d(i, j) : kInf);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(chain(i, k))) continue;
      for (int j = 0; j < n; ++j)
        if (std::isfinite(chain(k, j)))
          chain(i, j) = std::min(chain(i, j), chain(i, k) + chain(k, j));
    }
  return make_extended_distance(std::move(chain), d.semidistance);
}

std::optional<std::vector<int>> midpoint_chain(const ExtendedDistanceMatrix& d,
                                               int x, int y, int N,
                                               double eps) {
  const int n = d.n();
  if (x < 0 || x >= n || y < 0 || y >= n) fail("point index out of range");
  if (N < 1) fail("chain length must be at least 1");
  if (!(eps > 0.0)) fail("smoothing parameter must be positive");

  const double target = d(x, y);
  const double hop = std::isfinite(target)
                         ? std::sqrt(target * target + eps * eps) / N
                         : kInf;

  // Breadth-first layers of the graph whose edges are admissible hops.
  std::vector<int> parent(n, -2);
  parent[x] = -1;
  std::vector<int> frontier{x};
  int hops = 0;
  while (parent[y] == -2 && hops < N && !frontier.empty()) {
    std::vector<int> next;
    for (int i : frontier)
      for (int j = 0; j < n; ++j)
        if (parent[j] == -2 && d(i, j) <= hop) {
          parent[j] = i;
          next.push_back(j);
        }
    frontier = std::move(next);
    ++hops;
  }
  if (parent[y] == -2) return std::nullopt;

  std::vector<int> path;
  for (int at = y; at != -1; at = parent[at]) path.push_back(at);
  std::reverse(path.begin(), path.end());
  while (static_cast<int>(path.size()) < N + 1) path.push_back(y);
  return path;
}

}  // namespace mmlab
