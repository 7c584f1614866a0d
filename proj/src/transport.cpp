#include "mmlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "mmlab/log.hpp"

namespace mmlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("transport: " + what);
}

double max_finite_entry(const Eigen::MatrixXd& d) {
  double best = 0.0;
  for (int i = 0; i < d.rows(); ++i)
    for (int j = 0; j < d.cols(); ++j)
      if (std::isfinite(d(i, j))) best = std::max(best, std::abs(d(i, j)));
  return best;
}

struct SimplexResult {
  double cost = 0.0;
  Eigen::MatrixXd plan;
  Eigen::VectorXd u;  // row potentials, u_i + v_j <= c_ij with basis equality
  Eigen::VectorXd v;  // column potentials
};

// Dense transportation simplex for an all-finite cost block with balanced
// marginals: northwest-corner start, potentials by tree traversal, Bland's
// smallest-index entering rule, leaving cell minimal mass with index
// tie-break. The basis always stays a spanning tree of the bipartite graph.
SimplexResult transportation_simplex(const Eigen::MatrixXd& cost,
                                     const Eigen::VectorXd& a,
                                     const Eigen::VectorXd& b) {
  const int r = static_cast<int>(a.size());
  const int s = static_cast<int>(b.size());
  Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(r, s);
  std::vector<std::vector<char>> basic(r, std::vector<char>(s, 0));

  {
    Eigen::VectorXd ra = a, rb = b;
    int i = 0, j = 0;
    while (true) {
      const double x = std::min(ra[i], rb[j]);
      plan(i, j) = x;
      basic[i][j] = 1;
      ra[i] -= x;
      rb[j] -= x;
      if (i == r - 1 && j == s - 1) break;
      if (i == r - 1)
        ++j;
      else if (j == s - 1)
        ++i;
      else if (ra[i] <= rb[j])
        ++i;
      else
        ++j;
    }
  }

  const double eps = 1e-12 * (1.0 + cost.cwiseAbs().maxCoeff());
  Eigen::VectorXd u(r), v(s);
  const int max_iter = 10000 + 50 * (r + s) * (r + s);
  for (int iter = 0;; ++iter) {
    if (iter >= max_iter)
      throw std::runtime_error("transport: simplex iteration limit reached");

    // Potentials via breadth-first traversal of the basis tree.
    std::vector<char> row_set(r, 0), col_set(s, 0);
    std::deque<int> queue;  // rows are 0..r-1, columns r..r+s-1
    u[0] = 0.0;
    row_set[0] = 1;
    queue.push_back(0);
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      if (node < r) {
        for (int j = 0; j < s; ++j)
          if (basic[node][j] && !col_set[j]) {
            v[j] = cost(node, j) - u[node];
            col_set[j] = 1;
            queue.push_back(r + j);
          }
      } else {
        const int j = node - r;
        for (int i = 0; i < r; ++i)
          if (basic[i][j] && !row_set[i]) {
            u[i] = cost(i, j) - v[j];
            row_set[i] = 1;
            queue.push_back(i);
          }
      }
    }
    for (int i = 0; i < r; ++i)
      if (!row_set[i])
        throw std::runtime_error("transport: basis lost connectivity");
    for (int j = 0; j < s; ++j)
      if (!col_set[j])
        throw std::runtime_error("transport: basis lost connectivity");

    int ei = -1, ej = -1;
    for (int i = 0; i < r && ei < 0; ++i)
      for (int j = 0; j < s; ++j)
        if (!basic[i][j] && cost(i, j) - u[i] - v[j] < -eps) {
          ei = i;
          ej = j;
          break;
        }
    if (ei < 0) break;

    // Unique tree path from the entering column back to the entering row.
    std::vector<int> parent(r + s, -2);
    parent[ei] = -1;
    std::deque<int> frontier{ei};
    while (!frontier.empty() && parent[r + ej] == -2) {
      const int node = frontier.front();
      frontier.pop_front();
      if (node < r) {
        for (int j = 0; j < s; ++j)
          if (basic[node][j] && parent[r + j] == -2) {
            parent[r + j] = node;
            frontier.push_back(r + j);
          }
      } else {
        const int j = node - r;
        for (int i = 0; i < r; ++i)
          if (basic[i][j] && parent[i] == -2) {
            parent[i] = node;
            frontier.push_back(i);
          }
      }
    }
    if (parent[r + ej] == -2)
      throw std::runtime_error("transport: basis lost connectivity");

    std::vector<std::pair<int, int>> minus_cells, plus_cells;
    {
      int node = r + ej;
      bool plus = false;  // the edge closing the cycle at the column is '-'
      while (parent[node] != -1) {
        const int p = parent[node];
        const int ci = node < r ? node : p;
        const int cj = node < r ? p - r : node - r;
        (plus ? plus_cells : minus_cells).emplace_back(ci, cj);
        plus = !plus;
        node = p;
      }
    }

    std::pair<int, int> leave{-1, -1};
    double theta = kInf;
    for (const auto& cell : minus_cells) theta = std::min(theta, plan(cell.first, cell.second));
    for (const auto& cell : minus_cells)
      if (plan(cell.first, cell.second) == theta &&
          (leave.first < 0 || cell < leave))
        leave = cell;

    plan(ei, ej) += theta;
    for (const auto& [ci, cj] : plus_cells) plan(ci, cj) += theta;
    for (const auto& [ci, cj] : minus_cells) plan(ci, cj) -= theta;
    plan(leave.first, leave.second) = 0.0;
    basic[leave.first][leave.second] = 0;
    basic[ei][ej] = 1;
  }

  plan = plan.cwiseMax(0.0);
  double total = 0.0;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < s; ++j)
      if (plan(i, j) > 0.0) total += plan(i, j) * cost(i, j);
  return {total, std::move(plan), std::move(u), std::move(v)};
}

Eigen::MatrixXd power_cost(const Eigen::MatrixXd& d, int power) {
  return power == 1 ? d : Eigen::MatrixXd(d.array().square());
}

void check_marginal(const Eigen::VectorXd& mass, int n, const char* name) {
  if (static_cast<int>(mass.size()) != n)
    fail(std::string(name) + " has wrong size");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(mass[i]) || mass[i] < -1e-12)
      fail(std::string(name) + " has a negative entry");
  }
  if (std::abs(mass.sum() - 1.0) > 1e-10)
    fail(std::string(name) + " does not have unit mass");
}

}  // namespace

ExtendedDistanceMatrix make_extended_distance(Eigen::MatrixXd d,
                                              bool allow_semidistance) {
  const int n = static_cast<int>(d.rows());
  if (n == 0) fail("empty distance matrix");
  if (d.cols() != n) fail("distance matrix is not square");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = d(i, j);
      if (std::isnan(x))
        fail("distance at (" + std::to_string(i) + "," + std::to_string(j) +
             ") is NaN");
      if (x < 0.0)
        fail("negative distance at (" + std::to_string(i) + "," +
             std::to_string(j) + ")");
    }
  for (int i = 0; i < n; ++i)
    if (d(i, i) != 0.0)
      fail("nonzero diagonal distance at (" + std::to_string(i) + "," +
           std::to_string(i) + ")");

  const double sym_tol = 1e-12 * std::max(1.0, max_finite_entry(d));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double a = d(i, j), b = d(j, i);
      if (std::isinf(a) != std::isinf(b) ||
          (std::isfinite(a) && std::abs(a - b) > sym_tol))
        fail("asymmetric distance at (" + std::to_string(i) + "," +
             std::to_string(j) + ")");
      if (std::isfinite(a)) {
        const double avg = 0.5 * (a + b);
        d(i, j) = avg;
        d(j, i) = avg;
      }
    }

  bool semidistance = false;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (d(i, j) == 0.0) {
        if (!allow_semidistance)
          fail("vanishing distance between distinct points (" +
               std::to_string(i) + "," + std::to_string(j) + ")");
        semidistance = true;
      }

  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(d(i, k))) continue;
      for (int j = 0; j < n; ++j) {
        if (!std::isfinite(d(k, j))) continue;
        if (d(i, j) > d(i, k) + d(k, j) + 1e-9)
          fail("triangle inequality fails through " + std::to_string(k) +
               " for (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }

  ExtendedDistanceMatrix out;
  out.d = std::move(d);
  out.semidistance = semidistance;
  return out;
}

std::vector<int> finite_distance_classes(const ExtendedDistanceMatrix& d) {
  const int n = d.n();
  std::vector<int> label(n, -1);
  int next = 0;
  for (int seed = 0; seed < n; ++seed) {
    if (label[seed] >= 0) continue;
    label[seed] = next;
    std::deque<int> queue{seed};
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      for (int j = 0; j < n; ++j)
        if (label[j] < 0 && std::isfinite(d(i, j))) {
          label[j] = next;
          queue.push_back(j);
        }
    }
    ++next;
  }
  return label;
}

void require_plan(const TransportPlan& plan, const Eigen::VectorXd& mu,
                  const Eigen::VectorXd& nu, double tol) {
  if (plan.pi.rows() != mu.size() || plan.pi.cols() != nu.size())
    fail("plan has wrong shape");
  if (plan.pi.minCoeff() < -tol) fail("plan has a negative entry");
  if ((plan.row_marginal() - mu).cwiseAbs().maxCoeff() > tol)
    fail("plan row marginal mismatch");
  if ((plan.col_marginal() - nu).cwiseAbs().maxCoeff() > tol)
    fail("plan column marginal mismatch");
}

double TransportResult::distance(int power) const {
  if (!std::isfinite(value)) return kInf;
  return power == 2 ? std::sqrt(std::max(value, 0.0)) : value;
}

TransportResult kantorovich(const ExtendedDistanceMatrix& d,
                            const Eigen::VectorXd& mu,
                            const Eigen::VectorXd& nu, int power) {
  const int n = d.n();
  if (power != 1 && power != 2) fail("power must be 1 or 2");
  check_marginal(mu, n, "source marginal");
  check_marginal(nu, n, "target marginal");
  const Eigen::VectorXd a = mu.cwiseMax(0.0);
  const Eigen::VectorXd b = nu.cwiseMax(0.0);

  const std::vector<int> label = finite_distance_classes(d);
  const int classes = 1 + *std::max_element(label.begin(), label.end());

  for (int c = 0; c < classes; ++c) {
    double am = 0.0, bm = 0.0;
    for (int i = 0; i < n; ++i)
      if (label[i] == c) {
        am += a[i];
        bm += b[i];
      }
    if (std::abs(am - bm) > 1e-10) {
      log::debug("kantorovich: class ", c, " mass imbalance ", am - bm,
                 ", value is infinite");
      TransportResult out;
      out.value = kInf;
      out.plan.pi = a * b.transpose();
      out.phi = Eigen::VectorXd::Zero(n);
      out.psi = Eigen::VectorXd::Zero(n);
      return out;
    }
  }

  TransportResult out;
  out.plan.pi = Eigen::MatrixXd::Zero(n, n);
  out.phi = Eigen::VectorXd::Zero(n);
  out.psi = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd cost = power_cost(d.d, power);

  std::vector<char> phi_known(n, 0);
  for (int c = 0; c < classes; ++c) {
    std::vector<int> rows, cols;
    double am = 0.0, bm = 0.0;
    for (int i = 0; i < n; ++i)
      if (label[i] == c) {
        if (a[i] > 0.0) {
          rows.push_back(i);
          am += a[i];
        }
        if (b[i] > 0.0) {
          cols.push_back(i);
          bm += b[i];
        }
      }
    if (rows.empty()) {
      // Massless class: zero potentials are feasible and cost nothing.
      for (int i = 0; i < n; ++i)
        if (label[i] == c) phi_known[i] = 1;
      continue;
    }

    const int r = static_cast<int>(rows.size());
    const int s = static_cast<int>(cols.size());
    Eigen::VectorXd asub(r), bsub(s);
    Eigen::MatrixXd csub(r, s);
    for (int i = 0; i < r; ++i) asub[i] = a[rows[i]];
    for (int j = 0; j < s; ++j) bsub[j] = b[cols[j]];
    bsub *= am / bm;  // exact balance within the class
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < s; ++j) csub(i, j) = cost(rows[i], cols[j]);

    const SimplexResult sol = transportation_simplex(csub, asub, bsub);
    out.value += sol.cost;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < s; ++j) out.plan.pi(rows[i], cols[j]) = sol.plan(i, j);
    for (int i = 0; i < r; ++i) {
      out.phi[rows[i]] = -sol.u[i];
      phi_known[rows[i]] = 1;
    }
  }

  // One c-transform tightens psi everywhere the potential is already fixed.
  for (int j = 0; j < n; ++j) {
    double best = kInf;
    for (int i = 0; i < n; ++i)
      if (phi_known[i] && std::isfinite(cost(i, j)))
        best = std::min(best, cost(i, j) + out.phi[i]);
    out.psi[j] = best;
  }
  // Zero-mass points inside a mass-carrying class take the largest feasible
  // potential so that the pair stays dual-admissible.
  for (int i = 0; i < n; ++i) {
    if (phi_known[i]) continue;
    double lo = -kInf;
    for (int j = 0; j < n; ++j)
      if (std::isfinite(cost(i, j))) lo = std::max(lo, out.psi[j] - cost(i, j));
    out.phi[i] = std::isfinite(lo) ? lo : 0.0;
  }
  return out;
}

W1DualResult w1_dual(const ExtendedDistanceMatrix& d, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& nu) {
  const TransportResult primal = kantorovich(d, mu, nu, 1);
  W1DualResult out;
  if (!std::isfinite(primal.value)) {
    // An imbalanced class makes the linear functional unbounded along the
    // indicator of the class, which is flat on finite-distance pairs.
    const std::vector<int> label = finite_distance_classes(d);
    const int classes = 1 + *std::max_element(label.begin(), label.end());
    const int n = d.n();
    for (int c = 0; c < classes; ++c) {
      double gap = 0.0;
      for (int i = 0; i < n; ++i)
        if (label[i] == c) gap += nu[i] - mu[i];
      if (std::abs(gap) > 1e-10) {
        out.value = kInf;
        out.witness = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i)
          if (label[i] == c) out.witness[i] = gap > 0.0 ? 1.0 : -1.0;
        return out;
      }
    }
    throw std::runtime_error("transport: infinite value without imbalance");
  }
  out.value = primal.value;
  out.witness = primal.psi;
  return out;
}

Function hopf_lax(const ExtendedDistanceMatrix& d, const Function& phi,
                  double t) {
  const int n = d.n();
  if (static_cast<int>(phi.size()) != n) fail("potential has wrong size");
  if (!(t > 0.0)) fail("time must be positive");
  Function out(n);
  for (int y = 0; y < n; ++y) {
    double best = kInf;
    for (int x = 0; x < n; ++x) {
      const double dist = d(x, y);
      if (!std::isfinite(dist)) continue;
      best = std::min(best, phi[x] + dist * dist / (2.0 * t));
    }
    out[y] = best;
  }
  return out;
}

HopfLaxDualityReport hopf_lax_duality_check(const ExtendedDistanceMatrix& d,
                                            const Eigen::VectorXd& mu,
                                            const Eigen::VectorXd& nu,
                                            const std::vector<Function>& grid) {
  const int n = d.n();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!std::isfinite(d(i, j))) fail("duality check needs a finite matrix");

  const TransportResult opt = kantorovich(d, mu, nu, 2);
  HopfLaxDualityReport report;
  report.transport_cost = opt.value;
  report.half_cost = 0.5 * opt.value;

  const auto pairing = [&](const Function& phi) {
    const Function q = hopf_lax(d, phi, 1.0);
    return q.dot(nu) - phi.dot(mu);
  };

  report.best_grid_value = std::numeric_limits<double>::lowest();
  for (const Function& phi : grid)
    report.best_grid_value = std::max(report.best_grid_value, pairing(phi));
  if (grid.empty()) report.best_grid_value = 0.0;

  report.dual_value = pairing(0.5 * opt.phi);

  const double best = std::max(report.best_grid_value, report.dual_value);
  report.max_violation = std::max(0.0, best - report.half_cost);
  report.pass = report.max_violation <= 1e-8 &&
                report.half_cost - report.dual_value <=
                    1e-6 * (1.0 + std::abs(report.half_cost));
  return report;
}

TransportPlan glue_plans(const TransportPlan& first, const TransportPlan& second,
                         double tol) {
  const int n = static_cast<int>(first.pi.rows());
  const int mid = static_cast<int>(first.pi.cols());
  const int k = static_cast<int>(second.pi.cols());
  if (second.pi.rows() != mid) fail("glued plans have incompatible shapes");
  const Eigen::VectorXd left_mid = first.col_marginal();
  const Eigen::VectorXd right_mid = second.row_marginal();
  if ((left_mid - right_mid).cwiseAbs().maxCoeff() > tol)
    fail("middle marginals disagree");

  TransportPlan out;
  out.pi = Eigen::MatrixXd::Zero(n, k);
  for (int y = 0; y < mid; ++y) {
    const double mass = 0.5 * (left_mid[y] + right_mid[y]);
    if (mass <= 0.0) continue;
    out.pi.noalias() += (first.pi.col(y) * second.pi.row(y)) / mass;
  }
  return out;
}

double plan_cost(const ExtendedDistanceMatrix& d, const TransportPlan& plan,
                 int power) {
  if (power != 1 && power != 2) fail("power must be 1 or 2");
  if (plan.pi.rows() != d.n() || plan.pi.cols() != d.n())
    fail("plan has wrong shape");
  double total = 0.0;
  for (int i = 0; i < d.n(); ++i)
    for (int j = 0; j < d.n(); ++j) {
      const double p = plan.pi(i, j);
      if (p <= 0.0) continue;
      const double c = power == 1 ? d(i, j) : d(i, j) * d(i, j);
      if (!std::isfinite(c)) {
        if (p > 1e-12) return kInf;
        continue;
      }
      total += p * c;
    }
  return total;
}

std::string plan_to_csv(const TransportPlan& plan) {
  std::ostringstream out;
  out.precision(17);
  out << "i,j,mass\n";
  for (int i = 0; i < plan.pi.rows(); ++i)
    for (int j = 0; j < plan.pi.cols(); ++j)
      if (plan.pi(i, j) > 0.0) out << i << ',' << j << ',' << plan.pi(i, j) << '\n';
  return out.str();
}

std::string extended_distance_to_json(const ExtendedDistanceMatrix& d) {
  nlohmann::ordered_json j;
  j["n"] = d.n();
  j["semidistance"] = d.semidistance;
  nlohmann::ordered_json rows = nlohmann::json::array();
  for (int i = 0; i < d.n(); ++i) {
    nlohmann::ordered_json row = nlohmann::json::array();
    for (int k = 0; k < d.n(); ++k) {
      if (std::isfinite(d(i, k)))
        row.push_back(d(i, k));
      else
        row.push_back("inf");
    }
    rows.push_back(std::move(row));
  }
  j["d"] = std::move(rows);
  return j.dump(2);
}

ExtendedDistanceMatrix extended_distance_from_json(const std::string& text,
                                                   bool allow_semidistance) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    fail(std::string("invalid JSON: ") + err.what());
  }
  if (!j.is_object() || !j.contains("d") || !j["d"].is_array())
    fail("JSON must be an object with a matrix under \"d\"");
  const auto& rows = j["d"];
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i) {
    if (!rows[i].is_array() || static_cast<int>(rows[i].size()) != n)
      fail("matrix rows must all have length n");
    for (int k = 0; k < n; ++k) {
      const auto& cell = rows[i][k];
      if (cell.is_string()) {
        if (cell.get<std::string>() != "inf")
          fail("matrix entries must be numbers or \"inf\"");
        d(i, k) = kInf;
      } else if (cell.is_number()) {
        d(i, k) = cell.get<double>();
      } else {
        fail("matrix entries must be numbers or \"inf\"");
      }
    }
  }
  const bool stored_flag = j.value("semidistance", false);
  return make_extended_distance(std::move(d),
                                allow_semidistance || stored_flag);
}

}  // namespace mmlab
