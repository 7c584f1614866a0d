#include "support/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mmlab::testing::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Solves the marginal equations on a spanning tree of the bipartite graph by
// repeated leaf elimination. Returns false when some mass goes negative.
bool solve_tree(const std::vector<int>& cells, int r, int c,
                const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                Eigen::MatrixXd& plan) {
  const int nodes = r + c;
  std::vector<double> remaining(static_cast<std::size_t>(nodes));
  for (int i = 0; i < r; ++i) remaining[static_cast<std::size_t>(i)] = mu[i];
  for (int j = 0; j < c; ++j)
    remaining[static_cast<std::size_t>(r + j)] = nu[j];
  std::vector<std::vector<int>> incident(static_cast<std::size_t>(nodes));
  for (int e = 0; e < static_cast<int>(cells.size()); ++e) {
    const int i = cells[static_cast<std::size_t>(e)] / c;
    const int j = cells[static_cast<std::size_t>(e)] % c;
    incident[static_cast<std::size_t>(i)].push_back(e);
    incident[static_cast<std::size_t>(r + j)].push_back(e);
  }
  std::vector<bool> edge_done(cells.size(), false);
  std::vector<int> degree(static_cast<std::size_t>(nodes));
  for (int v = 0; v < nodes; ++v)
    degree[static_cast<std::size_t>(v)] =
        static_cast<int>(incident[static_cast<std::size_t>(v)].size());
  std::vector<int> leaves;
  for (int v = 0; v < nodes; ++v)
    if (degree[static_cast<std::size_t>(v)] == 1) leaves.push_back(v);
  plan = Eigen::MatrixXd::Zero(r, c);
  int processed = 0;
  while (!leaves.empty()) {
    const int v = leaves.back();
    leaves.pop_back();
    if (degree[static_cast<std::size_t>(v)] != 1) continue;
    int edge = -1;
    for (int e : incident[static_cast<std::size_t>(v)])
      if (!edge_done[static_cast<std::size_t>(e)]) edge = e;
    if (edge < 0) continue;
    const int i = cells[static_cast<std::size_t>(edge)] / c;
    const int j = cells[static_cast<std::size_t>(edge)] % c;
    const double mass = remaining[static_cast<std::size_t>(v)];
    if (mass < -1e-12) return false;
    plan(i, j) = mass;
    edge_done[static_cast<std::size_t>(edge)] = true;
    ++processed;
    const int other = (v < r) ? r + j : i;
    remaining[static_cast<std::size_t>(other)] -= mass;
    remaining[static_cast<std::size_t>(v)] = 0.0;
    if (--degree[static_cast<std::size_t>(other)] == 1) leaves.push_back(other);
    degree[static_cast<std::size_t>(v)] = 0;
  }
  if (processed != static_cast<int>(cells.size())) return false;  // had cycle
  if ((plan.array() < -1e-12).any()) return false;
  return true;
}

}  // namespace

BruteForceTransport transport_brute_force(const Eigen::MatrixXd& cost,
                                          const Eigen::VectorXd& mu,
                                          const Eigen::VectorXd& nu) {
  const int r = static_cast<int>(mu.size());
  const int c = static_cast<int>(nu.size());
  if (r > 5 || c > 5)
    throw std::invalid_argument("transport_brute_force: instance too large");
  if (std::abs(mu.sum() - nu.sum()) > 1e-9)
    throw std::invalid_argument("transport_brute_force: mass mismatch");
  const int cells_total = r * c;
  const int basis_size = r + c - 1;
  std::vector<int> pick(static_cast<std::size_t>(basis_size));
  for (int k = 0; k < basis_size; ++k) pick[static_cast<std::size_t>(k)] = k;

  BruteForceTransport best;
  best.value = kInf;
  Eigen::MatrixXd plan;
  while (true) {
    if (solve_tree(pick, r, c, mu, nu, plan)) {
      double value = 0.0;
      for (int i = 0; i < r && value < kInf; ++i)
        for (int j = 0; j < c; ++j) {
          if (plan(i, j) > 1e-12) {
            if (std::isinf(cost(i, j))) {
              value = kInf;
              break;
            }
            value += plan(i, j) * cost(i, j);
          }
        }
      if (value < best.value) {
        best.value = value;
        best.plan = plan;
      }
    }
    // next combination
    int k = basis_size - 1;
    while (k >= 0 &&
           pick[static_cast<std::size_t>(k)] == cells_total - basis_size + k)
      --k;
    if (k < 0) break;
    ++pick[static_cast<std::size_t>(k)];
    for (int l = k + 1; l < basis_size; ++l)
      pick[static_cast<std::size_t>(l)] = pick[static_cast<std::size_t>(k)] +
                                          (l - k);
  }
  return best;
}

Eigen::MatrixXd shortest_path_closure(Eigen::MatrixXd d) {
  const int n = static_cast<int>(d.rows());
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (d(i, k) + d(k, j) < d(i, j)) d(i, j) = d(i, k) + d(k, j);
  return d;
}

}  // namespace mmlab::testing::oracle
