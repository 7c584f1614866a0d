#include "support/random_spaces.hpp"

#include <limits>
#include <numeric>
#include <vector>

namespace mmlab::testing {

FiniteEnergySpace random_space(Rng& rng, int n, SpaceOptions opt) {
  Eigen::VectorXd m(n);
  for (int i = 0; i < n; ++i) m[i] = rng.uniform(opt.mmin, opt.mmax);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.uniform() < opt.edge_prob) {
        const double wij = rng.uniform(opt.wmin, opt.wmax);
        w(i, j) = w(j, i) = wij;
      }
  if (opt.connected && n > 1) {
    // Random spanning tree: attach each point to a uniformly chosen earlier
    // one under a random permutation.
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[rng.index(static_cast<std::uint64_t>(i + 1))]);
    for (int k = 1; k < n; ++k) {
      const int a = perm[static_cast<std::size_t>(k)];
      const int b = perm[rng.index(static_cast<std::uint64_t>(k))];
      if (w(a, b) == 0.0) {
        const double wab = rng.uniform(opt.wmin, opt.wmax);
        w(a, b) = w(b, a) = wab;
      }
    }
  }
  return make_space(std::move(m), std::move(w));
}

Density random_density(Rng& rng, const FiniteEnergySpace& sp, double floor) {
  Eigen::VectorXd v(sp.n());
  for (Eigen::Index i = 0; i < sp.n(); ++i) v[i] = floor + rng.uniform();
  return to_density(sp, v);
}

Eigen::MatrixXd random_extended_metric(Rng& rng, int n, int classes) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> cls(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    cls[static_cast<std::size_t>(i)] =
        (i < classes) ? i : static_cast<int>(rng.index(
                                static_cast<std::uint64_t>(classes)));
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j)
        d(i, j) = 0.0;
      else if (cls[static_cast<std::size_t>(i)] !=
               cls[static_cast<std::size_t>(j)])
        d(i, j) = inf;
      else if (j > i)
        d(i, j) = rng.uniform(0.1, 2.0);
      else
        d(i, j) = d(j, i);
    }
  // Shortest-path closure makes the finite blocks genuine metrics.
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (d(i, k) + d(k, j) < d(i, j)) d(i, j) = d(i, k) + d(k, j);
  return d;
}

}  // namespace mmlab::testing
