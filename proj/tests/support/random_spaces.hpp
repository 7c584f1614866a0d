#pragma once

#include <Eigen/Dense>

#include "mmlab/rng.hpp"
#include "mmlab/space.hpp"

namespace mmlab::testing {

struct SpaceOptions {
  bool connected = true;
  double edge_prob = 0.6;
  double wmin = 0.2;
  double wmax = 2.0;
  double mmin = 0.2;
  double mmax = 2.0;
};

// Random space with the structural invariants enforced by construction.
// With connected=true a random spanning tree is always included.
FiniteEnergySpace random_space(Rng& rng, int n, SpaceOptions opt = {});

// Random density bounded below by floor (before normalization).
Density random_density(Rng& rng, const FiniteEnergySpace& sp,
                       double floor = 0.05);

// Random symmetric extended distance matrix: points are split into `classes`
// groups, distances within a group are finite (shortest-path closed so the
// triangle inequality holds exactly), distances across groups are +inf.
Eigen::MatrixXd random_extended_metric(Rng& rng, int n, int classes);

}  // namespace mmlab::testing
