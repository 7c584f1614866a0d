#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace mmlab {

// Deterministic random source. Raw 64-bit output comes from splitmix64 and
// every derived quantity (uniform, normal, index) is computed here from the
// raw bits, so sequences are reproducible across standard libraries and
// platforms for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent substream addressed by a label, used to give each experiment
  // its own stream under one scenario seed.
  Rng fork(std::string_view label) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    return Rng(state_ ^ (h | 1ull));
  }
  Rng fork(std::uint64_t index) const {
    return Rng(mix(state_ + 0x9e3779b97f4a7c15ull * (index + 1)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller on explicit uniforms.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

  Eigen::VectorXd uniform_vector(Eigen::Index n, double lo, double hi) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace mmlab
