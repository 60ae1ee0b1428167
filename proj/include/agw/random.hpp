#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "agw/errors.hpp"

namespace agw {

// splitmix64 finalizer. Used for seed derivation only, never as the main
// generator.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and one or more
// indices. Deterministic, order sensitive:
//   derive_seed(s, a, b) != derive_seed(s, b, a) in general.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(index));
}

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                    Rest... rest) noexcept {
  return derive_seed(derive_seed(seed, index), rest...);
}

// Seeded generator with fixed draw algorithms. std::mt19937_64 is specified
// bit for bit by the standard; the distributions here are written out by hand
// because the <random> distribution objects are not portable across library
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1], for safe logs.
  double uniform_pos() { return 1.0 - uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Gamma(shape, 1) by Marsaglia-Tsang squeeze; shapes below one use the
  // boost Gamma(a) = Gamma(a+1) * U^(1/a).
  double gamma(double shape) {
    if (!(shape > 0.0)) throw data_error("gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet draw as normalized independent gammas.
  Eigen::VectorXd dirichlet(const Eigen::VectorXd& alpha) {
    if (alpha.size() == 0) throw data_error("dirichlet: empty concentration vector");
    Eigen::VectorXd g(alpha.size());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) g[i] = gamma(alpha[i]);
    const double total = g.sum();
    if (!(total > 0.0)) throw numerical_error("dirichlet: degenerate draw, all gammas zero");
    return g / total;
  }

  // Index draw by inverse CDF over nonnegative weights that sum to ~1.
  int discrete(const Eigen::VectorXd& weights) {
    const double u = uniform();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    // Falls through only when rounding leaves acc slightly below 1; return
    // the last index with positive weight.
    for (Eigen::Index i = weights.size(); i-- > 0;) {
      if (weights[i] > 0.0) return static_cast<int>(i);
    }
    throw data_error("discrete: weight vector has no positive entry");
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace agw
