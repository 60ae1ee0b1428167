#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agw/errors.hpp"
#include "agw/gaussian.hpp"
#include "agw/random.hpp"
#include "agw/transport.hpp"

namespace agw {

class GaussianMixture {
 public:
  GaussianMixture(std::vector<Gaussian> components, Vector weights)
      : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty()) throw data_error("GaussianMixture: no components");
    if (weights_.size() != static_cast<Eigen::Index>(components_.size()))
      throw data_error("GaussianMixture: " + std::to_string(components_.size()) +
                       " components but " + std::to_string(weights_.size()) + " weights");
    if (!weights_.allFinite() || weights_.minCoeff() < 0.0)
      throw data_error("GaussianMixture: weights must be nonnegative");
    if (std::abs(weights_.sum() - 1.0) > 1e-9)
      throw data_error("GaussianMixture: weights sum to " + std::to_string(weights_.sum()) +
                       ", expected 1");
    const Eigen::Index d = components_.front().dim();
    for (const Gaussian& g : components_)
      if (g.dim() != d)
        throw data_error("GaussianMixture: components have mixed dimensions");
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(components_.size()); }
  Eigen::Index dim() const { return components_.front().dim(); }
  const std::vector<Gaussian>& components() const { return components_; }
  const Gaussian& component(Eigen::Index j) const {
    if (j < 0 || j >= size()) throw data_error("GaussianMixture: component index out of range");
    return components_[static_cast<size_t>(j)];
  }
  const Vector& weights() const { return weights_; }

 private:
  std::vector<Gaussian> components_;
  Vector weights_;
};

enum class RegistrationSource { MawExact, IawEmpirical };

// Soft correspondence between the components of two mixtures. Rows index the
// first mixture's components, columns the second's; entries are nonnegative
// and the matrix couples the two weight vectors (exactly for the solver
// route, approximately for the empirical route; `marginal_residual` records
// how far the marginals are off).
struct RegistrationMatrix {
  Matrix weights;
  RegistrationSource source = RegistrationSource::MawExact;
  double marginal_residual = 0.0;
};

namespace detail {

inline void check_order(double p, const char* who) {
  if (!(p > 0.0) || p > 2.0)
    throw data_error(std::string(who) + ": order p must lie in (0, 2], got " +
                     std::to_string(p));
}

inline double pow_p(double base, double p) {
  if (p == 1.0) return base;
  if (p == 2.0) return base * base;
  return std::pow(base, p);
}

}  // namespace detail

// Matrix of W2(a_i, b_j)^p over component pairs. Shared by registration and
// by the transition-level distances.
inline Matrix pairwise_w2_cost(const GaussianMixture& a, const GaussianMixture& b,
                               double p) {
  detail::check_order(p, "pairwise_w2_cost");
  if (a.dim() != b.dim()) throw data_error("pairwise_w2_cost: dimension mismatch");
  Matrix c(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j)
      c(i, j) = detail::pow_p(w2_gaussian(a.component(i), b.component(j)), p);
  return c;
}

// Exact registration: optimal coupling of the component weights under the
// pairwise W2^p cost.
inline RegistrationMatrix registration_maw(const GaussianMixture& a,
                                           const GaussianMixture& b, double p = 1.0) {
  const Matrix cost = pairwise_w2_cost(a, b, p);
  const TransportPlan plan = solve_exact_transport(cost, a.weights(), b.weights());
  RegistrationMatrix reg;
  reg.weights = plan.weights;
  reg.source = RegistrationSource::MawExact;
  reg.marginal_residual = plan.marginal_residual;
  return reg;
}

// Registered mixture distance: (sum_ij w_ij W2(a_i, b_j)^p)^(1/p). With the
// optimal registration this upper-bounds the true W_p between the mixtures,
// since the coupling moves whole components onto whole components.
inline double registered_distance(const GaussianMixture& a, const GaussianMixture& b,
                                  const RegistrationMatrix& reg, double p = 1.0) {
  detail::check_order(p, "registered_distance");
  if (reg.weights.rows() != a.size() || reg.weights.cols() != b.size())
    throw data_error("registered_distance: registration is " +
                     std::to_string(reg.weights.rows()) + "x" +
                     std::to_string(reg.weights.cols()) + " but mixtures have " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                     " components");
  if (reg.weights.minCoeff() < 0.0)
    throw data_error("registered_distance: negative registration weight");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j)
      if (reg.weights(i, j) > 0.0)
        acc += reg.weights(i, j) *
               detail::pow_p(w2_gaussian(a.component(i), b.component(j)), p);
  return std::pow(acc, 1.0 / p);
}

// Posterior component responsibilities at a single point, as a simplex
// vector. Computed through a shifted softmax so extreme log densities cannot
// overflow.
inline Vector posterior(const GaussianMixture& m, const Vector& x) {
  if (x.size() != m.dim()) throw data_error("posterior: point dimension mismatch");
  Vector logp(m.size());
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    const double w = m.weights()[j];
    logp[j] = w > 0.0 ? std::log(w) + log_pdf(m.component(j), x)
                      : -std::numeric_limits<double>::infinity();
  }
  const double shift = logp.maxCoeff();
  if (!std::isfinite(shift))
    throw numerical_error("posterior: no component has positive mass at the point");
  // Scalar exp on purpose: Eigen's vectorized exp clamps -inf to a denormal
  // instead of zero, which would leak mass onto zero-weight components.
  Vector r(m.size());
  for (Eigen::Index j = 0; j < m.size(); ++j)
    r[j] = std::isfinite(logp[j]) ? std::exp(logp[j] - shift) : 0.0;
  return r / r.sum();
}

// Responsibilities for a block of points (rows). Same math as `posterior`,
// with the per-component density caches hoisted out of the point loop.
inline Matrix posterior_matrix(const GaussianMixture& m, const Matrix& points) {
  if (points.cols() != m.dim())
    throw data_error("posterior_matrix: point dimension mismatch");
  const Eigen::Index n = points.rows();
  const Eigen::Index mm = m.size();
  Matrix logp(n, mm);
  for (Eigen::Index j = 0; j < mm; ++j) {
    const double w = m.weights()[j];
    if (w > 0.0) {
      const LogPdfCache pdf(m.component(j));
      const double lw = std::log(w);
      for (Eigen::Index i = 0; i < n; ++i)
        logp(i, j) = lw + pdf(points.row(i).transpose());
    } else {
      logp.col(j).setConstant(-std::numeric_limits<double>::infinity());
    }
  }
  Matrix out(n, mm);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double shift = logp.row(i).maxCoeff();
    if (!std::isfinite(shift))
      throw numerical_error("posterior_matrix: no component has positive mass at a point");
    // Scalar exp: see `posterior` about Eigen's clamped vector exp.
    for (Eigen::Index j = 0; j < mm; ++j)
      out(i, j) = std::isfinite(logp(i, j)) ? std::exp(logp(i, j) - shift) : 0.0;
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// Draw n points, one per row. Generator consumption order: per point, one
// uniform for the component index, then d normals.
inline Matrix sample_mixture(const GaussianMixture& m, Eigen::Index n,
                             std::uint64_t seed) {
  if (n < 1) throw data_error("sample_mixture: need at least one sample");
  const Eigen::Index d = m.dim();
  std::vector<Matrix> factors;
  factors.reserve(static_cast<size_t>(m.size()));
  for (const Gaussian& g : m.components()) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov());
    if (es.info() != Eigen::Success)
      throw numerical_error("sample_mixture: covariance factorization failed");
    factors.push_back(es.eigenvectors() *
                      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
  }
  Rng rng(seed);
  Matrix out(n, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int kidx = rng.discrete(m.weights());
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    out.row(i) =
        (m.component(kidx).mean() + factors[static_cast<size_t>(kidx)] * z).transpose();
  }
  return out;
}

// Empirical registration: sample n points from each mixture, couple the two
// point clouds entropically under |x - y|^p, then project the coupling onto
// component space through the posteriors,
//   W = P1^T Pi P2,  P_k = per-point responsibilities under mixture k.
// Sub-seeds for the two clouds derive from `seed` with indices 0 and 1.
inline RegistrationMatrix registration_iaw(const GaussianMixture& a,
                                           const GaussianMixture& b, Eigen::Index n,
                                           double p, std::uint64_t seed,
                                           const SinkhornParams& params = {}) {
  detail::check_order(p, "registration_iaw");
  if (a.dim() != b.dim()) throw data_error("registration_iaw: dimension mismatch");
  if (n < 2) throw data_error("registration_iaw: need at least two samples per side");

  // One component on each side forces the trivial coupling: both posterior
  // matrices are identically one, so the projection collapses to the plan's
  // total mass. Return it exactly instead of sampling.
  if (a.size() == 1 && b.size() == 1) {
    RegistrationMatrix reg;
    reg.weights = Matrix::Ones(1, 1);
    reg.source = RegistrationSource::IawEmpirical;
    reg.marginal_residual = 0.0;
    return reg;
  }

  const Matrix x = sample_mixture(a, n, derive_seed(seed, 0));
  const Matrix y = sample_mixture(b, n, derive_seed(seed, 1));

  Matrix cost(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    cost.col(j) = (x.rowwise() - y.row(j)).rowwise().norm();
  }
  if (p == 2.0)
    cost = cost.array().square();
  else if (p != 1.0)
    cost = cost.array().pow(p);

  const Vector uniform = Vector::Constant(n, 1.0 / static_cast<double>(n));
  TransportPlan plan = sinkhorn(cost, uniform, uniform, params);
  cost.resize(0, 0);

  const Matrix pa = posterior_matrix(a, x);
  const Matrix pb = posterior_matrix(b, y);
  Matrix w = pa.transpose() * (plan.weights * pb);
  plan.weights.resize(0, 0);

  RegistrationMatrix reg;
  reg.weights = std::move(w);
  reg.source = RegistrationSource::IawEmpirical;
  reg.marginal_residual = std::max(
      (reg.weights.rowwise().sum() - a.weights()).cwiseAbs().maxCoeff(),
      (reg.weights.colwise().sum().transpose() - b.weights()).cwiseAbs().maxCoeff());
  return reg;
}

}  // namespace agw
