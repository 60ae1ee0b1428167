#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "agw/errors.hpp"
#include "agw/random.hpp"

namespace agw {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

// Symmetry gate shared by every consumer of covariance-like input.
inline void check_symmetric(const Matrix& s, const char* who) {
  if (s.rows() != s.cols())
    throw data_error(std::string(who) + ": matrix is not square");
  const double scale = 1.0 + s.cwiseAbs().maxCoeff();
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale)
    throw data_error(std::string(who) + ": matrix is not symmetric (max asymmetry " +
                     std::to_string(asym) + ")");
}

// Exact symmetrization; (A + A^T)/2 is bitwise symmetric in IEEE arithmetic.
inline Matrix symmetrize(const Matrix& s) { return 0.5 * (s + s.transpose()); }

}  // namespace detail

// Produces V f(lambda) V^T for symmetric input. Eigenvalues pass through
// `f` (e.g. clamped sqrt, exp) before reconstruction.
template <typename F>
Matrix sym_matrix_function(const Matrix& s, const char* who, F&& f) {
  detail::check_symmetric(s, who);
  Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(s));
  if (es.info() != Eigen::Success)
    throw numerical_error(std::string(who) + ": eigendecomposition failed");
  Vector lam = es.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = f(lam[i]);
  Matrix r = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return detail::symmetrize(r);
}

// Principal square root of a PSD matrix. Eigenvalues in [-1e-8 * lam_max, 0)
// are treated as rounding noise and clamped to zero; anything below that is a
// genuine PSD violation.
inline Matrix sqrtm_psd(const Matrix& s) {
  detail::check_symmetric(s, "sqrtm_psd");
  Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(s));
  if (es.info() != Eigen::Success)
    throw numerical_error("sqrtm_psd: eigendecomposition failed");
  const double lam_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
  const double lam_min = es.eigenvalues().minCoeff();
  if (lam_min < -1e-8 * lam_max)
    throw numerical_error("sqrtm_psd: matrix is not PSD (min eigenvalue " +
                          std::to_string(lam_min) + ")");
  Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return detail::symmetrize(es.eigenvectors() * lam.asDiagonal() *
                            es.eigenvectors().transpose());
}

// Matrix exponential of a symmetric matrix.
inline Matrix sym_expm(const Matrix& s) {
  return sym_matrix_function(s, "sym_expm", [](double x) { return std::exp(x); });
}

// Gaussian with full covariance. Construction validates shape and symmetry,
// then checks the spectrum: eigenvalues below -1e-8 * lam_max are an error;
// small negative noise is clamped to zero. Singular covariances are legal.
class Gaussian {
 public:
  Gaussian(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() == 0) throw data_error("Gaussian: empty mean");
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
      throw data_error("Gaussian: covariance is " + std::to_string(cov_.rows()) + "x" +
                       std::to_string(cov_.cols()) + " but mean has dimension " +
                       std::to_string(mean_.size()));
    if (!mean_.allFinite() || !cov_.allFinite())
      throw data_error("Gaussian: non-finite entries");
    detail::check_symmetric(cov_, "Gaussian");

    Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(cov_));
    if (es.info() != Eigen::Success)
      throw numerical_error("Gaussian: eigendecomposition of covariance failed");
    const double lam_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const double lam_min = es.eigenvalues().minCoeff();
    if (lam_min < -1e-8 * lam_max)
      throw numerical_error("Gaussian: covariance is not PSD (min eigenvalue " +
                            std::to_string(lam_min) + ")");
    // Rebuild only when a genuinely negative eigenvalue needs clamping.
    // Re-decomposing the rebuilt matrix can leave residue around
    // -1e-16 * lam_max, so matrices already nonnegative at that level are
    // kept bit for bit; this makes construction idempotent and lets
    // serialization round-trip exactly.
    if (lam_min < -1e-14 * lam_max) {
      Vector lam = es.eigenvalues().cwiseMax(0.0);
      cov_ = detail::symmetrize(es.eigenvectors() * lam.asDiagonal() *
                                es.eigenvectors().transpose());
    }
  }

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  bool operator==(const Gaussian& o) const {
    return mean_.size() == o.mean_.size() && mean_ == o.mean_ && cov_ == o.cov_;
  }

 private:
  Vector mean_;
  Matrix cov_;
};

// 2-Wasserstein distance between Gaussians,
//   W2^2 = |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
// The trace term is clamped at zero before the square root; without the
// clamp, rounding noise of order 1e-15 turns into distances of order 1e-7
// between equal inputs. Bitwise-equal arguments short-circuit to exactly 0.
inline double w2_gaussian(const Gaussian& a, const Gaussian& b) {
  if (a.dim() != b.dim())
    throw data_error("w2_gaussian: dimension mismatch (" + std::to_string(a.dim()) +
                     " vs " + std::to_string(b.dim()) + ")");
  if (a == b) return 0.0;
  const Matrix ra = sqrtm_psd(a.cov());
  const Matrix inner = detail::symmetrize(ra * b.cov() * ra);
  const Matrix cross = sqrtm_psd(inner);
  const double tr = a.cov().trace() + b.cov().trace() - 2.0 * cross.trace();
  const double sq = (a.mean() - b.mean()).squaredNorm() + std::max(tr, 0.0);
  return std::sqrt(std::max(sq, 0.0));
}

// KL divergence KL(a || b) for Gaussians. The second argument must be
// nonsingular; a singular first argument gives +infinity (its density has no
// support on all of R^d).
inline double kl_gaussian(const Gaussian& a, const Gaussian& b) {
  if (a.dim() != b.dim())
    throw data_error("kl_gaussian: dimension mismatch (" + std::to_string(a.dim()) +
                     " vs " + std::to_string(b.dim()) + ")");
  const Eigen::Index d = a.dim();

  Eigen::SelfAdjointEigenSolver<Matrix> esb(detail::symmetrize(b.cov()));
  if (esb.info() != Eigen::Success)
    throw numerical_error("kl_gaussian: eigendecomposition failed");
  const double lb_max = std::max(esb.eigenvalues().maxCoeff(), 0.0);
  const double lb_min = esb.eigenvalues().minCoeff();
  if (lb_min <= 1e-12 * lb_max)
    throw numerical_error("kl_gaussian: second covariance is singular");

  Eigen::SelfAdjointEigenSolver<Matrix> esa(detail::symmetrize(a.cov()));
  if (esa.info() != Eigen::Success)
    throw numerical_error("kl_gaussian: eigendecomposition failed");

  double logdet_a = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = esa.eigenvalues()[i];
    if (lam <= 0.0) return std::numeric_limits<double>::infinity();
    logdet_a += std::log(lam);
  }
  double logdet_b = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) logdet_b += std::log(esb.eigenvalues()[i]);

  const Matrix b_inv =
      esb.eigenvectors() * esb.eigenvalues().cwiseInverse().asDiagonal() *
      esb.eigenvectors().transpose();
  const Vector diff = b.mean() - a.mean();
  const double kl = 0.5 * ((b_inv * a.cov()).trace() + diff.dot(b_inv * diff) -
                           static_cast<double>(d) + logdet_b - logdet_a);
  return std::max(kl, 0.0);
}

// Draw n points, one per row. Order of consumption from the generator: for
// each point in turn, d standard normals in coordinate order. Keeping this
// fixed makes every sample-based quantity reproducible from its seed.
inline Matrix sample_gaussian(const Gaussian& g, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw data_error("sample_gaussian: need at least one sample");
  Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov());
  if (es.info() != Eigen::Success)
    throw numerical_error("sample_gaussian: eigendecomposition failed");
  const Matrix l = es.eigenvectors() *
                   es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Rng rng(seed);
  const Eigen::Index d = g.dim();
  Matrix out(n, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    out.row(i) = (g.mean() + l * z).transpose();
  }
  return out;
}

// Precomputed Cholesky for repeated density evaluation. A ridge of
// 1e-9 * tr(S)/d + 1e-12 is added when the covariance is singular or close to
// it, so the log density stays finite for every input the library can
// produce (covariances are PSD by construction but may have zero
// eigenvalues).
class LogPdfCache {
 public:
  explicit LogPdfCache(const Gaussian& g) : mean_(g.mean()) {
    const Eigen::Index d = g.dim();
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov());
    if (es.info() != Eigen::Success)
      throw numerical_error("log_pdf: eigendecomposition failed");
    const double lam_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const double lam_min = es.eigenvalues().minCoeff();
    Matrix s = g.cov();
    if (lam_min <= 1e-12 * lam_max || lam_max == 0.0) {
      const double ridge = 1e-9 * s.trace() / static_cast<double>(d) + 1e-12;
      s.diagonal().array() += ridge;
    }
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      // Spectrum said PD but Cholesky disagreed; one more ridge settles it.
      const double ridge = 1e-9 * s.trace() / static_cast<double>(d) + 1e-12;
      s.diagonal().array() += ridge;
      llt.compute(s);
      if (llt.info() != Eigen::Success)
        throw numerical_error("log_pdf: covariance factorization failed");
    }
    l_ = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) logdet += std::log(l_(i, i));
    log_norm_ = -0.5 * static_cast<double>(d) *
                    std::log(6.283185307179586476925286766559) -
                logdet;
  }

  double operator()(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != mean_.size())
      throw data_error("log_pdf: point dimension mismatch");
    const Vector y =
        l_.triangularView<Eigen::Lower>().solve(x - mean_);
    return log_norm_ - 0.5 * y.squaredNorm();
  }

  const Vector& mean() const { return mean_; }

 private:
  Vector mean_;
  Matrix l_;
  double log_norm_ = 0.0;
};

inline double log_pdf(const Gaussian& g, const Vector& x) {
  return LogPdfCache(g)(x);
}

}  // namespace agw
