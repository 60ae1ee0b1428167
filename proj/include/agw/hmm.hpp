#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "agw/errors.hpp"
#include "agw/gaussian.hpp"
#include "agw/mixture.hpp"
#include "agw/random.hpp"

namespace agw {

// Left fixed point of a row-stochastic matrix: pi T = pi, pi >= 0, sum 1.
// Solved as least squares on [T' - I; 1'] pi = [0; 1]. Uniqueness requires
// the second-largest eigenvalue modulus to stay below 1 - 1e-8; reducible or
// periodic chains are rejected rather than silently picking one fixed point.
inline Vector stationary_distribution(const Matrix& t) {
  if (t.rows() != t.cols() || t.rows() == 0)
    throw data_error("stationary_distribution: matrix must be square and nonempty");
  if (!t.allFinite())
    throw data_error("stationary_distribution: non-finite entries");
  if (t.minCoeff() < -1e-12)
    throw data_error("stationary_distribution: negative transition probability");
  const Eigen::Index m = t.rows();
  for (Eigen::Index i = 0; i < m; ++i)
    if (std::abs(t.row(i).sum() - 1.0) > 1e-9)
      throw data_error("stationary_distribution: row " + std::to_string(i) +
                       " sums to " + std::to_string(t.row(i).sum()));

  if (m == 1) return Vector::Ones(1);

  Eigen::EigenSolver<Matrix> es(t.transpose());
  if (es.info() != Eigen::Success)
    throw numerical_error("stationary_distribution: eigensolver failed");
  std::vector<double> mods(m);
  for (Eigen::Index i = 0; i < m; ++i) mods[static_cast<size_t>(i)] = std::abs(es.eigenvalues()[i]);
  std::sort(mods.begin(), mods.end(), std::greater<double>());
  if (mods[1] >= 1.0 - 1e-8)
    throw numerical_error(
        "stationary_distribution: fixed point is not unique (second eigenvalue "
        "modulus " + std::to_string(mods[1]) + "; chain is reducible or periodic)");

  Matrix a(m + 1, m);
  a.topRows(m) = t.transpose() - Matrix::Identity(m, m);
  a.bottomRows(1).setOnes();
  Vector rhs = Vector::Zero(m + 1);
  rhs[m] = 1.0;
  Vector pi = a.colPivHouseholderQr().solve(rhs);
  if (pi.minCoeff() < -1e-10)
    throw numerical_error("stationary_distribution: solution left the simplex");
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  const double residual = (pi.transpose() * t - pi.transpose()).cwiseAbs().maxCoeff();
  if (residual > 1e-8)
    throw numerical_error("stationary_distribution: residual " + std::to_string(residual));
  return pi;
}

// HMM with one Gaussian emission per state. The process is assumed started
// from its stationary distribution, which is derived from the transition
// matrix at construction and cached; there is no separate initial
// distribution parameter.
class GmmHmm {
 public:
  GmmHmm(Matrix transition, std::vector<Gaussian> components)
      : transition_(std::move(transition)),
        components_(std::move(components)),
        stationary_(stationary_distribution(transition_)) {
    if (components_.empty()) throw data_error("GmmHmm: no components");
    if (transition_.rows() != static_cast<Eigen::Index>(components_.size()))
      throw data_error("GmmHmm: " + std::to_string(components_.size()) +
                       " components but transition is " + std::to_string(transition_.rows()) +
                       "x" + std::to_string(transition_.cols()));
    const Eigen::Index d = components_.front().dim();
    for (const Gaussian& g : components_)
      if (g.dim() != d) throw data_error("GmmHmm: components have mixed dimensions");
  }

  Eigen::Index states() const { return transition_.rows(); }
  Eigen::Index dim() const { return components_.front().dim(); }
  const Matrix& transition() const { return transition_; }
  const Vector& stationary() const { return stationary_; }
  const std::vector<Gaussian>& components() const { return components_; }
  const Gaussian& component(Eigen::Index i) const {
    if (i < 0 || i >= states()) throw data_error("GmmHmm: state index out of range");
    return components_[static_cast<size_t>(i)];
  }

 private:
  Matrix transition_;
  std::vector<Gaussian> components_;
  Vector stationary_;
};

struct Sequence {
  Matrix observations;      // one row per time step
  std::vector<int> states;  // optional ground truth, may be empty
};

// Marginal observation law: mixture of the emissions under the stationary
// weights.
inline GaussianMixture marginal_gmm(const GmmHmm& h) {
  return GaussianMixture(h.components(), h.stationary());
}

// Next-observation law conditioned on current state i: mixture of the
// emissions under transition row i.
inline GaussianMixture conditional_gmm(const GmmHmm& h, Eigen::Index i) {
  if (i < 0 || i >= h.states()) throw data_error("conditional_gmm: state index out of range");
  return GaussianMixture(h.components(), h.transition().row(i).transpose());
}

// Draw a state/observation path of the given length. Generator consumption
// order per step: one uniform for the state, then d normals for the
// emission.
inline Sequence sample_hmm(const GmmHmm& h, Eigen::Index len, std::uint64_t seed) {
  if (len < 1) throw data_error("sample_hmm: need at least one step");
  const Eigen::Index d = h.dim();
  std::vector<Matrix> factors;
  factors.reserve(static_cast<size_t>(h.states()));
  for (const Gaussian& g : h.components()) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov());
    if (es.info() != Eigen::Success)
      throw numerical_error("sample_hmm: covariance factorization failed");
    factors.push_back(es.eigenvectors() *
                      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
  }
  Rng rng(seed);
  Sequence seq;
  seq.observations.resize(len, d);
  seq.states.resize(static_cast<size_t>(len));
  Vector z(d);
  int state = rng.discrete(h.stationary());
  for (Eigen::Index tstep = 0; tstep < len; ++tstep) {
    if (tstep > 0) state = rng.discrete(h.transition().row(state).transpose());
    seq.states[static_cast<size_t>(tstep)] = state;
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    seq.observations.row(tstep) =
        (h.component(state).mean() + factors[static_cast<size_t>(state)] * z).transpose();
  }
  return seq;
}

namespace detail {

// Emission log densities, one row per state, one column per time step, plus
// the per-step max used to shift them into exp range.
struct EmissionTable {
  Matrix logb;   // m x T
  Matrix bhat;   // exp(logb - shift), entries in (0, 1]
  Vector shift;  // per time step
};

inline EmissionTable emission_table(const std::vector<LogPdfCache>& pdfs,
                                    const Matrix& obs) {
  const Eigen::Index m = static_cast<Eigen::Index>(pdfs.size());
  const Eigen::Index len = obs.rows();
  EmissionTable e;
  e.logb.resize(m, len);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index tstep = 0; tstep < len; ++tstep)
      e.logb(i, tstep) = pdfs[static_cast<size_t>(i)](obs.row(tstep).transpose());
  e.shift = e.logb.colwise().maxCoeff();
  e.bhat.resize(m, len);
  for (Eigen::Index tstep = 0; tstep < len; ++tstep)
    for (Eigen::Index i = 0; i < m; ++i)
      e.bhat(i, tstep) = std::exp(e.logb(i, tstep) - e.shift[tstep]);
  return e;
}

struct ForwardResult {
  Matrix alpha;   // scaled forward variables, m x T
  Vector scale;   // per-step normalizers c_t
  double loglik = 0.0;
};

inline ForwardResult scaled_forward(const Matrix& transition, const Vector& start,
                                    const EmissionTable& e) {
  const Eigen::Index m = transition.rows();
  const Eigen::Index len = e.bhat.cols();
  ForwardResult r;
  r.alpha.resize(m, len);
  r.scale.resize(len);
  Vector cur = start.cwiseProduct(e.bhat.col(0));
  for (Eigen::Index tstep = 0;; ++tstep) {
    // The max-shift guarantees bhat has an entry equal to 1, so the scale can
    // vanish only if the chain assigns zero mass exactly where the density
    // concentrates; flooring keeps the recursion finite even then.
    double c = cur.sum();
    if (!(c > 0.0)) c = std::numeric_limits<double>::min();
    r.scale[tstep] = c;
    r.alpha.col(tstep) = cur / c;
    r.loglik += std::log(c) + e.shift[tstep];
    if (tstep + 1 == len) break;
    cur = (transition.transpose() * r.alpha.col(tstep)).cwiseProduct(e.bhat.col(tstep + 1));
  }
  return r;
}

}  // namespace detail

// log P(observations | h) by the scaled forward recursion, with the model
// started from its stationary distribution. Per-step emission shifts keep the
// result finite for observations arbitrarily far from every component.
inline double forward_log_likelihood(const GmmHmm& h, const Sequence& seq) {
  if (seq.observations.rows() < 1)
    throw data_error("forward_log_likelihood: empty sequence");
  if (seq.observations.cols() != h.dim())
    throw data_error("forward_log_likelihood: observation dimension " +
                     std::to_string(seq.observations.cols()) + " but model has " +
                     std::to_string(h.dim()));
  if (!seq.observations.allFinite())
    throw data_error("forward_log_likelihood: non-finite observations");
  std::vector<LogPdfCache> pdfs;
  pdfs.reserve(static_cast<size_t>(h.states()));
  for (const Gaussian& g : h.components()) pdfs.emplace_back(g);
  const detail::EmissionTable e = detail::emission_table(pdfs, seq.observations);
  return detail::scaled_forward(h.transition(), h.stationary(), e).loglik;
}

struct BaumWelchOptions {
  int max_iter = 200;
  double tol = 1e-6;  // per-observation improvement threshold
  int kmeans_restarts = 10;
};

struct BaumWelchResult {
  GmmHmm model;
  std::vector<double> loglik_trace;  // total log-likelihood at each iteration
  bool converged = false;
  std::vector<std::string> warnings;
};

namespace detail {

// Seeded k-means++ with Lloyd refinement; returns centers of the best run by
// inertia over the requested restarts.
inline Matrix kmeans_centers(const Matrix& x, int m, std::uint64_t seed, int restarts) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Matrix best_centers(m, d);
  double best_inertia = std::numeric_limits<double>::infinity();

  for (int run = 0; run < restarts; ++run) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(run)));
    Matrix centers(m, d);
    centers.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(n)));
    Vector d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < m; ++k) {
      const double total = d2.sum();
      Eigen::Index pick = 0;
      if (total > 0.0) {
        const double u = rng.uniform() * total;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[i];
          if (u < acc) {
            pick = i;
            break;
          }
          if (i + 1 == n) pick = i;
        }
      } else {
        pick = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(n));
      }
      centers.row(k) = x.row(pick);
      d2 = d2.cwiseMin((x.rowwise() - centers.row(k)).rowwise().squaredNorm());
    }

    std::vector<int> assign(static_cast<size_t>(n), -1);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double bestd = (x.row(i) - centers.row(0)).squaredNorm();
        for (int k = 1; k < m; ++k) {
          const double dd = (x.row(i) - centers.row(k)).squaredNorm();
          if (dd < bestd) {
            bestd = dd;
            arg = k;
          }
        }
        if (assign[static_cast<size_t>(i)] != arg) {
          assign[static_cast<size_t>(i)] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sums = Matrix::Zero(m, d);
      Eigen::VectorXi counts = Eigen::VectorXi::Zero(m);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
        counts[assign[static_cast<size_t>(i)]] += 1;
      }
      for (int k = 0; k < m; ++k) {
        if (counts[k] > 0) {
          centers.row(k) = sums.row(k) / counts[k];
        } else {
          // Empty cluster: restart it at the point farthest from its center.
          Eigen::Index far = 0;
          double fd = -1.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            const double dd =
                (x.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
            if (dd > fd) {
              fd = dd;
              far = i;
            }
          }
          centers.row(k) = x.row(far);
        }
      }
    }

    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      inertia += (x.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_centers = centers;
    }
  }
  return best_centers;
}

inline Matrix covariance_floor(Matrix s) {
  const double f = 1e-6 * s.trace() / static_cast<double>(s.rows()) + 1e-10;
  s.diagonal().array() += f;
  return s;
}

}  // namespace detail

// Baum-Welch EM for a Gaussian-emission HMM on one or more sequences.
// Responsibilities are pooled across sequences. The start distribution
// begins at the stationary point of the initial transition estimate and is
// then updated as a free EM parameter; re-deriving it from the transition
// inside the loop sounds attractive (the models are consumed as stationary
// processes) but demonstrably breaks the EM monotonicity guarantee at the
// 1e-3 level, so the free parameter is kept during fitting and dropped from
// the returned model, whose stationary law comes from the learned
// transition. Stops when the per-observation log-likelihood gain drops below
// tol. Deterministic per seed; sequences are processed in input order.
inline BaumWelchResult baum_welch(const std::vector<Sequence>& sequences, int m,
                                  std::uint64_t seed, const BaumWelchOptions& opts = {}) {
  if (m < 1) throw data_error("baum_welch: need at least one state");
  if (sequences.empty()) throw data_error("baum_welch: no sequences");
  if (opts.max_iter < 1) throw data_error("baum_welch: max_iter must be positive");
  if (opts.kmeans_restarts < 1) throw data_error("baum_welch: need at least one k-means restart");

  Eigen::Index total = 0;
  const Eigen::Index d = sequences.front().observations.cols();
  for (const Sequence& s : sequences) {
    if (s.observations.rows() < 1) throw data_error("baum_welch: empty sequence");
    if (s.observations.cols() != d)
      throw data_error("baum_welch: sequences have mixed dimensions");
    if (!s.observations.allFinite())
      throw data_error("baum_welch: non-finite observations");
    total += s.observations.rows();
  }
  if (total < m)
    throw data_error("baum_welch: " + std::to_string(total) + " observations for " +
                     std::to_string(m) + " states");

  Matrix pooled(total, d);
  {
    Eigen::Index at = 0;
    for (const Sequence& s : sequences) {
      pooled.middleRows(at, s.observations.rows()) = s.observations;
      at += s.observations.rows();
    }
  }

  // --- initialization ---
  const Matrix centers = detail::kmeans_centers(pooled, m, derive_seed(seed, 0),
                                                opts.kmeans_restarts);
  Matrix pooled_cov;
  {
    const Eigen::RowVectorXd mean = pooled.colwise().mean();
    const Matrix centered = pooled.rowwise() - mean;
    pooled_cov = centered.transpose() * centered / std::max<double>(1.0, total - 1.0);
    pooled_cov = detail::covariance_floor(0.5 * (pooled_cov + pooled_cov.transpose()));
  }
  std::vector<Vector> means(static_cast<size_t>(m));
  std::vector<Matrix> covs(static_cast<size_t>(m));
  {
    // Per-cluster covariance around the chosen centers.
    std::vector<int> assign(static_cast<size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) {
      int arg = 0;
      double bestd = (pooled.row(i) - centers.row(0)).squaredNorm();
      for (int k = 1; k < m; ++k) {
        const double dd = (pooled.row(i) - centers.row(k)).squaredNorm();
        if (dd < bestd) {
          bestd = dd;
          arg = k;
        }
      }
      assign[static_cast<size_t>(i)] = arg;
    }
    for (int k = 0; k < m; ++k) {
      means[static_cast<size_t>(k)] = centers.row(k).transpose();
      Matrix scatter = Matrix::Zero(d, d);
      int count = 0;
      for (Eigen::Index i = 0; i < total; ++i) {
        if (assign[static_cast<size_t>(i)] != k) continue;
        const Vector diff = pooled.row(i).transpose() - means[static_cast<size_t>(k)];
        scatter += diff * diff.transpose();
        ++count;
      }
      covs[static_cast<size_t>(k)] =
          count >= 2 ? detail::covariance_floor(0.5 * (scatter + scatter.transpose()) / count)
                     : pooled_cov;
    }
  }
  Matrix transition(m, m);
  {
    // Uniform rows with Dirichlet(1) jitter to break the symmetric start.
    Rng rng(derive_seed(seed, 1));
    const Vector ones = Vector::Ones(m);
    for (int i = 0; i < m; ++i) {
      const Vector jitter = rng.dirichlet(ones);
      transition.row(i) =
          (0.9 * Vector::Constant(m, 1.0 / m) + 0.1 * jitter).transpose();
    }
  }

  BaumWelchResult result{GmmHmm(transition, [&] {
                           std::vector<Gaussian> cs;
                           for (int k = 0; k < m; ++k)
                             cs.emplace_back(means[static_cast<size_t>(k)],
                                             covs[static_cast<size_t>(k)]);
                           return cs;
                         }()),
                         {},
                         false,
                         {}};

  std::vector<Gaussian> comps = result.model.components();
  double prev_ll = -std::numeric_limits<double>::infinity();
  Vector start;
  try {
    start = stationary_distribution(transition);
  } catch (const numerical_error&) {
    start = Vector::Constant(m, 1.0 / m);
  }

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    std::vector<LogPdfCache> pdfs;
    pdfs.reserve(static_cast<size_t>(m));
    for (const Gaussian& g : comps) pdfs.emplace_back(g);

    double ll = 0.0;
    Matrix trans_num = Matrix::Zero(m, m);
    Vector gamma_sum = Vector::Zero(m);
    Vector start_num = Vector::Zero(m);
    Matrix wx = Matrix::Zero(m, d);
    std::vector<Matrix> wxx(static_cast<size_t>(m), Matrix::Zero(d, d));
    // Accumulate second moments around the current means to dodge the
    // cancellation in E[xx'] - mu mu'.
    const std::vector<Vector> shift = means;

    for (const Sequence& s : sequences) {
      const Eigen::Index len = s.observations.rows();
      const detail::EmissionTable e = detail::emission_table(pdfs, s.observations);
      const detail::ForwardResult fwd = detail::scaled_forward(transition, start, e);
      ll += fwd.loglik;

      // Scaled backward pass sharing the forward normalizers.
      Matrix beta(m, len);
      beta.col(len - 1).setOnes();
      for (Eigen::Index tstep = len - 2; tstep >= 0; --tstep) {
        beta.col(tstep) =
            transition * beta.col(tstep + 1).cwiseProduct(e.bhat.col(tstep + 1)) /
            fwd.scale[tstep + 1];
      }

      for (Eigen::Index tstep = 0; tstep < len; ++tstep) {
        Vector gamma = fwd.alpha.col(tstep).cwiseProduct(beta.col(tstep));
        const double gs = gamma.sum();
        if (gs > 0.0) gamma /= gs;
        if (tstep == 0) start_num += gamma;
        gamma_sum += gamma;
        const Vector obs = s.observations.row(tstep).transpose();
        for (int k = 0; k < m; ++k) {
          wx.row(k) += gamma[k] * s.observations.row(tstep);
          const Vector diff = obs - shift[static_cast<size_t>(k)];
          wxx[static_cast<size_t>(k)] += gamma[k] * (diff * diff.transpose());
        }
        if (tstep + 1 < len) {
          Matrix xi = fwd.alpha.col(tstep) *
                      (beta.col(tstep + 1).cwiseProduct(e.bhat.col(tstep + 1))).transpose();
          xi = xi.cwiseProduct(transition) / fwd.scale[tstep + 1];
          const double xs = xi.sum();
          if (xs > 0.0) xi /= xs;
          trans_num += xi;
        }
      }
    }

    result.loglik_trace.push_back(ll);

    // --- M-step ---
    if (start_num.sum() > 0.0) start = start_num / start_num.sum();
    for (int i = 0; i < m; ++i) {
      const double rowsum = trans_num.row(i).sum();
      if (rowsum > 0.0) {
        transition.row(i) = trans_num.row(i) / rowsum;
      } else {
        transition.row(i).setConstant(1.0 / m);
        result.warnings.push_back("iteration " + std::to_string(iter) + ": state " +
                                  std::to_string(i) +
                                  " has no outgoing mass; transition row reset to uniform");
      }
    }
    for (int k = 0; k < m; ++k) {
      const double w = gamma_sum[k];
      if (w > 1e-10) {
        const Vector mu = wx.row(k).transpose() / w;
        const Vector dm = mu - shift[static_cast<size_t>(k)];
        Matrix cov = wxx[static_cast<size_t>(k)] / w - dm * dm.transpose();
        cov = detail::covariance_floor(0.5 * (cov + cov.transpose()));
        // Rounding can still leave a slightly indefinite scatter; clamp
        // through the Gaussian constructor's spectral check by flooring any
        // negative eigenvalues here.
        Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
        if (es.eigenvalues().minCoeff() < 0.0)
          cov = detail::symmetrize(es.eigenvectors() *
                                   es.eigenvalues().cwiseMax(1e-12).asDiagonal() *
                                   es.eigenvectors().transpose());
        means[static_cast<size_t>(k)] = mu;
        covs[static_cast<size_t>(k)] = cov;
      } else {
        const double f =
            1e-6 * covs[static_cast<size_t>(k)].trace() / static_cast<double>(d) + 1e-10;
        covs[static_cast<size_t>(k)] = f * Matrix::Identity(d, d);
        result.warnings.push_back("iteration " + std::to_string(iter) + ": state " +
                                  std::to_string(k) +
                                  " collapsed to zero responsibility; covariance reset "
                                  "to the floor");
      }
    }
    comps.clear();
    for (int k = 0; k < m; ++k)
      comps.emplace_back(means[static_cast<size_t>(k)], covs[static_cast<size_t>(k)]);

    if (iter > 0 && (ll - prev_ll) / static_cast<double>(total) < opts.tol) {
      result.converged = true;
      break;
    }
    prev_ll = ll;
  }

  result.model = GmmHmm(transition, comps);
  return result;
}

}  // namespace agw
