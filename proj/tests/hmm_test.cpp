#include "agw/hmm.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "support/path_enum.hpp"
#include "support/random_models.hpp"

namespace {

using agw::derive_seed;
using agw::Gaussian;
using agw::GmmHmm;
using agw::Matrix;
using agw::Sequence;
using agw::Vector;

GmmHmm two_state(double gap, const Matrix& t) {
  return GmmHmm(t, {Gaussian(Vector::Zero(2), Matrix::Identity(2, 2)),
                    Gaussian(Vector::Constant(2, gap), Matrix::Identity(2, 2))});
}

Matrix default_transition() {
  Matrix t(2, 2);
  t << 0.8, 0.2, 0.2, 0.8;
  return t;
}

TEST(Stationary, KnownValueAndResidual) {
  Matrix t(2, 2);
  t << 0.9, 0.1, 0.5, 0.5;
  const Vector pi = agw::stationary_distribution(t);
  EXPECT_NEAR(pi[0], 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(pi[1], 1.0 / 6.0, 1e-12);

  agw::Rng rng(307);
  for (int rep = 0; rep < 50; ++rep) {
    const int m = 1 + static_cast<int>(rng.uniform() * 6.0);
    const Matrix tr = agw::test::random_transition(rng, m);
    const Vector p = agw::stationary_distribution(tr);
    ASSERT_NEAR(p.sum(), 1.0, 1e-12);
    ASSERT_GE(p.minCoeff(), 0.0);
    ASSERT_LE((p.transpose() * tr - p.transpose()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Stationary, RejectsReduciblePeriodicAndMalformed) {
  Matrix reducible(2, 2);
  reducible << 1.0, 0.0, 0.0, 1.0;
  EXPECT_THROW(agw::stationary_distribution(reducible), agw::numerical_error);

  Matrix periodic(2, 2);
  periodic << 0.0, 1.0, 1.0, 0.0;
  EXPECT_THROW(agw::stationary_distribution(periodic), agw::numerical_error);

  Matrix rowsum(2, 2);
  rowsum << 0.5, 0.4, 0.3, 0.7;
  EXPECT_THROW(agw::stationary_distribution(rowsum), agw::data_error);

  Matrix negative(2, 2);
  negative << 1.2, -0.2, 0.3, 0.7;
  EXPECT_THROW(agw::stationary_distribution(negative), agw::data_error);

  EXPECT_EQ(agw::stationary_distribution(Matrix::Ones(1, 1))[0], 1.0);
}

TEST(GmmHmmType, ConstructionAndAccessors) {
  const GmmHmm h = two_state(3.0, default_transition());
  EXPECT_EQ(h.states(), 2);
  EXPECT_EQ(h.dim(), 2);
  EXPECT_NEAR(h.stationary()[0], 0.5, 1e-12);
  EXPECT_THROW(h.component(2), agw::data_error);

  EXPECT_THROW(GmmHmm(default_transition(),
                      {Gaussian(Vector::Zero(2), Matrix::Identity(2, 2))}),
               agw::data_error);
  EXPECT_THROW(GmmHmm(default_transition(),
                      {Gaussian(Vector::Zero(2), Matrix::Identity(2, 2)),
                       Gaussian(Vector::Zero(3), Matrix::Identity(3, 3))}),
               agw::data_error);
}

TEST(DerivedMixtures, MarginalAndConditional) {
  Matrix t(2, 2);
  t << 0.9, 0.1, 0.5, 0.5;
  const GmmHmm h = two_state(4.0, t);
  const agw::GaussianMixture marg = agw::marginal_gmm(h);
  EXPECT_LT((marg.weights() - h.stationary()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(marg.size(), 2);

  const agw::GaussianMixture cond = agw::conditional_gmm(h, 0);
  EXPECT_NEAR(cond.weights()[0], 0.9, 1e-15);
  EXPECT_NEAR(cond.weights()[1], 0.1, 1e-15);
  EXPECT_THROW(agw::conditional_gmm(h, 5), agw::data_error);
}

TEST(SampleHmm, OneStateGivesIidGaussian) {
  Vector mu(2);
  mu << 1.0, -1.0;
  Matrix cov(2, 2);
  cov << 1.5, 0.4, 0.4, 0.8;
  const GmmHmm h(Matrix::Ones(1, 1), {Gaussian(mu, cov)});
  const Sequence s = agw::sample_hmm(h, 20000, 42);
  EXPECT_EQ(s.observations.rows(), 20000);
  for (int st : s.states) EXPECT_EQ(st, 0);
  const Vector mean = s.observations.colwise().mean();
  EXPECT_LT((mean - mu).cwiseAbs().maxCoeff(), 0.05);
  const Matrix centered = s.observations.rowwise() - mean.transpose();
  const Matrix sc = centered.transpose() * centered / (s.observations.rows() - 1.0);
  EXPECT_LT((sc - cov).cwiseAbs().maxCoeff(), 0.05);
}

TEST(SampleHmm, StateFrequenciesTrackStationary) {
  Matrix t(2, 2);
  t << 0.9, 0.1, 0.5, 0.5;
  const GmmHmm h = two_state(3.0, t);
  const Sequence s = agw::sample_hmm(h, 100000, 4242);
  double freq0 = 0.0;
  for (int st : s.states)
    if (st == 0) freq0 += 1.0;
  freq0 /= static_cast<double>(s.states.size());
  // Multinomial 3-sigma band, widened for the chain's autocorrelation.
  const double pi0 = 5.0 / 6.0;
  const double se = std::sqrt(pi0 * (1.0 - pi0) / 100000.0);
  EXPECT_NEAR(freq0, pi0, 3.0 * 2.0 * se);
}

TEST(SampleHmm, DeterministicPerSeed) {
  const GmmHmm h = two_state(2.0, default_transition());
  const Sequence a = agw::sample_hmm(h, 500, 9);
  const Sequence b = agw::sample_hmm(h, 500, 9);
  EXPECT_TRUE(a.observations == b.observations);
  EXPECT_EQ(a.states, b.states);
  const Sequence c = agw::sample_hmm(h, 500, 10);
  EXPECT_FALSE(a.observations == c.observations);
  EXPECT_THROW(agw::sample_hmm(h, 0, 1), agw::data_error);
}

TEST(Forward, MatchesPathEnumeration) {
  agw::Rng rng(311);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 1 + static_cast<int>(rng.uniform() * 3.0);
    const int len = 1 + static_cast<int>(rng.uniform() * 8.0);
    const Matrix tr = agw::test::random_transition(rng, m);
    std::vector<Gaussian> comps;
    for (int k = 0; k < m; ++k) comps.push_back(agw::test::random_gaussian(rng, 2, 2.0));
    const GmmHmm h(tr, comps);
    const Sequence s = agw::sample_hmm(h, len, derive_seed(1000, rep));
    const double fast = agw::forward_log_likelihood(h, s);
    const double slow = agw::test::path_enum_log_likelihood(h, s.observations);
    ASSERT_NEAR(fast, slow, 1e-8 * (1.0 + std::abs(slow)))
        << "m=" << m << " len=" << len << " rep=" << rep;
  }
}

TEST(Forward, OneStateReducesToIidLogPdf) {
  Vector mu(2);
  mu << 0.5, 0.5;
  const Gaussian g(mu, Matrix::Identity(2, 2));
  const GmmHmm h(Matrix::Ones(1, 1), {g});
  const Sequence s = agw::sample_hmm(h, 50, 77);
  double direct = 0.0;
  for (int t = 0; t < 50; ++t) direct += agw::log_pdf(g, s.observations.row(t).transpose());
  EXPECT_NEAR(agw::forward_log_likelihood(h, s), direct, 1e-9);
}

TEST(Forward, AppendingObservationLowersLikelihoodWhenDensitiesBelowOne) {
  const GmmHmm h = two_state(2.0, default_transition());  // unit covs: densities < 1
  const Sequence s = agw::sample_hmm(h, 30, 5);
  double prev = 0.0;
  for (int len = 1; len <= 30; ++len) {
    Sequence prefix;
    prefix.observations = s.observations.topRows(len);
    const double ll = agw::forward_log_likelihood(h, prefix);
    if (len > 1) EXPECT_LT(ll, prev);
    prev = ll;
  }
}

TEST(Forward, FiniteForOutlandishObservations) {
  const GmmHmm h = two_state(2.0, default_transition());
  Sequence s;
  s.observations = Matrix::Constant(5, 2, 1e6);
  const double ll = agw::forward_log_likelihood(h, s);
  EXPECT_TRUE(std::isfinite(ll));

  Sequence bad;
  bad.observations = Matrix::Constant(5, 3, 0.0);
  EXPECT_THROW(agw::forward_log_likelihood(h, bad), agw::data_error);
  Sequence empty;
  empty.observations = Matrix(0, 2);
  EXPECT_THROW(agw::forward_log_likelihood(h, empty), agw::data_error);
}

TEST(BaumWelch, OneStateRecoversMle) {
  Vector mu(2);
  mu << 2.0, -1.0;
  Matrix cov(2, 2);
  cov << 1.0, 0.3, 0.3, 2.0;
  const GmmHmm gen(Matrix::Ones(1, 1), {Gaussian(mu, cov)});
  const Sequence s = agw::sample_hmm(gen, 10000, 31415);
  const agw::BaumWelchResult fit = agw::baum_welch({s}, 1, 1);
  // 3-sigma standard-error bounds for the mean; covariance gets a looser gate.
  const double se = std::sqrt(2.0 / 10000.0);
  EXPECT_LT((fit.model.component(0).mean() - mu).cwiseAbs().maxCoeff(), 3.0 * se);
  EXPECT_LT((fit.model.component(0).cov() - cov).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_TRUE(fit.converged);
}

TEST(BaumWelch, RecoversSeparatedTwoStateMeans) {
  // Generator shaped like the synthetic retrieval setup at a well-separated
  // offset: means on the diagonal at 2.6 and 5.6, identity covariance.
  Matrix t = default_transition();
  const GmmHmm gen(t, {Gaussian(Vector::Constant(2, 2.6), Matrix::Identity(2, 2)),
                       Gaussian(Vector::Constant(2, 5.6), Matrix::Identity(2, 2))});
  std::vector<Sequence> seqs;
  for (int k = 0; k < 10; ++k) seqs.push_back(agw::sample_hmm(gen, 100, derive_seed(99, k)));
  const agw::BaumWelchResult fit = agw::baum_welch(seqs, 2, 7);

  const Vector a = fit.model.component(0).mean();
  const Vector b = fit.model.component(1).mean();
  const Vector lo = Vector::Constant(2, 2.6);
  const Vector hi = Vector::Constant(2, 5.6);
  const double direct = std::max((a - lo).cwiseAbs().maxCoeff(), (b - hi).cwiseAbs().maxCoeff());
  const double swapped = std::max((a - hi).cwiseAbs().maxCoeff(), (b - lo).cwiseAbs().maxCoeff());
  EXPECT_LT(std::min(direct, swapped), 0.5);
}

TEST(BaumWelch, TraceNondecreasingAcrossSeeds) {
  const GmmHmm gen = two_state(3.0, default_transition());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<Sequence> seqs;
    for (int k = 0; k < 3; ++k)
      seqs.push_back(agw::sample_hmm(gen, 80, derive_seed(seed, 500 + k)));
    const agw::BaumWelchResult fit = agw::baum_welch(seqs, 2, seed);
    for (size_t i = 1; i < fit.loglik_trace.size(); ++i)
      ASSERT_GE(fit.loglik_trace[i],
                fit.loglik_trace[i - 1] - 1e-8 * (1.0 + std::abs(fit.loglik_trace[i - 1])))
          << "seed " << seed << " step " << i;
  }
}

TEST(BaumWelch, DeterministicPerSeed) {
  const GmmHmm gen = two_state(3.0, default_transition());
  const Sequence s = agw::sample_hmm(gen, 120, 8);
  const agw::BaumWelchResult f1 = agw::baum_welch({s}, 2, 3);
  const agw::BaumWelchResult f2 = agw::baum_welch({s}, 2, 3);
  EXPECT_TRUE(f1.model.transition() == f2.model.transition());
  EXPECT_TRUE(f1.model.component(0).mean() == f2.model.component(0).mean());
  EXPECT_TRUE(f1.model.component(1).cov() == f2.model.component(1).cov());
  EXPECT_EQ(f1.loglik_trace, f2.loglik_trace);
}

TEST(BaumWelch, InputValidation) {
  const GmmHmm gen = two_state(3.0, default_transition());
  const Sequence s = agw::sample_hmm(gen, 10, 8);
  EXPECT_THROW(agw::baum_welch({}, 2, 1), agw::data_error);
  EXPECT_THROW(agw::baum_welch({s}, 0, 1), agw::data_error);
  EXPECT_THROW(agw::baum_welch({s}, 11, 1), agw::data_error);  // more states than points
  Sequence other = s;
  other.observations = Matrix::Zero(4, 3);
  EXPECT_THROW(agw::baum_welch({s, other}, 2, 1), agw::data_error);
}

}  // namespace
