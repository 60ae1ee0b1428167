#include "agw/gaussian.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "support/random_models.hpp"

namespace {

using agw::Gaussian;
using agw::Matrix;
using agw::Vector;

Gaussian std_normal(int d) {
  return Gaussian(Vector::Zero(d), Matrix::Identity(d, d));
}

// Series oracle for the symmetric matrix exponential, independent of the
// eigendecomposition route used by the library.
Matrix expm_series(const Matrix& s, int terms = 40) {
  Matrix acc = Matrix::Identity(s.rows(), s.cols());
  Matrix term = Matrix::Identity(s.rows(), s.cols());
  for (int k = 1; k <= terms; ++k) {
    term = (term * s / static_cast<double>(k)).eval();
    acc += term;
  }
  return acc;
}

TEST(Gaussian, ConstructionValidation) {
  Vector mu = Vector::Zero(2);
  Matrix bad(2, 3);
  bad.setZero();
  EXPECT_THROW(Gaussian(mu, bad), agw::data_error);

  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.2, 1.0;
  EXPECT_THROW(Gaussian(mu, asym), agw::data_error);

  Matrix npd(2, 2);
  npd << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  EXPECT_THROW(Gaussian(mu, npd), agw::numerical_error);

  Vector nan_mu(2);
  nan_mu << 0.0, std::nan("");
  EXPECT_THROW(Gaussian(nan_mu, Matrix::Identity(2, 2)), agw::data_error);
}

TEST(Gaussian, ClampsEigenvalueNoiseButKeepsCleanInput) {
  // Slightly indefinite within tolerance: accepted, spectrum clamped.
  Matrix v(2, 2);
  v << 1.0, 1.0, 1.0, -1.0;
  v /= std::sqrt(2.0);
  Vector lam(2);
  lam << 1.0, -1e-11;
  Matrix noisy = 0.5 * (v * lam.asDiagonal() * v.transpose() +
                        (v * lam.asDiagonal() * v.transpose()).transpose());
  Gaussian g(Vector::Zero(2), noisy);
  Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov());
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-15);

  // Clean PSD input is stored bit for bit.
  Matrix clean(2, 2);
  clean << 2.0, 0.3, 0.3, 1.0;
  Gaussian h(Vector::Zero(2), clean);
  EXPECT_TRUE(h.cov() == clean);

  // Construction is idempotent: feeding a stored covariance back in does not
  // change it.
  Gaussian g2(g.mean(), g.cov());
  EXPECT_TRUE(g2.cov() == g.cov());
}

TEST(Gaussian, SingularCovarianceIsAccepted) {
  Matrix rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  EXPECT_NO_THROW(Gaussian(Vector::Zero(2), rank1));
  EXPECT_NO_THROW(Gaussian(Vector::Zero(2), Matrix::Zero(2, 2)));
}

TEST(SqrtmPsd, SquaresBackAndRejectsIndefinite) {
  agw::Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform() * 5.0);
    Matrix a(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    Matrix s = a * a.transpose();
    Matrix r = agw::sqrtm_psd(s);
    EXPECT_LT((r * r - s).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + s.cwiseAbs().maxCoeff()));
    EXPECT_LT((r - r.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
  Matrix npd(2, 2);
  npd << 0.0, 1.0, 1.0, 0.0;
  EXPECT_THROW(agw::sqrtm_psd(npd), agw::numerical_error);
  Matrix asym(2, 2);
  asym << 1.0, 0.2, -0.2, 1.0;
  EXPECT_THROW(agw::sqrtm_psd(asym), agw::data_error);
}

TEST(SymExpm, MatchesSeriesOracle) {
  agw::Rng rng(37);
  for (int rep = 0; rep < 30; ++rep) {
    const int d = 2 + static_cast<int>(rng.uniform() * 3.0);
    Matrix a(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    Matrix s = 0.5 * (a + a.transpose());  // indefinite symmetric, norm O(1)
    Matrix e = agw::sym_expm(s);
    Matrix ref = expm_series(s);
    EXPECT_LT((e - ref).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + ref.cwiseAbs().maxCoeff()));
  }
}

TEST(W2, KnownValues) {
  // Equal isotropic covariances: distance is the mean gap.
  Vector mu(2);
  mu << 3.0, 4.0;
  EXPECT_NEAR(agw::w2_gaussian(std_normal(2), Gaussian(mu, Matrix::Identity(2, 2))),
              5.0, 1e-10);

  // Commuting diagonal case: squared distance sums (sqrt differences)^2.
  Matrix d1 = Matrix::Zero(2, 2);
  d1.diagonal() << 1.0, 4.0;
  Matrix d2 = Matrix::Zero(2, 2);
  d2.diagonal() << 4.0, 1.0;
  EXPECT_NEAR(agw::w2_gaussian(Gaussian(Vector::Zero(2), d1), Gaussian(Vector::Zero(2), d2)),
              std::sqrt(2.0), 1e-10);

  // One-dimensional: |mu1-mu2|^2 + (s1-s2)^2.
  Vector m1(1), m2(1);
  m1 << 0.0;
  m2 << 3.0;
  Matrix v1(1, 1), v2(1, 1);
  v1 << 4.0;
  v2 << 1.0;
  EXPECT_NEAR(agw::w2_gaussian(Gaussian(m1, v1), Gaussian(m2, v2)),
              std::sqrt(9.0 + 1.0), 1e-10);
}

TEST(W2, IdenticalArgumentsGiveExactZero) {
  agw::Rng rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    const Gaussian g = agw::test::random_gaussian(rng, 3);
    EXPECT_EQ(agw::w2_gaussian(g, g), 0.0);
    const Gaussian copy(g.mean(), g.cov());
    EXPECT_EQ(agw::w2_gaussian(g, copy), 0.0);
  }
}

TEST(W2, SymmetricAndNonnegative) {
  agw::Rng rng(43);
  for (int rep = 0; rep < 100; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform() * 4.0);
    const Gaussian a = agw::test::random_gaussian(rng, d);
    const Gaussian b = agw::test::random_gaussian(rng, d);
    const double ab = agw::w2_gaussian(a, b);
    const double ba = agw::w2_gaussian(b, a);
    ASSERT_GE(ab, 0.0);
    ASSERT_NEAR(ab, ba, 1e-10 * (1.0 + ab));
  }
}

TEST(W2, HandlesSingularCovariances) {
  Matrix rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  const Gaussian a(Vector::Zero(2), rank1);
  const Gaussian b = std_normal(2);
  const double w = agw::w2_gaussian(a, b);
  EXPECT_TRUE(std::isfinite(w));
  EXPECT_GT(w, 0.0);
  // Point mass vs point mass: plain Euclidean distance.
  Vector m2(2);
  m2 << 1.0, 1.0;
  EXPECT_NEAR(agw::w2_gaussian(Gaussian(Vector::Zero(2), Matrix::Zero(2, 2)),
                               Gaussian(m2, Matrix::Zero(2, 2))),
              std::sqrt(2.0), 1e-12);
}

TEST(W2, DimensionMismatchRejected) {
  EXPECT_THROW(agw::w2_gaussian(std_normal(2), std_normal(3)), agw::data_error);
}

TEST(Kl, KnownValues) {
  EXPECT_EQ(agw::kl_gaussian(std_normal(2), std_normal(2)), 0.0);

  // KL(N(0,1) || N(1,1)) = 1/2.
  Vector m0(1), m1(1);
  m0 << 0.0;
  m1 << 1.0;
  Matrix one(1, 1);
  one << 1.0;
  EXPECT_NEAR(agw::kl_gaussian(Gaussian(m0, one), Gaussian(m1, one)), 0.5, 1e-12);

  // KL(N(0,I2) || N(0,4 I2)) = (tr/4 - 2 + ln 16)/2.
  const double expected = 0.5 * (0.5 - 2.0 + std::log(16.0));
  EXPECT_NEAR(agw::kl_gaussian(std_normal(2),
                               Gaussian(Vector::Zero(2), 4.0 * Matrix::Identity(2, 2))),
              expected, 1e-12);
}

TEST(Kl, SingularHandling) {
  Matrix rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  const Gaussian sing(Vector::Zero(2), rank1);
  EXPECT_THROW(agw::kl_gaussian(std_normal(2), sing), agw::numerical_error);
  EXPECT_TRUE(std::isinf(agw::kl_gaussian(sing, std_normal(2))));
}

TEST(Kl, NonnegativeOnRandomPairs) {
  agw::Rng rng(47);
  for (int rep = 0; rep < 100; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform() * 3.0);
    const Gaussian a = agw::test::random_gaussian(rng, d);
    const Gaussian b = agw::test::random_gaussian(rng, d);
    ASSERT_GE(agw::kl_gaussian(a, b), 0.0);
  }
}

TEST(SampleGaussian, MomentsAndDeterminism) {
  Vector mu(2);
  mu << 1.0, -2.0;
  Matrix cov(2, 2);
  cov << 2.0, 0.6, 0.6, 1.0;
  const Gaussian g(mu, cov);
  const Matrix x = agw::sample_gaussian(g, 20000, 123);
  ASSERT_EQ(x.rows(), 20000);
  ASSERT_EQ(x.cols(), 2);
  const Vector mean = x.colwise().mean();
  EXPECT_LT((mean - mu).cwiseAbs().maxCoeff(), 0.05);
  const Matrix centered = x.rowwise() - mean.transpose();
  const Matrix sample_cov = centered.transpose() * centered / (x.rows() - 1.0);
  EXPECT_LT((sample_cov - cov).cwiseAbs().maxCoeff(), 0.06);

  const Matrix y = agw::sample_gaussian(g, 20000, 123);
  EXPECT_TRUE(x == y);
  const Matrix z = agw::sample_gaussian(g, 20000, 124);
  EXPECT_FALSE(x == z);
}

TEST(SampleGaussian, SingularCovarianceStaysOnSupport) {
  Matrix rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  const Gaussian g(Vector::Zero(2), rank1);
  const Matrix x = agw::sample_gaussian(g, 500, 7);
  // Support is the line x0 == x1.
  EXPECT_LT((x.col(0) - x.col(1)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LogPdf, KnownValuesAndQuadrature) {
  Vector zero1 = Vector::Zero(1);
  EXPECT_NEAR(agw::log_pdf(std_normal(1), zero1), -0.9189385332046727, 1e-9);

  Vector point(2);
  point << 1.0, 1.0;
  EXPECT_NEAR(agw::log_pdf(std_normal(2), point),
              -std::log(2.0 * M_PI) - 1.0, 1e-9);

  // Simpson quadrature of exp(log_pdf) for a 1-D Gaussian integrates to 1.
  Vector mu(1);
  mu << 0.7;
  Matrix var(1, 1);
  var << 2.3;
  const Gaussian g(mu, var);
  agw::LogPdfCache pdf(g);
  const double sd = std::sqrt(var(0, 0));
  const double lo = mu[0] - 10.0 * sd;
  const double hi = mu[0] + 10.0 * sd;
  const int n = 2000;  // even
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    Vector x(1);
    x << lo + i * h;
    const double f = std::exp(pdf(x));
    acc += f * (i == 0 || i == n ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0));
  }
  acc *= h / 3.0;
  EXPECT_NEAR(acc, 1.0, 1e-8);
}

TEST(LogPdf, FiniteForSingularCovariance) {
  Matrix rank1(2, 2);
  rank1 << 1.0, 1.0, 1.0, 1.0;
  const Gaussian g(Vector::Zero(2), rank1);
  Vector on(2), off(2);
  on << 1.0, 1.0;
  off << 1.0, -1.0;
  EXPECT_TRUE(std::isfinite(agw::log_pdf(g, on)));
  EXPECT_TRUE(std::isfinite(agw::log_pdf(g, off)));
  EXPECT_GT(agw::log_pdf(g, on), agw::log_pdf(g, off));

  const Gaussian point_mass(Vector::Zero(2), Matrix::Zero(2, 2));
  EXPECT_TRUE(std::isfinite(agw::log_pdf(point_mass, on)));
}

TEST(LogPdf, CacheMatchesFreeFunction) {
  agw::Rng rng(53);
  const Gaussian g = agw::test::random_gaussian(rng, 3);
  agw::LogPdfCache cache(g);
  for (int i = 0; i < 20; ++i) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x[j] = 3.0 * rng.normal();
    EXPECT_EQ(cache(x), agw::log_pdf(g, x));
  }
}

}  // namespace
