#include "agw/experiments.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "agw/gaussian.hpp"

namespace {

using agw::data_error;
using agw::DistanceMethod;
using agw::ExperimentResult;
using agw::Gaussian;
using agw::GmmHmm;
using agw::Matrix;
using agw::PerturbationConfig;
using agw::PerturbationKind;
using agw::ToyRow;
using agw::ToyVarying;
using agw::Vector;

PerturbationConfig make_config(PerturbationKind kind, double delta,
                               std::uint64_t seed) {
  PerturbationConfig cfg;
  cfg.kind = kind;
  cfg.delta = delta;
  cfg.master_seed = seed;
  return cfg;
}

TEST(SynthModelsTest, MuLadderMatchesDesign) {
  const std::vector<GmmHmm> ms = agw::synth_models(make_config(PerturbationKind::Mu, 0.2, 1));
  ASSERT_EQ(ms.size(), 5u);
  EXPECT_DOUBLE_EQ(ms[0].component(0).mean()[0], 2.2);
  EXPECT_DOUBLE_EQ(ms[0].component(0).mean()[1], 2.2);
  EXPECT_DOUBLE_EQ(ms[0].component(1).mean()[0], 5.2);
  for (size_t i = 0; i < ms.size(); ++i) {
    const double shift = 0.2 * static_cast<double>(i + 1);
    EXPECT_DOUBLE_EQ(ms[i].component(0).mean()[0], 2.0 + shift);
    EXPECT_DOUBLE_EQ(ms[i].component(1).mean()[1], 5.0 + shift);
    // Only the means move: covariances and transitions are shared bitwise.
    EXPECT_TRUE(ms[i].component(0).cov() == Matrix::Identity(2, 2));
    EXPECT_TRUE(ms[i].component(1).cov() == Matrix::Identity(2, 2));
    EXPECT_TRUE(ms[i].transition() == ms[0].transition());
  }
  EXPECT_DOUBLE_EQ(ms[0].transition()(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(ms[0].transition()(0, 1), 0.2);
}

TEST(SynthModelsTest, SigmaCovariancesArePowersOfTheFirst) {
  const std::vector<GmmHmm> ms =
      agw::synth_models(make_config(PerturbationKind::Sigma, 0.3, 7));
  ASSERT_EQ(ms.size(), 5u);
  // covariance_i = 0.2 * expm(i * delta * S), so covariance_i / 0.2 must be
  // the i-th matrix power of covariance_1 / 0.2; that checks the generator
  // without reaching into the seed stream.
  const Matrix m1 = ms[0].component(0).cov() / 0.2;
  Matrix power = m1;
  for (size_t i = 0; i < ms.size(); ++i) {
    const Matrix mi = ms[i].component(0).cov() / 0.2;
    EXPECT_LE((mi - power).cwiseAbs().maxCoeff(), 1e-10) << "model " << i;
    power = (power * m1).eval();
    // Means stay at the unperturbed values and both components share the
    // covariance.
    EXPECT_DOUBLE_EQ(ms[i].component(0).mean()[0], 2.0);
    EXPECT_DOUBLE_EQ(ms[i].component(1).mean()[0], 5.0);
    EXPECT_TRUE(ms[i].component(0).cov() == ms[i].component(1).cov());
    EXPECT_TRUE(ms[i].transition() == ms[0].transition());
    Eigen::SelfAdjointEigenSolver<Matrix> es(ms[i].component(0).cov());
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(SynthModelsTest, TransitionRowsAreBlendedDirichletDraws) {
  const double delta = 0.4;
  const std::vector<GmmHmm> ms =
      agw::synth_models(make_config(PerturbationKind::Transition, delta, 9));
  ASSERT_EQ(ms.size(), 5u);
  Matrix base(2, 2);
  base << 0.8, 0.2, 0.2, 0.8;
  for (size_t i = 0; i < ms.size(); ++i) {
    const Matrix& t = ms[i].transition();
    for (int r = 0; r < 2; ++r) {
      EXPECT_NEAR(t.row(r).sum(), 1.0, 1e-12);
      for (int c = 0; c < 2; ++c) {
        // Convex blend with the base keeps every entry inside
        // [delta * base, delta * base + (1 - delta)].
        EXPECT_GE(t(r, c), delta * base(r, c) - 1e-12);
        EXPECT_LE(t(r, c), delta * base(r, c) + (1.0 - delta) + 1e-12);
      }
    }
    EXPECT_TRUE(ms[i].component(0).cov() == Matrix::Identity(2, 2));
    EXPECT_DOUBLE_EQ(ms[i].component(0).mean()[0], 2.0);
  }
  // The draws must actually differ across models.
  EXPECT_FALSE(ms[0].transition() == ms[1].transition());
}

TEST(SynthModelsTest, DeterministicPerSeed) {
  for (PerturbationKind kind :
       {PerturbationKind::Mu, PerturbationKind::Sigma, PerturbationKind::Transition}) {
    const std::vector<GmmHmm> a = agw::synth_models(make_config(kind, 0.2, 33));
    const std::vector<GmmHmm> b = agw::synth_models(make_config(kind, 0.2, 33));
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(a[i].transition() == b[i].transition());
      for (Eigen::Index j = 0; j < a[i].states(); ++j) {
        EXPECT_TRUE(a[i].component(j).mean() == b[i].component(j).mean());
        EXPECT_TRUE(a[i].component(j).cov() == b[i].component(j).cov());
      }
    }
  }
}

TEST(SynthModelsTest, RejectsInvalidConfig) {
  PerturbationConfig cfg = make_config(PerturbationKind::Mu, 0.2, 1);
  cfg.delta = 0.0;
  EXPECT_THROW(agw::synth_models(cfg), data_error);
  cfg = make_config(PerturbationKind::Mu, 0.2, 1);
  cfg.num_models = 0;
  EXPECT_THROW(agw::synth_models(cfg), data_error);
  cfg = make_config(PerturbationKind::Mu, 0.2, 1);
  cfg.dim = 3;
  EXPECT_THROW(agw::synth_models(cfg), data_error);
  cfg = make_config(PerturbationKind::Mu, 0.2, 1);
  cfg.states = 3;
  EXPECT_THROW(agw::synth_models(cfg), data_error);
  cfg = make_config(PerturbationKind::Mu, 0.2, 1);
  cfg.sequence_length = 0;
  EXPECT_THROW(agw::synth_models(cfg), data_error);
}

TEST(PerturbationRunTest, EasyMuSettingRetrievesWell) {
  const PerturbationConfig cfg = make_config(PerturbationKind::Mu, 0.6, 21);
  const ExperimentResult res = agw::run_perturbation_experiment(
      cfg, {DistanceMethod::Maw, DistanceMethod::KlMc});
  EXPECT_TRUE(res.notes.empty());
  ASSERT_EQ(res.labels.size(), 50u);
  ASSERT_EQ(res.methods.size(), 2u);

  const agw::MethodResult& maw = res.methods[0];
  EXPECT_EQ(maw.method, DistanceMethod::Maw);
  EXPECT_EQ(maw.matrix.values.rows(), 50);
  EXPECT_EQ(maw.curve.recall.size(), 9);
  // Threshold frozen from a pilot over master seeds 21 and 1..5: the MAP at
  // this setting lands between 0.82 and 0.87 with length-100 training
  // sequences (estimation noise, not separability, is the binding factor;
  // quadrupling the sequence length pushes MAP past 0.98).
  EXPECT_GE(maw.map, 0.8);
  EXPECT_LE(maw.map, 1.0);
  ASSERT_EQ(maw.mean_to_class.size(), 5);
  // Class 0 items sit closest to their own class and the mu ladder makes
  // distances grow with class index.
  for (int c = 1; c < 5; ++c) EXPECT_GT(maw.mean_to_class[c], maw.mean_to_class[0]);
  EXPECT_GT(maw.mean_to_class[4], maw.mean_to_class[1]);

  const agw::MethodResult& kl = res.methods[1];
  EXPECT_EQ(kl.method, DistanceMethod::KlMc);
  EXPECT_GE(kl.map, 0.0);
  EXPECT_LE(kl.map, 1.0);
}

TEST(PerturbationRunTest, DeterministicPerMasterSeed) {
  PerturbationConfig cfg = make_config(PerturbationKind::Transition, 0.2, 5);
  cfg.sequences_per_model = 3;
  cfg.pilot_sequences_per_model = 2;
  cfg.sequence_length = 60;
  agw::DistanceParams params;
  params.sample_count = 150;
  const ExperimentResult r1 =
      agw::run_perturbation_experiment(cfg, {DistanceMethod::Iaw}, params);
  const ExperimentResult r2 =
      agw::run_perturbation_experiment(cfg, {DistanceMethod::Iaw}, params);
  ASSERT_EQ(r1.methods.size(), 1u);
  EXPECT_TRUE((r1.methods[0].matrix.values.array() ==
               r2.methods[0].matrix.values.array()).all());
  EXPECT_EQ(r1.methods[0].alpha, r2.methods[0].alpha);
  EXPECT_EQ(r1.methods[0].map, r2.methods[0].map);

  cfg.master_seed = 6;
  const ExperimentResult r3 =
      agw::run_perturbation_experiment(cfg, {DistanceMethod::Iaw}, params);
  EXPECT_FALSE((r1.methods[0].matrix.values.array() ==
                r3.methods[0].matrix.values.array()).all());
}

TEST(PerturbationRunTest, RejectsEmptyMethodList) {
  EXPECT_THROW(
      agw::run_perturbation_experiment(make_config(PerturbationKind::Mu, 0.2, 1), {}),
      data_error);
}

TEST(ToyGaussianTest, MeanShiftTracksClosedFormW2) {
  const std::vector<ToyRow> table = agw::toy_gaussian_experiment(ToyVarying::Mu, 17);
  ASSERT_EQ(table.size(), 10u);
  for (const ToyRow& row : table) {
    const double expected = 0.5 * row.i * std::sqrt(2.0);
    EXPECT_NEAR(row.w2_mean, expected, 0.15) << "i = " << row.i;
    EXPECT_GT(row.kl_mean, 0.0);
  }
}

TEST(ToyGaussianTest, W2EstimatesSpreadLessThanKlForLargeShifts) {
  const std::vector<ToyRow> table = agw::toy_gaussian_experiment(ToyVarying::Mu, 17);
  for (const ToyRow& row : table)
    if (row.i >= 4) EXPECT_LT(row.w2_sd, row.kl_sd) << "i = " << row.i;
}

TEST(ToyGaussianTest, SigmaVariantGrowsMonotonically) {
  const std::vector<ToyRow> table = agw::toy_gaussian_experiment(ToyVarying::Sigma, 17);
  ASSERT_EQ(table.size(), 10u);
  for (size_t k = 0; k + 1 < table.size(); ++k)
    EXPECT_LT(table[k].w2_mean, table[k + 1].w2_mean);
  for (const ToyRow& row : table) {
    EXPECT_TRUE(std::isfinite(row.w2_sd));
    EXPECT_TRUE(std::isfinite(row.kl_sd));
  }
}

TEST(ToyGaussianTest, DeterministicPerSeed) {
  const std::vector<ToyRow> a = agw::toy_gaussian_experiment(ToyVarying::Mu, 4);
  const std::vector<ToyRow> b = agw::toy_gaussian_experiment(ToyVarying::Mu, 4);
  const std::vector<ToyRow> c = agw::toy_gaussian_experiment(ToyVarying::Mu, 5);
  for (size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].w2_mean, b[k].w2_mean);
    EXPECT_EQ(a[k].kl_sd, b[k].kl_sd);
  }
  EXPECT_NE(a[0].w2_mean, c[0].w2_mean);
}

}  // namespace
