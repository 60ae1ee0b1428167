#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "agw/errors.hpp"
#include "agw/eval.hpp"
#include "agw/gaussian.hpp"
#include "agw/hmm.hpp"
#include "agw/random.hpp"

namespace agw {

enum class PerturbationKind { Mu, Sigma, Transition };

inline const char* perturbation_name(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::Mu: return "mu";
    case PerturbationKind::Sigma: return "sigma";
    case PerturbationKind::Transition: return "transition";
  }
  return "unknown";
}

// Five 2-state models on the plane that differ in exactly one parameter
// group; delta controls how far apart the five are. The pilot replicate is a
// smaller, independently seeded set of sequences used only to tune alpha.
struct PerturbationConfig {
  PerturbationKind kind = PerturbationKind::Mu;
  double delta = 0.2;
  int num_models = 5;
  int sequences_per_model = 10;
  Eigen::Index sequence_length = 100;
  int dim = 2;
  int states = 2;
  std::uint64_t master_seed = 0;
  int pilot_sequences_per_model = 4;
};

namespace detail {

inline void check_perturbation_config(const PerturbationConfig& cfg) {
  if (!(cfg.delta > 0.0) || !std::isfinite(cfg.delta))
    throw data_error("perturbation config: delta must be positive");
  if (cfg.num_models < 1 || cfg.sequences_per_model < 1 || cfg.sequence_length < 1 ||
      cfg.pilot_sequences_per_model < 1)
    throw data_error("perturbation config: counts must be positive");
  if (cfg.dim != 2 || cfg.states != 2)
    throw data_error("perturbation config: the design is fixed at 2 states in 2 dimensions");
}

inline Matrix base_transition() {
  Matrix t(2, 2);
  t << 0.8, 0.2, 0.2, 0.8;
  return t;
}

}  // namespace detail

// The five ground-truth models. All structural randomness (the shared S
// matrix for the sigma variant, the Dirichlet rows for the transition
// variant) comes from one sub-seed of the master seed, so the set is a pure
// function of the config.
inline std::vector<GmmHmm> synth_models(const PerturbationConfig& cfg) {
  detail::check_perturbation_config(cfg);
  const Matrix t0 = detail::base_transition();
  const Matrix eye = Matrix::Identity(2, 2);
  Rng rng(derive_seed(cfg.master_seed, 0));

  // Drawn up front so the stream layout does not depend on the loop below.
  Matrix sigma_s(2, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) sigma_s(r, c) = rng.uniform();
  sigma_s = 0.5 * (sigma_s + sigma_s.transpose()).eval();

  std::vector<GmmHmm> models;
  models.reserve(static_cast<size_t>(cfg.num_models));
  for (int i = 1; i <= cfg.num_models; ++i) {
    Vector mu1 = Vector::Constant(2, 2.0);
    Vector mu2 = Vector::Constant(2, 5.0);
    Matrix cov = eye;
    Matrix t = t0;
    switch (cfg.kind) {
      case PerturbationKind::Mu:
        mu1.array() += i * cfg.delta;
        mu2.array() += i * cfg.delta;
        break;
      case PerturbationKind::Sigma:
        cov = 0.2 * sym_expm((i * cfg.delta) * sigma_s);
        break;
      case PerturbationKind::Transition: {
        Matrix ti(2, 2);
        for (int j = 0; j < 2; ++j)
          ti.row(j) = rng.dirichlet(10.0 * t0.row(j).transpose()).transpose();
        t = cfg.delta * t0 + (1.0 - cfg.delta) * ti;
        break;
      }
    }
    models.emplace_back(std::move(t),
                        std::vector<Gaussian>{Gaussian(mu1, cov), Gaussian(mu2, cov)});
  }
  return models;
}

// Results for one distance method within a perturbation run.
struct MethodResult {
  DistanceMethod method = DistanceMethod::Maw;
  double alpha = 0.5;
  DistanceMatrix matrix;
  PrCurve curve;
  double map = 0.0;
  // Appendix-style summary: distances from the first class's items to each
  // class, mean and standard deviation.
  Vector mean_to_class;
  Vector sd_to_class;
};

struct ExperimentResult {
  PerturbationConfig config;
  std::vector<int> labels;
  std::vector<std::string> notes;
  std::vector<MethodResult> methods;
};

namespace detail {

// Sample one sequence per (model, index) pair and fit a fresh model to it.
// A fit that throws drops that item with a note instead of failing the run.
inline std::vector<GmmHmm> fit_replicate(const std::vector<GmmHmm>& truth,
                                         const PerturbationConfig& cfg, int per_model,
                                         std::uint64_t seq_stream,
                                         std::uint64_t fit_stream, const char* tag,
                                         std::vector<int>& labels,
                                         std::vector<std::string>& notes) {
  std::vector<GmmHmm> fitted;
  BaumWelchOptions opts;
  for (size_t i = 0; i < truth.size(); ++i) {
    for (int k = 0; k < per_model; ++k) {
      const Sequence seq = sample_hmm(
          truth[i], cfg.sequence_length,
          derive_seed(cfg.master_seed, seq_stream, static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(k)));
      try {
        BaumWelchResult fit = baum_welch(
            {seq}, cfg.states,
            derive_seed(cfg.master_seed, fit_stream, static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(k)),
            opts);
        fitted.push_back(std::move(fit.model));
        labels.push_back(static_cast<int>(i));
      } catch (const std::exception& e) {
        notes.push_back(std::string(tag) + " model " + std::to_string(i) + " sequence " +
                        std::to_string(k) + " dropped: " + e.what());
      }
    }
  }
  return fitted;
}

inline void class_summary(const DistanceMatrix& dm, int num_classes, Vector& mean_out,
                          Vector& sd_out) {
  mean_out = Vector::Zero(num_classes);
  sd_out = Vector::Zero(num_classes);
  const Eigen::Index n = dm.values.rows();
  for (int c = 0; c < num_classes; ++c) {
    double sum = 0.0, sumsq = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dm.labels[static_cast<size_t>(i)] != 0) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i || dm.labels[static_cast<size_t>(j)] != c) continue;
        sum += dm.values(i, j);
        sumsq += dm.values(i, j) * dm.values(i, j);
        ++count;
      }
    }
    if (count > 0) mean_out[c] = sum / static_cast<double>(count);
    if (count > 1)
      sd_out[c] = std::sqrt(std::max(
          0.0, (sumsq - sum * sum / static_cast<double>(count)) /
                   static_cast<double>(count - 1)));
  }
}

}  // namespace detail

// Full synthetic retrieval study for one configuration: generate sequences
// from the five ground-truth models, fit a model per sequence, and score
// every requested distance method. Alpha for MAW/IAW is tuned on a disjoint
// pilot replicate; the evaluation replicate is never used for tuning.
inline ExperimentResult run_perturbation_experiment(const PerturbationConfig& cfg,
                                                    const std::vector<DistanceMethod>& methods,
                                                    const DistanceParams& params = {}) {
  if (methods.empty())
    throw data_error("run_perturbation_experiment: no distance methods requested");
  const std::vector<GmmHmm> truth = synth_models(cfg);

  ExperimentResult result;
  result.config = cfg;
  const std::vector<GmmHmm> fitted =
      detail::fit_replicate(truth, cfg, cfg.sequences_per_model, 1, 2, "eval",
                            result.labels, result.notes);
  if (fitted.size() < 2)
    throw data_error("run_perturbation_experiment: fewer than two sequences survived fitting");

  const bool needs_pilot =
      std::any_of(methods.begin(), methods.end(),
                  [](DistanceMethod m) { return m != DistanceMethod::KlMc; });
  std::vector<GmmHmm> pilot;
  std::vector<int> pilot_labels;
  if (needs_pilot)
    pilot = detail::fit_replicate(truth, cfg, cfg.pilot_sequences_per_model, 4, 5,
                                  "pilot", pilot_labels, result.notes);

  for (DistanceMethod method : methods) {
    MethodResult mr;
    mr.method = method;
    DistanceParams eval_params = params;
    if (method != DistanceMethod::KlMc) {
      const AlphaSelection sel =
          select_alpha(pilot, pilot_labels, method, default_alpha_grid(), params,
                       derive_seed(cfg.master_seed, 6));
      mr.alpha = sel.alpha;
      eval_params.alpha = sel.alpha;
    }
    mr.matrix = pairwise_distance_matrix(fitted, result.labels, method, eval_params,
                                         derive_seed(cfg.master_seed, 3));
    mr.curve = precision_recall(mr.matrix);
    mr.map = mr.curve.per_query.mean();
    detail::class_summary(mr.matrix, cfg.num_models, mr.mean_to_class, mr.sd_to_class);
    result.methods.push_back(std::move(mr));
  }
  return result;
}

enum class ToyVarying { Mu, Sigma };

// One row of the Gaussian robustness table: distance estimates from 100
// plug-in fits to the shifted or scaled target number i.
struct ToyRow {
  int i = 0;
  double w2_mean = 0.0;
  double w2_sd = 0.0;
  double kl_mean = 0.0;
  double kl_sd = 0.0;
};

// Repeatedly fit a Gaussian to 50 draws from the standard normal and score
// the fit against a ladder of targets with closed-form W2 and KL. The spread
// of the estimates across batches shows which distance is more robust to
// estimation noise.
inline std::vector<ToyRow> toy_gaussian_experiment(ToyVarying varying,
                                                   std::uint64_t seed) {
  constexpr int kBatches = 100;
  constexpr Eigen::Index kBatchSize = 50;
  constexpr int kTargets = 10;
  const Gaussian base(Vector::Zero(2), Matrix::Identity(2, 2));

  std::vector<Gaussian> fits;
  fits.reserve(kBatches);
  for (int b = 0; b < kBatches; ++b) {
    const Matrix x = sample_gaussian(base, kBatchSize, derive_seed(seed, b));
    const Vector mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - mean.transpose();
    const Matrix cov =
        (centered.transpose() * centered) / static_cast<double>(kBatchSize);
    fits.emplace_back(mean, cov);
  }

  std::vector<ToyRow> table;
  table.reserve(kTargets);
  for (int i = 1; i <= kTargets; ++i) {
    Gaussian target =
        varying == ToyVarying::Mu
            ? Gaussian(Vector::Constant(2, 0.5 * i), Matrix::Identity(2, 2))
            : Gaussian(Vector::Zero(2), std::exp(0.5 * i) * Matrix::Identity(2, 2));
    double w2_sum = 0.0, w2_sumsq = 0.0, kl_sum = 0.0, kl_sumsq = 0.0;
    for (const Gaussian& fit : fits) {
      const double w = w2_gaussian(fit, target);
      const double k = kl_gaussian(fit, target);
      w2_sum += w;
      w2_sumsq += w * w;
      kl_sum += k;
      kl_sumsq += k * k;
    }
    ToyRow row;
    row.i = i;
    row.w2_mean = w2_sum / kBatches;
    row.kl_mean = kl_sum / kBatches;
    row.w2_sd = std::sqrt(std::max(0.0, (w2_sumsq - w2_sum * w2_sum / kBatches) /
                                            (kBatches - 1.0)));
    row.kl_sd = std::sqrt(std::max(0.0, (kl_sumsq - kl_sum * kl_sum / kBatches) /
                                            (kBatches - 1.0)));
    table.push_back(row);
  }
  return table;
}

}  // namespace agw
