#pragma once

// Subcommand wiring for the agw tool. Every command is deterministic given
// its flags: whenever randomness is involved there is a --seed flag whose
// default is the fixed constant 0, never entropy. Exit codes are 0 success,
// 2 usage error, 3 data error, 4 numerical failure; main() in agw.cpp maps
// the exception types, this header maps parse failures.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"

#include "agw/distance.hpp"
#include "agw/errors.hpp"
#include "agw/eval.hpp"
#include "agw/experiments.hpp"
#include "agw/hmm.hpp"
#include "agw/io.hpp"

namespace agw {
namespace cli_detail {

inline DistanceMethod parse_method(const std::string& name) {
  if (name == "maw") return DistanceMethod::Maw;
  if (name == "iaw") return DistanceMethod::Iaw;
  if (name == "kl") return DistanceMethod::KlMc;
  throw data_error("unknown method '" + name + "'");
}

struct EstimateOpts {
  std::vector<std::string> inputs;
  std::string out;
  int states = 2;
  std::uint64_t seed = 0;
  int max_iter = 200;
  double tol = 1e-6;
};

inline int run_estimate(const EstimateOpts& o) {
  std::vector<Sequence> seqs;
  seqs.reserve(o.inputs.size());
  for (const std::string& path : o.inputs) seqs.push_back(Sequence{load_sequence_csv(path), {}});

  BaumWelchOptions opts;
  opts.max_iter = o.max_iter;
  opts.tol = o.tol;
  const BaumWelchResult fit = baum_welch(seqs, o.states, o.seed, opts);
  for (const std::string& w : fit.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (!fit.converged)
    std::fprintf(stderr, "warning: estimation stopped at max-iter without converging\n");

  ModelMetadata meta;
  meta.seed = o.seed;
  if (!fit.loglik_trace.empty()) meta.log_likelihood = fit.loglik_trace.back();
  save_model_file(o.out, fit.model, meta);
  return 0;
}

struct DistOpts {
  std::string method;
  std::string a;
  std::string b;
  double p = 1.0;
  double alpha = 0.5;
  Eigen::Index samples = 1000;
  std::uint64_t seed = 0;
  bool json = false;
  bool no_symmetrize = false;
};

inline nlohmann::json report_to_json(const DistanceReport& rep) {
  nlohmann::json j;
  j["method"] = method_name(rep.method);
  j["value"] = rep.value;
  j["marginal_term"] = rep.marginal_term;
  j["transition_term"] = rep.transition_term;
  j["alpha"] = rep.alpha;
  j["p"] = rep.p;
  j["seed"] = rep.seed ? nlohmann::json(*rep.seed) : nlohmann::json(nullptr);
  j["sample_count"] = rep.sample_count ? nlohmann::json(*rep.sample_count) : nlohmann::json(nullptr);
  j["registration_residual"] = rep.registration_residual;
  j["wall_time"] = rep.wall_time;
  return j;
}

inline int run_dist(const DistOpts& o) {
  const GmmHmm a = load_model_file(o.a);
  const GmmHmm b = load_model_file(o.b);

  DistanceReport rep;
  switch (parse_method(o.method)) {
    case DistanceMethod::Maw:
      rep = maw(a, b, o.p, o.alpha);
      break;
    case DistanceMethod::Iaw:
      rep = iaw(a, b, o.p, o.alpha, o.samples, o.seed);
      break;
    case DistanceMethod::KlMc:
      rep = kl_hmm_mc(a, b, o.samples, o.seed, !o.no_symmetrize);
      break;
  }

  if (o.json) {
    std::printf("%s\n", report_to_json(rep).dump(2).c_str());
  } else {
    std::printf("%s\n", detail::format_g17(rep.value).c_str());
  }
  return 0;
}

struct DistmatOpts {
  std::string dir;
  std::string labels;
  std::string method;
  std::string out;
  double p = 1.0;
  double alpha = 0.5;
  Eigen::Index samples = 1000;
  std::uint64_t seed = 0;
};

inline int run_distmat(const DistmatOpts& o) {
  namespace fs = std::filesystem;

  std::vector<std::string> names;
  for (const fs::directory_entry& e : fs::directory_iterator(o.dir))
    if (e.is_regular_file() && e.path().extension() == ".json")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.size() < 2)
    throw data_error("distmat: directory '" + o.dir + "' holds " +
                     std::to_string(names.size()) + " model files, need at least 2");

  std::map<std::string, int> label_of;
  for (const auto& [file, label] : load_labels_csv(o.labels)) {
    if (!label_of.emplace(file, label).second)
      throw data_error("distmat: duplicate label entry for '" + file + "'");
  }
  if (label_of.size() != names.size())
    throw data_error("distmat: labels file lists " + std::to_string(label_of.size()) +
                     " files but the directory holds " + std::to_string(names.size()));

  std::vector<GmmHmm> models;
  std::vector<int> labels;
  models.reserve(names.size());
  for (const std::string& name : names) {
    auto it = label_of.find(name);
    if (it == label_of.end()) throw data_error("distmat: no label for '" + name + "'");
    models.push_back(load_model_file((fs::path(o.dir) / name).string()));
    labels.push_back(it->second);
  }

  DistanceParams params;
  params.p = o.p;
  params.alpha = o.alpha;
  params.sample_count = o.samples;
  const DistanceMatrix dm =
      pairwise_distance_matrix(models, labels, parse_method(o.method), params, o.seed);

  save_distance_matrix_csv(o.out, dm, names);
  fs::path meta(o.out);
  meta.replace_extension(".meta.json");
  save_distance_matrix_meta(meta.string(), dm, names);
  return 0;
}

struct EvalOpts {
  std::string distmat;
  std::string mode;
  std::string out;
};

inline int run_eval(const EvalOpts& o) {
  const LoadedDistanceMatrix loaded = load_distance_matrix_csv(o.distmat);
  if (o.mode == "pr") {
    if (o.out.empty()) {
      std::fprintf(stderr, "error: --mode pr requires --out\n");
      return 2;
    }
    const PrCurve curve = precision_recall(loaded.matrix);
    for (const std::string& w : curve.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    save_pr_csv(o.out, curve, std::string("source=") + o.distmat + " version=" + kVersionString);
    return 0;
  }
  const double acc = knn1_accuracy(loaded.matrix);
  std::printf("%s\n", detail::format_g17(acc).c_str());
  if (!o.out.empty()) {
    std::ofstream f = detail::open_for_write(o.out);
    f << "# source=" << o.distmat << " version=" << kVersionString << '\n'
      << "knn1_accuracy\n"
      << detail::format_g17(acc) << '\n';
    if (!f) throw data_error("failed writing '" + o.out + "'");
  }
  return 0;
}

struct SynthOpts {
  std::string exp;
  std::string methods = "maw,iaw,kl";
  std::string out;
  double delta = 0.0;
  std::uint64_t seed = 0;
  int models = 5;
  int sequences = 10;
  Eigen::Index length = 100;
  Eigen::Index samples = 300;
};

inline std::vector<DistanceMethod> parse_method_list(const std::string& csv) {
  std::vector<DistanceMethod> out;
  std::string cur;
  std::istringstream is(csv);
  while (std::getline(is, cur, ',')) {
    if (cur.empty()) continue;
    const DistanceMethod m = parse_method(cur);
    if (std::find(out.begin(), out.end(), m) != out.end())
      throw data_error("method '" + cur + "' listed twice");
    out.push_back(m);
  }
  if (out.empty()) throw data_error("no methods requested");
  return out;
}

inline PerturbationKind parse_kind(const std::string& name) {
  if (name == "mu") return PerturbationKind::Mu;
  if (name == "sigma") return PerturbationKind::Sigma;
  if (name == "transition") return PerturbationKind::Transition;
  throw data_error("unknown experiment '" + name + "'");
}

inline int run_synth(const SynthOpts& o) {
  namespace fs = std::filesystem;

  PerturbationConfig cfg;
  cfg.kind = parse_kind(o.exp);
  cfg.delta = o.delta;
  cfg.num_models = o.models;
  cfg.sequences_per_model = o.sequences;
  cfg.sequence_length = o.length;
  cfg.master_seed = o.seed;

  DistanceParams params;
  params.sample_count = o.samples;

  const ExperimentResult res =
      run_perturbation_experiment(cfg, parse_method_list(o.methods), params);
  for (const std::string& n : res.notes) std::fprintf(stderr, "note: %s\n", n.c_str());

  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw data_error("cannot create output directory '" + o.out + "': " + ec.message());

  // Synthetic replicas have no files of their own; name them by index and
  // class so the matrix CSV is self-describing.
  std::vector<std::string> names;
  names.reserve(res.labels.size());
  for (size_t i = 0; i < res.labels.size(); ++i) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "model_%03zu_class_%d", i, res.labels[i]);
    names.emplace_back(buf);
  }

  nlohmann::json run;
  run["experiment"] = perturbation_name(cfg.kind);
  run["delta"] = cfg.delta;
  run["seed"] = cfg.master_seed;
  run["version"] = kVersionString;
  run["notes"] = res.notes;
  run["config"] = {{"num_models", cfg.num_models},
                   {"sequences_per_model", cfg.sequences_per_model},
                   {"sequence_length", cfg.sequence_length},
                   {"dim", cfg.dim},
                   {"states", cfg.states},
                   {"pilot_sequences_per_model", cfg.pilot_sequences_per_model},
                   {"samples", params.sample_count}};
  run["methods"] = nlohmann::json::array();

  for (const MethodResult& m : res.methods) {
    const std::string tag = method_name(m.method);
    const fs::path base(o.out);
    save_distance_matrix_csv((base / ("distmat_" + tag + ".csv")).string(), m.matrix, names);
    save_distance_matrix_meta((base / ("distmat_" + tag + ".meta.json")).string(), m.matrix,
                              names);
    const std::string comment = detail::distmat_comment(m.matrix).substr(2) +
                                " experiment=" + perturbation_name(cfg.kind) +
                                " delta=" + detail::format_g17(cfg.delta);
    save_pr_csv((base / ("pr_" + tag + ".csv")).string(), m.curve, comment);
    save_class_summary_csv((base / ("summary_" + tag + ".csv")).string(), m.mean_to_class,
                           m.sd_to_class, comment);
    run["methods"].push_back(
        {{"method", tag}, {"alpha", m.alpha}, {"map", m.map}});
  }

  std::ofstream meta = detail::open_for_write((fs::path(o.out) / "run.json").string());
  meta << run.dump(2) << '\n';
  if (!meta) throw data_error("failed writing run metadata");
  return 0;
}

struct ToyOpts {
  std::string varying;
  std::string out;
  std::uint64_t seed = 0;
};

inline int run_toy(const ToyOpts& o) {
  const ToyVarying v = o.varying == "mu" ? ToyVarying::Mu : ToyVarying::Sigma;
  const std::vector<ToyRow> rows = toy_gaussian_experiment(v, o.seed);
  save_toy_csv(o.out, rows,
               std::string("varying=") + o.varying + " seed=" + std::to_string(o.seed) +
                   " version=" + kVersionString);
  return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, char** argv) {
  using namespace cli_detail;

  // AGW_THREADS caps Eigen's internal parallelism. The computations here are
  // deterministic either way; the variable only trades latency for cores.
  if (const char* tv = std::getenv("AGW_THREADS")) {
    long long n = 0;
    if (!detail::parse_long(tv, n) || n < 1) {
      std::fprintf(stderr, "error: AGW_THREADS must be a positive integer, got '%s'\n", tv);
      return 2;
    }
    Eigen::setNbThreads(static_cast<int>(n));
  }

  CLI::App app{"Aggregated Wasserstein and KL distances between Gaussian HMMs"};
  app.set_version_flag("--version", kVersionString);
  app.require_subcommand(1);

  EstimateOpts eo;
  CLI::App* est = app.add_subcommand("estimate", "Fit a model to observation sequences");
  est->add_option("inputs", eo.inputs, "sequence CSV files")->required();
  est->add_option("--states", eo.states, "number of hidden states")->check(CLI::PositiveNumber);
  est->add_option("--seed", eo.seed, "RNG seed (default 0)");
  est->add_option("--max-iter", eo.max_iter, "EM iteration cap")->check(CLI::PositiveNumber);
  est->add_option("--tol", eo.tol, "per-observation log-likelihood tolerance");
  est->add_option("--out", eo.out, "output model JSON path")->required();

  DistOpts dopt;
  CLI::App* dist = app.add_subcommand("dist", "Distance between two model files");
  dist->add_option("--method", dopt.method, "maw, iaw or kl")
      ->required()
      ->check(CLI::IsMember({"maw", "iaw", "kl"}));
  dist->add_option("--a", dopt.a, "first model JSON")->required();
  dist->add_option("--b", dopt.b, "second model JSON")->required();
  dist->add_option("--p", dopt.p, "Wasserstein order, in (0,2]");
  dist->add_option("--alpha", dopt.alpha, "transition blend weight, in [0,1]");
  dist->add_option("--samples", dopt.samples,
                   "sample count (iaw: empirical points, kl: sequence length)");
  dist->add_option("--seed", dopt.seed, "RNG seed for sampled methods (default 0)");
  dist->add_flag("--json", dopt.json, "emit the full report as JSON");
  dist->add_flag("--no-symmetrize", dopt.no_symmetrize, "kl only: skip the reverse direction");

  DistmatOpts mo;
  CLI::App* distmat = app.add_subcommand("distmat", "Pairwise distances for a model directory");
  distmat->add_option("--dir", mo.dir, "directory of model JSON files")
      ->required()
      ->check(CLI::ExistingDirectory);
  distmat->add_option("--labels", mo.labels, "CSV of file,label rows")
      ->required()
      ->check(CLI::ExistingFile);
  distmat->add_option("--method", mo.method, "maw, iaw or kl")
      ->required()
      ->check(CLI::IsMember({"maw", "iaw", "kl"}));
  distmat->add_option("--p", mo.p, "Wasserstein order, in (0,2]");
  distmat->add_option("--alpha", mo.alpha, "transition blend weight, in [0,1]");
  distmat->add_option("--samples", mo.samples, "per-pair sample count for iaw/kl");
  distmat->add_option("--seed", mo.seed, "base seed; pair seeds derive from it (default 0)");
  distmat->add_option("--out", mo.out, "output CSV path (metadata JSON lands next to it)")
      ->required();

  EvalOpts evo;
  CLI::App* eval = app.add_subcommand("eval", "Retrieval metrics from a distance matrix");
  eval->add_option("--distmat", evo.distmat, "distance matrix CSV")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--mode", evo.mode, "pr or knn1")
      ->required()
      ->check(CLI::IsMember({"pr", "knn1"}));
  eval->add_option("--out", evo.out, "output CSV (required for pr)");

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "Synthetic perturbation experiment");
  synth->add_option("--exp", so.exp, "mu, sigma or transition")
      ->required()
      ->check(CLI::IsMember({"mu", "sigma", "transition"}));
  synth->add_option("--delta", so.delta, "perturbation strength, > 0")->required();
  synth->add_option("--methods", so.methods, "comma list of maw,iaw,kl");
  synth->add_option("--seed", so.seed, "master seed (default 0)");
  synth->add_option("--models", so.models, "models per class")->check(CLI::PositiveNumber);
  synth->add_option("--sequences", so.sequences, "training sequences per model")
      ->check(CLI::PositiveNumber);
  synth->add_option("--length", so.length, "sequence length")->check(CLI::PositiveNumber);
  synth->add_option("--samples", so.samples, "per-pair sample count for iaw/kl")
      ->check(CLI::PositiveNumber);
  synth->add_option("--out", so.out, "output directory")->required();

  ToyOpts to;
  CLI::App* toy = app.add_subcommand("toy", "Gaussian estimation error table");
  toy->add_option("--varying", to.varying, "mu or sigma")
      ->required()
      ->check(CLI::IsMember({"mu", "sigma"}));
  toy->add_option("--seed", to.seed, "RNG seed (default 0)");
  toy->add_option("--out", to.out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (est->parsed()) return run_estimate(eo);
  if (dist->parsed()) return run_dist(dopt);
  if (distmat->parsed()) return run_distmat(mo);
  if (eval->parsed()) return run_eval(evo);
  if (synth->parsed()) return run_synth(so);
  if (toy->parsed()) return run_toy(to);
  return 2;
}

}  // namespace agw
