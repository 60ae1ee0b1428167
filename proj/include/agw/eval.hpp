#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "agw/distance.hpp"
#include "agw/errors.hpp"
#include "agw/hmm.hpp"
#include "agw/random.hpp"

namespace agw {

// Knobs shared by every pairwise evaluation. `sample_count` doubles as the
// number of points per side for IAW and the sequence length for the KL
// baseline.
struct DistanceParams {
  double p = 1.0;
  double alpha = 0.5;
  Eigen::Index sample_count = 1000;
  SinkhornParams sinkhorn;
  bool symmetrize_kl = true;
};

// Full pairwise distance matrix plus the per-pair term decomposition. The
// term matrices are kept so alpha can be re-blended later without redoing
// any registration.
struct DistanceMatrix {
  Matrix values;
  std::vector<int> labels;
  DistanceMethod method = DistanceMethod::Maw;
  DistanceParams params;
  std::uint64_t base_seed = 0;
  Matrix marginal_terms;
  Matrix transition_terms;
  Matrix wall_times;
};

// Evaluates the chosen distance over every unordered pair. Entries are
// mirrored, the diagonal is pinned to zero, and seeded methods draw the pair
// (i, j) seed from (base_seed, i, j), so the result does not depend on the
// order pairs are visited in.
inline DistanceMatrix pairwise_distance_matrix(const std::vector<GmmHmm>& models,
                                               const std::vector<int>& labels,
                                               DistanceMethod method,
                                               const DistanceParams& params,
                                               std::uint64_t base_seed) {
  const Eigen::Index n = static_cast<Eigen::Index>(models.size());
  if (n < 2) throw data_error("pairwise_distance_matrix: need at least two models");
  if (labels.size() != models.size())
    throw data_error("pairwise_distance_matrix: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(models.size()) + " models");
  for (const GmmHmm& h : models)
    if (h.dim() != models.front().dim())
      throw data_error("pairwise_distance_matrix: models observe different dimensions");

  DistanceMatrix dm;
  dm.values = Matrix::Zero(n, n);
  dm.labels = labels;
  dm.method = method;
  dm.params = params;
  dm.base_seed = base_seed;
  dm.marginal_terms = Matrix::Zero(n, n);
  dm.transition_terms = Matrix::Zero(n, n);
  dm.wall_times = Matrix::Zero(n, n);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const std::uint64_t pair_seed = derive_seed(base_seed, i, j);
      DistanceReport rep;
      try {
        switch (method) {
          case DistanceMethod::Maw:
            rep = maw(models[static_cast<size_t>(i)], models[static_cast<size_t>(j)],
                      params.p, params.alpha);
            break;
          case DistanceMethod::Iaw:
            rep = iaw(models[static_cast<size_t>(i)], models[static_cast<size_t>(j)],
                      params.p, params.alpha, params.sample_count, pair_seed,
                      params.sinkhorn);
            break;
          case DistanceMethod::KlMc:
            rep = kl_hmm_mc(models[static_cast<size_t>(i)], models[static_cast<size_t>(j)],
                            params.sample_count, pair_seed, params.symmetrize_kl);
            break;
        }
      } catch (const numerical_error& e) {
        throw numerical_error("pair (" + std::to_string(i) + ", " + std::to_string(j) +
                              "): " + e.what());
      } catch (const data_error& e) {
        throw data_error("pair (" + std::to_string(i) + ", " + std::to_string(j) +
                         "): " + e.what());
      }
      dm.values(i, j) = dm.values(j, i) = rep.value;
      dm.marginal_terms(i, j) = dm.marginal_terms(j, i) = rep.marginal_term;
      dm.transition_terms(i, j) = dm.transition_terms(j, i) = rep.transition_term;
      dm.wall_times(i, j) = dm.wall_times(j, i) = rep.wall_time;
    }
  }
  if (!dm.values.allFinite())
    throw numerical_error("pairwise_distance_matrix: non-finite distance produced");
  return dm;
}

// Re-blend the cached terms at a different alpha. Registrations are not
// recomputed, so for MAW/IAW this reproduces a fresh evaluation at that
// alpha bit for bit. For the KL baseline the terms are the two directed
// estimates and a non-default alpha just reweights them.
inline DistanceMatrix recombine_alpha(const DistanceMatrix& dm, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw data_error("recombine_alpha: alpha must lie in [0, 1], got " +
                     std::to_string(alpha));
  DistanceMatrix out = dm;
  out.params.alpha = alpha;
  out.values = (1.0 - alpha) * dm.marginal_terms + alpha * dm.transition_terms;
  return out;
}

// Retrieval quality averaged over queries. `recall` is the common grid
// k / R_max; `per_query` holds one row per evaluated query (same column
// grid), and `query_index` maps those rows back to items.
struct PrCurve {
  Vector recall;
  Vector precision;
  Matrix per_query;
  std::vector<Eigen::Index> query_index;
  std::vector<std::string> warnings;
};

namespace detail {

// Items ranked ascending by distance from the query, query excluded, ties
// broken by item index so rankings are deterministic.
inline std::vector<Eigen::Index> ranked_neighbors(const Matrix& values, Eigen::Index q) {
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<size_t>(values.rows()) - 1);
  for (Eigen::Index j = 0; j < values.rows(); ++j)
    if (j != q) order.push_back(j);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (values(q, a) != values(q, b)) return values(q, a) < values(q, b);
    return a < b;
  });
  return order;
}

}  // namespace detail

// Each item queries for its class peers among all other items. Precision is
// read off at every relevant retrieval depth (recall k/R for the k-th
// relevant hit) and averaged across queries on a shared grid; with balanced
// classes every query has the same R and the grid is exactly 1/R ... R/R.
// Queries whose class has no other member are skipped with a warning.
inline PrCurve precision_recall(const DistanceMatrix& dm) {
  const Eigen::Index n = dm.values.rows();
  if (n < 2 || dm.values.cols() != n)
    throw data_error("precision_recall: need a square matrix over at least two items");
  if (static_cast<Eigen::Index>(dm.labels.size()) != n)
    throw data_error("precision_recall: label count does not match matrix size");

  std::vector<Eigen::Index> relevant(static_cast<size_t>(n), 0);
  for (Eigen::Index q = 0; q < n; ++q)
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != q && dm.labels[static_cast<size_t>(j)] == dm.labels[static_cast<size_t>(q)])
        ++relevant[static_cast<size_t>(q)];
  const Eigen::Index rmax = *std::max_element(relevant.begin(), relevant.end());
  if (rmax == 0) throw data_error("precision_recall: no class has at least two members");

  PrCurve curve;
  curve.recall = Vector::LinSpaced(rmax, 1.0 / static_cast<double>(rmax), 1.0);
  std::vector<Vector> rows;
  for (Eigen::Index q = 0; q < n; ++q) {
    const Eigen::Index r = relevant[static_cast<size_t>(q)];
    if (r == 0) {
      curve.warnings.push_back("query " + std::to_string(q) +
                               " skipped: class has a single member");
      continue;
    }
    const std::vector<Eigen::Index> order = detail::ranked_neighbors(dm.values, q);
    // Precision at the k-th relevant hit, k = 1..r.
    Vector prec_at_hit(r);
    Eigen::Index hits = 0;
    for (size_t pos = 0; pos < order.size() && hits < r; ++pos) {
      if (dm.labels[static_cast<size_t>(order[pos])] == dm.labels[static_cast<size_t>(q)]) {
        ++hits;
        prec_at_hit[hits - 1] =
            static_cast<double>(hits) / static_cast<double>(pos + 1);
      }
    }
    // Map onto the shared grid: at grid level g take the first hit whose own
    // recall k/r reaches g. Identity when r == rmax.
    Vector row(rmax);
    for (Eigen::Index k = 0; k < rmax; ++k) {
      const double g = curve.recall[k];
      const Eigen::Index need = static_cast<Eigen::Index>(
          std::ceil(g * static_cast<double>(r) - 1e-12));
      row[k] = prec_at_hit[std::min(std::max<Eigen::Index>(need, 1), r) - 1];
    }
    rows.push_back(std::move(row));
    curve.query_index.push_back(q);
  }

  curve.per_query.resize(static_cast<Eigen::Index>(rows.size()), rmax);
  for (size_t i = 0; i < rows.size(); ++i)
    curve.per_query.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  curve.precision = curve.per_query.colwise().mean().transpose();
  return curve;
}

// Leave-one-out nearest-neighbor accuracy: every item is predicted as the
// label of its closest other item, ties by index.
inline double knn1_accuracy(const DistanceMatrix& dm) {
  const Eigen::Index n = dm.values.rows();
  if (n < 2 || dm.values.cols() != n)
    throw data_error("knn1_accuracy: need a square matrix over at least two items");
  if (static_cast<Eigen::Index>(dm.labels.size()) != n)
    throw data_error("knn1_accuracy: label count does not match matrix size");
  Eigen::Index correct = 0;
  for (Eigen::Index q = 0; q < n; ++q) {
    Eigen::Index best = q == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == q) continue;
      if (dm.values(q, j) < dm.values(q, best)) best = j;
    }
    if (dm.labels[static_cast<size_t>(best)] == dm.labels[static_cast<size_t>(q)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

struct AlphaSelection {
  double alpha = 0.5;
  std::vector<double> grid;
  std::vector<double> accuracy;
};

inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(0.1 * i);
  return g;
}

// Pick the blend weight by leave-one-out accuracy. The pairwise terms are
// computed once and re-blended per grid point, so the scan costs one matrix
// evaluation regardless of grid size. Ties go to the smallest alpha.
inline AlphaSelection select_alpha(const std::vector<GmmHmm>& models,
                                   const std::vector<int>& labels, DistanceMethod method,
                                   const std::vector<double>& grid,
                                   const DistanceParams& params, std::uint64_t base_seed) {
  if (grid.empty()) throw data_error("select_alpha: empty alpha grid");
  for (double a : grid)
    if (!(a >= 0.0 && a <= 1.0))
      throw data_error("select_alpha: grid value " + std::to_string(a) +
                       " outside [0, 1]");
  const DistanceMatrix base = pairwise_distance_matrix(models, labels, method, params,
                                                       base_seed);
  AlphaSelection sel;
  sel.grid = grid;
  sel.accuracy.reserve(grid.size());
  double best_acc = -1.0;
  sel.alpha = grid.front();
  for (double a : grid) {
    const double acc = knn1_accuracy(recombine_alpha(base, a));
    sel.accuracy.push_back(acc);
    if (acc > best_acc || (acc == best_acc && a < sel.alpha)) {
      best_acc = acc;
      sel.alpha = a;
    }
  }
  return sel;
}

}  // namespace agw
