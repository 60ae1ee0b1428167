#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agw/errors.hpp"
#include "agw/gaussian.hpp"

namespace agw {

// Coupling between two discrete distributions. `converged` is always true
// for the exact solver; Sinkhorn sets it false when the iteration budget runs
// out before the marginal residual reaches tolerance (the best plan found is
// still returned). Potentials are the dual variables, one per row/column.
struct TransportPlan {
  Matrix weights;
  Vector row_marginal;
  Vector col_marginal;
  double objective = 0.0;
  double marginal_residual = 0.0;
  bool converged = true;
  int iterations = 0;
  Vector potential_row;
  Vector potential_col;
};

struct SinkhornParams {
  double epsilon = 0.0;   // <= 0 selects 0.05 * median(cost)
  double tol = 1e-6;      // max-norm marginal violation
  int max_iter = 10000;   // total across all epsilon levels
  int scaling_levels = 4; // epsilon schedule 8e, 4e, 2e, e
};

namespace detail {

inline void check_transport_inputs(const Matrix& cost, const Vector& mu,
                                   const Vector& nu, const char* who) {
  if (cost.rows() != mu.size() || cost.cols() != nu.size())
    throw data_error(std::string(who) + ": cost is " + std::to_string(cost.rows()) +
                     "x" + std::to_string(cost.cols()) + " but marginals have sizes " +
                     std::to_string(mu.size()) + " and " + std::to_string(nu.size()));
  if (mu.size() == 0 || nu.size() == 0)
    throw data_error(std::string(who) + ": empty marginal");
  if (!cost.allFinite())
    throw data_error(std::string(who) + ": cost has non-finite entries");
  if (mu.minCoeff() < 0.0 || nu.minCoeff() < 0.0)
    throw data_error(std::string(who) + ": negative mass in marginal");
  if (std::abs(mu.sum() - 1.0) > 1e-9 || std::abs(nu.sum() - 1.0) > 1e-9)
    throw data_error(std::string(who) + ": marginals must each sum to one (got " +
                     std::to_string(mu.sum()) + " and " + std::to_string(nu.sum()) + ")");
}

inline std::vector<Eigen::Index> positive_indices(const Vector& w) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) idx.push_back(i);
  return idx;
}

// Lower median of all cost entries; used for the default Sinkhorn epsilon.
inline double cost_median(const Matrix& c) {
  std::vector<double> v(c.data(), c.data() + c.size());
  const auto mid = v.begin() + (v.size() - 1) / 2;
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace detail

// Exact optimal transport by the transportation simplex. Zero-mass rows and
// columns are dropped up front and reinserted as zeros. Bland's rule (first
// improving cell in row-major order, smallest-index leaving cell) rules out
// cycling. Intended for the small problems produced by mixture registration;
// cost is roughly O(pivots * m * n) with pivot counts in the tens.
inline TransportPlan solve_exact_transport(const Matrix& cost, const Vector& mu,
                                           const Vector& nu) {
  detail::check_transport_inputs(cost, mu, nu, "solve_exact_transport");
  const Eigen::Index m = mu.size();
  const Eigen::Index n = nu.size();

  const std::vector<Eigen::Index> rows = detail::positive_indices(mu);
  const std::vector<Eigen::Index> cols = detail::positive_indices(nu);
  const int nr = static_cast<int>(rows.size());
  const int nc = static_cast<int>(cols.size());

  Vector a(nr);
  Vector b(nc);
  for (int i = 0; i < nr; ++i) a[i] = mu[rows[i]];
  for (int j = 0; j < nc; ++j) b[j] = nu[cols[j]];
  a /= a.sum();
  b /= b.sum();
  Matrix c(nr, nc);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j) c(i, j) = cost(rows[i], cols[j]);

  Matrix flow = Matrix::Zero(nr, nc);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> basic(nr, nc);
  basic.setConstant(false);

  // Northwest-corner start: walks a staircase through the tableau and yields
  // exactly nr + nc - 1 basic cells (some possibly at zero flow).
  {
    Vector s = a;
    Vector d = b;
    int i = 0;
    int j = 0;
    for (;;) {
      basic(i, j) = true;
      const double f = std::max(std::min(s[i], d[j]), 0.0);
      flow(i, j) = f;
      s[i] -= f;
      d[j] -= f;
      if (i == nr - 1 && j == nc - 1) break;
      if (i < nr - 1 && (s[i] <= 0.0 || j == nc - 1))
        ++i;
      else
        ++j;
    }
  }

  const double tol = 1e-12 * (1.0 + cost.cwiseAbs().maxCoeff());
  Vector u(nr);
  Vector v(nc);
  std::vector<int> parent(nr + nc);
  std::vector<int> order(nr + nc);
  const int max_pivots = 1000 * (nr * nc + 10);
  int pivots = 0;

  for (;; ++pivots) {
    if (pivots > max_pivots)
      throw numerical_error("solve_exact_transport: pivot limit exceeded");

    // Dual potentials from the basis tree (nodes: rows, then columns).
    {
      std::vector<char> seen(nr + nc, 0);
      int head = 0;
      int tail = 0;
      order[tail++] = 0;
      seen[0] = 1;
      u[0] = 0.0;
      while (head < tail) {
        const int node = order[head++];
        if (node < nr) {
          for (int j = 0; j < nc; ++j)
            if (basic(node, j) && !seen[nr + j]) {
              v[j] = c(node, j) - u[node];
              seen[nr + j] = 1;
              order[tail++] = nr + j;
            }
        } else {
          const int j = node - nr;
          for (int i = 0; i < nr; ++i)
            if (basic(i, j) && !seen[i]) {
              u[i] = c(i, j) - v[j];
              seen[i] = 1;
              order[tail++] = i;
            }
        }
      }
      if (tail != nr + nc)
        throw numerical_error("solve_exact_transport: basis lost connectivity");
    }

    // Entering cell: first negative reduced cost in row-major order.
    int ei = -1;
    int ej = -1;
    for (int i = 0; i < nr && ei < 0; ++i)
      for (int j = 0; j < nc; ++j)
        if (!basic(i, j) && c(i, j) - u[i] - v[j] < -tol) {
          ei = i;
          ej = j;
          break;
        }
    if (ei < 0) break;  // optimal

    // Unique tree path from row node ei to column node nr+ej.
    std::fill(parent.begin(), parent.end(), -2);
    {
      int head = 0;
      int tail = 0;
      order[tail++] = ei;
      parent[ei] = -1;
      while (head < tail) {
        const int node = order[head++];
        if (node == nr + ej) break;
        if (node < nr) {
          for (int j = 0; j < nc; ++j)
            if (basic(node, j) && parent[nr + j] == -2) {
              parent[nr + j] = node;
              order[tail++] = nr + j;
            }
        } else {
          const int j = node - nr;
          for (int i = 0; i < nr; ++i)
            if (basic(i, j) && parent[i] == -2) {
              parent[i] = node;
              order[tail++] = i;
            }
        }
      }
    }
    std::vector<int> path;  // nodes ei ... nr+ej
    for (int node = nr + ej; node != -1; node = parent[node]) path.push_back(node);
    std::reverse(path.begin(), path.end());

    // Cells along the path alternate -theta, +theta starting at the edge
    // incident to row ei. Leaving cell: minimum flow among the -theta cells,
    // smallest row-major index on ties.
    double theta = std::numeric_limits<double>::infinity();
    int li = -1;
    int lj = -1;
    for (size_t t = 0; t + 1 < path.size(); t += 2) {
      const int i = path[t] < nr ? path[t] : path[t + 1];
      const int j = (path[t] < nr ? path[t + 1] : path[t]) - nr;
      const double f = flow(i, j);
      if (f < theta - 1e-18 ||
          (std::abs(f - theta) <= 1e-18 &&
           (li < 0 || static_cast<long>(i) * nc + j < static_cast<long>(li) * nc + lj))) {
        theta = f;
        li = i;
        lj = j;
      }
    }

    for (size_t t = 0; t + 1 < path.size(); ++t) {
      const int i = path[t] < nr ? path[t] : path[t + 1];
      const int j = (path[t] < nr ? path[t + 1] : path[t]) - nr;
      flow(i, j) += (t % 2 == 0) ? -theta : theta;
      if (flow(i, j) < 0.0) flow(i, j) = 0.0;
    }
    flow(ei, ej) += theta;
    flow(li, lj) = 0.0;
    basic(li, lj) = false;
    basic(ei, ej) = true;
  }

  TransportPlan plan;
  plan.weights = Matrix::Zero(m, n);
  plan.potential_row = Vector::Zero(m);
  plan.potential_col = Vector::Zero(n);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j) plan.weights(rows[i], cols[j]) = flow(i, j);
  for (int i = 0; i < nr; ++i) plan.potential_row[rows[i]] = u[i];
  for (int j = 0; j < nc; ++j) plan.potential_col[cols[j]] = v[j];
  plan.row_marginal = mu;
  plan.col_marginal = nu;
  plan.objective = (plan.weights.array() * cost.array()).sum();
  plan.marginal_residual =
      std::max((plan.weights.rowwise().sum() - mu).cwiseAbs().maxCoeff(),
               (plan.weights.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff());
  plan.converged = true;
  plan.iterations = pivots;
  return plan;
}

// Entropic OT with log-domain stabilization. Potentials f, g absorb the
// scaling vectors whenever they threaten to overflow, so the kernel stays
// representable at small epsilon; iterations between absorptions are plain
// matrix-vector products. Epsilon follows a 4-level halving schedule ending
// at the target. Reported objective is sum(plan * cost), no entropy term.
inline TransportPlan sinkhorn(const Matrix& cost, const Vector& mu, const Vector& nu,
                              const SinkhornParams& params = {}) {
  detail::check_transport_inputs(cost, mu, nu, "sinkhorn");
  if (params.tol <= 0.0) throw data_error("sinkhorn: tol must be positive");
  if (params.max_iter < 1) throw data_error("sinkhorn: max_iter must be positive");
  if (params.scaling_levels < 1) throw data_error("sinkhorn: need at least one epsilon level");

  const Eigen::Index m = mu.size();
  const Eigen::Index n = nu.size();
  const std::vector<Eigen::Index> rows = detail::positive_indices(mu);
  const std::vector<Eigen::Index> cols = detail::positive_indices(nu);
  const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index nc = static_cast<Eigen::Index>(cols.size());

  Vector a(nr);
  Vector b(nc);
  for (Eigen::Index i = 0; i < nr; ++i) a[i] = mu[rows[i]];
  for (Eigen::Index j = 0; j < nc; ++j) b[j] = nu[cols[j]];
  Matrix c(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i)
    for (Eigen::Index j = 0; j < nc; ++j) c(i, j) = cost(rows[i], cols[j]);

  double eps_target = params.epsilon;
  if (eps_target <= 0.0) {
    eps_target = 0.05 * detail::cost_median(c);
    if (eps_target <= 0.0) eps_target = 0.05 * c.maxCoeff();
    if (eps_target <= 0.0) eps_target = 1.0;  // constant cost: any epsilon works
  }

  Vector f = Vector::Zero(nr);
  Vector g = Vector::Zero(nc);
  Vector u = Vector::Ones(nr);
  Vector v = Vector::Ones(nc);
  Matrix k(nr, nc);
  Vector kv(nr);
  Vector ktu(nc);

  const double absorb_hi = std::exp(30.0);
  double eps = eps_target;
  double residual = std::numeric_limits<double>::infinity();
  int used = 0;
  bool converged = false;

  const auto rebuild_kernel = [&]() {
    k = ((f.replicate(1, nc) + g.transpose().replicate(nr, 1) - c) / eps)
            .array()
            .exp()
            .matrix();
  };
  const auto absorb = [&]() {
    f += eps * u.array().log().matrix();
    g += eps * v.array().log().matrix();
    u.setOnes();
    v.setOnes();
    rebuild_kernel();
  };
  // One exact log-domain iteration. Used whenever a kernel row or column has
  // underflowed to all zeros, where the multiplicative update would let the
  // potentials overshoot and blow up the rebuilt kernel. Leaves u = v = 1.
  const auto log_domain_round = [&]() {
    f += eps * u.array().log().matrix();
    g += eps * v.array().log().matrix();
    u.setOnes();
    v.setOnes();
    k = (f.replicate(1, nc) - c) / eps;
    const Eigen::RowVectorXd cmax = k.colwise().maxCoeff();
    for (Eigen::Index j = 0; j < nc; ++j)
      g[j] = eps * std::log(b[j]) -
             eps * (cmax[j] + std::log((k.col(j).array() - cmax[j]).exp().sum()));
    k = (g.transpose().replicate(nr, 1) - c) / eps;
    const Vector rmax = k.rowwise().maxCoeff();
    for (Eigen::Index i = 0; i < nr; ++i)
      f[i] = eps * std::log(a[i]) -
             eps * (rmax[i] + std::log((k.row(i).array() - rmax[i]).exp().sum()));
    rebuild_kernel();
  };

  for (int level = params.scaling_levels - 1; level >= 0; --level) {
    eps = eps_target * static_cast<double>(1ull << level);
    const bool final_level = level == 0;
    const double level_tol = final_level ? params.tol : std::max(params.tol, 1e-4);
    const int budget = final_level
                           ? params.max_iter - used
                           : std::min(params.max_iter / (2 * params.scaling_levels),
                                      params.max_iter - used);
    rebuild_kernel();
    for (int it = 0; it < budget; ++it, ++used) {
      ktu.noalias() = k.transpose() * u;
      if (!ktu.allFinite() || ktu.minCoeff() <= 0.0) {
        log_domain_round();
        continue;
      }
      v = b.array() / ktu.array();
      kv.noalias() = k * v;
      if (!kv.allFinite() || kv.minCoeff() <= 0.0) {
        log_domain_round();
        continue;
      }
      u = a.array() / kv.array();
      if (!u.allFinite() || !v.allFinite())
        throw numerical_error("sinkhorn: scaling produced non-finite values");
      if (u.maxCoeff() > absorb_hi || v.maxCoeff() > absorb_hi ||
          u.minCoeff() < 1.0 / absorb_hi || v.minCoeff() < 1.0 / absorb_hi) {
        absorb();
        continue;
      }
      // Rows match `a` exactly after the u update; the violation lives on
      // the columns.
      ktu.noalias() = k.transpose() * u;
      residual = (v.array() * ktu.array() - b.array()).abs().maxCoeff();
      if (!std::isfinite(residual))
        throw numerical_error("sinkhorn: non-finite marginal residual");
      if (residual <= level_tol) {
        if (final_level) converged = true;
        break;
      }
    }
    absorb();  // roll scalings into the potentials before the next level
  }

  // After the final absorb u = v = 1, so the kernel buffer already holds the
  // plan diag(u) k diag(v).
  TransportPlan plan;
  plan.objective = (k.array() * c.array()).sum();
  c.resize(0, 0);
  if (nr == m && nc == n) {
    // Nothing was dropped; hand the buffer over instead of copying. Matters
    // at empirical sample sizes where the kernel runs to gigabytes.
    plan.weights = std::move(k);
    plan.potential_row = f;
    plan.potential_col = g;
  } else {
    plan.weights = Matrix::Zero(m, n);
    for (Eigen::Index j = 0; j < nc; ++j)
      for (Eigen::Index i = 0; i < nr; ++i) plan.weights(rows[i], cols[j]) = k(i, j);
    plan.potential_row = Vector::Zero(m);
    plan.potential_col = Vector::Zero(n);
    for (Eigen::Index i = 0; i < nr; ++i) plan.potential_row[rows[i]] = f[i];
    for (Eigen::Index j = 0; j < nc; ++j) plan.potential_col[cols[j]] = g[j];
  }
  plan.row_marginal = mu;
  plan.col_marginal = nu;
  plan.marginal_residual =
      std::max((plan.weights.rowwise().sum() - mu).cwiseAbs().maxCoeff(),
               (plan.weights.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff());
  plan.converged = converged;
  plan.iterations = used;
  return plan;
}

}  // namespace agw
