#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cupid/market.hpp"

namespace cupid {

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpSolution {
  LpStatus status = LpStatus::iteration_limit;
  Vec x;
  Vec duals;  // one multiplier per equality constraint
  double objective = 0.0;
};

// Dense two-phase primal simplex for  min c'x  s.t.  Ax = b, x >= 0.
// Tableau-based; Dantzig pricing with a Bland fallback against cycling.
// Suited to the small/medium LPs in this library, not a general-purpose code.
inline LpSolution simplex_solve(Mat A, Vec b, const Vec& c,
                                int max_iter = 200000) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  LpSolution out;

  // Normalize to b >= 0; remember flips to restore dual signs.
  std::vector<int> row_sign(m, 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (b(i) < 0) {
      A.row(i) *= -1.0;
      b(i) *= -1.0;
      row_sign[i] = -1;
    }
  }

  // Tableau D = B^{-1} [A | I]; columns n..n+m-1 track B^{-1} throughout.
  Mat D(m, n + m);
  D.leftCols(n) = A;
  D.rightCols(m) = Mat::Identity(m, m);
  Vec rhs = b;
  std::vector<Eigen::Index> basis(m);
  for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;

  const double eps = 1e-10;
  int iter = 0;

  auto pivot = [&](Eigen::Index row, Eigen::Index col) {
    const double p = D(row, col);
    D.row(row) /= p;
    rhs(row) /= p;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = D(i, col);
      if (f != 0.0) {
        D.row(i) -= f * D.row(row);
        rhs(i) -= f * rhs(row);
        if (rhs(i) < 0 && rhs(i) > -1e-12) rhs(i) = 0.0;
      }
    }
    basis[row] = col;
  };

  // One simplex phase over columns [0, ncols); returns false on unbounded.
  auto run_phase = [&](const Vec& cost, Eigen::Index ncols,
                       bool& hit_limit) -> bool {
    hit_limit = false;
    int stall = 0;
    while (iter < max_iter) {
      ++iter;
      // Reduced costs: r_j = c_j - c_B' D_j.
      Vec cb(m);
      for (Eigen::Index i = 0; i < m; ++i)
        cb(i) = basis[i] < ncols ? cost(basis[i]) : 0.0;
      Eigen::Index enter = -1;
      double best = -eps;
      const bool bland = stall > 2 * (m + n);
      for (Eigen::Index j = 0; j < ncols; ++j) {
        const double rj = cost(j) - cb.dot(D.col(j));
        if (rj < -eps) {
          if (bland) {
            enter = j;
            break;
          }
          if (rj < best) {
            best = rj;
            enter = j;
          }
        }
      }
      if (enter < 0) return true;  // optimal for this phase

      // Degenerate rows holding artificial variables get pivot priority so
      // artificials can never re-enter with positive value.
      Eigen::Index leave = -1;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (basis[i] >= n + 0 && basis[i] >= ncols && rhs(i) <= eps &&
            std::abs(D(i, enter)) > eps) {
          leave = i;
          break;
        }
      }
      if (leave < 0) {
        double best_ratio = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (D(i, enter) > eps) {
            const double ratio = rhs(i) / D(i, enter);
            if (leave < 0 || ratio < best_ratio - 1e-14 ||
                (ratio < best_ratio + 1e-14 && basis[i] > basis[leave])) {
              leave = i;
              best_ratio = ratio;
            }
          }
        }
        if (leave < 0) return false;  // unbounded
        stall = best_ratio <= eps ? stall + 1 : 0;
      }
      pivot(leave, enter);
    }
    hit_limit = true;
    return true;
  };

  // Phase 1: drive the artificial basis out.
  Vec cost1 = Vec::Zero(n + m);
  cost1.tail(m).setOnes();
  bool hit_limit = false;
  run_phase(cost1, n + m, hit_limit);
  if (hit_limit) {
    out.status = LpStatus::iteration_limit;
    return out;
  }
  double infeas = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (basis[i] >= n) infeas += rhs(i);
  if (infeas > 1e-7) {
    out.status = LpStatus::infeasible;
    return out;
  }
  // Pivot residual zero-valued artificials out where the row is not redundant.
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(D(i, j)) > 1e-8) {
        pivot(i, j);
        break;
      }
    }
  }

  // Phase 2 over the original columns only.
  if (!run_phase(c, n, hit_limit)) {
    out.status = LpStatus::unbounded;
    return out;
  }
  if (hit_limit) {
    out.status = LpStatus::iteration_limit;
    return out;
  }

  out.x = Vec::Zero(n);
  Vec cb = Vec::Zero(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[i] < n) {
      out.x(basis[i]) = rhs(i);
      cb(i) = c(basis[i]);
    }
  }
  out.objective = c.dot(out.x);
  // Duals from y' = c_B' B^{-1}; the artificial columns carry B^{-1}.
  out.duals = Vec(m);
  for (Eigen::Index i = 0; i < m; ++i)
    out.duals(i) = row_sign[i] * cb.dot(D.col(n + i));
  out.status = LpStatus::optimal;
  return out;
}

}  // namespace cupid
