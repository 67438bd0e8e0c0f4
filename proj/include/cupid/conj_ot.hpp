#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "cupid/discretized.hpp"
#include "cupid/market.hpp"
#include "cupid/simplex.hpp"
#include "cupid/sinkhorn.hpp"

namespace cupid {

struct ConjOtResult {
  double value = 0.0;   // equals minus the conjugate at mu
  Vec U;                // dual mean utilities, outside normalized to 0
  double gap = 0.0;     // optimality gap bound (0 for the exact LP backend)
  bool dual_unique = true;
};

// Transportation-problem evaluation of the conjugate for a finite-support
// error law: matches the K error types (masses = weights) with the |Y_0|
// options (masses = (mu_0, mu)), surplus = the error draws themselves.
// Exact dense simplex for small problems, annealed entropic solver above
// `simplex_entry_limit` plan entries.
inline ConjOtResult conj_ot(const DiscretizedDistribution& dist, const Vec& mu,
                            Eigen::Index simplex_entry_limit = 5000) {
  const Eigen::Index K = dist.num_points();
  const Eigen::Index Y0 = dist.num_options();
  const Eigen::Index Y = Y0 - 1;
  if (mu.size() != Y)
    throw std::invalid_argument("conj_ot: mu has wrong length");
  if ((mu.array() <= 0).any())
    throw std::invalid_argument("conj_ot: mu must be interior");
  const double mu0 = 1.0 - mu.sum();
  if (mu0 <= 0)
    throw std::invalid_argument("conj_ot: mu must be a strict sub-probability");

  Vec b(Y0);
  b(0) = mu0;
  b.tail(Y) = mu;

  ConjOtResult out;
  if (K * Y0 <= simplex_entry_limit) {
    // LP over the flattened plan, k-major: rows = type masses, cols = b.
    const Eigen::Index n = K * Y0;
    const Eigen::Index m = K + Y0;
    Mat A = Mat::Zero(m, n);
    Vec rhs(m), cost(n);
    for (Eigen::Index k = 0; k < K; ++k) {
      rhs(k) = dist.weights(k);
      for (Eigen::Index y = 0; y < Y0; ++y) {
        A(k, k * Y0 + y) = 1.0;
        A(K + y, k * Y0 + y) = 1.0;
        cost(k * Y0 + y) = -dist.support(k, y);  // maximize surplus
      }
    }
    rhs.tail(Y0) = b;
    LpSolution lp = simplex_solve(A, rhs, cost);
    if (lp.status != LpStatus::optimal)
      throw std::runtime_error("conj_ot: LP backend failed");
    out.value = -lp.objective;
    // Min-dual option potentials are -g; U_y = potential_0 - potential_y.
    out.U = Vec(Y);
    for (Eigen::Index y = 0; y < Y; ++y)
      out.U(y) = lp.duals(K + 1 + y) - lp.duals(K);
    out.gap = 0.0;
    // A nondegenerate transportation vertex has exactly K + Y0 - 1 positive
    // entries; fewer means a degenerate vertex with non-unique duals.
    Eigen::Index positive = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (lp.x(j) > 1e-12) ++positive;
    out.dual_unique = positive == K + Y0 - 1;
  } else {
    OtResult ot = sinkhorn_ot(dist.support, dist.weights, b, 2e-4);
    out.value = ot.value;
    out.U = Vec(Y);
    for (Eigen::Index y = 0; y < Y; ++y) out.U(y) = ot.g(0) - ot.g(1 + y);
    out.gap = ot.gap;
    out.dual_unique = false;  // entropic duals are smoothed, not vertex duals
  }
  return out;
}

}  // namespace cupid
