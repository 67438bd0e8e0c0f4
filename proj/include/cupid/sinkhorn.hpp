#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "cupid/market.hpp"

namespace cupid {

struct OtResult {
  double value = 0.0;  // primal surplus of a rounded feasible plan
  Vec f;               // row potentials (min-dual, f_k + g_y >= C_ky)
  Vec g;               // column potentials
  double gap = 0.0;    // dual bound minus primal value
  bool converged = false;
  int iterations = 0;
};

namespace detail {
inline double lse_row(const Vec& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}
}  // namespace detail

// Entropic-regularization solver for the transportation problem
//   max sum_{k,y} pi_{ky} C_{ky}   s.t.  pi 1 = a,  pi' 1 = b,  pi >= 0,
// with sum(a) = sum(b). Log-domain scaling iterations with the temperature
// annealed down to eta_final; the reported value comes from rounding the
// final plan back onto the feasible polytope, so it is a true lower bound,
// and `gap` bounds its distance to the optimum.
inline OtResult sinkhorn_ot(const Mat& C, const Vec& a, const Vec& b,
                            double eta_final = 1e-3, double marg_tol = 1e-9,
                            int max_iter_per_stage = 10000) {
  const Eigen::Index K = C.rows();
  const Eigen::Index Y = C.cols();
  OtResult out;
  out.f = Vec::Zero(K);
  out.g = Vec::Zero(Y);

  const Vec log_a = a.array().max(1e-300).log();
  const Vec log_b = b.array().max(1e-300).log();

  double eta = std::max(1.0, eta_final);
  int total_iter = 0;
  while (true) {
    for (int it = 0; it < max_iter_per_stage; ++it) {
      ++total_iter;
      // f_k <- eta * [ LSE_y((C_ky - g_y)/eta) - log a_k ]
      for (Eigen::Index k = 0; k < K; ++k) {
        Vec row = (C.row(k).transpose() - out.g) / eta;
        out.f(k) = eta * (detail::lse_row(row) - log_a(k));
      }
      for (Eigen::Index y = 0; y < Y; ++y) {
        Vec col = (C.col(y) - out.f) / eta;
        out.g(y) = eta * (detail::lse_row(col) - log_b(y));
      }
      // Row sums are exact right after the g-update only for g; check rows.
      double err = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        double s = 0.0;
        for (Eigen::Index y = 0; y < Y; ++y)
          s += std::exp((C(k, y) - out.f(k) - out.g(y)) / eta);
        err = std::max(err, std::abs(s - a(k)));
      }
      if (err <= marg_tol * (1.0 + a.maxCoeff())) break;
    }
    if (eta <= eta_final * (1.0 + 1e-12)) break;
    eta = std::max(eta_final, eta * 0.2);
  }
  out.iterations = total_iter;

  // Round the plan to exact feasibility (scale rows, then columns, then fix
  // the remaining deficit with a rank-one patch).
  Mat pi(K, Y);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index y = 0; y < Y; ++y)
      pi(k, y) = std::exp((C(k, y) - out.f(k) - out.g(y)) / eta);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double s = pi.row(k).sum();
    if (s > a(k) && s > 0) pi.row(k) *= a(k) / s;
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    const double s = pi.col(y).sum();
    if (s > b(y) && s > 0) pi.col(y) *= b(y) / s;
  }
  Vec err_a = a - pi.rowwise().sum();
  Vec err_b = b - pi.colwise().sum().transpose();
  const double deficit = err_a.sum();
  if (deficit > 1e-15) pi += (err_a / deficit) * err_b.transpose();

  out.value = (pi.array() * C.array()).sum();
  // Tighten f to dual feasibility for the bound.
  double dual = 0.0;
  for (Eigen::Index k = 0; k < K; ++k)
    dual += a(k) * (C.row(k).transpose() - out.g).maxCoeff();
  dual += b.dot(out.g);
  out.gap = dual - out.value;
  out.converged = out.gap <= 1e-2 * (1.0 + std::abs(out.value));
  return out;
}

}  // namespace cupid
