#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cupid/choice_models.hpp"
#include "cupid/market.hpp"
#include "cupid/solvers.hpp"

namespace cupid {

namespace detail {

// Inversion that tolerates exact-zero cells: zeros are replaced by a mass
// too small to move any other coordinate of the closed-form inversions, and
// the returned entries at zero cells are meaningless (callers mask them).
inline Vec invert_with_zeros(const ChoiceModel& model, Vec cond) {
  bool has_zero = false;
  for (Eigen::Index i = 0; i < cond.size(); ++i)
    if (cond(i) <= 0.0) {
      cond(i) = 1e-100;
      has_zero = true;
    }
  (void)has_zero;
  return model.invert(cond);
}

}  // namespace detail

// Recovers the surplus split (U, V) and the group utilities (u, v) implied
// by an observed matching under known heterogeneity models.
inline std::pair<SystematicUtilities, GroupUtilities> identify_utilities(
    const ModelList& men, const ModelList& women, const Matching& mu,
    const Margins& r) {
  const Eigen::Index X = mu.num_x();
  const Eigen::Index Y = mu.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("identify_utilities: dimension mismatch");
  std::string offenders;
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (mu.mu(x, y) <= 0.0)
        offenders += " (" + std::to_string(x) + "," + std::to_string(y) + ")";
  if (!offenders.empty())
    throw std::domain_error("identify_utilities: boundary cells:" + offenders);
  if ((mu.mu_x0.array() <= 0).any() || (mu.mu_0y.array() <= 0).any())
    throw std::domain_error("identify_utilities: a singles mass is zero");

  SystematicUtilities uv;
  uv.U = Mat(X, Y);
  uv.V = Mat(X, Y);
  GroupUtilities g;
  g.u = Vec(X);
  g.v = Vec(Y);
  for (Eigen::Index x = 0; x < X; ++x) {
    Vec U = model_at(men, x).invert(mu.mu.row(x).transpose() / r.n(x));
    uv.U.row(x) = U.transpose();
    g.u(x) = model_at(men, x).emax(U);
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    Vec V = model_at(women, y).invert(mu.mu.col(y) / r.m(y));
    uv.V.col(y) = V;
    g.v(y) = model_at(women, y).emax(V);
  }
  return {std::move(uv), std::move(g)};
}

// Recovers the joint surplus Phi = U + V cellwise; cells with no matches are
// returned as forbidden. `smoothing` optionally adds a pseudo-mass to every
// couple cell before inverting (off by default).
inline SurplusMatrix identify_surplus(const ModelList& men,
                                      const ModelList& women,
                                      const Matching& mu, const Margins& r,
                                      double smoothing = 0.0) {
  const Eigen::Index X = mu.num_x();
  const Eigen::Index Y = mu.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("identify_surplus: dimension mismatch");
  if ((mu.mu_x0.array() <= 0).any() || (mu.mu_0y.array() <= 0).any())
    throw std::domain_error(
        "identify_surplus: identification needs positive singles masses");

  Mat m = mu.mu;
  if (smoothing > 0.0) m.array() += smoothing;
  BoolMat forbidden(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y) forbidden(x, y) = m(x, y) <= 0.0;

  Mat phi = Mat::Zero(X, Y);
  for (Eigen::Index x = 0; x < X; ++x) {
    Vec U = detail::invert_with_zeros(model_at(men, x),
                                      m.row(x).transpose() / r.n(x));
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!forbidden(x, y)) phi(x, y) += U(y);
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    Vec V = detail::invert_with_zeros(model_at(women, y), m.col(y) / r.m(y));
    for (Eigen::Index x = 0; x < X; ++x)
      if (!forbidden(x, y)) phi(x, y) += V(x);
  }
  return SurplusMatrix(phi, forbidden);
}

// Men's average share of the joint surplus in an (x,y) match, for logit or
// scaled-logit families. Cells with a zero denominator come back as NaN.
inline Mat surplus_share(const ModelList& men, const ModelList& women,
                         const Matching& mu, const Margins& r) {
  const Eigen::Index X = mu.num_x();
  const Eigen::Index Y = mu.num_y();
  Vec sig(X), tau(Y);
  for (Eigen::Index x = 0; x < X; ++x) {
    sig(x) = detail::logit_scale_of(model_at(men, x));
    if (sig(x) <= 0)
      throw std::invalid_argument(
          "surplus_share: requires logit or scaled-logit models");
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    tau(y) = detail::logit_scale_of(model_at(women, y));
    if (tau(y) <= 0)
      throw std::invalid_argument(
          "surplus_share: requires logit or scaled-logit models");
  }
  Mat share(X, Y);
  for (Eigen::Index x = 0; x < X; ++x) {
    const double ux = sig(x) * std::log(mu.mu_x0(x) / r.n(x));
    for (Eigen::Index y = 0; y < Y; ++y) {
      const double vy = tau(y) * std::log(mu.mu_0y(y) / r.m(y));
      const double denom = ux + vy;
      share(x, y) = std::abs(denom) < 1e-300
                        ? std::numeric_limits<double>::quiet_NaN()
                        : ux / denom;
    }
  }
  return share;
}

// Semi-elasticities of the choice probabilities with respect to the y-th
// mean utility: d log p_t / d U_y for every t. Closed form for logit,
// central finite differences otherwise. Entries with p_t = 0 come back NaN.
inline Vec semi_elasticities(const ChoiceModel& model, const Vec& U,
                             Eigen::Index y) {
  if (y < 0 || y >= U.size())
    throw std::invalid_argument("semi_elasticities: index out of range");
  if (dynamic_cast<const LogitModel*>(&model)) {
    const Vec p = model.probs(U);
    Vec out = Vec::Constant(U.size(), -p(y));
    out(y) += 1.0;
    return out;
  }
  const double h = 1e-5 * (1.0 + std::abs(U(y)));
  Vec Up = U, Um = U;
  Up(y) += h;
  Um(y) -= h;
  const Vec pp = model.probs(Up);
  const Vec pm = model.probs(Um);
  Vec out(U.size());
  for (Eigen::Index t = 0; t < U.size(); ++t) {
    if (pp(t) <= 0.0 || pm(t) <= 0.0)
      out(t) = std::numeric_limits<double>::quiet_NaN();
    else
      out(t) = (std::log(pp(t)) - std::log(pm(t))) / (2.0 * h);
  }
  return out;
}

}  // namespace cupid
