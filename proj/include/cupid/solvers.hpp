#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cupid/choice_models.hpp"
#include "cupid/discretized.hpp"
#include "cupid/lbfgs.hpp"
#include "cupid/market.hpp"
#include "cupid/simplex.hpp"

namespace cupid {

enum class SolveMethod { ipfp, minemax, choosiow_f, lp_discrete };

struct SolveOptions {
  double tol = 1e-9;       // max absolute margin residual at termination
  int max_iter = 100000;
  SolveMethod method = SolveMethod::ipfp;
  double damping = 0.5;    // step mixing for the fixed-point fallback
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double final_residual = std::numeric_limits<double>::infinity();
  double social_welfare = 0.0;
  double wall_time_seconds = 0.0;
};

struct SolveResult {
  Matching mu;
  SystematicUtilities utilities;
  GroupUtilities group_utilities;
  SolveReport report;
};

// One model per group; a length-1 list is broadcast to every group.
using ModelList = std::vector<ModelPtr>;

inline const ChoiceModel& model_at(const ModelList& models, Eigen::Index i) {
  if (models.empty()) throw std::invalid_argument("empty model list");
  return models.size() == 1 ? *models[0]
                            : *models.at(static_cast<std::size_t>(i));
}

inline ModelList broadcast(ModelPtr m) { return ModelList{std::move(m)}; }

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::vector<bool> row_mask(const SurplusMatrix& phi, Eigen::Index x) {
  std::vector<bool> mask(phi.num_y());
  for (Eigen::Index y = 0; y < phi.num_y(); ++y) mask[y] = phi.forbidden(x, y);
  return mask;
}
inline std::vector<bool> col_mask(const SurplusMatrix& phi, Eigen::Index y) {
  std::vector<bool> mask(phi.num_x());
  for (Eigen::Index x = 0; x < phi.num_x(); ++x) mask[x] = phi.forbidden(x, y);
  return mask;
}
inline bool any_forbidden(const SurplusMatrix& phi) {
  return phi.forbidden.any();
}

}  // namespace detail

// Generalized entropy of the matching: minus the mass-weighted conjugates of
// both sides' conditional matching patterns.
inline double matching_entropy(const ModelList& men, const ModelList& women,
                               const Matching& mu, const Margins& r) {
  // Iterative solvers can leave conditional choice masses above one by the
  // final residual; rescale those marginal overshoots before evaluating the
  // conjugates, which require sub-probability vectors.
  const auto subprob = [](Vec cond) {
    const double s = cond.sum();
    if (s > 1.0) cond *= 1.0 / s;
    return cond;
  };
  double e = 0.0;
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    e -= r.n(x) *
         model_at(men, x).conj(subprob(mu.mu.row(x).transpose() / r.n(x)));
  for (Eigen::Index y = 0; y < mu.num_y(); ++y)
    e -= r.m(y) * model_at(women, y).conj(subprob(mu.mu.col(y) / r.m(y)));
  return e;
}

// Social gain of a feasible matching: systematic surplus plus entropy.
inline double social_welfare(const ModelList& men, const ModelList& women,
                             const SurplusMatrix& phi, const Matching& mu,
                             const Margins& r, double feas_tol = 1e-6) {
  if (max_margin_residual(mu, r) > feas_tol)
    throw std::invalid_argument("social_welfare: matching is infeasible");
  double surplus = 0.0;
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    for (Eigen::Index y = 0; y < mu.num_y(); ++y)
      if (!phi.forbidden(x, y)) surplus += mu.mu(x, y) * phi.phi(x, y);
  return surplus + matching_entropy(men, women, mu, r);
}

// IPFP for logit errors on both sides: alternating closed-form quadratic
// updates in t = sqrt(mu_x0), T = sqrt(mu_0y) with kernel K = exp(Phi/2).
inline SolveResult solve_ipfp_logit(const SurplusMatrix& phi, const Margins& r,
                                    const SolveOptions& opts = {}) {
  detail::Stopwatch clock;
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("solve_ipfp_logit: dimension mismatch");

  Mat K(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      K(x, y) = phi.forbidden(x, y) ? 0.0 : std::exp(phi.phi(x, y) / 2.0);

  Vec t = Vec::Zero(X);
  Vec T = r.m.array().sqrt();  // start from everyone single on the women side
  SolveResult out;
  auto& rep = out.report;
  for (int it = 0; it < opts.max_iter; ++it) {
    Vec S = K * T;
    t = 0.5 * ((S.array().square() + 4.0 * r.n.array()).sqrt() - S.array());
    Vec S2 = K.transpose() * t;
    T = 0.5 * ((S2.array().square() + 4.0 * r.m.array()).sqrt() - S2.array());
    // Column margins hold exactly after the T update; check the rows.
    Vec row_excess =
        t.array().square() + t.array() * (K * T).array() - r.n.array();
    rep.final_residual = row_excess.cwiseAbs().maxCoeff();
    rep.iterations = it + 1;
    if (rep.final_residual <= opts.tol) {
      rep.converged = true;
      break;
    }
  }

  Mat mu = K.array() * (t * T.transpose()).array();
  out.mu = Matching(mu, t.array().square(), T.array().square());
  out.group_utilities.u = -(t.array().square() / r.n.array()).log();
  out.group_utilities.v = -(T.array().square() / r.m.array()).log();
  out.utilities.U = Mat::Zero(X, Y);
  out.utilities.V = Mat::Zero(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!phi.forbidden(x, y)) {
        out.utilities.U(x, y) = std::log(mu(x, y) / out.mu.mu_x0(x));
        out.utilities.V(x, y) = std::log(mu(x, y) / out.mu.mu_0y(y));
      }
  ModelList logit = broadcast(std::make_shared<LogitModel>());
  rep.social_welfare = social_welfare(logit, logit, phi, out.mu, r,
                                      std::max(1e-6, 10 * rep.final_residual));
  rep.wall_time_seconds = clock.seconds();
  return out;
}

namespace detail {

// Extracts the logit scale if the model is logit (1.0) or scaled logit;
// returns a negative value otherwise.
inline double logit_scale_of(const ChoiceModel& model) {
  if (dynamic_cast<const LogitModel*>(&model)) return 1.0;
  if (const auto* s = dynamic_cast<const ScaledModel*>(&model)) {
    if (dynamic_cast<const LogitModel*>(s->base().get())) return s->scale();
  }
  return -1.0;
}

// Heteroskedastic-logit IPFP: per-group scalar root-finds on the singles
// masses with kernel mu_xy = exp[(Phi + sig_x log mu_x0 + tau_y log mu_0y)
// / (sig_x + tau_y)].
inline SolveResult ipfp_scaled_logit(const Vec& sig, const Vec& tau,
                                     const SurplusMatrix& phi, const Margins& r,
                                     const SolveOptions& opts) {
  Stopwatch clock;
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  Vec log_mu_x0 = r.n.array().log();
  Vec log_mu_0y = r.m.array().log();  // start from everyone single
  Mat mu(X, Y);

  auto cell = [&](Eigen::Index x, Eigen::Index y, double lx0, double ly0) {
    return std::exp((phi.phi(x, y) + sig(x) * lx0 + tau(y) * ly0) /
                    (sig(x) + tau(y)));
  };
  // Monotone root-find for log mu_x0: row mass must equal n_x.
  auto solve_row = [&](Eigen::Index x) {
    double lo = std::log(r.n(x)) - 800.0, hi = std::log(r.n(x));
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      double total = std::exp(mid);
      for (Eigen::Index y = 0; y < Y; ++y)
        if (!phi.forbidden(x, y)) total += cell(x, y, mid, log_mu_0y(y));
      (total > r.n(x) ? hi : lo) = mid;
    }
    log_mu_x0(x) = 0.5 * (lo + hi);
  };
  auto solve_col = [&](Eigen::Index y) {
    double lo = std::log(r.m(y)) - 800.0, hi = std::log(r.m(y));
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      double total = std::exp(mid);
      for (Eigen::Index x = 0; x < X; ++x)
        if (!phi.forbidden(x, y)) total += cell(x, y, log_mu_x0(x), mid);
      (total > r.m(y) ? hi : lo) = mid;
    }
    log_mu_0y(y) = 0.5 * (lo + hi);
  };
  auto refresh_mu = [&] {
    for (Eigen::Index x = 0; x < X; ++x)
      for (Eigen::Index y = 0; y < Y; ++y)
        mu(x, y) = phi.forbidden(x, y)
                       ? 0.0
                       : cell(x, y, log_mu_x0(x), log_mu_0y(y));
  };

  SolveResult out;
  auto& rep = out.report;
  for (int it = 0; it < opts.max_iter; ++it) {
    for (Eigen::Index x = 0; x < X; ++x) solve_row(x);
    for (Eigen::Index y = 0; y < Y; ++y) solve_col(y);
    refresh_mu();
    // Columns are exact after their half-step; rows carry the residual.
    Vec row_excess = log_mu_x0.array().exp() + mu.rowwise().sum().array() -
                     r.n.array();
    rep.final_residual = row_excess.cwiseAbs().maxCoeff();
    rep.iterations = it + 1;
    if (rep.final_residual <= opts.tol) {
      rep.converged = true;
      break;
    }
  }

  out.mu = Matching(mu, log_mu_x0.array().exp(), log_mu_0y.array().exp());
  out.group_utilities.u =
      -sig.array() * (log_mu_x0.array() - r.n.array().log());
  out.group_utilities.v =
      -tau.array() * (log_mu_0y.array() - r.m.array().log());
  out.utilities.U = Mat::Zero(X, Y);
  out.utilities.V = Mat::Zero(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!phi.forbidden(x, y)) {
        out.utilities.U(x, y) =
            sig(x) * (std::log(mu(x, y)) - log_mu_x0(x));
        out.utilities.V(x, y) =
            tau(y) * (std::log(mu(x, y)) - log_mu_0y(y));
      }
  ModelList men(X), women(Y);
  for (Eigen::Index x = 0; x < X; ++x) men[x] = make_heteroskedastic_logit(sig(x));
  for (Eigen::Index y = 0; y < Y; ++y) women[y] = make_heteroskedastic_logit(tau(y));
  rep.social_welfare = social_welfare(men, women, phi, out.mu, r,
                                      std::max(1e-6, 10 * rep.final_residual));
  rep.wall_time_seconds = clock.seconds();
  return out;
}

}  // namespace detail

inline SolveResult solve_minemax(const ModelList& men, const ModelList& women,
                                 const SurplusMatrix& phi, const Margins& r,
                                 const SolveOptions& opts);

// IPFP for general per-group models. Scaled-logit families use closed-form
// kernels with scalar root-finds. Other families fall back to minimizing the
// equivalent convex surplus-split program: the alternating margin-projection
// map need not be contractive away from the logit family, while the convex
// program shares its fixed point and converges reliably.
inline SolveResult solve_ipfp_general(const ModelList& men,
                                      const ModelList& women,
                                      const SurplusMatrix& phi,
                                      const Margins& r,
                                      const SolveOptions& opts = {}) {
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("solve_ipfp_general: dimension mismatch");

  Vec sig(X), tau(Y);
  bool scaled = true;
  for (Eigen::Index x = 0; x < X && scaled; ++x) {
    sig(x) = detail::logit_scale_of(model_at(men, x));
    scaled = sig(x) > 0;
  }
  for (Eigen::Index y = 0; y < Y && scaled; ++y) {
    tau(y) = detail::logit_scale_of(model_at(women, y));
    scaled = tau(y) > 0;
  }
  if (scaled) return detail::ipfp_scaled_logit(sig, tau, phi, r, opts);

  if (detail::any_forbidden(phi))
    throw std::invalid_argument(
        "solve_ipfp_general: forbidden cells are only supported for "
        "logit-family models");

  return solve_minemax(men, women, phi, r, opts);
}

// Direct minimization of G(U, n) + H(Phi - U, m) over the surplus split U.
inline SolveResult solve_minemax(const ModelList& men, const ModelList& women,
                                 const SurplusMatrix& phi, const Margins& r,
                                 const SolveOptions& opts = {}) {
  detail::Stopwatch clock;
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("solve_minemax: dimension mismatch");
  const bool masked = detail::any_forbidden(phi);

  std::vector<std::vector<bool>> rmask(X), cmask(Y);
  for (Eigen::Index x = 0; x < X; ++x) rmask[x] = detail::row_mask(phi, x);
  for (Eigen::Index y = 0; y < Y; ++y) cmask[y] = detail::col_mask(phi, y);

  bool plain_logit = !masked;
  for (Eigen::Index x = 0; x < X && plain_logit; ++x)
    plain_logit = dynamic_cast<const LogitModel*>(&model_at(men, x)) != nullptr;
  for (Eigen::Index y = 0; y < Y && plain_logit; ++y)
    plain_logit =
        dynamic_cast<const LogitModel*>(&model_at(women, y)) != nullptr;

  std::function<double(const Vec&, Vec&)> fg;
  if (plain_logit) {
    // Vectorized objective/gradient when both sides are plain logit; the
    // generic per-group path below would spend most of its time on virtual
    // dispatch and temporaries at benchmark sizes.
    fg = [&, X, Y](const Vec& u_flat, Vec& grad) {
      Eigen::Map<const Mat> U(u_flat.data(), X, Y);
      Mat E = U.array().exp();
      Vec rs = E.rowwise().sum().array() + 1.0;
      Mat F = (phi.phi - U).array().exp();
      Vec cs = F.colwise().sum().transpose().array() + 1.0;
      const double f = (r.n.array() * rs.array().log()).sum() +
                       (r.m.array() * cs.array().log()).sum();
      Mat G = E.array().colwise() * (r.n.array() / rs.array());
      G.array() -= F.array().rowwise() * (r.m.array() / cs.array()).transpose();
      grad = Eigen::Map<const Vec>(G.data(), X * Y);
      return f;
    };
  } else {
    fg = [&](const Vec& u_flat, Vec& grad) {
      Eigen::Map<const Mat> U(u_flat.data(), X, Y);
      Mat G = Mat::Zero(X, Y);
      double f = 0.0;
      for (Eigen::Index x = 0; x < X; ++x) {
        Vec Ux = U.row(x).transpose();
        if (masked) Ux = forbidden_adjusted(Ux, rmask[x]);
        f += r.n(x) * model_at(men, x).emax(Ux);
        Vec p = model_at(men, x).probs(Ux);
        for (Eigen::Index y = 0; y < Y; ++y)
          if (!phi.forbidden(x, y)) G(x, y) += r.n(x) * p(y);
      }
      for (Eigen::Index y = 0; y < Y; ++y) {
        Vec Vy = phi.phi.col(y) - U.col(y);
        if (masked) Vy = forbidden_adjusted(Vy, cmask[y]);
        f += r.m(y) * model_at(women, y).emax(Vy);
        Vec q = model_at(women, y).probs(Vy);
        for (Eigen::Index x = 0; x < X; ++x)
          if (!phi.forbidden(x, y)) G(x, y) -= r.m(y) * q(x);
      }
      grad = Eigen::Map<const Vec>(G.data(), X * Y);
      return f;
    };
  }

  Mat U0m = phi.phi / 2.0;
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (phi.forbidden(x, y)) U0m(x, y) = 0.0;

  // Diagonal preconditioner: the Hessian block for cell (x, y) scales with
  // the cell's choice curvature, so optimizing z = scale_xy * U_xy removes
  // the margin heterogeneity and cuts the iteration count dramatically on
  // unbalanced markets. Convergence is still certified on the mass-unit
  // gradient. On the all-logit path a coarse IPFP pass supplies both a warm
  // start and curvature estimates n_x p (1-p) + m_y q (1-q).
  Vec scale(X * Y);
  if (plain_logit) {
    SolveOptions warm_opts;
    warm_opts.tol = 1e-2;
    warm_opts.max_iter = 2000;
    const Matching warm = solve_ipfp_logit(phi, r, warm_opts).mu;
    for (Eigen::Index y = 0; y < Y; ++y)
      for (Eigen::Index x = 0; x < X; ++x) {
        const double mu = std::max(warm.mu(x, y), 1e-12);
        const double p = mu / r.n(x);
        const double q = mu / r.m(y);
        U0m(x, y) = std::log(mu / std::max(warm.mu_x0(x), 1e-300));
        scale(x + X * y) =
            std::sqrt(std::max(mu * (2.0 - p - q), 1e-8 * (r.n(x) + r.m(y))));
      }
  } else {
    for (Eigen::Index y = 0; y < Y; ++y)
      for (Eigen::Index x = 0; x < X; ++x)
        scale(x + X * y) = std::sqrt(r.n(x) + r.m(y));
  }
  Vec u0 = Eigen::Map<const Vec>(U0m.data(), X * Y);
  auto fg_z = [&](const Vec& z, Vec& grad) {
    const double f = fg(z.cwiseQuotient(scale), grad);
    grad = grad.cwiseQuotient(scale);
    return f;
  };

  LbfgsOptions lopts;
  lopts.max_iter = opts.max_iter;
  lopts.grad_tol = opts.tol;
  lopts.memory = 20;
  lopts.grad_norm = [&](const Vec& gz) {
    return gz.cwiseProduct(scale).cwiseAbs().maxCoeff();
  };
  LbfgsResult res = lbfgs_minimize(fg_z, u0.cwiseProduct(scale), lopts);

  // Newton polish: near the optimum the objective is flat to rounding while
  // the analytic gradient stays accurate, so line-search methods stall a few
  // orders of magnitude above the gradient's own noise floor. A handful of
  // Newton steps -- Hessian-vector products by central differences of the
  // gradient, solved with conjugate gradients -- pushes the residual the
  // rest of the way down.
  if (!res.converged) {
    const auto mass_norm = [&](const Vec& gz) {
      return gz.cwiseProduct(scale).cwiseAbs().maxCoeff();
    };
    Vec z = res.x;
    Vec gz = res.gradient;
    double best = mass_norm(gz);
    const Eigen::Index N = z.size();
    Vec gp(N), gm(N), gtrial(N);
    const double znorm_h = 1e-6 * (1.0 + z.norm());
    for (int newton = 0; newton < 8 && best > opts.tol; ++newton) {
      Vec dz = Vec::Zero(N);
      Vec cg_r = -gz;
      Vec cg_p = cg_r;
      double rs = cg_r.squaredNorm();
      const double rs_target = rs * 1e-8;
      for (int cg = 0; cg < 200 && rs > rs_target; ++cg) {
        const double pn = cg_p.norm();
        if (pn == 0.0) break;
        const double h = znorm_h / pn;
        fg_z(z + h * cg_p, gp);
        fg_z(z - h * cg_p, gm);
        const Vec Ap = (gp - gm) / (2.0 * h);
        const double pAp = cg_p.dot(Ap);
        if (!(pAp > 0.0)) break;
        const double a = rs / pAp;
        dz += a * cg_p;
        cg_r -= a * Ap;
        const double rs_new = cg_r.squaredNorm();
        cg_p = cg_r + (rs_new / rs) * cg_p;
        rs = rs_new;
      }
      bool improved = false;
      double t = 1.0;
      for (int back = 0; back < 6; ++back, t *= 0.5) {
        fg_z(z + t * dz, gtrial);
        if (mass_norm(gtrial) < best) {
          z += t * dz;
          gz = gtrial;
          best = mass_norm(gz);
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    res.x = std::move(z);
    res.gradient = std::move(gz);
    if (best <= opts.tol) res.converged = true;
  }

  res.x = res.x.cwiseQuotient(scale);
  res.gradient = res.gradient.cwiseProduct(scale);

  SolveResult out;
  out.utilities.U = Eigen::Map<const Mat>(res.x.data(), X, Y);
  out.utilities.V = phi.phi - out.utilities.U;
  Mat mu(X, Y);
  Vec mu_x0(X);
  out.group_utilities.u = Vec(X);
  out.group_utilities.v = Vec(Y);
  for (Eigen::Index x = 0; x < X; ++x) {
    Vec Ux = out.utilities.U.row(x).transpose();
    Vec p = masked ? probs_masked(model_at(men, x), Ux, rmask[x])
                   : model_at(men, x).probs(Ux);
    mu.row(x) = (r.n(x) * p).transpose();
    mu_x0(x) = std::max(0.0, r.n(x) * (1.0 - p.sum()));
    out.group_utilities.u(x) = model_at(men, x).emax(
        masked ? forbidden_adjusted(Ux, rmask[x]) : Ux);
  }
  Vec mu_0y = (r.m - mu.colwise().sum().transpose()).cwiseMax(0.0);
  for (Eigen::Index y = 0; y < Y; ++y) {
    Vec Vy = out.utilities.V.col(y);
    out.group_utilities.v(y) = model_at(women, y).emax(
        masked ? forbidden_adjusted(Vy, cmask[y]) : Vy);
  }
  out.mu = Matching(mu, mu_x0, mu_0y);
  out.report.converged = res.converged;
  out.report.iterations = res.iterations;
  out.report.final_residual =
      res.gradient.size() ? res.gradient.cwiseAbs().maxCoeff() : 0.0;
  out.report.social_welfare =
      social_welfare(men, women, phi, out.mu, r,
                     std::max(1e-5, 10 * out.report.final_residual));
  out.report.wall_time_seconds = clock.seconds();
  return out;
}

// Convex minimization over group utilities (u, v) for logit errors; the
// gradient components are exactly the margin residuals.
inline SolveResult solve_F_choosiow(const SurplusMatrix& phi, const Margins& r,
                                    const SolveOptions& opts = {}) {
  detail::Stopwatch clock;
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  if (r.num_x() != X || r.num_y() != Y)
    throw std::invalid_argument("solve_F_choosiow: dimension mismatch");

  Mat K(X, Y);  // sqrt(n_x m_y) exp(Phi/2)
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      K(x, y) = phi.forbidden(x, y)
                    ? 0.0
                    : std::sqrt(r.n(x) * r.m(y)) * std::exp(phi.phi(x, y) / 2);

  auto fg = [&](const Vec& uv, Vec& grad) {
    Vec a = (-uv.head(X) / 2).array().exp();  // e^{-u/2}
    Vec b = (-uv.tail(Y) / 2).array().exp();
    Vec Kb = K * b;
    Vec Ka = K.transpose() * a;
    double f = (r.n.array() * (uv.head(X).array() +
                               (-uv.head(X)).array().exp() - 1.0))
                   .sum() +
               (r.m.array() *
                (uv.tail(Y).array() + (-uv.tail(Y)).array().exp() - 1.0))
                   .sum() +
               2.0 * a.dot(Kb);
    grad.resize(X + Y);
    grad.head(X) =
        r.n.array() * (1.0 - (-uv.head(X)).array().exp()) - a.array() * Kb.array();
    grad.tail(Y) =
        r.m.array() * (1.0 - (-uv.tail(Y)).array().exp()) - b.array() * Ka.array();
    return f;
  };

  // Diagonal preconditioner mirroring the margin masses (curvature in u_x
  // scales with n_x); convergence is certified on the mass-unit gradient.
  Vec scale(X + Y);
  scale.head(X) = r.n.array().sqrt();
  scale.tail(Y) = r.m.array().sqrt();
  auto fg_z = [&](const Vec& z, Vec& grad) {
    const double f = fg(z.cwiseQuotient(scale), grad);
    grad = grad.cwiseQuotient(scale);
    return f;
  };

  LbfgsOptions lopts;
  lopts.max_iter = opts.max_iter;
  lopts.grad_tol = opts.tol;
  lopts.memory = 20;
  lopts.grad_norm = [&](const Vec& gz) {
    return gz.cwiseProduct(scale).cwiseAbs().maxCoeff();
  };
  LbfgsResult res = lbfgs_minimize(fg_z, Vec::Zero(X + Y), lopts);
  res.x = res.x.cwiseQuotient(scale);
  res.gradient = res.gradient.cwiseProduct(scale);

  SolveResult out;
  Vec u = res.x.head(X), v = res.x.tail(Y);
  Vec a = (-u / 2).array().exp(), b = (-v / 2).array().exp();
  Mat mu = K.array() * (a * b.transpose()).array();
  out.mu = Matching(mu, r.n.array() * (-u).array().exp(),
                    r.m.array() * (-v).array().exp());
  out.group_utilities.u = u;
  out.group_utilities.v = v;
  out.utilities.U = Mat::Zero(X, Y);
  out.utilities.V = Mat::Zero(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!phi.forbidden(x, y)) {
        out.utilities.U(x, y) = std::log(mu(x, y) / out.mu.mu_x0(x));
        out.utilities.V(x, y) = std::log(mu(x, y) / out.mu.mu_0y(y));
      }
  out.report.converged = res.converged;
  out.report.iterations = res.iterations;
  out.report.final_residual =
      res.gradient.size() ? res.gradient.cwiseAbs().maxCoeff() : 0.0;
  ModelList logit = broadcast(std::make_shared<LogitModel>());
  out.report.social_welfare =
      social_welfare(logit, logit, phi, out.mu, r,
                     std::max(1e-5, 10 * out.report.final_residual));
  out.report.wall_time_seconds = clock.seconds();
  return out;
}

// Linear-programming solver for fully discretized error laws. Solves the
// assignment-polytope form whose variables split each error type's mass
// across partners; the matching is read off the type-level masses directly.
inline SolveResult solve_lp_discrete(
    const std::vector<DiscretizedDistribution>& men_dist,
    const std::vector<DiscretizedDistribution>& women_dist,
    const SurplusMatrix& phi, const Margins& r, const SolveOptions& opts = {}) {
  (void)opts;
  detail::Stopwatch clock;
  const Eigen::Index X = phi.num_x();
  const Eigen::Index Y = phi.num_y();
  if (static_cast<Eigen::Index>(men_dist.size()) != X ||
      static_cast<Eigen::Index>(women_dist.size()) != Y)
    throw std::invalid_argument("solve_lp_discrete: one distribution per group");
  for (Eigen::Index x = 0; x < X; ++x)
    if (men_dist[x].num_options() != Y + 1)
      throw std::invalid_argument("solve_lp_discrete: men support width");
  for (Eigen::Index y = 0; y < Y; ++y)
    if (women_dist[y].num_options() != X + 1)
      throw std::invalid_argument("solve_lp_discrete: women support width");

  // Variable layout: men blocks a^{xk}_{y0} (y0 = 0..Y), then women blocks
  // b^{yl}_{x0} (x0 = 0..X). Forbidden cells get no variable.
  std::vector<Eigen::Index> men_offset(X), women_offset(Y);
  Eigen::Index nv = 0;
  for (Eigen::Index x = 0; x < X; ++x) {
    men_offset[x] = nv;
    nv += men_dist[x].num_points() * (Y + 1);
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    women_offset[y] = nv;
    nv += women_dist[y].num_points() * (X + 1);
  }

  // Constraints: per (x,k) mass, per (y,l) mass, per non-forbidden (x,y)
  // consistency between the two sides' couple masses.
  Eigen::Index nc = 0;
  for (Eigen::Index x = 0; x < X; ++x) nc += men_dist[x].num_points();
  for (Eigen::Index y = 0; y < Y; ++y) nc += women_dist[y].num_points();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!phi.forbidden(x, y)) cells.emplace_back(x, y);
  const Eigen::Index nc_total = nc + static_cast<Eigen::Index>(cells.size());

  Mat A = Mat::Zero(nc_total, nv);
  Vec bvec = Vec::Zero(nc_total);
  Vec cost = Vec::Zero(nv);  // minimize the negated surplus

  Eigen::Index row = 0;
  for (Eigen::Index x = 0; x < X; ++x) {
    const auto& d = men_dist[x];
    for (Eigen::Index k = 0; k < d.num_points(); ++k, ++row) {
      bvec(row) = r.n(x) * d.weights(k);
      for (Eigen::Index y0 = 0; y0 <= Y; ++y0) {
        const Eigen::Index j = men_offset[x] + k * (Y + 1) + y0;
        A(row, j) = 1.0;
        cost(j) = -d.support(k, y0);
        if (y0 > 0 && phi.forbidden(x, y0 - 1)) cost(j) = 1e6;  // unused cell
      }
    }
  }
  for (Eigen::Index y = 0; y < Y; ++y) {
    const auto& d = women_dist[y];
    for (Eigen::Index l = 0; l < d.num_points(); ++l, ++row) {
      bvec(row) = r.m(y) * d.weights(l);
      for (Eigen::Index x0 = 0; x0 <= X; ++x0) {
        const Eigen::Index j = women_offset[y] + l * (X + 1) + x0;
        A(row, j) = 1.0;
        cost(j) = -d.support(l, x0);
        if (x0 > 0) {
          const Eigen::Index x = x0 - 1;
          if (phi.forbidden(x, y))
            cost(j) = 1e6;
          else
            cost(j) -= phi.phi(x, y);
        }
      }
    }
  }
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const auto [x, y] = cells[ci];
    for (Eigen::Index k = 0; k < men_dist[x].num_points(); ++k)
      A(row, men_offset[x] + k * (Y + 1) + (y + 1)) = 1.0;
    for (Eigen::Index l = 0; l < women_dist[y].num_points(); ++l)
      A(row, women_offset[y] + l * (X + 1) + (x + 1)) = -1.0;
    ++row;
  }

  LpSolution lp = simplex_solve(A, bvec, cost);
  if (lp.status != LpStatus::optimal)
    throw std::runtime_error("solve_lp_discrete: LP backend failed (status " +
                             std::to_string(static_cast<int>(lp.status)) + ")");

  Mat mu = Mat::Zero(X, Y);
  Vec mu_x0 = Vec::Zero(X), mu_0y = Vec::Zero(Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index k = 0; k < men_dist[x].num_points(); ++k) {
      mu_x0(x) += lp.x(men_offset[x] + k * (Y + 1));
      for (Eigen::Index y = 0; y < Y; ++y)
        mu(x, y) += lp.x(men_offset[x] + k * (Y + 1) + (y + 1));
    }
  for (Eigen::Index y = 0; y < Y; ++y)
    for (Eigen::Index l = 0; l < women_dist[y].num_points(); ++l)
      mu_0y(y) += lp.x(women_offset[y] + l * (X + 1));

  SolveResult out;
  out.mu = Matching(mu, mu_x0, mu_0y);
  out.report.converged = true;
  out.report.iterations = 0;
  out.report.final_residual = max_margin_residual(out.mu, r);
  out.report.social_welfare = -lp.objective;
  out.report.wall_time_seconds = clock.seconds();
  return out;
}

}  // namespace cupid
