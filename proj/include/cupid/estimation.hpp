#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cupid/choice_models.hpp"
#include "cupid/identification.hpp"
#include "cupid/lbfgs.hpp"
#include "cupid/market.hpp"
#include "cupid/rng.hpp"
#include "cupid/simulation.hpp"
#include "cupid/solvers.hpp"
#include "cupid/stats.hpp"

namespace cupid {

// Linearly independent basis surplus matrices; the surplus model is
// Phi = sum_k lambda_k * bases[k].
struct BasisSet {
  std::vector<Mat> bases;

  BasisSet() = default;
  explicit BasisSet(std::vector<Mat> b) : bases(std::move(b)) {
    if (bases.empty()) throw std::invalid_argument("BasisSet: empty");
    const Eigen::Index X = bases[0].rows(), Y = bases[0].cols();
    Mat flat(bases.size(), X * Y);
    for (std::size_t k = 0; k < bases.size(); ++k) {
      if (bases[k].rows() != X || bases[k].cols() != Y)
        throw std::invalid_argument("BasisSet: inconsistent shapes");
      flat.row(k) = Eigen::Map<const Vec>(bases[k].data(), X * Y).transpose();
    }
    if (Eigen::FullPivLU<Mat>(flat).rank() !=
        static_cast<Eigen::Index>(bases.size()))
      throw std::invalid_argument("BasisSet: bases are linearly dependent");
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(bases.size()); }

  Mat combine(const Vec& lambda) const {
    if (lambda.size() != size())
      throw std::invalid_argument("BasisSet: lambda length");
    Mat phi = Mat::Zero(bases[0].rows(), bases[0].cols());
    for (Eigen::Index k = 0; k < size(); ++k) phi += lambda(k) * bases[k];
    return phi;
  }

  // Comoments C^k = sum_xy mu_xy * basis_k(x, y).
  Vec comoments(const Mat& mu) const {
    Vec c(size());
    for (Eigen::Index k = 0; k < size(); ++k)
      c(k) = (mu.array() * bases[k].array()).sum();
    return c;
  }
};

// Full indicator basis: one matrix per cell.
inline BasisSet indicator_basis(Eigen::Index X, Eigen::Index Y) {
  std::vector<Mat> b;
  b.reserve(X * Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y) {
      Mat e = Mat::Zero(X, Y);
      e(x, y) = 1.0;
      b.push_back(std::move(e));
    }
  return BasisSet(std::move(b));
}

// Polynomial basis in the group labels, affinely mapped to [-1, 1].
inline BasisSet polynomial_basis(Eigen::Index X, Eigen::Index Y, int deg_x,
                                 int deg_y) {
  auto scaled = [](Eigen::Index i, Eigen::Index n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / (n - 1);
  };
  std::vector<Mat> b;
  for (int i = 0; i <= deg_x; ++i)
    for (int j = 0; j <= deg_y; ++j) {
      Mat p(X, Y);
      for (Eigen::Index x = 0; x < X; ++x)
        for (Eigen::Index y = 0; y < Y; ++y)
          p(x, y) = std::pow(scaled(x, X), i) * std::pow(scaled(y, Y), j);
      b.push_back(std::move(p));
    }
  return BasisSet(std::move(b));
}

// Parametric surplus model: a basis for Phi plus a map from distributional
// parameters theta to the two sides' choice models. Without a map, both
// sides are homoskedastic logit (the scale normalization pins sigma = 1).
struct ParamModelSpec {
  BasisSet basis;
  Eigen::Index theta_dim = 0;
  std::function<std::pair<ModelList, ModelList>(const Vec&)> dist_map;
  std::string normalization = "men sigma fixed to 1";

  std::pair<ModelList, ModelList> models(const Vec& theta) const {
    if (dist_map) return dist_map(theta);
    if (theta.size() != 0)
      throw std::invalid_argument("ParamModelSpec: theta without a dist_map");
    ModelList logit = broadcast(std::make_shared<LogitModel>());
    return {logit, logit};
  }
};

struct EstimationResult {
  Vec lambda;
  Vec theta;
  Vec se;  // for (lambda, theta), in that order; empty when not computed
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  Vec comoments;
  bool converged = false;
  // Minimum-distance extras.
  double j_stat = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index j_df = 0;
  double j_pvalue = std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::Index> pinned_directions;  // information eigen-guard
};

struct EstimationOptions {
  double outer_tol = 1e-9;  // gradient tolerance of the outer optimization
  int max_iter = 500;
  double fd_step = 1e-5;    // scaled per coordinate
  double inner_tol_factor = 0.01;  // inner solver tol relative to fd step
};

// Observed data normalized to the share units used throughout estimation:
// everything divided by the number of sampled individuals.
struct NormalizedData {
  Matching muhat;   // shares
  Margins rhat;     // shares; sum(n) + sum(m) = 1
  double individuals = 0.0;
  std::int64_t households = 0;
};

inline NormalizedData normalize_counts(const SampleCounts& data) {
  Vec N = data.couples.rowwise().sum() + data.single_men;
  Vec M = data.couples.colwise().sum().transpose() + data.single_women;
  const double S = N.sum() + M.sum();
  if (S <= 0) throw std::invalid_argument("normalize_counts: empty sample");
  NormalizedData out;
  out.muhat = Matching(data.couples / S, data.single_men / S,
                       data.single_women / S);
  out.rhat = Margins(N / S, M / S);
  out.individuals = S;
  out.households = data.households;
  return out;
}

namespace detail {

inline Matching solve_equilibrium(const ModelList& men, const ModelList& women,
                                  const Mat& phi, const Margins& r,
                                  double tol) {
  SurplusMatrix s(phi);
  SolveOptions o;
  o.tol = tol;
  o.max_iter = 500000;
  return solve_ipfp_general(men, women, s, r, o).mu;
}

}  // namespace detail

// Multinomial log-likelihood of the observed household counts under the
// equilibrium predicted at (lambda, theta). Zero observed cells contribute
// nothing; a zero predicted cell with observations returns -infinity.
inline double log_likelihood(const ParamModelSpec& spec, const Vec& lambda,
                             const Vec& theta, const SampleCounts& data,
                             double inner_tol = 1e-10) {
  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(theta);
  const Matching mu = detail::solve_equilibrium(
      men, women, spec.basis.combine(lambda), nd.rhat, inner_tol);
  const double Hl = 1.0 - mu.mu.sum();  // predicted households, share units
  double ll = 0.0;
  auto add = [&](double count, double pred) {
    if (count <= 0) return;
    if (pred <= 0) {
      ll = -std::numeric_limits<double>::infinity();
      return;
    }
    ll += count * std::log(pred / Hl);
  };
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    for (Eigen::Index y = 0; y < mu.num_y(); ++y)
      add(data.couples(x, y), mu.mu(x, y));
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    add(data.single_men(x), mu.mu_x0(x));
  for (Eigen::Index y = 0; y < mu.num_y(); ++y)
    add(data.single_women(y), mu.mu_0y(y));
  return ll;
}

inline std::pair<double, double> information_criteria(double loglik,
                                                      Eigen::Index dim,
                                                      double n_obs) {
  return {-2.0 * loglik + 2.0 * dim, -2.0 * loglik + std::log(n_obs) * dim};
}

inline std::pair<double, double> information_criteria(
    const EstimationResult& result, double n_obs) {
  return information_criteria(result.loglik,
                              result.lambda.size() + result.theta.size(),
                              n_obs);
}


// Moment matching: maximizes the concave map
//   lambda -> sum muhat * Phi^lambda - W(Phi^lambda, rhat),
// whose gradient is the gap between observed and predicted comoments.
inline EstimationResult moment_match(const ParamModelSpec& spec,
                                     const Vec& theta,
                                     const SampleCounts& data,
                                     const EstimationOptions& opts = {}) {
  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(theta);
  const Vec chat = spec.basis.comoments(nd.muhat.mu);
  const double inner_tol = std::min(1e-10, opts.outer_tol * 0.1);

  auto fg = [&](const Vec& lambda, Vec& grad) {
    const Mat phi = spec.basis.combine(lambda);
    const Matching mu =
        detail::solve_equilibrium(men, women, phi, nd.rhat, inner_tol);
    SurplusMatrix s(phi);
    const double W = social_welfare(men, women, s, mu, nd.rhat,
                                    std::max(1e-6, 100 * inner_tol));
    grad = spec.basis.comoments(mu.mu) - chat;  // minus the objective gradient
    return W - (nd.muhat.mu.array() * phi.array()).sum();
  };

  LbfgsOptions lopts;
  lopts.max_iter = opts.max_iter;
  lopts.grad_tol = opts.outer_tol;
  LbfgsResult res = lbfgs_minimize(fg, Vec::Zero(spec.basis.size()), lopts);

  EstimationResult out;
  out.lambda = res.x;
  out.theta = theta;
  out.converged = res.converged;
  const Matching mu_fit = detail::solve_equilibrium(
      men, women, spec.basis.combine(out.lambda), nd.rhat, inner_tol);
  out.comoments = spec.basis.comoments(mu_fit.mu);
  out.loglik = log_likelihood(spec, out.lambda, theta, data, inner_tol);
  const Eigen::Index dim = spec.basis.size() + theta.size();
  std::tie(out.aic, out.bic) = information_criteria(
      out.loglik, dim, static_cast<double>(data.households));
  return out;
}

// Full maximum likelihood over (lambda, theta) with central finite-difference
// gradients. Standard errors come from the observed information; directions
// with near-zero curvature are pinned and reported.
inline EstimationResult mle(const ParamModelSpec& spec,
                            const SampleCounts& data, const Vec& lambda0,
                            const Vec& theta0,
                            const EstimationOptions& opts = {}) {
  const Eigen::Index K = spec.basis.size();
  const Eigen::Index D = K + theta0.size();
  if (lambda0.size() != K)
    throw std::invalid_argument("mle: lambda0 length mismatch");

  auto ll_at = [&](const Vec& p, double inner_tol) {
    return log_likelihood(spec, p.head(K), p.tail(p.size() - K), data,
                          inner_tol);
  };

  // Optimize the mean log-likelihood per household: the raw sum scales with
  // the sample size, which would push the finite-difference noise floor of
  // the gradient above any reasonable tolerance.
  const double inv_hh = 1.0 / static_cast<double>(data.households);
  auto fg = [&](const Vec& p, Vec& grad) {
    grad.resize(D);
    // The equilibrium must be solved much more accurately than the
    // difference step resolves: residual-sized kinks in the inner solve
    // would otherwise dominate the finite-difference gradient.
    const double inner_tol = 1e-12;
    for (Eigen::Index i = 0; i < D; ++i) {
      const double h = opts.fd_step * (1.0 + std::abs(p(i)));
      Vec pp = p, pm = p;
      pp(i) += h;
      pm(i) -= h;
      grad(i) =
          -inv_hh * (ll_at(pp, inner_tol) - ll_at(pm, inner_tol)) / (2.0 * h);
    }
    return -inv_hh * ll_at(p, inner_tol);
  };

  Vec p0(D);
  p0.head(K) = lambda0;
  p0.tail(theta0.size()) = theta0;
  LbfgsOptions lopts;
  lopts.max_iter = opts.max_iter;
  // Central differences of the mean likelihood resolve gradients down to
  // roughly this level; anything tighter buys no statistical precision.
  lopts.grad_tol = std::max(opts.outer_tol, 1e-6);
  LbfgsResult res = lbfgs_minimize(fg, p0, lopts);

  EstimationResult out;
  out.lambda = res.x.head(K);
  out.theta = res.x.tail(theta0.size());
  out.converged = res.converged;
  out.loglik = -res.value * static_cast<double>(data.households);
  std::tie(out.aic, out.bic) =
      information_criteria(out.loglik, D, static_cast<double>(data.households));

  // Observed information by central second differences of the log-likelihood.
  // The step is wide relative to the inner solve accuracy so the curvature
  // signal dominates residual-level noise in each evaluation.
  const double inner_tol = 1e-12;
  Mat info(D, D);
  Vec h(D);
  for (Eigen::Index i = 0; i < D; ++i)
    h(i) = 1e-3 * (1.0 + std::abs(res.x(i)));
  const double ll0 = out.loglik;
  for (Eigen::Index i = 0; i < D; ++i) {
    for (Eigen::Index j = i; j < D; ++j) {
      double val;
      if (i == j) {
        Vec pp = res.x, pm = res.x;
        pp(i) += h(i);
        pm(i) -= h(i);
        val = (ll_at(pp, inner_tol) - 2.0 * ll0 + ll_at(pm, inner_tol)) /
              (h(i) * h(i));
      } else {
        Vec a = res.x, b = res.x, c = res.x, d = res.x;
        a(i) += h(i); a(j) += h(j);
        b(i) += h(i); b(j) -= h(j);
        c(i) -= h(i); c(j) += h(j);
        d(i) -= h(i); d(j) -= h(j);
        val = (ll_at(a, inner_tol) - ll_at(b, inner_tol) -
               ll_at(c, inner_tol) + ll_at(d, inner_tol)) /
              (4.0 * h(i) * h(j));
      }
      info(i, j) = info(j, i) = -val;
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(info);
  Vec ev = eig.eigenvalues();
  const double floor_ev = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vec inv_ev(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    if (ev(i) <= floor_ev) {
      out.pinned_directions.push_back(i);
      inv_ev(i) = 0.0;  // held fixed: contributes no variance
    } else {
      inv_ev(i) = 1.0 / ev(i);
    }
  }
  Mat cov = eig.eigenvectors() * inv_ev.asDiagonal() *
            eig.eigenvectors().transpose();
  out.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();

  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(out.theta);
  out.comoments = spec.basis.comoments(
      detail::solve_equilibrium(men, women, spec.basis.combine(out.lambda),
                                nd.rhat, inner_tol)
          .mu);
  return out;
}

// Minimum distance: weighted least squares of the basis surplus on the
// surplus identified directly from the data. With the efficient weighting
// the minimized quadratic form is the J-statistic, chi-squared with
// (#cells - K) degrees of freedom under the null.
inline EstimationResult min_distance(const ParamModelSpec& spec,
                                     const Vec& theta,
                                     const SampleCounts& data,
                                     const Mat& weighting = Mat()) {
  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(theta);
  const SurplusMatrix phihat =
      identify_surplus(men, women, nd.muhat, nd.rhat);
  const Eigen::Index X = phihat.num_x(), Y = phihat.num_y();

  std::vector<Eigen::Index> cells;
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      if (!phihat.forbidden(x, y)) cells.push_back(x * Y + y);
  const Eigen::Index C = static_cast<Eigen::Index>(cells.size());
  const Eigen::Index K = spec.basis.size();
  if (C < K)
    throw std::invalid_argument("min_distance: fewer interior cells than bases");

  Mat B(C, K);
  Vec target(C);
  for (Eigen::Index c = 0; c < C; ++c) {
    const Eigen::Index x = cells[c] / Y, y = cells[c] % Y;
    target(c) = phihat.phi(x, y);
    for (Eigen::Index k = 0; k < K; ++k) B(c, k) = spec.basis.bases[k](x, y);
  }
  Mat W = weighting.size() ? weighting : Mat::Identity(C, C);
  if (W.rows() != C || W.cols() != C)
    throw std::invalid_argument("min_distance: weighting shape mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> wc(W);
  if (wc.eigenvalues().minCoeff() < -1e-10 * wc.eigenvalues().cwiseAbs().maxCoeff())
    throw std::invalid_argument("min_distance: weighting not positive semidefinite");

  const Mat BtW = B.transpose() * W;
  EstimationResult out;
  out.lambda = (BtW * B).ldlt().solve(BtW * target);
  out.theta = theta;
  out.converged = true;
  const Vec resid = B * out.lambda - target;
  out.j_stat = resid.dot(W * resid);
  out.j_df = C - K;
  out.j_pvalue = out.j_df > 0
                     ? chi2_sf(out.j_stat, static_cast<double>(out.j_df))
                     : std::numeric_limits<double>::quiet_NaN();
  out.se = Vec((BtW * B).inverse().diagonal().cwiseMax(0.0).cwiseSqrt());
  out.loglik = log_likelihood(spec, out.lambda, theta, data);
  std::tie(out.aic, out.bic) =
      information_criteria(out.loglik, K + theta.size(),
                           static_cast<double>(data.households));
  const Matching mu_fit = detail::solve_equilibrium(
      men, women, spec.basis.combine(out.lambda), nd.rhat, 1e-10);
  out.comoments = spec.basis.comoments(mu_fit.mu);
  return out;
}

// Efficient minimum-distance weighting: inverse (pseudo-inverse) of the
// delta-method covariance of the identified surplus under multinomial
// household sampling.
inline Mat min_distance_efficient_weight(const ParamModelSpec& spec,
                                         const Vec& theta,
                                         const SampleCounts& data) {
  const auto models = spec.models(theta);
  const Eigen::Index X = data.num_x(), Y = data.num_y();
  const Eigen::Index cells = X * Y + X + Y;
  const double H = static_cast<double>(data.households);

  auto phihat_of = [&](const SampleCounts& d) {
    const NormalizedData nd = normalize_counts(d);
    const SurplusMatrix s =
        identify_surplus(models.first, models.second, nd.muhat, nd.rhat);
    if (s.forbidden.any())
      throw std::domain_error(
          "min_distance_efficient_weight: zero cells in the data");
    return Vec(Eigen::Map<const Vec>(s.phi.data(), X * Y));
  };

  // Jacobian of vec(Phi-hat) in the household counts, by central differences.
  Vec base_counts(cells);
  {
    Eigen::Index i = 0;
    for (Eigen::Index x = 0; x < X; ++x)
      for (Eigen::Index y = 0; y < Y; ++y) base_counts(i++) = data.couples(x, y);
    for (Eigen::Index x = 0; x < X; ++x) base_counts(i++) = data.single_men(x);
    for (Eigen::Index y = 0; y < Y; ++y) base_counts(i++) = data.single_women(y);
  }
  auto counts_to_sample = [&](const Vec& c) {
    SampleCounts d;
    d.couples = Mat(X, Y);
    d.single_men = Vec(X);
    d.single_women = Vec(Y);
    d.households = data.households;
    Eigen::Index i = 0;
    for (Eigen::Index x = 0; x < X; ++x)
      for (Eigen::Index y = 0; y < Y; ++y) d.couples(x, y) = c(i++);
    for (Eigen::Index x = 0; x < X; ++x) d.single_men(x) = c(i++);
    for (Eigen::Index y = 0; y < Y; ++y) d.single_women(y) = c(i++);
    return d;
  };

  Mat J(X * Y, cells);
  for (Eigen::Index i = 0; i < cells; ++i) {
    const double h = std::max(1e-3, 1e-6 * base_counts(i));
    Vec cp = base_counts, cm = base_counts;
    cp(i) += h;
    cm(i) = std::max(cm(i) - h, 1e-9);
    const double actual = cp(i) - cm(i);
    J.col(i) = (phihat_of(counts_to_sample(cp)) -
                phihat_of(counts_to_sample(cm))) /
               actual;
  }

  // Multinomial covariance of the counts: H (diag(pi) - pi pi').
  Vec pi = base_counts / base_counts.sum();
  Mat cov_counts = H * (Mat(pi.asDiagonal()) - pi * pi.transpose());
  Mat cov_phi = J * cov_counts * J.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov_phi);
  Vec ev = eig.eigenvalues();
  const double floor_ev = 1e-12 * std::max(1e-300, ev.cwiseAbs().maxCoeff());
  Vec inv_ev(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    inv_ev(i) = ev(i) > floor_ev ? 1.0 / ev(i) : 0.0;
  return eig.eigenvectors() * inv_ev.asDiagonal() *
         eig.eigenvectors().transpose();
}

// Entropy specification test: the gap between the generalized entropy of the
// moment-matched equilibrium and of the raw data, with a parametric
// bootstrap p-value.
struct SpecTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int bootstrap_failures = 0;
  Vec replicates;
};

inline double entropy_gap_statistic(const ParamModelSpec& spec,
                                    const Vec& theta, const SampleCounts& data,
                                    const EstimationOptions& opts,
                                    EstimationResult* fit_out = nullptr) {
  EstimationResult fit = moment_match(spec, theta, data, opts);
  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(theta);
  const Matching mu_fit = detail::solve_equilibrium(
      men, women, spec.basis.combine(fit.lambda), nd.rhat,
      std::min(1e-10, opts.outer_tol * 0.1));
  const double gap = matching_entropy(men, women, mu_fit, nd.rhat) -
                     matching_entropy(men, women, nd.muhat, nd.rhat);
  if (fit_out) *fit_out = std::move(fit);
  return std::max(0.0, gap);
}

inline SpecTestResult entropy_spec_test(const ParamModelSpec& spec,
                                        const Vec& theta,
                                        const SampleCounts& data,
                                        int n_boot = 999,
                                        std::uint64_t seed = 1,
                                        const EstimationOptions& opts = {}) {
  SpecTestResult out;
  EstimationResult fit;
  out.statistic = entropy_gap_statistic(spec, theta, data, opts, &fit);

  const NormalizedData nd = normalize_counts(data);
  auto [men, women] = spec.models(theta);
  const Matching mu_fit = detail::solve_equilibrium(
      men, women, spec.basis.combine(fit.lambda), nd.rhat, 1e-10);

  std::vector<double> reps;
  reps.reserve(n_boot);
  int exceed = 0;
  for (int b = 0; b < n_boot; ++b) {
    try {
      SampleCounts resample = sample_households(
          mu_fit, data.households, Rng::split_seed(seed, b));
      const double stat_b = entropy_gap_statistic(spec, theta, resample, opts);
      reps.push_back(stat_b);
      if (stat_b >= out.statistic) ++exceed;
    } catch (const std::exception&) {
      ++out.bootstrap_failures;
    }
  }
  if (out.bootstrap_failures * 20 > n_boot)
    throw std::runtime_error("entropy_spec_test: > 5% bootstrap failures");
  out.p_value = (1.0 + exceed) / (1.0 + static_cast<double>(reps.size()));
  out.replicates = Eigen::Map<const Vec>(reps.data(), reps.size());
  return out;
}

enum class Estimator { moment_match, mle, min_distance };

struct BootstrapResult {
  Mat replicates;  // n_boot x dim(lambda, theta)
  Vec se;
};

// Nonparametric bootstrap: multinomial resampling of households over all
// observed cells, re-estimating on each draw. Deterministic in the seed.
inline BootstrapResult bootstrap_se(const ParamModelSpec& spec,
                                    const Vec& theta, const SampleCounts& data,
                                    Estimator estimator, int n_boot,
                                    std::uint64_t seed,
                                    const EstimationOptions& opts = {}) {
  const NormalizedData nd = normalize_counts(data);
  const Eigen::Index K = spec.basis.size();
  const Eigen::Index D = K + theta.size();
  Mat reps(n_boot, D);
  Vec lambda_init = Vec::Zero(K);
  for (int b = 0; b < n_boot; ++b) {
    const SampleCounts resample = sample_households(
        nd.muhat, data.households, Rng::split_seed(seed, b));
    EstimationResult r;
    switch (estimator) {
      case Estimator::moment_match:
        r = moment_match(spec, theta, resample, opts);
        break;
      case Estimator::mle:
        r = mle(spec, resample, lambda_init, theta, opts);
        break;
      case Estimator::min_distance:
        r = min_distance(spec, theta, resample);
        break;
    }
    reps.row(b).head(K) = r.lambda.transpose();
    reps.row(b).tail(theta.size()) = r.theta.transpose();
  }
  BootstrapResult out;
  out.replicates = reps;
  out.se = Vec(D);
  for (Eigen::Index j = 0; j < D; ++j) {
    const double mean = reps.col(j).mean();
    out.se(j) = n_boot > 1
                    ? std::sqrt((reps.col(j).array() - mean).square().sum() /
                                (n_boot - 1))
                    : 0.0;
  }
  return out;
}

}  // namespace cupid
