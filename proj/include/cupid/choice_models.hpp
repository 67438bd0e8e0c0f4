#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cupid/conj_ot.hpp"
#include "cupid/discretized.hpp"
#include "cupid/lbfgs.hpp"
#include "cupid/market.hpp"

namespace cupid {

// log(exp(0) + sum_y exp(v_y)), stabilized; the implicit 0 is the outside
// option.
inline double lse0(const Vec& v) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) m = std::max(m, v(i));
  double s = std::exp(-m);
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

inline double xlogx(double x) { return x > 0 ? x * std::log(x) : 0.0; }

// Per-group heterogeneity family. U is the vector of mean utilities of the
// inside options (the outside option is pinned at 0); mu is a strict
// sub-probability vector over the inside options.
class ChoiceModel {
 public:
  virtual ~ChoiceModel() = default;

  // Expected maximum utility G(U).
  virtual double emax(const Vec& U) const = 0;
  // Choice probabilities of the inside options, the gradient of emax.
  virtual Vec probs(const Vec& U) const = 0;
  // Convex conjugate G*(mu); +infinity outside the simplex is an error.
  virtual double conj(const Vec& mu) const {
    check_subprob(mu, /*strict=*/true);
    const Vec U = invert(mu);
    return mu.dot(U) - emax(U);
  }
  // Mean utilities rationalizing mu: probs(invert(mu)) = mu.
  virtual Vec invert(const Vec& mu) const {
    check_subprob(mu, /*strict=*/true);
    return newton_invert(mu);
  }

 protected:
  static void check_subprob(const Vec& mu, bool strict) {
    if ((mu.array() < 0).any())
      throw std::domain_error("choice model: negative probability");
    const double s = mu.sum();
    if (s > 1.0 + 1e-12)
      throw std::domain_error(
          "choice model: infeasible probabilities (sum > 1)");
    if (strict && ((mu.array() <= 0).any() || s >= 1.0 - 1e-14))
      throw std::domain_error(
          "choice model: inversion needs interior probabilities");
  }

  static double checked(double v) {
    if (!std::isfinite(v))
      throw std::overflow_error("choice model: non-finite value");
    return v;
  }

  // Damped Newton on probs(U) = mu with the logit inversion as the start and
  // a finite-difference Jacobian. Step is halved until the residual drops.
  Vec newton_invert(const Vec& mu) const {
    const Eigen::Index Y = mu.size();
    const double mu0 = 1.0 - mu.sum();
    Vec U = (mu.array() / mu0).log();
    double res = (probs(U) - mu).cwiseAbs().maxCoeff();
    for (int iter = 0; iter < 200 && res > 1e-13; ++iter) {
      Mat J(Y, Y);
      for (Eigen::Index y = 0; y < Y; ++y) {
        const double h = 1e-7 * (1.0 + std::abs(U(y)));
        Vec Up = U, Um = U;
        Up(y) += h;
        Um(y) -= h;
        J.col(y) = (probs(Up) - probs(Um)) / (2.0 * h);
      }
      Vec step = J.fullPivLu().solve(mu - probs(U));
      double alpha = 1.0;
      Vec U_new = U + step;
      double res_new = (probs(U_new) - mu).cwiseAbs().maxCoeff();
      while (res_new >= res && alpha > 1e-8) {
        alpha *= 0.5;
        U_new = U + alpha * step;
        res_new = (probs(U_new) - mu).cwiseAbs().maxCoeff();
      }
      if (res_new >= res) break;
      U = U_new;
      res = res_new;
    }
    return U;
  }
};

using ModelPtr = std::shared_ptr<const ChoiceModel>;

// Standard i.i.d. type-I extreme value errors (multinomial logit).
class LogitModel final : public ChoiceModel {
 public:
  double emax(const Vec& U) const override { return checked(lse0(U)); }

  Vec probs(const Vec& U) const override {
    const double g = emax(U);
    return (U.array() - g).exp();
  }

  double conj(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/false);
    double s = xlogx(1.0 - mu.sum());
    for (Eigen::Index y = 0; y < mu.size(); ++y) s += xlogx(mu(y));
    return s;
  }

  Vec invert(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    return (mu.array() / (1.0 - mu.sum())).log();
  }
};

// Two-layer nested logit; the outside option sits alone in its own nest.
class NestedLogitModel final : public ChoiceModel {
 public:
  NestedLogitModel(std::vector<std::vector<int>> nests, Vec lambda)
      : nests_(std::move(nests)), lambda_(std::move(lambda)) {
    if (static_cast<Eigen::Index>(nests_.size()) != lambda_.size())
      throw std::invalid_argument("nested logit: one lambda per nest");
    Eigen::Index count = 0;
    for (const auto& nest : nests_) count += nest.size();
    num_y_ = count;
    std::vector<bool> seen(count, false);
    for (const auto& nest : nests_) {
      if (nest.empty()) throw std::invalid_argument("nested logit: empty nest");
      for (int y : nest) {
        if (y < 0 || y >= count || seen[y])
          throw std::invalid_argument("nested logit: nests must partition Y");
        seen[y] = true;
      }
    }
    if ((lambda_.array() <= 0).any() || (lambda_.array() > 1).any())
      throw std::invalid_argument("nested logit: lambda must be in (0,1]");
  }

  double emax(const Vec& U) const override {
    check_size(U);
    Vec nest_vals(lambda_.size());
    for (std::size_t n = 0; n < nests_.size(); ++n)
      nest_vals(n) = lambda_(n) * log_inclusive(U, n);
    return checked(lse0(nest_vals));
  }

  Vec probs(const Vec& U) const override {
    check_size(U);
    const double g = emax(U);
    Vec p(num_y_);
    for (std::size_t n = 0; n < nests_.size(); ++n) {
      const double log_inc = log_inclusive(U, n);
      for (int y : nests_[n])
        p(y) = std::exp(U(y) / lambda_(n) + (lambda_(n) - 1.0) * log_inc - g);
    }
    return p;
  }

  double conj(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/false);
    check_size(mu);
    double s = xlogx(1.0 - mu.sum());
    for (std::size_t n = 0; n < nests_.size(); ++n) {
      double mu_n = 0.0;
      for (int y : nests_[n]) {
        s += lambda_(n) * xlogx(mu(y));
        mu_n += mu(y);
      }
      s += (1.0 - lambda_(n)) * xlogx(mu_n);
    }
    return s;
  }

  Vec invert(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    check_size(mu);
    const double log_mu0 = std::log(1.0 - mu.sum());
    Vec U(num_y_);
    for (std::size_t n = 0; n < nests_.size(); ++n) {
      double mu_n = 0.0;
      for (int y : nests_[n]) mu_n += mu(y);
      for (int y : nests_[n])
        U(y) = lambda_(n) * (std::log(mu(y)) - log_mu0) +
               (1.0 - lambda_(n)) * (std::log(mu_n) - log_mu0);
    }
    return U;
  }

  const std::vector<std::vector<int>>& nests() const { return nests_; }
  const Vec& lambda() const { return lambda_; }

 private:
  void check_size(const Vec& v) const {
    if (v.size() != num_y_)
      throw std::invalid_argument("nested logit: dimension mismatch");
  }
  double log_inclusive(const Vec& U, std::size_t n) const {
    double m = -std::numeric_limits<double>::infinity();
    for (int y : nests_[n]) m = std::max(m, U(y) / lambda_(n));
    double s = 0.0;
    for (int y : nests_[n]) s += std::exp(U(y) / lambda_(n) - m);
    return m + std::log(s);
  }

  std::vector<std::vector<int>> nests_;
  Vec lambda_;
  Eigen::Index num_y_ = 0;
};

// Errors of a base family multiplied by a positive scale sigma.
class ScaledModel final : public ChoiceModel {
 public:
  ScaledModel(ModelPtr base, double scale) : base_(std::move(base)), scale_(scale) {
    if (!base_) throw std::invalid_argument("scaled model: null base");
    if (!(scale_ > 0)) throw std::invalid_argument("scaled model: scale <= 0");
  }

  double emax(const Vec& U) const override {
    return scale_ * base_->emax(U / scale_);
  }
  Vec probs(const Vec& U) const override { return base_->probs(U / scale_); }
  double conj(const Vec& mu) const override { return scale_ * base_->conj(mu); }
  Vec invert(const Vec& mu) const override {
    return scale_ * base_->invert(mu);
  }

  double scale() const { return scale_; }
  const ModelPtr& base() const { return base_; }

 private:
  ModelPtr base_;
  double scale_;
};

inline ModelPtr make_heteroskedastic_logit(double sigma) {
  return std::make_shared<ScaledModel>(std::make_shared<LogitModel>(), sigma);
}

// Generalized extreme value family driven by a homogeneous aggregation
// function g over |Y_0| arguments (index 0 = outside). The Euler constant is
// omitted from all Emax values; this is consistent across the library.
class GevModel : public ChoiceModel {
 public:
  using Generator = std::function<double(const Vec&)>;
  using GeneratorGrad = std::function<Vec(const Vec&)>;

  GevModel(Generator g, GeneratorGrad grad, double degree, Eigen::Index num_y)
      : g_(std::move(g)), grad_(std::move(grad)), degree_(degree),
        num_y_(num_y) {
    if (!(degree_ > 0)) throw std::invalid_argument("gev: degree <= 0");
  }

  double emax(const Vec& U) const override {
    Vec t;
    const double c = shifted_args(U, t);
    return checked(c + std::log(g_(t)) / degree_);
  }

  Vec probs(const Vec& U) const override {
    Vec t;
    shifted_args(U, t);
    const double g = g_(t);
    const Vec dg = grad_(t);
    Vec p(num_y_);
    for (Eigen::Index y = 0; y < num_y_; ++y)
      p(y) = dg(y + 1) * t(y + 1) / (degree_ * g);
    return p;
  }

 protected:
  // t = exp(w - c) with w = (0, U) and c = max w, exploiting homogeneity to
  // keep the generator arguments in (0, 1].
  double shifted_args(const Vec& U, Vec& t) const {
    if (U.size() != num_y_)
      throw std::invalid_argument("gev: dimension mismatch");
    double c = 0.0;
    for (Eigen::Index y = 0; y < num_y_; ++y) c = std::max(c, U(y));
    t = Vec(num_y_ + 1);
    t(0) = std::exp(-c);
    for (Eigen::Index y = 0; y < num_y_; ++y) t(y + 1) = std::exp(U(y) - c);
    return c;
  }

  Generator g_;
  GeneratorGrad grad_;
  double degree_;
  Eigen::Index num_y_;
};

// Flexible correlation structure: pairwise aggregation with weights b_{yy'},
// curvature parameters sigma and tau. Identity b with tau = sigma = 1 is
// exactly the logit.
class FcMnlModel final : public ChoiceModel {
 public:
  FcMnlModel(Mat b, double sigma, double tau)
      : b_(std::move(b)), sigma_(sigma), tau_(tau) {
    const Eigen::Index n0 = b_.rows();
    if (b_.cols() != n0 || n0 < 2)
      throw std::invalid_argument("fcmnl: b must be square over Y_0");
    if (!b_.isApprox(b_.transpose(), 1e-12))
      throw std::invalid_argument("fcmnl: b must be symmetric");
    if ((b_.array() < 0).any())
      throw std::invalid_argument("fcmnl: b must be nonnegative");
    for (Eigen::Index i = 0; i < n0; ++i)
      if (std::abs(b_(i, i) - 1.0) > 1e-12)
        throw std::invalid_argument("fcmnl: b must have unit diagonal");
    if (!(sigma_ > 0 && sigma_ <= 1))
      throw std::invalid_argument("fcmnl: sigma must be in (0,1]");
    if (!(tau_ >= 1) || tau_ * sigma_ > 1 + 1e-12)
      throw std::invalid_argument("fcmnl: need tau >= 1 and tau*sigma <= 1");
  }

  double emax(const Vec& U) const override {
    Vec t;
    const double c = shift(U, t);
    return checked(c + std::log(gen(t)) / tau_);
  }

  Vec probs(const Vec& U) const override {
    Vec t;
    shift(U, t);
    const double g = gen(t);
    const Eigen::Index n0 = b_.rows();
    Vec s = t.array().pow(1.0 / sigma_);
    Vec p(n0 - 1);
    for (Eigen::Index y = 1; y < n0; ++y) {
      if (s(y) == 0.0) {
        p(y - 1) = 0.0;
        continue;
      }
      double acc = 0.0;
      for (Eigen::Index z = 0; z < n0; ++z) {
        const double m = 0.5 * (s(y) + s(z));
        acc += b_(y, z) * std::pow(m, tau_ * sigma_ - 1.0);
      }
      p(y - 1) = s(y) * acc / g;
    }
    return p;
  }

  const Mat& b() const { return b_; }
  double sigma() const { return sigma_; }
  double tau() const { return tau_; }

 private:
  double shift(const Vec& U, Vec& t) const {
    if (U.size() + 1 != b_.rows())
      throw std::invalid_argument("fcmnl: dimension mismatch");
    double c = 0.0;
    for (Eigen::Index y = 0; y < U.size(); ++y) c = std::max(c, U(y));
    t = Vec(U.size() + 1);
    t(0) = std::exp(-c);
    for (Eigen::Index y = 0; y < U.size(); ++y) t(y + 1) = std::exp(U(y) - c);
    return c;
  }

  // g(t) = sum_{y,y'} b_{yy'} ((t_y^{1/sigma} + t_{y'}^{1/sigma})/2)^{tau*sigma},
  // homogeneous of degree tau.
  double gen(const Vec& t) const {
    const Eigen::Index n0 = b_.rows();
    Vec s = t.array().pow(1.0 / sigma_);
    double g = 0.0;
    for (Eigen::Index y = 0; y < n0; ++y)
      for (Eigen::Index z = 0; z < n0; ++z)
        g += b_(y, z) * std::pow(0.5 * (s(y) + s(z)), tau_ * sigma_);
    return g;
  }

  Mat b_;
  double sigma_;
  double tau_;
};

// Error law given by an explicit finite support; Emax and probabilities are
// exact sums over the support, the conjugate is a transportation problem.
class DiscretizedModel final : public ChoiceModel {
 public:
  explicit DiscretizedModel(DiscretizedDistribution dist)
      : dist_(std::move(dist)) {}

  double emax(const Vec& U) const override {
    check_size(U);
    double total = 0.0;
    for (Eigen::Index k = 0; k < dist_.num_points(); ++k)
      total += dist_.weights(k) * row_max(U, k, nullptr);
    return checked(total);
  }

  Vec probs(const Vec& U) const override {
    check_size(U);
    Vec p = Vec::Zero(U.size());
    for (Eigen::Index k = 0; k < dist_.num_points(); ++k) {
      Eigen::Index arg = 0;
      row_max(U, k, &arg);
      if (arg > 0) p(arg - 1) += dist_.weights(k);
    }
    return p;
  }

  double conj(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    return -conj_ot(dist_, mu).value;
  }

  Vec invert(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    return conj_ot(dist_, mu).U;
  }

  const DiscretizedDistribution& dist() const { return dist_; }

 private:
  void check_size(const Vec& v) const {
    if (v.size() + 1 != dist_.num_options())
      throw std::invalid_argument("discretized model: dimension mismatch");
  }
  // max over options of (w_y + eps_y^k) with w = (0, U); ties go to the
  // lowest option index.
  double row_max(const Vec& U, Eigen::Index k, Eigen::Index* arg) const {
    double best = dist_.support(k, 0);
    Eigen::Index best_y = 0;
    for (Eigen::Index y = 1; y < dist_.num_options(); ++y) {
      const double v = U(y - 1) + dist_.support(k, y);
      if (v > best) {
        best = v;
        best_y = y;
      }
    }
    if (arg) *arg = best_y;
    return best;
  }

  DiscretizedDistribution dist_;
};

// Random-coefficients logit: errors eps = Z e + T eta with eta i.i.d. type-I
// EV and e integrated over fixed quadrature draws. T = 0 is the pure
// characteristics model.
class RcLogitModel final : public ChoiceModel {
 public:
  RcLogitModel(Mat Z, DiscretizedDistribution e_draws, double T)
      : Z_(std::move(Z)), e_draws_(std::move(e_draws)), T_(T) {
    if (T_ < 0) throw std::invalid_argument("rc logit: negative temperature");
    if (Z_.cols() != e_draws_.num_options())
      throw std::invalid_argument("rc logit: Z columns must match draw dim");
    // Precompute per-draw offsets (Z e_i)_y, K x |Y_0|.
    offsets_ = e_draws_.support * Z_.transpose();
  }

  double emax(const Vec& U) const override {
    check_size(U);
    double total = 0.0;
    for (Eigen::Index k = 0; k < offsets_.rows(); ++k)
      total += e_draws_.weights(k) * draw_value(U, k);
    return checked(total);
  }

  Vec probs(const Vec& U) const override {
    check_size(U);
    Vec p = Vec::Zero(U.size());
    for (Eigen::Index k = 0; k < offsets_.rows(); ++k)
      p += e_draws_.weights(k) * draw_probs(U, k);
    return p;
  }

  double conj(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    Vec U;
    return -dual_minimize(mu, U);
  }

  Vec invert(const Vec& mu) const override {
    check_subprob(mu, /*strict=*/true);
    Vec U;
    dual_minimize(mu, U);
    return U;
  }

  double temperature() const { return T_; }
  const Mat& Z() const { return Z_; }
  const DiscretizedDistribution& e_draws() const { return e_draws_; }

  // Minimizes emax_T(U) - mu.U over U; returns the minimum (= minus the
  // conjugate) and the minimizer. T = 0 is handled by annealing a smoothing
  // temperature down and evaluating the final value at T = 0.
  double dual_minimize(const Vec& mu, Vec& U_out) const {
    check_subprob(mu, /*strict=*/true);
    if (mu.size() + 1 != Z_.rows())
      throw std::invalid_argument("rc logit: dimension mismatch");
    Vec U = (mu.array() / (1.0 - mu.sum())).log();
    std::vector<double> temps;
    if (T_ > 0) {
      temps = {T_};
    } else {
      for (double t = 0.5; t > 1e-3; t *= 0.3) temps.push_back(t);
      temps.push_back(1e-3);
    }
    double value = 0.0;
    for (double temp : temps) {
      auto fg = [&](const Vec& u, Vec& grad) {
        double f = smoothed_emax(u, temp) - mu.dot(u);
        grad = smoothed_probs(u, temp) - mu;
        return f;
      };
      LbfgsOptions opts;
      opts.max_iter = 600;
      opts.grad_tol = 1e-11;
      LbfgsResult res = lbfgs_minimize(fg, U, opts);
      U = res.x;
      value = res.value;
    }
    if (T_ == 0) {
      // Report the exact piecewise-linear objective at the smoothed argmin.
      double v = 0.0;
      for (Eigen::Index k = 0; k < offsets_.rows(); ++k) {
        double best = offsets_(k, 0);
        for (Eigen::Index y = 1; y < Z_.rows(); ++y)
          best = std::max(best, U(y - 1) + offsets_(k, y));
        v += e_draws_.weights(k) * best;
      }
      value = v - mu.dot(U);
    }
    U_out = U;
    return value;
  }

 private:
  void check_size(const Vec& v) const {
    if (v.size() + 1 != Z_.rows())
      throw std::invalid_argument("rc logit: dimension mismatch");
  }

  double draw_value(const Vec& U, Eigen::Index k) const {
    return smoothed_draw_value(U, k, T_);
  }
  double smoothed_draw_value(const Vec& U, Eigen::Index k, double temp) const {
    Vec w(Z_.rows());
    w(0) = offsets_(k, 0);
    for (Eigen::Index y = 1; y < Z_.rows(); ++y)
      w(y) = U(y - 1) + offsets_(k, y);
    if (temp == 0.0) return w.maxCoeff();
    const double m = w.maxCoeff();
    return m + temp * std::log(((w.array() - m) / temp).exp().sum());
  }

  double smoothed_emax(const Vec& U, double temp) const {
    double total = 0.0;
    for (Eigen::Index k = 0; k < offsets_.rows(); ++k)
      total += e_draws_.weights(k) * smoothed_draw_value(U, k, temp);
    return total;
  }

  Vec draw_probs(const Vec& U, Eigen::Index k) const {
    return smoothed_draw_probs(U, k, T_);
  }
  Vec smoothed_draw_probs(const Vec& U, Eigen::Index k, double temp) const {
    const Eigen::Index n0 = Z_.rows();
    Vec w(n0);
    w(0) = offsets_(k, 0);
    for (Eigen::Index y = 1; y < n0; ++y) w(y) = U(y - 1) + offsets_(k, y);
    Vec p = Vec::Zero(n0 - 1);
    if (temp == 0.0) {
      Eigen::Index arg;
      w.maxCoeff(&arg);
      // maxCoeff breaks ties at the lowest index, matching the convention.
      if (arg > 0) p(arg - 1) = 1.0;
      return p;
    }
    const double m = w.maxCoeff();
    Vec ew = ((w.array() - m) / temp).exp();
    ew /= ew.sum();
    for (Eigen::Index y = 1; y < n0; ++y) p(y - 1) = ew(y);
    return p;
  }

  Vec smoothed_probs(const Vec& U, double temp) const {
    Vec p = Vec::Zero(Z_.rows() - 1);
    for (Eigen::Index k = 0; k < offsets_.rows(); ++k)
      p += e_draws_.weights(k) * smoothed_draw_probs(U, k, temp);
    return p;
  }

  Mat Z_;
  DiscretizedDistribution e_draws_;
  double T_;
  Mat offsets_;
};

struct ConjRcResult {
  double value = 0.0;  // equals minus the conjugate at mu
  Vec U;
};

inline ConjRcResult conj_rc(const RcLogitModel& model, const Vec& mu) {
  ConjRcResult out;
  out.value = model.dual_minimize(mu, out.U);
  return out;
}

// Forbidden alternatives enter the full-support code paths as a large finite
// penalty scaled to the live utilities; probabilities are then zeroed.
inline Vec forbidden_adjusted(const Vec& U, const std::vector<bool>& forbidden) {
  double m = 0.0;
  for (Eigen::Index y = 0; y < U.size(); ++y)
    if (!forbidden[y]) m = std::max(m, std::abs(U(y)));
  const double large = 100.0 * (1.0 + m);
  Vec out = U;
  for (Eigen::Index y = 0; y < U.size(); ++y)
    if (forbidden[y]) out(y) = -large;
  return out;
}

inline Vec probs_masked(const ChoiceModel& model, const Vec& U,
                        const std::vector<bool>& forbidden) {
  Vec p = model.probs(forbidden_adjusted(U, forbidden));
  for (Eigen::Index y = 0; y < p.size(); ++y)
    if (forbidden[y]) p(y) = 0.0;
  return p;
}

}  // namespace cupid
