#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace cupid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

constexpr double kDefaultFeasTol = 1e-9;

// Masses of the man groups (n) and woman groups (m).
struct Margins {
  Vec n;
  Vec m;

  Margins() = default;
  Margins(Vec n_, Vec m_) : n(std::move(n_)), m(std::move(m_)) {
    if (n.size() == 0 || m.size() == 0)
      throw std::invalid_argument("Margins: empty group vector");
    if ((n.array() < 0).any() || (m.array() < 0).any())
      throw std::invalid_argument("Margins: negative mass");
    if (n.maxCoeff() <= 0 || m.maxCoeff() <= 0)
      throw std::invalid_argument("Margins: each side needs positive mass");
  }

  Eigen::Index num_x() const { return n.size(); }
  Eigen::Index num_y() const { return m.size(); }
};

// Systematic joint surplus. Forbidden cells stand for Phi = -infinity and are
// masked explicitly so that matrix arithmetic never sees non-finite values.
struct SurplusMatrix {
  Mat phi;
  BoolMat forbidden;

  SurplusMatrix() = default;
  explicit SurplusMatrix(Mat phi_)
      : phi(std::move(phi_)),
        forbidden(BoolMat::Constant(phi.rows(), phi.cols(), false)) {
    check();
  }
  SurplusMatrix(Mat phi_, BoolMat forbidden_)
      : phi(std::move(phi_)), forbidden(std::move(forbidden_)) {
    if (forbidden.rows() != phi.rows() || forbidden.cols() != phi.cols())
      throw std::invalid_argument("SurplusMatrix: mask shape mismatch");
    check();
  }

  Eigen::Index num_x() const { return phi.rows(); }
  Eigen::Index num_y() const { return phi.cols(); }

 private:
  void check() const {
    for (Eigen::Index x = 0; x < phi.rows(); ++x)
      for (Eigen::Index y = 0; y < phi.cols(); ++y)
        if (!forbidden(x, y) && !std::isfinite(phi(x, y)))
          throw std::invalid_argument("SurplusMatrix: non-finite entry at (" +
                                      std::to_string(x) + "," +
                                      std::to_string(y) + ")");
  }
};

// Matched masses plus singles on both sides.
struct Matching {
  Mat mu;      // couples, |X| x |Y|
  Vec mu_x0;   // single men
  Vec mu_0y;   // single women

  Matching() = default;
  Matching(Mat mu_, Vec mu_x0_, Vec mu_0y_)
      : mu(std::move(mu_)), mu_x0(std::move(mu_x0_)), mu_0y(std::move(mu_0y_)) {
    if (mu_x0.size() != mu.rows() || mu_0y.size() != mu.cols())
      throw std::invalid_argument("Matching: shape mismatch");
    if ((mu.array() < 0).any() || (mu_x0.array() < 0).any() ||
        (mu_0y.array() < 0).any())
      throw std::invalid_argument("Matching: negative mass");
  }

  Eigen::Index num_x() const { return mu.rows(); }
  Eigen::Index num_y() const { return mu.cols(); }
  double total_mass() const { return mu.sum() * 2 + mu_x0.sum() + mu_0y.sum(); }
};

// Mean-utility split of the surplus; U + V = Phi at a solution.
struct SystematicUtilities {
  Mat U;
  Mat V;
};

// Group average utilities u_x = G_x(U_x.), v_y = H_y(V_.y).
struct GroupUtilities {
  Vec u;
  Vec v;
};

// Residuals of the feasibility constraints, one per group:
// n_x - mu_x0 - sum_y mu_xy and m_y - mu_0y - sum_x mu_xy.
inline std::pair<Vec, Vec> margin_residuals(const Matching& mu,
                                            const Margins& r) {
  if (mu.num_x() != r.num_x() || mu.num_y() != r.num_y())
    throw std::invalid_argument("margin_residuals: dimension mismatch");
  Vec res_n = r.n - mu.mu_x0 - mu.mu.rowwise().sum();
  Vec res_m = r.m - mu.mu_0y - mu.mu.colwise().sum().transpose();
  return {std::move(res_n), std::move(res_m)};
}

inline double max_margin_residual(const Matching& mu, const Margins& r) {
  auto [rn, rm] = margin_residuals(mu, r);
  return std::max(rn.cwiseAbs().maxCoeff(), rm.cwiseAbs().maxCoeff());
}

// Conditional matching probabilities mu_{y|x} = mu_xy / n_x and
// mu_{x|y} = mu_xy / m_y.
inline std::pair<Mat, Mat> conditional_probs(const Matching& mu,
                                             const Margins& r) {
  if (mu.num_x() != r.num_x() || mu.num_y() != r.num_y())
    throw std::invalid_argument("conditional_probs: dimension mismatch");
  for (Eigen::Index x = 0; x < r.num_x(); ++x)
    if (r.n(x) <= 0.0)
      throw std::invalid_argument("conditional_probs: zero margin for man group " +
                                  std::to_string(x));
  for (Eigen::Index y = 0; y < r.num_y(); ++y)
    if (r.m(y) <= 0.0)
      throw std::invalid_argument(
          "conditional_probs: zero margin for woman group " + std::to_string(y));
  Mat given_x = mu.mu.array().colwise() / r.n.array();
  Mat given_y = mu.mu.array().rowwise() / r.m.transpose().array();
  return {std::move(given_x), std::move(given_y)};
}

}  // namespace cupid
