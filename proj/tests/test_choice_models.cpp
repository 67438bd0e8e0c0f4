#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <memory>

#include "cupid/choice_models.hpp"
#include "cupid/lbfgs.hpp"
#include "cupid/rng.hpp"

using namespace cupid;

namespace {

// Random strictly interior sub-probability vector over `n` inside options.
Vec random_interior_mu(Rng& rng, Eigen::Index n) {
  Vec w(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) w(i) = 0.05 + rng.uniform();
  w /= w.sum();
  return w.tail(n);
}

Vec random_U(Rng& rng, Eigen::Index n, double span = 2.0) {
  Vec u(n);
  for (Eigen::Index i = 0; i < n; ++i) u(i) = span * (2.0 * rng.uniform() - 1.0);
  return u;
}

// Direct maximization oracle for the conjugate: sup_U mu.U - emax(U),
// with the gradient mu - probs(U).
double conj_by_maximization(const ChoiceModel& model, const Vec& mu) {
  auto fg = [&](const Vec& U, Vec& grad) {
    grad = model.probs(U) - mu;
    return model.emax(U) - mu.dot(U);
  };
  LbfgsOptions opts;
  opts.grad_tol = 1e-12;
  opts.max_iter = 2000;
  LbfgsResult res = lbfgs_minimize(fg, Vec::Zero(mu.size()), opts);
  return -res.value;
}

double fd_emax(const ChoiceModel& model, const Vec& U, Eigen::Index y) {
  const double h = 1e-6 * (1.0 + std::abs(U(y)));
  Vec up = U, um = U;
  up(y) += h;
  um(y) -= h;
  return (model.emax(up) - model.emax(um)) / (2.0 * h);
}

NestedLogitModel two_nest_model(double l0, double l1) {
  return NestedLogitModel({{0, 1}, {2, 3}}, (Vec(2) << l0, l1).finished());
}

}  // namespace

TEST_CASE("logit emax closed form") {
  LogitModel logit;
  REQUIRE_THAT(logit.emax((Vec(1) << 0.0).finished()),
               Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
  REQUIRE_THAT(logit.emax((Vec(1) << std::log(3.0)).finished()),
               Catch::Matchers::WithinAbs(std::log(4.0), 1e-15));
}

TEST_CASE("logit probabilities closed form") {
  LogitModel logit;
  REQUIRE_THAT(logit.probs((Vec(1) << 0.0).finished())(0),
               Catch::Matchers::WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(logit.probs((Vec(1) << std::log(3.0)).finished())(0),
               Catch::Matchers::WithinAbs(0.75, 1e-15));
}

TEST_CASE("logit conjugate closed form") {
  LogitModel logit;
  REQUIRE_THAT(logit.conj((Vec(1) << 0.5).finished()),
               Catch::Matchers::WithinAbs(-std::log(2.0), 1e-15));
  REQUIRE_THAT(logit.conj((Vec(2) << 1.0 / 3, 1.0 / 3).finished()),
               Catch::Matchers::WithinAbs(-std::log(3.0), 1e-14));
}

TEST_CASE("logit inversion closed form") {
  LogitModel logit;
  Vec U = logit.invert((Vec(2) << 0.25, 0.25).finished());
  REQUIRE_THAT(U(0), Catch::Matchers::WithinAbs(-std::log(2.0), 1e-14));
  REQUIRE_THAT(U(1), Catch::Matchers::WithinAbs(-std::log(2.0), 1e-14));
}

TEST_CASE("infeasible probability vectors are rejected") {
  LogitModel logit;
  REQUIRE_THROWS_WITH(logit.conj((Vec(2) << 0.7, 0.7).finished()),
                      Catch::Matchers::ContainsSubstring("infeasible"));
  REQUIRE_THROWS_AS(logit.invert((Vec(1) << 1.0).finished()),
                    std::domain_error);
}

TEST_CASE("nested logit probabilities match finite differences of emax") {
  NestedLogitModel nl = two_nest_model(0.6, 0.9);
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    Vec U = random_U(rng, 4);
    Vec p = nl.probs(U);
    for (Eigen::Index y = 0; y < 4; ++y) {
      const double fd = fd_emax(nl, U, y);
      REQUIRE_THAT(p(y), Catch::Matchers::WithinRel(fd, 1e-6));
    }
  }
}

TEST_CASE("nested logit with unit lambdas collapses to logit") {
  NestedLogitModel nl = two_nest_model(1.0, 1.0);
  LogitModel logit;
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    Vec mu = random_interior_mu(rng, 4);
    Vec U = random_U(rng, 4);
    REQUIRE_THAT(nl.emax(U), Catch::Matchers::WithinAbs(logit.emax(U), 1e-10));
    REQUIRE((nl.probs(U) - logit.probs(U)).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE_THAT(nl.conj(mu), Catch::Matchers::WithinAbs(logit.conj(mu), 1e-10));
    REQUIRE((nl.invert(mu) - logit.invert(mu)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("nested logit partition and parameter validation") {
  REQUIRE_THROWS_AS(NestedLogitModel({{0, 1}, {1, 2}},
                                     (Vec(2) << 0.5, 0.5).finished()),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(NestedLogitModel({{0, 1}}, (Vec(1) << 1.5).finished()),
                    std::invalid_argument);
}

TEST_CASE("fcmnl with identity weights and unit parameters is logit") {
  FcMnlModel fc(Mat::Identity(4, 4), 1.0, 1.0);
  LogitModel logit;
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    Vec U = random_U(rng, 3);
    Vec mu = random_interior_mu(rng, 3);
    REQUIRE_THAT(fc.emax(U), Catch::Matchers::WithinAbs(logit.emax(U), 1e-10));
    REQUIRE((fc.probs(U) - logit.probs(U)).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE_THAT(fc.conj(mu), Catch::Matchers::WithinAbs(logit.conj(mu), 1e-10));
    REQUIRE((fc.invert(mu) - logit.invert(mu)).cwiseAbs().maxCoeff() < 1e-8);
  }
  FcMnlModel fc1(Mat::Identity(2, 2), 1.0, 1.0);
  REQUIRE_THAT(fc1.emax((Vec(1) << 0.0).finished().eval()),
               Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("fcmnl inversion round-trips through probs") {
  Mat b = Mat::Identity(4, 4);
  b(1, 2) = b(2, 1) = 0.5;
  b(0, 3) = b(3, 0) = 0.25;
  FcMnlModel fc(b, 0.5, 1.6);
  Rng rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    Vec mu = random_interior_mu(rng, 3);
    Vec U = fc.invert(mu);
    REQUIRE((fc.probs(U) - mu).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("fcmnl parameter validation") {
  REQUIRE_THROWS_AS(FcMnlModel(Mat::Identity(3, 3), 0.5, 3.0),
                    std::invalid_argument);
  Mat asym = Mat::Identity(3, 3);
  asym(0, 1) = 0.3;
  REQUIRE_THROWS_AS(FcMnlModel(asym, 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("scaled model identities") {
  auto base = std::make_shared<LogitModel>();
  Rng rng(23);
  for (double sigma : {0.25, 1.0, 3.5}) {
    ScaledModel scaled(base, sigma);
    Vec U = random_U(rng, 3);
    Vec mu = random_interior_mu(rng, 3);
    // probs_sigma(sigma U) = probs_base(U) exactly.
    REQUIRE((scaled.probs(sigma * U) - base->probs(U)).cwiseAbs().maxCoeff() ==
            0.0);
    REQUIRE_THAT(scaled.emax(U),
                 Catch::Matchers::WithinRel(sigma * base->emax(U / sigma), 1e-14));
    REQUIRE_THAT(scaled.conj(mu),
                 Catch::Matchers::WithinRel(sigma * base->conj(mu), 1e-14));
    REQUIRE((scaled.invert(mu) - sigma * base->invert(mu)).cwiseAbs().maxCoeff() <
            1e-14);
  }
}

TEST_CASE("conjugate matches the direct maximization oracle") {
  Rng rng(31);
  std::vector<std::pair<std::string, ModelPtr>> models;
  models.emplace_back("logit", std::make_shared<LogitModel>());
  models.emplace_back("nested", std::make_shared<NestedLogitModel>(
                                    std::vector<std::vector<int>>{{0, 1}, {2}},
                                    (Vec(2) << 0.7, 1.0).finished()));
  models.emplace_back("scaled", make_heteroskedastic_logit(1.7));
  models.emplace_back("fcmnl",
                      std::make_shared<FcMnlModel>(Mat::Identity(4, 4), 0.8, 1.25));
  for (const auto& [name, model] : models) {
    INFO(name);
    Vec mu = random_interior_mu(rng, 3);
    REQUIRE_THAT(model->conj(mu),
                 Catch::Matchers::WithinAbs(conj_by_maximization(*model, mu), 1e-5));
  }
}

TEST_CASE("fenchel identity holds for every family") {
  Rng rng(41);
  std::vector<std::pair<std::string, ModelPtr>> models;
  models.emplace_back("logit", std::make_shared<LogitModel>());
  models.emplace_back("nested", std::make_shared<NestedLogitModel>(
                                    std::vector<std::vector<int>>{{0}, {1, 2}},
                                    (Vec(2) << 1.0, 0.55).finished()));
  models.emplace_back("scaled", make_heteroskedastic_logit(0.5));
  models.emplace_back("fcmnl",
                      std::make_shared<FcMnlModel>(Mat::Identity(4, 4), 0.6, 1.5));
  for (const auto& [name, model] : models) {
    INFO(name);
    for (int rep = 0; rep < 5; ++rep) {
      Vec mu = random_interior_mu(rng, 3);
      Vec U = model->invert(mu);
      REQUIRE_THAT(model->emax(U) + model->conj(mu),
                   Catch::Matchers::WithinAbs(mu.dot(U), 1e-8));
    }
  }
}

TEST_CASE("gradient consistency against finite differences") {
  Rng rng(43);
  std::vector<std::pair<std::string, ModelPtr>> models;
  models.emplace_back("logit", std::make_shared<LogitModel>());
  models.emplace_back("nested", std::make_shared<NestedLogitModel>(
                                    std::vector<std::vector<int>>{{0, 2}, {1}},
                                    (Vec(2) << 0.8, 1.0).finished()));
  models.emplace_back("fcmnl",
                      std::make_shared<FcMnlModel>(Mat::Identity(4, 4), 0.7, 1.3));
  for (const auto& [name, model] : models) {
    INFO(name);
    Vec U = random_U(rng, 3);
    Vec p = model->probs(U);
    for (Eigen::Index y = 0; y < 3; ++y)
      REQUIRE_THAT(p(y), Catch::Matchers::WithinRel(fd_emax(*model, U, y), 1e-5));
    // invert matches finite differences of conj.
    Vec mu = random_interior_mu(rng, 3);
    Vec Ui = model->invert(mu);
    for (Eigen::Index y = 0; y < 3; ++y) {
      const double h = 1e-6;
      Vec mp = mu, mm = mu;
      mp(y) += h;
      mm(y) -= h;
      const double fd = (model->conj(mp) - model->conj(mm)) / (2.0 * h);
      REQUIRE_THAT(Ui(y), Catch::Matchers::WithinAbs(fd, 1e-5 * (1 + std::abs(fd))));
    }
  }
}

TEST_CASE("translation bound for the logit emax") {
  LogitModel logit;
  Rng rng(47);
  Vec U = random_U(rng, 3);
  for (double c : {0.1, 1.0, 5.0}) {
    const double gap = logit.emax((U.array() + c).matrix()) - logit.emax(U);
    REQUIRE(gap > 0.0);
    REQUIRE(gap < c);
  }
}

TEST_CASE("forbidden alternatives receive exactly zero probability") {
  LogitModel logit;
  Vec U = (Vec(3) << 0.4, -0.3, 1.2).finished();
  std::vector<bool> forb{false, true, false};
  Vec p = probs_masked(logit, U, forb);
  REQUIRE(p(1) == 0.0);
  // Remaining probabilities renormalize like a two-option logit.
  Vec U2 = (Vec(2) << 0.4, 1.2).finished();
  Vec p2 = logit.probs(U2);
  REQUIRE_THAT(p(0), Catch::Matchers::WithinAbs(p2(0), 1e-12));
  REQUIRE_THAT(p(2), Catch::Matchers::WithinAbs(p2(1), 1e-12));
}

TEST_CASE("gev wrapper reproduces logit with the sum generator") {
  // g(t) = sum t_i is 1-homogeneous and yields the logit.
  GevModel gev([](const Vec& t) { return t.sum(); },
               [](const Vec& t) { return Vec::Ones(t.size()); }, 1.0, 3);
  LogitModel logit;
  Rng rng(53);
  Vec U = random_U(rng, 3);
  REQUIRE_THAT(gev.emax(U), Catch::Matchers::WithinAbs(logit.emax(U), 1e-12));
  REQUIRE((gev.probs(U) - logit.probs(U)).cwiseAbs().maxCoeff() < 1e-12);
  Vec mu = random_interior_mu(rng, 3);
  REQUIRE((gev.invert(mu) - logit.invert(mu)).cwiseAbs().maxCoeff() < 1e-8);
}
