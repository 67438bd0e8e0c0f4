// End-to-end acceptance checks. Each numbered block prints one PASS/FAIL
// line; the process exits nonzero if any block fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cupid/choice_models.hpp"
#include "cupid/conj_ot.hpp"
#include "cupid/estimation.hpp"
#include "cupid/identification.hpp"
#include "cupid/rng.hpp"
#include "cupid/simulation.hpp"
#include "cupid/solvers.hpp"

using namespace cupid;

namespace {

constexpr double kEulerGamma = 0.57721566490153286;

int g_failures = 0;

void report(int index, const std::string& name, bool ok,
            const std::string& detail) {
  std::printf("[%d] %s: %s%s%s\n", index, name.c_str(), ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void run(int index, const std::string& name,
         const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(index, name, ok, detail);
}

Vec random_utilities(Rng& rng, Eigen::Index Y, double span) {
  Vec U(Y);
  for (Eigen::Index y = 0; y < Y; ++y)
    U(y) = span * (2.0 * rng.uniform() - 1.0);
  return U;
}

Vec random_interior_mu(Rng& rng, Eigen::Index Y) {
  Vec mu(Y);
  for (Eigen::Index y = 0; y < Y; ++y) mu(y) = 0.05 + rng.uniform();
  mu *= (0.6 + 0.3 * rng.uniform()) / mu.sum();
  return mu;
}

const ModelList kLogitList = broadcast(std::make_shared<LogitModel>());

std::shared_ptr<NestedLogitModel> two_nest_model(double l0, double l1) {
  return std::make_shared<NestedLogitModel>(
      std::vector<std::vector<int>>{{0, 1}, {2, 3}},
      (Vec(2) << l0, l1).finished());
}

std::shared_ptr<FcMnlModel> correlated_fcmnl() {
  Mat b = Mat::Identity(5, 5);
  b(1, 2) = b(2, 1) = 0.5;
  b(3, 4) = b(4, 3) = 0.25;
  return std::make_shared<FcMnlModel>(b, 0.5, 1.6);
}

// Benchmark-style instance with gentler surplus spread and smaller masses,
// keeping every equilibrium cell well inside the interior.
BenchmarkInstance mild_instance(Eigen::Index size, std::uint64_t seed) {
  Rng rng(seed);
  Vec n(size), m(size);
  for (Eigen::Index x = 0; x < size; ++x)
    n(x) = static_cast<double>(rng.uniform_int(1, 10));
  for (Eigen::Index y = 0; y < size; ++y)
    m(y) = static_cast<double>(rng.uniform_int(1, 10));
  Mat phi(size, size);
  for (Eigen::Index x = 0; x < size; ++x)
    for (Eigen::Index y = 0; y < size; ++y) phi(x, y) = 0.5 * rng.normal();
  BenchmarkInstance out;
  out.size = size;
  out.seed = seed;
  out.margins = Margins(n, m);
  out.phi = SurplusMatrix(phi);
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// --- 1: closed-form choice operators ---------------------------------------

bool criterion_closed_forms(std::string& detail) {
  LogitModel logit;
  auto nested = two_nest_model(0.55, 0.8);
  NestedLogitModel collapsed(
      std::vector<std::vector<int>>{{0, 1}, {2, 3}}, Vec::Ones(2));
  const std::vector<std::vector<int>> nests = nested->nests();
  const Vec lambda = nested->lambda();
  auto nest_of = [&](Eigen::Index y) { return y < 2 ? 0 : 1; };

  Rng rng(11);
  double worst_logit = 0.0, worst_nested = 0.0, worst_collapse = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec U = random_utilities(rng, 4, 3.0);
    const Vec mu = random_interior_mu(rng, 4);
    const double mu0 = 1.0 - mu.sum();

    // Logit closed forms, evaluated independently of the model internals.
    double denom = 1.0;
    for (Eigen::Index y = 0; y < 4; ++y) denom += std::exp(U(y));
    worst_logit = std::max(worst_logit,
                           std::abs(logit.emax(U) - std::log(denom)));
    const Vec p = logit.probs(U);
    double conj_ref = mu0 * std::log(mu0);
    for (Eigen::Index y = 0; y < 4; ++y) {
      worst_logit =
          std::max(worst_logit, std::abs(p(y) - std::exp(U(y)) / denom));
      conj_ref += mu(y) * std::log(mu(y));
      worst_logit = std::max(
          worst_logit,
          std::abs(logit.invert(mu)(y) - std::log(mu(y) / mu0)));
    }
    worst_logit = std::max(worst_logit, std::abs(logit.conj(mu) - conj_ref));

    // Nested-logit closed forms.
    Vec incl(2);
    for (int n = 0; n < 2; ++n) {
      incl(n) = 0.0;
      for (int y : nests[n]) incl(n) += std::exp(U(y) / lambda(n));
    }
    const double g_ref = std::log(1.0 + std::pow(incl(0), lambda(0)) +
                                  std::pow(incl(1), lambda(1)));
    worst_nested = std::max(worst_nested, std::abs(nested->emax(U) - g_ref));
    const Vec pn = nested->probs(U);
    double nconj_ref = mu0 * std::log(mu0);
    Vec mu_nest = Vec::Zero(2);
    for (Eigen::Index y = 0; y < 4; ++y) mu_nest(nest_of(y)) += mu(y);
    const Vec Un = nested->invert(mu);
    for (Eigen::Index y = 0; y < 4; ++y) {
      const int n = nest_of(y);
      const double p_ref = std::exp(U(y) / lambda(n)) *
                           std::pow(incl(n), lambda(n) - 1.0) /
                           std::exp(g_ref);
      worst_nested = std::max(worst_nested, std::abs(pn(y) - p_ref));
      nconj_ref += lambda(n) * mu(y) * std::log(mu(y));
      const double u_ref = lambda(n) * std::log(mu(y) / mu0) +
                           (1.0 - lambda(n)) * std::log(mu_nest(n) / mu0);
      worst_nested = std::max(worst_nested, std::abs(Un(y) - u_ref));
    }
    for (int n = 0; n < 2; ++n)
      nconj_ref += (1.0 - lambda(n)) * mu_nest(n) * std::log(mu_nest(n));
    worst_nested =
        std::max(worst_nested, std::abs(nested->conj(mu) - nconj_ref));

    // Unit nest parameters collapse to the plain logit.
    worst_collapse =
        std::max(worst_collapse, std::abs(collapsed.emax(U) - logit.emax(U)));
    worst_collapse = std::max(
        worst_collapse,
        (collapsed.probs(U) - logit.probs(U)).cwiseAbs().maxCoeff());
    worst_collapse =
        std::max(worst_collapse, std::abs(collapsed.conj(mu) - logit.conj(mu)));
    worst_collapse = std::max(
        worst_collapse,
        (collapsed.invert(mu) - logit.invert(mu)).cwiseAbs().maxCoeff());
  }
  detail = "max errors: logit " + std::to_string(worst_logit) + ", nested " +
           std::to_string(worst_nested) + ", collapse " +
           std::to_string(worst_collapse);
  return worst_logit < 1e-12 && worst_nested < 1e-12 && worst_collapse < 1e-10;
}

// --- 2: duality suite --------------------------------------------------------

bool criterion_duality(std::string& detail) {
  struct Family {
    std::string name;
    ModelPtr model;
  };
  const std::vector<Family> families = {
      {"logit", std::make_shared<LogitModel>()},
      {"nested", two_nest_model(0.6, 0.9)},
      {"heteroskedastic", make_heteroskedastic_logit(1.7)},
      {"fcmnl", correlated_fcmnl()},
  };

  for (std::size_t fi = 0; fi < families.size(); ++fi) {
    const ChoiceModel& model = *families[fi].model;
    for (int s = 0; s < 20; ++s) {
      Rng rng(Rng::split_seed(40, fi * 100 + s));
      const Vec U = random_utilities(rng, 4, 2.0);
      const Vec p = model.probs(U);
      const double g = model.emax(U);

      // Conjugate duality at the gradient point.
      const double fenchel = std::abs(g + model.conj(p) - U.dot(p));
      if (fenchel > 1e-8 * (1.0 + std::abs(g))) {
        detail = families[fi].name + ": conjugate identity off by " +
                 std::to_string(fenchel);
        return false;
      }

      // Probabilities against finite differences of the Emax.
      for (Eigen::Index y = 0; y < 4; ++y) {
        const double h = 1e-6 * (1.0 + std::abs(U(y)));
        Vec Up = U, Um = U;
        Up(y) += h;
        Um(y) -= h;
        const double fd = (model.emax(Up) - model.emax(Um)) / (2.0 * h);
        if (std::abs(p(y) - fd) > 1e-5 * std::max(1.0, std::abs(p(y)))) {
          detail = families[fi].name + ": gradient mismatch " +
                   std::to_string(std::abs(p(y) - fd));
          return false;
        }
      }

      // Primal welfare equals the dual sum of group utilities.
      const BenchmarkInstance inst = mild_instance(4, 1000 + s);
      SolveOptions opts;
      SolveResult res;
      if (families[fi].name == "logit") {
        opts.tol = 1e-12;
        res = solve_ipfp_logit(inst.phi, inst.margins, opts);
      } else if (families[fi].name == "heteroskedastic") {
        opts.tol = 1e-12;
        res = solve_ipfp_general(broadcast(families[fi].model),
                                 broadcast(make_heteroskedastic_logit(0.8)),
                                 inst.phi, inst.margins, opts);
      } else {
        opts.tol = 1e-10;
        opts.max_iter = 200000;
        res = solve_minemax(broadcast(families[fi].model),
                            broadcast(families[fi].model), inst.phi,
                            inst.margins, opts);
      }
      if (!res.report.converged) {
        detail = families[fi].name + ": equilibrium solve did not converge";
        return false;
      }
      const double primal = res.report.social_welfare;
      const double dual = inst.margins.n.dot(res.group_utilities.u) +
                          inst.margins.m.dot(res.group_utilities.v);
      const double gap = std::abs(primal - dual) / std::max(1.0, std::abs(primal));
      if (gap > 1e-6) {
        detail = families[fi].name + ": primal-dual gap " + std::to_string(gap);
        return false;
      }
    }
  }
  return true;
}

// --- 3: transport conjugate of discretized draws -----------------------------

bool criterion_transport_convergence(std::string& detail) {
  // Centered extreme-value draws; the transport value at mu = (0.5) must
  // approach -G*((0.5)) = log 2 as the support grows, using nested subsets
  // of one fixed stream.
  const Eigen::Index K_max = 10000;
  Rng rng(2468);
  Mat support(K_max, 2);
  for (Eigen::Index k = 0; k < K_max; ++k)
    for (Eigen::Index y = 0; y < 2; ++y)
      support(k, y) = rng.gumbel() - kEulerGamma;

  const Vec mu = (Vec(1) << 0.5).finished();
  std::vector<double> errors;
  for (Eigen::Index K : {100, 1000, 10000}) {
    DiscretizedDistribution dist(support.topRows(K), Vec::Constant(K, 1.0 / K));
    ConjOtResult res = conj_ot(dist, mu);
    errors.push_back(std::abs(res.value - std::log(2.0)));
  }
  detail = "errors " + std::to_string(errors[0]) + " > " +
           std::to_string(errors[1]) + " > " + std::to_string(errors[2]);
  return errors[0] > errors[1] && errors[1] > errors[2] && errors[2] < 0.02;
}

// --- 4: identification round-trip --------------------------------------------

bool criterion_identification(std::string& detail) {
  const Eigen::Index sizes[5] = {5, 10, 20, 35, 50};
  const Eigen::Index mild_sizes[5] = {4, 8, 15, 30, 50};
  const Eigen::Index fc_sizes[5] = {2, 3, 4, 6, 8};

  auto max_err = [](const SurplusMatrix& got, const Mat& want) {
    double e = 0.0;
    for (Eigen::Index x = 0; x < got.num_x(); ++x)
      for (Eigen::Index y = 0; y < got.num_y(); ++y)
        if (!got.forbidden(x, y))
          e = std::max(e, std::abs(got.phi(x, y) - want(x, y)));
    return e;
  };

  for (int s = 0; s < 20; ++s) {
    SolveOptions opts;
    opts.tol = 1e-12;

    {  // logit on full-scale benchmark instances
      const BenchmarkInstance inst = gen_benchmark(sizes[s % 5], 300 + s);
      SolveResult res = solve_ipfp_logit(inst.phi, inst.margins, opts);
      SurplusMatrix back =
          identify_surplus(kLogitList, kLogitList, res.mu, inst.margins);
      const double e = max_err(back, inst.phi.phi);
      if (e > 1e-6) {
        detail = "logit size " + std::to_string(sizes[s % 5]) + " error " +
                 std::to_string(e);
        return false;
      }
    }
    {  // per-group scaled logit
      const BenchmarkInstance inst = gen_benchmark(sizes[s % 5], 400 + s);
      ModelList men(inst.size), women(inst.size);
      for (Eigen::Index i = 0; i < inst.size; ++i) {
        men[i] = make_heteroskedastic_logit(0.6 + 0.2 * (i % 5));
        women[i] = make_heteroskedastic_logit(0.8 + 0.15 * (i % 4));
      }
      SolveResult res = solve_ipfp_general(men, women, inst.phi, inst.margins,
                                           opts);
      SurplusMatrix back = identify_surplus(men, women, res.mu, inst.margins);
      const double e = max_err(back, inst.phi.phi);
      if (e > 1e-6) {
        detail = "scaled size " + std::to_string(sizes[s % 5]) + " error " +
                 std::to_string(e);
        return false;
      }
    }
    {  // nested logit, milder surplus spread keeps every cell interior
      const Eigen::Index size = mild_sizes[s % 5];
      const BenchmarkInstance inst = mild_instance(size, 500 + s);
      std::vector<std::vector<int>> nests(2);
      for (Eigen::Index y = 0; y < size; ++y)
        nests[y < size / 2 ? 0 : 1].push_back(static_cast<int>(y));
      if (nests[0].empty() || nests[1].empty()) {
        nests.resize(1);
        nests[0].clear();
        for (Eigen::Index y = 0; y < size; ++y)
          nests[0].push_back(static_cast<int>(y));
      }
      Vec lambda = Vec::Constant(static_cast<Eigen::Index>(nests.size()), 0.7);
      if (lambda.size() > 1) lambda(1) = 0.9;
      auto nested = std::make_shared<NestedLogitModel>(nests, lambda);
      SolveOptions nopts;
      nopts.tol = 1e-11;
      nopts.max_iter = 300000;
      SolveResult res = solve_ipfp_general(broadcast(nested), kLogitList,
                                           inst.phi, inst.margins, nopts);
      if (!res.report.converged) {
        detail = "nested size " + std::to_string(size) + " did not converge";
        return false;
      }
      SurplusMatrix back = identify_surplus(broadcast(nested), kLogitList,
                                            res.mu, inst.margins);
      const double e = max_err(back, inst.phi.phi);
      if (e > 1e-6) {
        detail = "nested size " + std::to_string(size) + " error " +
                 std::to_string(e);
        return false;
      }
    }
    {  // flexible-correlation family via direct minimization
      const Eigen::Index size = fc_sizes[s % 5];
      const BenchmarkInstance inst = mild_instance(size, 600 + s);
      Mat b = Mat::Identity(size + 1, size + 1);
      if (size >= 2) b(1, 2) = b(2, 1) = 0.4;
      auto fc = std::make_shared<FcMnlModel>(b, 0.5, 1.6);
      SolveOptions fopts;
      fopts.tol = 1e-11;
      fopts.max_iter = 200000;
      SolveResult res = solve_minemax(broadcast(fc), kLogitList, inst.phi,
                                      inst.margins, fopts);
      if (!res.report.converged) {
        detail = "fcmnl size " + std::to_string(size) + " did not converge";
        return false;
      }
      SurplusMatrix back = identify_surplus(broadcast(fc), kLogitList, res.mu,
                                            inst.margins);
      const double e = max_err(back, inst.phi.phi);
      if (e > 1e-6) {
        detail = "fcmnl size " + std::to_string(size) + " error " +
                 std::to_string(e);
        return false;
      }
    }
  }
  return true;
}

// --- 5: fixed-point solver at scale -------------------------------------------

bool criterion_ipfp_scale(std::string& detail) {
  for (Eigen::Index size : {100, 500, 1000}) {
    const BenchmarkInstance inst = gen_benchmark(size, 2025);

    SolveOptions fast;
    fast.tol = 1e-6;
    std::vector<double> ipfp_times, minemax_times;
    SolveResult ipfp_res;
    for (int rep = 0; rep < 3; ++rep) {
      ipfp_res = solve_ipfp_logit(inst.phi, inst.margins, fast);
      ipfp_times.push_back(ipfp_res.report.wall_time_seconds);
    }
    if (!ipfp_res.report.converged || ipfp_res.report.final_residual > 1e-6) {
      detail = "size " + std::to_string(size) + ": residual " +
               std::to_string(ipfp_res.report.final_residual);
      return false;
    }

    SolveOptions tight;
    tight.tol = 1e-10;
    const Matching mu_ref = solve_ipfp_logit(inst.phi, inst.margins, tight).mu;

    SolveOptions mopts;
    mopts.tol = 1e-6;
    mopts.max_iter = 200000;
    SolveResult mm;
    for (int rep = 0; rep < 3; ++rep) {
      mm = solve_minemax(kLogitList, kLogitList, inst.phi, inst.margins, mopts);
      minemax_times.push_back(mm.report.wall_time_seconds);
    }
    SolveResult cs = solve_F_choosiow(inst.phi, inst.margins, mopts);

    const double d_mm = (mm.mu.mu - mu_ref.mu).cwiseAbs().maxCoeff();
    const double d_cs = (cs.mu.mu - mu_ref.mu).cwiseAbs().maxCoeff();
    if (d_mm > 1e-5 || d_cs > 1e-5) {
      detail = "size " + std::to_string(size) + ": disagreement " +
               std::to_string(std::max(d_mm, d_cs));
      return false;
    }
    if (median_of(ipfp_times) >= median_of(minemax_times)) {
      detail = "size " + std::to_string(size) + ": fixed point " +
               std::to_string(median_of(ipfp_times)) + "s vs direct " +
               std::to_string(median_of(minemax_times)) + "s";
      return false;
    }
  }
  return true;
}

// --- 6: structural invariants --------------------------------------------------

bool criterion_invariants(std::string& detail) {
  SolveOptions opts;
  opts.tol = 1e-13;
  {  // scale invariance of utilities and conditional patterns under r -> 2r
    const BenchmarkInstance inst = gen_benchmark(5, 77);
    SolveResult a = solve_ipfp_logit(inst.phi, inst.margins, opts);
    Margins doubled(2.0 * inst.margins.n, 2.0 * inst.margins.m);
    SolveResult b = solve_ipfp_logit(inst.phi, doubled, opts);
    const double du = (a.group_utilities.u - b.group_utilities.u)
                          .cwiseAbs()
                          .maxCoeff();
    const double dv = (a.group_utilities.v - b.group_utilities.v)
                          .cwiseAbs()
                          .maxCoeff();
    const double dmu = (2.0 * a.mu.mu - b.mu.mu).cwiseAbs().maxCoeff();
    if (du > 1e-8 || dv > 1e-8 || dmu > 1e-8) {
      detail = "scale invariance broken: " + std::to_string(std::max({du, dv, dmu}));
      return false;
    }
  }
  {  // cross-group sensitivities of u are symmetric
    const BenchmarkInstance inst = gen_benchmark(3, 78);
    auto u_at = [&](const Vec& n) {
      Margins r(n, inst.margins.m);
      return solve_ipfp_logit(inst.phi, r, opts).group_utilities.u;
    };
    const double h0 = 1e-4 * inst.margins.n(0);
    const double h2 = 1e-4 * inst.margins.n(2);
    Vec np = inst.margins.n, nm = inst.margins.n;
    np(2) += h2;
    nm(2) -= h2;
    const double d_u0_n2 = (u_at(np)(0) - u_at(nm)(0)) / (2.0 * h2);
    np = nm = inst.margins.n;
    np(0) += h0;
    nm(0) -= h0;
    const double d_u2_n0 = (u_at(np)(2) - u_at(nm)(2)) / (2.0 * h0);
    const double rel = std::abs(d_u0_n2 - d_u2_n0) /
                       std::max(1e-12, std::abs(d_u0_n2));
    if (rel > 1e-4) {
      detail = "sensitivity asymmetry " + std::to_string(rel);
      return false;
    }
  }
  {  // log-odds ratios ignore margins under logit, but not under scaling
    const BenchmarkInstance a = gen_benchmark(3, 41);
    const BenchmarkInstance b = gen_benchmark(3, 42);
    auto log_odds = [](const Matching& mu) {
      return std::log(mu.mu(0, 0) * mu.mu(1, 1) /
                      (mu.mu(0, 1) * mu.mu(1, 0)));
    };
    SolveOptions lo_opts;
    lo_opts.tol = 1e-12;
    const double l1 =
        log_odds(solve_ipfp_logit(a.phi, a.margins, lo_opts).mu);
    const double l2 =
        log_odds(solve_ipfp_logit(a.phi, b.margins, lo_opts).mu);
    if (std::abs(l1 - l2) > 1e-6) {
      detail = "logit log-odds moved by " + std::to_string(std::abs(l1 - l2));
      return false;
    }
    ModelList men{make_heteroskedastic_logit(0.5),
                  make_heteroskedastic_logit(1.0),
                  make_heteroskedastic_logit(2.0)};
    const double h1 = log_odds(
        solve_ipfp_general(men, kLogitList, a.phi, a.margins, lo_opts).mu);
    const double h2 = log_odds(
        solve_ipfp_general(men, kLogitList, a.phi, b.margins, lo_opts).mu);
    if (std::abs(h1 - h2) < 1e-4) {
      detail = "group-specific scales failed to break log-odds invariance";
      return false;
    }
  }
  return true;
}

// --- 7: estimator recovery ------------------------------------------------------

BasisSet three_basis() {
  const Eigen::Index X = 3, Y = 3;
  Mat ones = Mat::Ones(X, Y);
  Mat prod(X, Y), diag(X, Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y) {
      prod(x, y) = (static_cast<double>(x) - 1.0) *
                   (static_cast<double>(y) - 1.0);
      diag(x, y) = x == y ? 1.0 : 0.0;
    }
  return BasisSet({ones, prod, diag});
}

bool criterion_estimation(std::string& detail) {
  ParamModelSpec spec;
  spec.basis = three_basis();
  const Vec lambda0 = (Vec(3) << 0.6, -0.4, 0.3).finished();
  const Margins r(Vec::Ones(3), Vec::Ones(3));
  SolveOptions sopts;
  sopts.tol = 1e-12;
  const Matching mu_true =
      solve_ipfp_logit(SurplusMatrix(spec.basis.combine(lambda0)), r, sopts).mu;

  const std::int64_t H = 100000;
  const int n_reps = 20, n_boot = 30;
  int mm_ok = 0, mle_ok = 0;
  SampleCounts first_data;
  for (int rep = 0; rep < n_reps; ++rep) {
    const SampleCounts data =
        sample_households(mu_true, H, Rng::split_seed(7000, rep));
    if (rep == 0) first_data = data;

    EstimationResult mm = moment_match(spec, Vec(), data);
    Vec mm_se =
        bootstrap_se(spec, Vec(), data, Estimator::moment_match, n_boot,
                     500 + rep)
            .se;
    bool ok = mm.converged;
    for (Eigen::Index k = 0; k < 3; ++k)
      ok = ok && std::abs(mm.lambda(k) - lambda0(k)) <= 3.0 * mm_se(k);
    if (ok) ++mm_ok;

    EstimationResult ml = mle(spec, data, Vec::Zero(3), Vec());
    Vec ml_se =
        bootstrap_se(spec, Vec(), data, Estimator::mle, n_boot, 900 + rep).se;
    ok = true;
    for (Eigen::Index k = 0; k < 3; ++k)
      ok = ok && std::abs(ml.lambda(k) - lambda0(k)) <= 3.0 * ml_se(k);
    if (ok) ++mle_ok;
  }
  if (mm_ok < 18 || mle_ok < 18) {
    detail = "coverage " + std::to_string(mm_ok) + "/20 and " +
             std::to_string(mle_ok) + "/20";
    return false;
  }

  {  // saturated basis reproduces the observed cell shares exactly
    ParamModelSpec full;
    full.basis = indicator_basis(3, 3);
    EstimationResult fit = moment_match(full, Vec(), first_data);
    const Vec observed =
        full.basis.comoments(normalize_counts(first_data).muhat.mu);
    const double gap = (fit.comoments - observed).cwiseAbs().maxCoeff();
    if (!fit.converged || gap > 1e-6) {
      detail = "saturated fit gap " + std::to_string(gap);
      return false;
    }
  }

  {  // likelihood recovers a group-specific scale
    ParamModelSpec het;
    het.basis = indicator_basis(2, 2);
    het.theta_dim = 1;
    het.dist_map = [](const Vec& theta) {
      ModelList men{std::make_shared<LogitModel>(),
                    make_heteroskedastic_logit(std::exp(theta(0)))};
      return std::make_pair(men, broadcast(std::make_shared<LogitModel>()));
    };
    const double theta_true = std::log(0.5);
    const Vec lam_true = (Vec(4) << 0.8, 0.3, -0.2, 0.5).finished();
    const Margins r2(Vec::Ones(2), Vec::Ones(2));
    auto [men_true, women_true] =
        het.dist_map((Vec(1) << theta_true).finished());
    SolveOptions hopts;
    hopts.tol = 1e-12;
    const Matching mu_het =
        solve_ipfp_general(men_true, women_true,
                           SurplusMatrix(het.basis.combine(lam_true)), r2,
                           hopts)
            .mu;
    const SampleCounts data = sample_households(mu_het, H, 31415);
    EstimationResult fit =
        mle(het, data, Vec::Zero(4), Vec::Zero(1));
    const double se_theta = fit.se(4);
    if (std::abs(fit.theta(0) - theta_true) > 3.0 * se_theta) {
      detail = "scale estimate " + std::to_string(std::exp(fit.theta(0))) +
               " (log-scale se " + std::to_string(se_theta) + ")";
      return false;
    }
  }
  return true;
}

// --- 8: entropy specification test ----------------------------------------------

bool criterion_spec_test(std::string& detail) {
  ParamModelSpec spec;
  Mat ones = Mat::Ones(2, 2);
  Mat diag(2, 2);
  diag << 1.0, 0.0, 0.0, 1.0;
  spec.basis = BasisSet({ones, diag});
  const Margins r(Vec::Ones(2), Vec::Ones(2));
  SolveOptions sopts;
  sopts.tol = 1e-12;

  EstimationOptions fast;
  fast.outer_tol = 1e-8;
  fast.max_iter = 300;
  const std::int64_t H = 10000;
  const int n_boot = 199;

  {  // exactly zero under the saturated basis
    const Matching mu_null = solve_ipfp_logit(
        SurplusMatrix(spec.basis.combine((Vec(2) << 0.4, 0.6).finished())), r,
        sopts)
                                 .mu;
    const SampleCounts data = sample_households(mu_null, H, 5150);
    ParamModelSpec full;
    full.basis = indicator_basis(2, 2);
    SpecTestResult res = entropy_spec_test(full, Vec(), data, 19, 3, fast);
    if (res.statistic < 0.0 || res.statistic > 1e-7) {
      detail = "saturated statistic " + std::to_string(res.statistic);
      return false;
    }
  }

  const Matching mu_null = solve_ipfp_logit(
      SurplusMatrix(spec.basis.combine((Vec(2) << 0.4, 0.6).finished())), r,
      sopts)
                               .mu;
  int rejections = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const SampleCounts data =
        sample_households(mu_null, H, Rng::split_seed(81000, rep));
    SpecTestResult res = entropy_spec_test(spec, Vec(), data, n_boot,
                                           Rng::split_seed(82000, rep), fast);
    if (res.statistic < 0.0) {
      detail = "negative statistic in null replication";
      return false;
    }
    if (res.p_value <= 0.05) ++rejections;
  }
  const double rate = rejections / 200.0;
  if (rate < 0.01 || rate > 0.12) {
    detail = "null rejection rate " + std::to_string(rate);
    return false;
  }

  Mat phi_alt(2, 2);
  phi_alt << 0.5, 1.3, -0.9, 0.7;  // asymmetric, outside the two-basis span
  const Matching mu_alt =
      solve_ipfp_logit(SurplusMatrix(phi_alt), r, sopts).mu;
  int power_rejections = 0;
  const int power_reps = 60;
  for (int rep = 0; rep < power_reps; ++rep) {
    const SampleCounts data =
        sample_households(mu_alt, H, Rng::split_seed(83000, rep));
    SpecTestResult res = entropy_spec_test(spec, Vec(), data, n_boot,
                                           Rng::split_seed(84000, rep), fast);
    if (res.p_value <= 0.05) ++power_rejections;
  }
  const double power = static_cast<double>(power_rejections) / power_reps;
  detail = "size " + std::to_string(rate) + ", power " + std::to_string(power);
  return power >= 0.80;
}

// --- 9: discretized linear-programming solver -----------------------------------

DiscretizedDistribution shuffled_gumbel_quantiles(Eigen::Index K,
                                                  Eigen::Index width,
                                                  Rng& rng) {
  Mat support(K, width);
  std::vector<double> nodes(K);
  for (Eigen::Index k = 0; k < K; ++k)
    nodes[k] = -std::log(-std::log((k + 0.5) / static_cast<double>(K)));
  for (Eigen::Index c = 0; c < width; ++c) {
    std::vector<double> col = nodes;
    for (Eigen::Index k = K - 1; k > 0; --k)
      std::swap(col[k], col[rng.uniform_int(0, k)]);
    for (Eigen::Index k = 0; k < K; ++k) support(k, c) = col[k];
  }
  return DiscretizedDistribution(support, Vec::Constant(K, 1.0 / K));
}

bool criterion_lp_solver(std::string& detail) {
  {  // degenerate error law: the sign of the surplus picks the corner
    Mat zero_support = Mat::Zero(1, 2);
    DiscretizedDistribution point(zero_support, Vec::Ones(1));
    const Margins r((Vec(1) << 2.0).finished(), (Vec(1) << 3.0).finished());
    SolveResult match = solve_lp_discrete(
        {point}, {point}, SurplusMatrix(Mat::Constant(1, 1, 1.5)), r);
    if (std::abs(match.mu.mu(0, 0) - 2.0) > 1e-12 ||
        std::abs(match.mu.mu_0y(0) - 1.0) > 1e-12) {
      detail = "all-match corner gave mu = " + std::to_string(match.mu.mu(0, 0));
      return false;
    }
    SolveResult single = solve_lp_discrete(
        {point}, {point}, SurplusMatrix(Mat::Constant(1, 1, -0.7)), r);
    if (std::abs(single.mu.mu(0, 0)) > 1e-12 ||
        std::abs(single.mu.mu_x0(0) - 2.0) > 1e-12) {
      detail = "all-single corner gave mu = " +
               std::to_string(single.mu.mu(0, 0));
      return false;
    }
  }

  // Quantile-node discretization approaches the logit equilibrium.
  Mat phi(2, 2);
  phi << 1.0, 0.2, -0.3, 0.6;
  const Margins r(Vec::Ones(2), Vec::Ones(2));
  SolveOptions opts;
  opts.tol = 1e-12;
  const Matching mu_logit = solve_ipfp_logit(SurplusMatrix(phi), r, opts).mu;

  Rng rng(97);
  std::vector<DiscretizedDistribution> men, women;
  for (int i = 0; i < 2; ++i)
    men.push_back(shuffled_gumbel_quantiles(200, 3, rng));
  for (int i = 0; i < 2; ++i)
    women.push_back(shuffled_gumbel_quantiles(200, 3, rng));
  SolveResult lp = solve_lp_discrete(men, women, SurplusMatrix(phi), r);
  const double err = (lp.mu.mu - mu_logit.mu).cwiseAbs().maxCoeff();
  detail = "quantile-node deviation " + std::to_string(err);
  return err < 5e-2;
}

}  // namespace

int main() {
  run(1, "closed-form choice operators", criterion_closed_forms);
  run(2, "conjugate duality and primal-dual welfare", criterion_duality);
  run(3, "transport conjugate convergence", criterion_transport_convergence);
  run(4, "identification round-trip", criterion_identification);
  run(5, "fixed-point solver at scale", criterion_ipfp_scale);
  run(6, "structural invariants", criterion_invariants);
  run(7, "estimator recovery", criterion_estimation);
  run(8, "entropy specification test", criterion_spec_test);
  run(9, "discretized linear-programming solver", criterion_lp_solver);
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
