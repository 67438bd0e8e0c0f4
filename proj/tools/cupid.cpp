#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cupid/estimation.hpp"
#include "cupid/identification.hpp"
#include "cupid/io.hpp"
#include "cupid/market.hpp"
#include "cupid/simulation.hpp"
#include "cupid/solvers.hpp"

namespace fs = std::filesystem;
using cupid::json;

namespace {

constexpr int kSchemaVersion = 1;

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

LogLevel g_log_level = LogLevel::warn;

LogLevel parse_level(const std::string& s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  throw CLI::ValidationError("--log-level", "unknown level '" + s + "'");
}

void log(LogLevel level, const std::string& msg) {
  static const char* names[] = {"debug", "info", "warn", "error"};
  if (level >= g_log_level)
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct CommonOut {
  std::string out_dir;
  bool no_timings = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_flag("--no-timings", no_timings,
                  "omit timing fields for byte-reproducible reports");
  }

  std::string path(const std::string& name) const {
    return (fs::path(out_dir) / name).string();
  }

  void prepare() const { fs::create_directories(out_dir); }

  void write_report(json report) const {
    report["schema_version"] = kSchemaVersion;
    cupid::atomic_write_text(path("report.json"), report.dump(2) + "\n");
  }
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

cupid::ModelList load_models(const std::string& path, Eigen::Index groups) {
  if (path.empty())
    return cupid::broadcast(std::make_shared<cupid::LogitModel>());
  return cupid::models_from_json(load_json_file(path), groups);
}

void write_utilities_csv(const std::string& path,
                         const cupid::SystematicUtilities& uv) {
  std::ostringstream out;
  out << "x,y,U,V\n";
  out.precision(17);
  for (Eigen::Index x = 0; x < uv.U.rows(); ++x)
    for (Eigen::Index y = 0; y < uv.U.cols(); ++y)
      out << x << "," << y << "," << uv.U(x, y) << "," << uv.V(x, y) << "\n";
  cupid::atomic_write_text(path, out.str());
}

json vec_to_json(const cupid::Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json report_for(const cupid::SolveReport& rep, bool no_timings) {
  json r{{"converged", rep.converged},
         {"iterations", rep.iterations},
         {"final_residual", rep.final_residual},
         {"social_welfare", rep.social_welfare}};
  if (!no_timings) r["wall_time_seconds"] = rep.wall_time_seconds;
  return r;
}

// ---- solve -----------------------------------------------------------------

struct SolveArgs {
  std::string phi_path, margins_path, men_path, women_path;
  std::string method = "ipfp";
  double tol = 1e-9;
  int max_iter = 100000;
  double damping = 0.5;
  CommonOut out;
};

int run_solve(const SolveArgs& a) {
  a.out.prepare();
  const cupid::SurplusMatrix phi = cupid::read_phi(a.phi_path);
  const cupid::Margins r = cupid::read_margins(a.margins_path);
  if (phi.num_x() != r.num_x() || phi.num_y() != r.num_y())
    throw std::invalid_argument(
        "surplus is " + std::to_string(phi.num_x()) + "x" +
        std::to_string(phi.num_y()) + " but margins are " +
        std::to_string(r.num_x()) + "x" + std::to_string(r.num_y()));
  const cupid::ModelList men = load_models(a.men_path, phi.num_x());
  const cupid::ModelList women = load_models(a.women_path, phi.num_y());

  cupid::SolveOptions opts;
  opts.tol = a.tol;
  opts.max_iter = a.max_iter;
  opts.damping = a.damping;

  cupid::SolveResult res;
  if (a.method == "ipfp") {
    res = cupid::solve_ipfp_general(men, women, phi, r, opts);
  } else if (a.method == "minemax") {
    res = cupid::solve_minemax(men, women, phi, r, opts);
  } else if (a.method == "choosiow_f") {
    res = cupid::solve_F_choosiow(phi, r, opts);
  } else if (a.method == "lp_discrete") {
    std::vector<cupid::DiscretizedDistribution> md, wd;
    for (Eigen::Index x = 0; x < phi.num_x(); ++x) {
      const auto* d = dynamic_cast<const cupid::DiscretizedModel*>(
          &cupid::model_at(men, x));
      if (!d)
        throw std::invalid_argument(
            "lp_discrete requires 'discretized' models on both sides");
      md.push_back(d->dist());
    }
    for (Eigen::Index y = 0; y < phi.num_y(); ++y) {
      const auto* d = dynamic_cast<const cupid::DiscretizedModel*>(
          &cupid::model_at(women, y));
      if (!d)
        throw std::invalid_argument(
            "lp_discrete requires 'discretized' models on both sides");
      wd.push_back(d->dist());
    }
    res = cupid::solve_lp_discrete(md, wd, phi, r, opts);
  } else {
    throw std::invalid_argument("unknown method '" + a.method + "'");
  }

  cupid::write_matching(a.out.path("matching.csv"), res.mu);
  if (res.utilities.U.size())
    write_utilities_csv(a.out.path("utilities.csv"), res.utilities);
  json report{{"command", "solve"},
              {"method", a.method},
              {"status", res.report.converged ? "ok" : "not_converged"},
              {"solve", report_for(res.report, a.out.no_timings)}};
  if (res.group_utilities.u.size()) {
    report["u"] = vec_to_json(res.group_utilities.u);
    report["v"] = vec_to_json(res.group_utilities.v);
  }
  a.out.write_report(report);
  return res.report.converged ? 0 : 2;
}

// ---- identify ----------------------------------------------------------------

struct IdentifyArgs {
  std::string matching_path, margins_path, men_path, women_path;
  CommonOut out;
};

int run_identify(const IdentifyArgs& a) {
  a.out.prepare();
  const cupid::Matching mu = cupid::read_matching(a.matching_path);
  const cupid::Margins r = cupid::read_margins(a.margins_path);
  if (mu.num_x() != r.num_x() || mu.num_y() != r.num_y())
    throw std::invalid_argument("matching and margins dimensions disagree");
  const cupid::ModelList men = load_models(a.men_path, mu.num_x());
  const cupid::ModelList women = load_models(a.women_path, mu.num_y());

  const cupid::SurplusMatrix phi = cupid::identify_surplus(men, women, mu, r);
  cupid::write_phi(a.out.path("phi.csv"), phi);
  auto [uv, g] = cupid::identify_utilities(men, women, mu, r);
  write_utilities_csv(a.out.path("utilities.csv"), uv);
  {
    const cupid::Mat share = cupid::surplus_share(men, women, mu, r);
    std::ostringstream out;
    out << "x,y,share\n";
    out.precision(17);
    for (Eigen::Index x = 0; x < share.rows(); ++x)
      for (Eigen::Index y = 0; y < share.cols(); ++y)
        out << x << "," << y << "," << share(x, y) << "\n";
    cupid::atomic_write_text(a.out.path("shares.csv"), out.str());
  }
  a.out.write_report(json{{"command", "identify"},
                          {"status", "ok"},
                          {"u", vec_to_json(g.u)},
                          {"v", vec_to_json(g.v)}});
  return 0;
}

// ---- estimate / test -------------------------------------------------------

struct EstimateArgs {
  std::string data_path, spec_path;
  std::string estimator = "mm";
  int boot = 0;
  std::uint64_t seed = 1;
  CommonOut out;
};

cupid::BasisSet basis_from_json(const json& j, Eigen::Index X,
                                Eigen::Index Y) {
  const std::string type = j.value("type", "matrices");
  if (type == "indicator") return cupid::indicator_basis(X, Y);
  if (type == "polynomial")
    return cupid::polynomial_basis(X, Y, j.at("deg_x").get<int>(),
                                   j.at("deg_y").get<int>());
  if (type == "matrices") {
    std::vector<cupid::Mat> mats;
    for (const auto& m : j.at("matrices"))
      mats.push_back(cupid::io_detail::mat_from_json(m));
    return cupid::BasisSet(std::move(mats));
  }
  throw std::invalid_argument("unknown basis type '" + type + "'");
}

cupid::ParamModelSpec spec_from_json(const json& j, Eigen::Index X,
                                     Eigen::Index Y) {
  cupid::ParamModelSpec spec;
  spec.basis = basis_from_json(j.at("basis"), X, Y);
  if (j.contains("models")) {
    cupid::ModelList men = cupid::models_from_json(j.at("models").at("men"), X);
    cupid::ModelList women =
        cupid::models_from_json(j.at("models").at("women"), Y);
    spec.dist_map = [men, women](const cupid::Vec&) {
      return std::make_pair(men, women);
    };
  }
  return spec;
}

int run_estimate(const EstimateArgs& a) {
  a.out.prepare();
  const cupid::SampleCounts data = cupid::read_counts(a.data_path);
  const json spec_json = load_json_file(a.spec_path);
  const cupid::ParamModelSpec spec =
      spec_from_json(spec_json, data.num_x(), data.num_y());
  const cupid::Vec theta;

  cupid::EstimationResult res;
  if (a.estimator == "mm") {
    res = cupid::moment_match(spec, theta, data);
  } else if (a.estimator == "mle") {
    res = cupid::mle(spec, data, cupid::Vec::Zero(spec.basis.size()), theta);
  } else if (a.estimator == "md") {
    const cupid::Mat W =
        cupid::min_distance_efficient_weight(spec, theta, data);
    res = cupid::min_distance(spec, theta, data, W);
  } else {
    throw std::invalid_argument("unknown estimator '" + a.estimator + "'");
  }

  if (a.boot > 0) {
    cupid::Estimator which = a.estimator == "mm"
                                 ? cupid::Estimator::moment_match
                                 : a.estimator == "mle"
                                       ? cupid::Estimator::mle
                                       : cupid::Estimator::min_distance;
    res.se = cupid::bootstrap_se(spec, theta, data, which, a.boot, a.seed).se;
  }

  json est{{"lambda", vec_to_json(res.lambda)},
           {"theta", vec_to_json(res.theta)},
           {"se", vec_to_json(res.se)},
           {"loglik", res.loglik},
           {"aic", res.aic},
           {"bic", res.bic},
           {"converged", res.converged}};
  if (a.estimator == "md") {
    est["j_stat"] = res.j_stat;
    est["j_df"] = res.j_df;
    est["j_pvalue"] = res.j_pvalue;
  }
  cupid::atomic_write_text(a.out.path("estimates.json"), est.dump(2) + "\n");
  {
    const cupid::Vec observed =
        spec.basis.comoments(cupid::normalize_counts(data).muhat.mu);
    std::ostringstream out;
    out << "k,observed,fitted\n";
    out.precision(17);
    for (Eigen::Index k = 0; k < spec.basis.size(); ++k)
      out << k << "," << observed(k) << "," << res.comoments(k) << "\n";
    cupid::atomic_write_text(a.out.path("comoments.csv"), out.str());
  }
  a.out.write_report(json{{"command", "estimate"},
                          {"estimator", a.estimator},
                          {"status", res.converged ? "ok" : "not_converged"},
                          {"seed", a.seed}});
  return res.converged ? 0 : 2;
}

int run_spec_test(const EstimateArgs& a) {
  a.out.prepare();
  const cupid::SampleCounts data = cupid::read_counts(a.data_path);
  const json spec_json = load_json_file(a.spec_path);
  const cupid::ParamModelSpec spec =
      spec_from_json(spec_json, data.num_x(), data.num_y());
  const int n_boot = a.boot > 0 ? a.boot : 999;
  const cupid::SpecTestResult res =
      cupid::entropy_spec_test(spec, cupid::Vec(), data, n_boot, a.seed);
  cupid::atomic_write_text(
      a.out.path("test.json"),
      json{{"statistic", res.statistic},
           {"p_value", res.p_value},
           {"bootstrap_failures", res.bootstrap_failures}}
              .dump(2) +
          "\n");
  {
    std::ostringstream out;
    out << "replicate,statistic\n";
    out.precision(17);
    for (Eigen::Index b = 0; b < res.replicates.size(); ++b)
      out << b << "," << res.replicates(b) << "\n";
    cupid::atomic_write_text(a.out.path("replicates.csv"), out.str());
  }
  a.out.write_report(json{{"command", "test"},
                          {"status", "ok"},
                          {"seed", a.seed},
                          {"n_boot", n_boot}});
  return 0;
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
  Eigen::Index size = 2;
  std::uint64_t seed = 1;
  std::int64_t households = 0;
  std::string model_path;
  CommonOut out;
};

int run_simulate(const SimulateArgs& a) {
  a.out.prepare();
  const cupid::BenchmarkInstance inst = cupid::gen_benchmark(a.size, a.seed);
  const cupid::ModelList models = load_models(a.model_path, a.size);
  cupid::SolveOptions opts;
  opts.tol = 1e-9;
  const cupid::SolveResult res =
      cupid::solve_ipfp_general(models, models, inst.phi, inst.margins, opts);
  cupid::write_margins(a.out.path("margins.csv"), inst.margins);
  cupid::write_phi(a.out.path("phi.csv"), inst.phi);
  cupid::write_matching(a.out.path("matching.csv"), res.mu);
  if (a.households > 0) {
    const cupid::SampleCounts counts = cupid::sample_households(
        res.mu, a.households, cupid::Rng::split_seed(a.seed, 1));
    cupid::write_counts(a.out.path("counts.csv"), counts);
  }
  a.out.write_report(json{{"command", "simulate"},
                          {"status", res.report.converged ? "ok" : "not_converged"},
                          {"size", a.size},
                          {"seed", a.seed},
                          {"households", a.households},
                          {"solve", report_for(res.report, a.out.no_timings)}});
  return res.report.converged ? 0 : 2;
}

// ---- bench -------------------------------------------------------------------

struct BenchArgs {
  std::vector<Eigen::Index> sizes;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  double tol = 1e-6;
  CommonOut out;
};

int run_bench(const BenchArgs& a) {
  if (a.methods.empty())
    throw std::invalid_argument("bench: at least one method is required");
  for (const auto& m : a.methods)
    if (m != "ipfp" && m != "minemax" && m != "choosiow_f")
      throw std::invalid_argument("bench: unsupported method '" + m + "'");
  a.out.prepare();

  cupid::SolveOptions opts;
  opts.tol = a.tol;
  const cupid::ModelList logit =
      cupid::broadcast(std::make_shared<cupid::LogitModel>());

  auto run_method = [&](const std::string& method,
                        const cupid::BenchmarkInstance& inst) {
    if (method == "ipfp") return cupid::solve_ipfp_logit(inst.phi, inst.margins, opts);
    if (method == "minemax")
      return cupid::solve_minemax(logit, logit, inst.phi, inst.margins, opts);
    return cupid::solve_F_choosiow(inst.phi, inst.margins, opts);
  };

  std::ostringstream csv;
  csv << "size,seed,method,median_seconds,iterations,final_residual,converged,"
         "max_mu_disagreement\n";
  json cells = json::array();
  bool all_ok = true;
  for (Eigen::Index size : a.sizes) {
    for (std::uint64_t seed : a.seeds) {
      const cupid::BenchmarkInstance inst = cupid::gen_benchmark(size, seed);
      std::vector<cupid::SolveResult> sols;
      for (const auto& method : a.methods) {
        try {
          sols.push_back(run_method(method, inst));
        } catch (const std::exception& e) {
          log(LogLevel::warn, "bench cell failed: " + std::string(e.what()));
          sols.emplace_back();
          all_ok = false;
        }
      }
      for (std::size_t mi = 0; mi < a.methods.size(); ++mi) {
        double disagree = 0.0;
        if (sols[mi].mu.mu.size() && sols[0].mu.mu.size())
          disagree = (sols[mi].mu.mu - sols[0].mu.mu).cwiseAbs().maxCoeff();
        if (disagree > 1e-5) {
          log(LogLevel::warn, "bench: method " + a.methods[mi] +
                                  " disagrees by " + std::to_string(disagree));
          all_ok = false;
        }
        // Median-of-5 timing, only counted when the solutions agree.
        std::vector<double> times;
        for (int rep = 0; rep < 5; ++rep)
          times.push_back(run_method(a.methods[mi], inst).report.wall_time_seconds);
        std::sort(times.begin(), times.end());
        const double median = times[2];
        csv << size << "," << seed << "," << a.methods[mi] << "," << median
            << "," << sols[mi].report.iterations << ","
            << sols[mi].report.final_residual << ","
            << (sols[mi].report.converged ? 1 : 0) << "," << disagree << "\n";
        cells.push_back(json{{"size", size},
                             {"seed", seed},
                             {"method", a.methods[mi]},
                             {"median_seconds", median},
                             {"iterations", sols[mi].report.iterations},
                             {"converged", sols[mi].report.converged},
                             {"max_mu_disagreement", disagree}});
      }
    }
  }
  cupid::atomic_write_text(a.out.path("bench.csv"), csv.str());
  json report{{"command", "bench"}, {"status", all_ok ? "ok" : "error"}};
  if (!a.out.no_timings) report["cells"] = cells;
  a.out.write_report(report);
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("CUPID_LOG")) {
    try {
      g_log_level = parse_level(env);
    } catch (...) {
      std::cerr << "warning: ignoring invalid CUPID_LOG\n";
    }
  }

  CLI::App app{"Matching-market solver, identification, and estimation tool"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "debug|info|warn|error");

  SolveArgs solve_args;
  auto* solve_cmd = app.add_subcommand("solve", "compute a stable matching");
  solve_cmd->add_option("--phi", solve_args.phi_path, "surplus csv")->required();
  solve_cmd->add_option("--margins", solve_args.margins_path, "margins csv")
      ->required();
  solve_cmd->add_option("--model-men", solve_args.men_path, "men model json");
  solve_cmd->add_option("--model-women", solve_args.women_path,
                        "women model json");
  solve_cmd->add_option("--method", solve_args.method,
                        "ipfp|minemax|choosiow_f|lp_discrete");
  solve_cmd->add_option("--tol", solve_args.tol, "margin residual tolerance");
  solve_cmd->add_option("--max-iter", solve_args.max_iter, "iteration cap");
  solve_cmd->add_option("--damping", solve_args.damping, "fallback damping");
  solve_args.out.add_to(solve_cmd);

  IdentifyArgs id_args;
  auto* id_cmd = app.add_subcommand("identify", "recover surplus from data");
  id_cmd->add_option("--matching", id_args.matching_path, "matching csv")
      ->required();
  id_cmd->add_option("--margins", id_args.margins_path, "margins csv")
      ->required();
  id_cmd->add_option("--model-men", id_args.men_path, "men model json");
  id_cmd->add_option("--model-women", id_args.women_path, "women model json");
  id_args.out.add_to(id_cmd);

  EstimateArgs est_args;
  auto* est_cmd = app.add_subcommand("estimate", "fit a parametric surplus");
  est_cmd->add_option("--data", est_args.data_path, "household counts csv")
      ->required();
  est_cmd->add_option("--spec", est_args.spec_path, "model spec json")
      ->required();
  est_cmd->add_option("--estimator", est_args.estimator, "mm|mle|md");
  est_cmd->add_option("--boot", est_args.boot, "bootstrap replications");
  est_cmd->add_option("--seed", est_args.seed, "bootstrap seed");
  est_args.out.add_to(est_cmd);

  EstimateArgs test_args;
  auto* test_cmd = app.add_subcommand("test", "entropy specification test");
  test_cmd->add_option("--data", test_args.data_path, "household counts csv")
      ->required();
  test_cmd->add_option("--spec", test_args.spec_path, "model spec json")
      ->required();
  test_cmd->add_option("--boot", test_args.boot, "bootstrap replications");
  test_cmd->add_option("--seed", test_args.seed, "bootstrap seed");
  test_args.out.add_to(test_cmd);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic market");
  sim_cmd->add_option("--size", sim_args.size, "number of groups per side");
  sim_cmd->add_option("--seed", sim_args.seed, "generator seed");
  sim_cmd->add_option("--households", sim_args.households,
                      "sampled households (0 = skip sampling)");
  sim_cmd->add_option("--model", sim_args.model_path, "model json (both sides)");
  sim_args.out.add_to(sim_cmd);

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "cross-method benchmark");
  bench_cmd->add_option("--sizes", bench_args.sizes, "market sizes")->required();
  bench_cmd->add_option("--seeds", bench_args.seeds, "instance seeds")
      ->required();
  bench_cmd->add_option("--methods", bench_args.methods,
                        "ipfp|minemax|choosiow_f");
  bench_cmd->add_option("--tol", bench_args.tol, "solver tolerance");
  bench_args.out.add_to(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (!log_level.empty()) {
    try {
      g_log_level = parse_level(log_level);
    } catch (const CLI::ValidationError& e) {
      std::cerr << e.what() << "\n";
      return 1;
    }
  }

  try {
    if (solve_cmd->parsed()) return run_solve(solve_args);
    if (id_cmd->parsed()) return run_identify(id_args);
    if (est_cmd->parsed()) return run_estimate(est_args);
    if (test_cmd->parsed()) return run_spec_test(test_args);
    if (sim_cmd->parsed()) return run_simulate(sim_args);
    if (bench_cmd->parsed()) return run_bench(bench_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
