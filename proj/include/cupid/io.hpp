#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cupid/choice_models.hpp"
#include "cupid/discretized.hpp"
#include "cupid/market.hpp"
#include "cupid/simulation.hpp"
#include "cupid/solvers.hpp"

namespace cupid {

using nlohmann::json;

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
      field.pop_back();
    std::size_t start = field.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? "" : field.substr(start));
  }
  return out;
}

struct CsvReader {
  std::string path;
  std::ifstream in;
  int line_no = 0;

  explicit CsvReader(const std::string& p) : path(p), in(p) {
    if (!in) throw std::runtime_error("cannot open " + p);
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
  }

  void expect_header(const std::string& expected) {
    std::string line;
    if (!std::getline(in, line)) fail("missing header row");
    ++line_no;
    auto fields = split_csv_line(line);
    auto want = split_csv_line(expected);
    if (fields != want)
      fail("expected header '" + expected + "', got '" + line + "'");
  }

  bool next_row(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      fields = split_csv_line(line);
      return true;
    }
    return false;
  }

  double num(const std::string& s) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) fail("malformed number '" + s + "'");
      return v;
    } catch (const std::invalid_argument&) {
      fail("malformed number '" + s + "'");
    } catch (const std::out_of_range&) {
      fail("number out of range '" + s + "'");
    }
  }
};

}  // namespace io_detail

// Writes a whole file atomically: temp file in place, then rename.
inline void atomic_write_text(const std::string& path,
                              const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << content;
    if (!out.good()) throw std::runtime_error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("failed renaming " + tmp + " to " + path);
}

// Matching, long format: x,y,mass with y = -1 for single men and x = -1 for
// single women.
inline void write_matching(const std::string& path, const Matching& mu) {
  std::ostringstream out;
  out << "x,y,mass\n";
  out.precision(17);
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    for (Eigen::Index y = 0; y < mu.num_y(); ++y)
      out << x << "," << y << "," << mu.mu(x, y) << "\n";
  for (Eigen::Index x = 0; x < mu.num_x(); ++x)
    out << x << ",-1," << mu.mu_x0(x) << "\n";
  for (Eigen::Index y = 0; y < mu.num_y(); ++y)
    out << "-1," << y << "," << mu.mu_0y(y) << "\n";
  atomic_write_text(path, out.str());
}

inline Matching read_matching(const std::string& path) {
  io_detail::CsvReader r(path);
  r.expect_header("x,y,mass");
  struct Row {
    long x, y;
    double mass;
    int line;
  };
  std::vector<Row> rows;
  long max_x = -1, max_y = -1;
  std::vector<std::string> f;
  while (r.next_row(f)) {
    if (f.size() != 3) r.fail("expected 3 fields");
    Row row{static_cast<long>(r.num(f[0])), static_cast<long>(r.num(f[1])),
            r.num(f[2]), r.line_no};
    if (row.x < -1 || row.y < -1 || (row.x == -1 && row.y == -1))
      r.fail("bad group indices");
    if (row.mass < 0) r.fail("negative mass");
    max_x = std::max(max_x, row.x);
    max_y = std::max(max_y, row.y);
    rows.push_back(row);
  }
  if (max_x < 0 || max_y < 0)
    throw std::runtime_error(path + ": no couple cells found");
  Mat mu = Mat::Zero(max_x + 1, max_y + 1);
  Vec mu_x0 = Vec::Zero(max_x + 1), mu_0y = Vec::Zero(max_y + 1);
  for (const Row& row : rows) {
    if (row.x == -1)
      mu_0y(row.y) = row.mass;
    else if (row.y == -1)
      mu_x0(row.x) = row.mass;
    else
      mu(row.x, row.y) = row.mass;
  }
  return Matching(mu, mu_x0, mu_0y);
}

// Margins for both sides in one file: side,group,mass with side M or W.
inline void write_margins(const std::string& path, const Margins& r) {
  std::ostringstream out;
  out << "side,group,mass\n";
  out.precision(17);
  for (Eigen::Index x = 0; x < r.num_x(); ++x)
    out << "M," << x << "," << r.n(x) << "\n";
  for (Eigen::Index y = 0; y < r.num_y(); ++y)
    out << "W," << y << "," << r.m(y) << "\n";
  atomic_write_text(path, out.str());
}

inline Margins read_margins(const std::string& path) {
  io_detail::CsvReader r(path);
  r.expect_header("side,group,mass");
  std::vector<double> n, m;
  std::vector<std::string> f;
  while (r.next_row(f)) {
    if (f.size() != 3) r.fail("expected 3 fields");
    const long g = static_cast<long>(r.num(f[1]));
    const double mass = r.num(f[2]);
    if (mass < 0) r.fail("negative mass");
    std::vector<double>* side;
    if (f[0] == "M")
      side = &n;
    else if (f[0] == "W")
      side = &m;
    else
      r.fail("side must be M or W");
    if (g < 0) r.fail("negative group index");
    if (static_cast<std::size_t>(g) >= side->size()) side->resize(g + 1, 0.0);
    (*side)[g] = mass;
  }
  if (n.empty() || m.empty())
    throw std::runtime_error(path + ": both sides required");
  return Margins(Eigen::Map<const Vec>(n.data(), n.size()),
                 Eigen::Map<const Vec>(m.data(), m.size()));
}

// Surplus, long format: x,y,phi,forbidden with forbidden cells written as
// mass 0 plus the flag.
inline void write_phi(const std::string& path, const SurplusMatrix& phi) {
  std::ostringstream out;
  out << "x,y,phi,forbidden\n";
  out.precision(17);
  for (Eigen::Index x = 0; x < phi.num_x(); ++x)
    for (Eigen::Index y = 0; y < phi.num_y(); ++y)
      out << x << "," << y << "," << (phi.forbidden(x, y) ? 0.0 : phi.phi(x, y))
          << "," << (phi.forbidden(x, y) ? 1 : 0) << "\n";
  atomic_write_text(path, out.str());
}

inline SurplusMatrix read_phi(const std::string& path) {
  io_detail::CsvReader r(path);
  r.expect_header("x,y,phi,forbidden");
  struct Row {
    long x, y;
    double phi;
    bool forbidden;
  };
  std::vector<Row> rows;
  long max_x = -1, max_y = -1;
  std::vector<std::string> f;
  while (r.next_row(f)) {
    if (f.size() != 4) r.fail("expected 4 fields");
    Row row{static_cast<long>(r.num(f[0])), static_cast<long>(r.num(f[1])),
            r.num(f[2]), r.num(f[3]) != 0.0};
    if (row.x < 0 || row.y < 0) r.fail("negative group index");
    max_x = std::max(max_x, row.x);
    max_y = std::max(max_y, row.y);
    rows.push_back(row);
  }
  if (max_x < 0) throw std::runtime_error(path + ": empty surplus file");
  Mat phi = Mat::Zero(max_x + 1, max_y + 1);
  BoolMat forbidden = BoolMat::Constant(max_x + 1, max_y + 1, false);
  for (const Row& row : rows) {
    phi(row.x, row.y) = row.phi;
    forbidden(row.x, row.y) = row.forbidden;
  }
  return SurplusMatrix(phi, forbidden);
}

// Household counts, long format like a Matching.
inline void write_counts(const std::string& path, const SampleCounts& c) {
  Matching as_matching(c.couples, c.single_men, c.single_women);
  write_matching(path, as_matching);
}

inline SampleCounts read_counts(const std::string& path) {
  Matching m = read_matching(path);
  SampleCounts out;
  out.couples = m.mu;
  out.single_men = m.mu_x0;
  out.single_women = m.mu_0y;
  out.households = static_cast<std::int64_t>(
      std::llround(m.mu.sum() + m.mu_x0.sum() + m.mu_0y.sum()));
  return out;
}

// Finite-support error law: weight,e0,e1,... per row.
inline void write_discretized(const std::string& path,
                              const DiscretizedDistribution& d) {
  std::ostringstream out;
  out << "weight";
  for (Eigen::Index j = 0; j < d.num_options(); ++j) out << ",e" << j;
  out << "\n";
  out.precision(17);
  for (Eigen::Index k = 0; k < d.num_points(); ++k) {
    out << d.weights(k);
    for (Eigen::Index j = 0; j < d.num_options(); ++j)
      out << "," << d.support(k, j);
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

inline DiscretizedDistribution read_discretized(const std::string& path) {
  io_detail::CsvReader r(path);
  std::string line;
  if (!std::getline(r.in, line)) r.fail("missing header row");
  ++r.line_no;
  auto header = io_detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "weight")
    r.fail("expected header 'weight,e0,...'");
  const Eigen::Index Y0 = static_cast<Eigen::Index>(header.size()) - 1;
  std::vector<double> weights;
  std::vector<double> support;
  std::vector<std::string> f;
  while (r.next_row(f)) {
    if (static_cast<Eigen::Index>(f.size()) != Y0 + 1)
      r.fail("wrong field count");
    weights.push_back(r.num(f[0]));
    for (Eigen::Index j = 0; j < Y0; ++j) support.push_back(r.num(f[1 + j]));
  }
  const Eigen::Index K = static_cast<Eigen::Index>(weights.size());
  Mat sup(K, Y0);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < Y0; ++j) sup(k, j) = support[k * Y0 + j];
  return DiscretizedDistribution(sup,
                                 Eigen::Map<const Vec>(weights.data(), K));
}

// ---- Model specs as JSON -------------------------------------------------

inline json model_to_json(const ChoiceModel& model);

namespace io_detail {

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Mat mat_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw std::runtime_error("model json: expected a matrix (array of arrays)");
  const Eigen::Index rows = j.size(), cols = j[0].size();
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw std::runtime_error("model json: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace io_detail

inline ModelPtr model_from_json(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "logit") return std::make_shared<LogitModel>();
  if (family == "nested_logit") {
    std::vector<std::vector<int>> nests =
        j.at("nests").get<std::vector<std::vector<int>>>();
    return std::make_shared<NestedLogitModel>(
        std::move(nests), io_detail::vec_from_json(j.at("lambda")));
  }
  if (family == "scaled") {
    return std::make_shared<ScaledModel>(model_from_json(j.at("base")),
                                         j.at("scale").get<double>());
  }
  if (family == "fcmnl") {
    return std::make_shared<FcMnlModel>(io_detail::mat_from_json(j.at("b")),
                                        j.at("sigma").get<double>(),
                                        j.at("tau").get<double>());
  }
  if (family == "discretized") {
    if (j.contains("csv"))
      return std::make_shared<DiscretizedModel>(
          read_discretized(j.at("csv").get<std::string>()));
    return std::make_shared<DiscretizedModel>(DiscretizedDistribution(
        io_detail::mat_from_json(j.at("support")),
        io_detail::vec_from_json(j.at("weights"))));
  }
  if (family == "rc_logit") {
    DiscretizedDistribution draws(
        io_detail::mat_from_json(j.at("draws").at("support")),
        io_detail::vec_from_json(j.at("draws").at("weights")));
    return std::make_shared<RcLogitModel>(io_detail::mat_from_json(j.at("Z")),
                                          std::move(draws),
                                          j.at("T").get<double>());
  }
  if (family == "gev")
    throw std::runtime_error(
        "model json: 'gev' generators are supplied in code, not JSON");
  throw std::runtime_error("model json: unknown family '" + family + "'");
}

// A spec is either a single model (broadcast) or {"per_group": [...]} with
// one entry per group; "scaled" also accepts an array-valued "scale".
inline ModelList models_from_json(const json& j, Eigen::Index groups) {
  if (j.contains("per_group")) {
    const json& arr = j.at("per_group");
    if (static_cast<Eigen::Index>(arr.size()) != groups)
      throw std::runtime_error("model json: per_group length mismatch");
    ModelList out;
    for (const auto& item : arr) out.push_back(model_from_json(item));
    return out;
  }
  if (j.contains("family") && j.at("family") == "scaled" &&
      j.at("scale").is_array()) {
    const Vec scales = io_detail::vec_from_json(j.at("scale"));
    if (scales.size() != groups)
      throw std::runtime_error("model json: scale array length mismatch");
    ModelList out;
    for (Eigen::Index i = 0; i < groups; ++i)
      out.push_back(std::make_shared<ScaledModel>(
          model_from_json(j.at("base")), scales(i)));
    return out;
  }
  return broadcast(model_from_json(j));
}

inline json model_to_json(const ChoiceModel& model) {
  if (dynamic_cast<const LogitModel*>(&model)) return {{"family", "logit"}};
  if (const auto* m = dynamic_cast<const NestedLogitModel*>(&model)) {
    json lam = json::array();
    for (Eigen::Index i = 0; i < m->lambda().size(); ++i)
      lam.push_back(m->lambda()(i));
    return {{"family", "nested_logit"}, {"nests", m->nests()}, {"lambda", lam}};
  }
  if (const auto* m = dynamic_cast<const ScaledModel*>(&model)) {
    return {{"family", "scaled"},
            {"base", model_to_json(*m->base())},
            {"scale", m->scale()}};
  }
  if (const auto* m = dynamic_cast<const FcMnlModel*>(&model)) {
    return {{"family", "fcmnl"},
            {"b", io_detail::mat_to_json(m->b())},
            {"sigma", m->sigma()},
            {"tau", m->tau()}};
  }
  if (const auto* m = dynamic_cast<const DiscretizedModel*>(&model)) {
    json weights = json::array();
    for (Eigen::Index k = 0; k < m->dist().num_points(); ++k)
      weights.push_back(m->dist().weights(k));
    return {{"family", "discretized"},
            {"support", io_detail::mat_to_json(m->dist().support)},
            {"weights", weights}};
  }
  if (const auto* m = dynamic_cast<const RcLogitModel*>(&model)) {
    json weights = json::array();
    for (Eigen::Index k = 0; k < m->e_draws().num_points(); ++k)
      weights.push_back(m->e_draws().weights(k));
    return {{"family", "rc_logit"},
            {"Z", io_detail::mat_to_json(m->Z())},
            {"draws",
             {{"support", io_detail::mat_to_json(m->e_draws().support)},
              {"weights", weights}}},
            {"T", m->temperature()}};
  }
  throw std::runtime_error("model json: family not serializable");
}

}  // namespace cupid
