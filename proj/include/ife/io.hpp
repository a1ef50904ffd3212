#pragma once

// Matrix CSV and long-format ingestion, data manifests, run configuration
// files and canonical JSON output.

#include "ife/diagnostics.hpp"
#include "ife/penalty.hpp"
#include "ife/rank_tools.hpp"
#include "ife/simulation.hpp"
#include "ife/sqrt_estimator.hpp"
#include "ife/two_stage.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace ife::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << content;
  if (!out) throw InvalidInput("write failed for '" + path + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last)
    throw InvalidInput(where + ": '" + s + "' is not a number");
  if (!std::isfinite(v)) throw InvalidInput(where + ": non-finite value '" + s + "'");
  return v;
}

/// Comma-separated N x T matrix without header. Blank lines are skipped.
inline Matrix load_matrix_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      row.push_back(parse_cell(cells[j], path + " line " + std::to_string(lineno) + " column " + std::to_string(j + 1)));
    if (!rows.empty() && row.size() != rows.front().size())
      throw InvalidInput(path + " line " + std::to_string(lineno) + ": expected " +
                         std::to_string(rows.front().size()) + " columns, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput(path + ": empty matrix file");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string matrix_csv(const Matrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 24);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += fmt17(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_matrix_csv(const std::string& path, const Matrix& m) { write_file(path, matrix_csv(m)); }

struct LongPanel {
  PanelData panel;
  std::vector<std::string> unit_labels;  // row index -> label of i
  std::vector<std::string> time_labels;  // column index -> label of t
};

/// Long format with header `i,t,y,x1,...,xK`; labels are mapped to indices in
/// order of first appearance. Every (i, t) pair must occur exactly once.
inline LongPanel load_long_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line, ',');
      break;
    }
  }
  for (auto& h : header) h = trim(h);
  if (header.size() < 3 || header[0] != "i" || header[1] != "t" || header[2] != "y")
    throw InvalidInput(path + ": header must start with i,t,y");
  const std::size_t k = header.size() - 3;
  for (std::size_t j = 0; j < k; ++j)
    if (header[3 + j] != "x" + std::to_string(j + 1))
      throw InvalidInput(path + ": header column " + std::to_string(4 + j) + " must be x" + std::to_string(j + 1));

  struct Cell {
    Index i, t;
    std::vector<double> v;
    int line;
  };
  std::vector<Cell> cells;
  LongPanel out;
  std::unordered_map<std::string, Index> units, times;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != header.size())
      throw InvalidInput(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                         " fields, found " + std::to_string(parts.size()));
    const std::string ui = trim(parts[0]);
    const std::string ti = trim(parts[1]);
    if (!units.count(ui)) {
      units[ui] = static_cast<Index>(out.unit_labels.size());
      out.unit_labels.push_back(ui);
    }
    if (!times.count(ti)) {
      times[ti] = static_cast<Index>(out.time_labels.size());
      out.time_labels.push_back(ti);
    }
    Cell c{units[ui], times[ti], {}, lineno};
    for (std::size_t j = 2; j < parts.size(); ++j)
      c.v.push_back(parse_cell(parts[j], path + " line " + std::to_string(lineno) + " column " + std::to_string(j + 1)));
    cells.push_back(std::move(c));
  }
  const Index n = static_cast<Index>(out.unit_labels.size());
  const Index t = static_cast<Index>(out.time_labels.size());
  if (n == 0) throw InvalidInput(path + ": no data rows");
  out.panel.y = Matrix::Zero(n, t);
  out.panel.x.assign(k, Matrix::Zero(n, t));
  std::vector<char> seen(static_cast<std::size_t>(n * t), 0);
  for (const auto& c : cells) {
    char& s = seen[static_cast<std::size_t>(c.t * n + c.i)];
    if (s)
      throw InvalidInput(path + " line " + std::to_string(c.line) + ": duplicate observation for (i=" + out.unit_labels[c.i] +
                         ", t=" + out.time_labels[c.t] + ")");
    s = 1;
    out.panel.y(c.i, c.t) = c.v[0];
    for (std::size_t j = 0; j < k; ++j) out.panel.x[j](c.i, c.t) = c.v[1 + j];
  }
  for (Index tt = 0; tt < t; ++tt)
    for (Index i = 0; i < n; ++i)
      if (!seen[static_cast<std::size_t>(tt * n + i)])
        throw InvalidInput(path + ": unbalanced panel, missing (i=" + out.unit_labels[i] + ", t=" +
                           out.time_labels[tt] + "); fill or drop units/periods before loading");
  return out;
}

/// Long-format export with 1-based integer labels.
inline std::string long_csv(const PanelData& p) {
  std::string out = "i,t,y";
  for (Index k = 0; k < p.k(); ++k) out += ",x" + std::to_string(k + 1);
  out += '\n';
  for (Index i = 0; i < p.n(); ++i)
    for (Index t = 0; t < p.t(); ++t) {
      out += std::to_string(i + 1) + ',' + std::to_string(t + 1) + ',' + fmt17(p.y(i, t));
      for (const auto& xk : p.x) out += ',' + fmt17(xk(i, t));
      out += '\n';
    }
  return out;
}

// ---- digests ---------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t digest(const Matrix& m, std::uint64_t h = 1469598103934665603ULL) {
  const std::int64_t dims[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  h = fnv1a(dims, sizeof dims, h);
  return fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string panel_digest(const PanelData& p) {
  std::uint64_t h = digest(p.y);
  for (const auto& xk : p.x) h = digest(xk, h);
  return "fnv1a64:" + hex(h);
}

// ---- manifests ---------------------------------------------------------------

/// JSON manifest:
///   {"format": "matrix-csv", "y": "y.csv", "x": ["x1.csv", ...], "n": N, "t": T, "k": K}
///   {"format": "long-csv", "path": "panel.csv", ...}
/// Relative paths resolve against the manifest's directory. Transformed data
/// may also list "pi" (one matrix per regressor) and "decomposition" metadata.
struct Manifest {
  std::string path;
  json doc;
  PanelData panel;
  std::vector<Matrix> pis;
};

inline std::string resolve(const std::string& manifest_path, const std::string& p) {
  const fs::path fp(p);
  if (fp.is_absolute()) return p;
  return (fs::path(manifest_path).parent_path() / fp).string();
}

inline Manifest load_manifest(const std::string& path) {
  Manifest m;
  m.path = path;
  try {
    m.doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": invalid JSON (" + e.what() + ")");
  }
  const std::string format = m.doc.value("format", std::string("matrix-csv"));
  if (format == "matrix-csv") {
    if (!m.doc.contains("y")) throw InvalidInput(path + ": missing \"y\"");
    m.panel.y = load_matrix_csv(resolve(path, m.doc["y"].get<std::string>()));
    for (const auto& xp : m.doc.value("x", json::array()))
      m.panel.x.push_back(load_matrix_csv(resolve(path, xp.get<std::string>())));
  } else if (format == "long-csv") {
    if (!m.doc.contains("path")) throw InvalidInput(path + ": missing \"path\"");
    m.panel = load_long_csv(resolve(path, m.doc["path"].get<std::string>())).panel;
  } else {
    throw InvalidInput(path + ": unknown format '" + format + "' (expected matrix-csv or long-csv)");
  }
  for (const auto& pp : m.doc.value("pi", json::array()))
    m.pis.push_back(load_matrix_csv(resolve(path, pp.get<std::string>())));
  for (const auto& tl : m.doc.value("transform_log", json::array())) m.panel.transform_log.push_back(tl.get<std::string>());
  auto check = [&](const char* key, Index actual) {
    if (m.doc.contains(key) && m.doc[key].get<Index>() != actual)
      throw InvalidInput(path + ": declared " + key + " = " + std::to_string(m.doc[key].get<Index>()) +
                         " but data has " + std::to_string(actual));
  };
  check("n", m.panel.n());
  check("t", m.panel.t());
  check("k", m.panel.k());
  m.panel.validate();
  if (!m.pis.empty()) {
    require(static_cast<Index>(m.pis.size()) == m.panel.k(), path + ": \"pi\" must list one matrix per regressor");
    for (const auto& p : m.pis) require_same_shape(m.panel.y, p, "manifest pi");
  }
  return m;
}

/// Writes `<stem>.y.csv`, `<stem>.x<k>.csv` (and `<stem>.pi<k>.csv`) next to
/// the manifest at `manifest_path`, then the manifest itself.
inline void write_manifest(const std::string& manifest_path, const PanelData& p, const std::vector<Matrix>& pis = {},
                           const json& extra = json::object()) {
  const fs::path mp(manifest_path);
  const fs::path dir = mp.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const std::string stem = mp.stem().string();
  auto put = [&](const std::string& tag, const Matrix& m) {
    const std::string name = stem + "." + tag + ".csv";
    save_matrix_csv((dir / name).string(), m);
    return name;
  };
  json doc = extra;
  doc["format"] = "matrix-csv";
  doc["n"] = p.n();
  doc["t"] = p.t();
  doc["k"] = p.k();
  doc["y"] = put("y", p.y);
  doc["x"] = json::array();
  for (Index k = 0; k < p.k(); ++k) doc["x"].push_back(put("x" + std::to_string(k + 1), p.x[static_cast<std::size_t>(k)]));
  if (!pis.empty()) {
    doc["pi"] = json::array();
    for (std::size_t k = 0; k < pis.size(); ++k) doc["pi"].push_back(put("pi" + std::to_string(k + 1), pis[k]));
  }
  doc["transform_log"] = p.transform_log;
  write_file(manifest_path, doc.dump(2) + "\n");
}

// ---- run configuration -----------------------------------------------------

struct RunConfig {
  penalty::PenaltyConfig penalty;
  SolverOptions solver;
  ThresholdRule threshold_rule = ThresholdRule::paper_sim;
  SigmaSource sigma_source = SigmaSource::fit;
  int transform_mode = 2;
  int sqrt_iters = 200;
  int decompose_iters = 200;
  int first_iters = 100;
  int extra_iters = 100;
  TwoStageMethod method = TwoStageMethod::annihilated;
  AnnihilatorSource annihilators = AnnihilatorSource::stacked;
  double level = 0.95;
  int bai_iters = 100;
  std::uint64_t seed = 20240101;
  Index sim_n = 50;
  Index sim_t = 50;
  int sim_reps = 100;
  bool sim_within = false;

  ThresholdSpec threshold_spec() const { return {threshold_rule, penalty.rho, penalty.h}; }

  PipelineConfig pipeline() const {
    PipelineConfig pc;
    pc.penalty = penalty;
    pc.threshold = threshold_spec();
    pc.sigma_source = sigma_source;
    pc.transform_mode = transform_mode;
    pc.sqrt_iters = sqrt_iters;
    pc.decompose_iters = decompose_iters;
    pc.first_iters = first_iters;
    pc.extra_iters = extra_iters;
    pc.bai_iters = bai_iters;
    pc.tol = solver.tol;
    pc.objective_rel_tol = solver.objective_rel_tol;
    pc.condition_cap = solver.condition_cap;
    pc.level = level;
    pc.annihilators = annihilators;
    return pc;
  }

  void validate() const {
    require(penalty.rho > 0.0 && penalty.rho < 1.0, "penalty.rho must lie in (0, 1)");
    require(penalty.h > 1.0, "penalty.h must be > 1");
    require(penalty.varphi >= 0.0, "penalty.varphi must be >= 0");
    require(!penalty.lambda || *penalty.lambda > 0.0, "penalty.lambda must be > 0");
    require(solver.tol > 0.0, "solver.tol must be > 0");
    require(solver.max_iter >= 0, "solver.max_iter must be >= 0");
    require(solver.condition_cap > 1.0, "solver.condition_cap must be > 1");
    require(transform_mode >= 1 && transform_mode <= 5, "transform.mode must be in 1..5");
    require(sqrt_iters >= 0 && decompose_iters >= 0 && first_iters >= 0 && extra_iters >= 0,
            "iteration counts must be >= 0");
    require(bai_iters >= 1, "twostage.max_iter must be >= 1");
    require(level > 0.0 && level < 1.0, "twostage.level must lie in (0, 1)");
    require(sim_n >= 2 && sim_t >= 2 && sim_reps >= 1, "simulation.n, simulation.t must be >= 2 and reps >= 1");
  }
};

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw InvalidInput("config: " + key + " = '" + v + "' is not a finite number");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw InvalidInput("config: " + key + " = '" + v + "' is not an integer");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config: " + key + " = '" + v + "' is not a boolean");
}

/// Applies one flattened `section.key = value` setting.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& v) {
  if (key == "penalty.rule") cfg.penalty.rule = penalty::parse_rule(v);
  else if (key == "penalty.rho") cfg.penalty.rho = to_double(key, v);
  else if (key == "penalty.h") cfg.penalty.h = to_double(key, v);
  else if (key == "penalty.lambda") cfg.penalty.lambda = to_double(key, v);
  else if (key == "penalty.varphi") cfg.penalty.varphi = to_double(key, v);
  else if (key == "penalty.phi1") cfg.penalty.phi1 = to_double(key, v);
  else if (key == "penalty.phi2") cfg.penalty.phi2 = to_double(key, v);
  else if (key == "solver.tol") cfg.solver.tol = to_double(key, v);
  else if (key == "solver.objective_rel_tol") cfg.solver.objective_rel_tol = to_double(key, v);
  else if (key == "solver.max_iter") cfg.solver.max_iter = static_cast<int>(to_int(key, v));
  else if (key == "solver.condition_cap") cfg.solver.condition_cap = to_double(key, v);
  else if (key == "solver.sqrt_iters") cfg.sqrt_iters = static_cast<int>(to_int(key, v));
  else if (key == "solver.decompose_iters") cfg.decompose_iters = static_cast<int>(to_int(key, v));
  else if (key == "solver.first_iters") cfg.first_iters = static_cast<int>(to_int(key, v));
  else if (key == "solver.extra_iters") cfg.extra_iters = static_cast<int>(to_int(key, v));
  else if (key == "threshold.rule") cfg.threshold_rule = parse_threshold_rule(v);
  else if (key == "threshold.sigma_source") cfg.sigma_source = parse_sigma_source(v);
  else if (key == "transform.mode") cfg.transform_mode = static_cast<int>(to_int(key, v));
  else if (key == "twostage.method") cfg.method = parse_two_stage_method(v);
  else if (key == "twostage.level") cfg.level = to_double(key, v);
  else if (key == "twostage.max_iter") cfg.bai_iters = static_cast<int>(to_int(key, v));
  else if (key == "twostage.annihilators") cfg.annihilators = parse_annihilator_source(v);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "simulation.n") cfg.sim_n = to_int(key, v);
  else if (key == "simulation.t") cfg.sim_t = to_int(key, v);
  else if (key == "simulation.reps") cfg.sim_reps = static_cast<int>(to_int(key, v));
  else if (key == "simulation.within") cfg.sim_within = to_bool(key, v);
  else if (key == "simulation.seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
  else throw InvalidInput("config: unknown key '" + key + "'");
}

/// INI-style text: `[section]` headers, `key = value` lines, `#`/`;` comments.
/// Keys are flattened to `section.key`.
inline std::vector<std::pair<std::string, std::string>> parse_ini(const std::string& text, const std::string& name) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw InvalidInput(name + " line " + std::to_string(lineno) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InvalidInput(name + " line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    out.emplace_back(section.empty() ? key : section + "." + key, value);
  }
  return out;
}

inline RunConfig load_config(const std::string& path, RunConfig cfg = {}) {
  for (const auto& [k, v] : parse_ini(read_file(path), path)) apply_setting(cfg, k, v);
  cfg.validate();
  return cfg;
}

// ---- JSON --------------------------------------------------------------------

/// Finite doubles as numbers; +-inf and NaN as strings.
inline json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double get_num(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw InvalidInput("expected a number in JSON, got " + j.dump());
}

inline json vec_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline Vector vec_from(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = get_num(a[i]);
  return v;
}

inline json mat_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j)));
    a.push_back(std::move(row));
  }
  return a;
}

inline Matrix mat_from(const json& a) {
  if (!a.is_array() || a.empty()) throw InvalidInput("expected a non-empty matrix in JSON");
  Matrix m(static_cast<Index>(a.size()), static_cast<Index>(a[0].size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != a[0].size()) throw InvalidInput("ragged matrix in JSON");
    for (std::size_t j = 0; j < a[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = get_num(a[i][j]);
  }
  return m;
}

inline json config_json(const RunConfig& c) {
  json j;
  j["penalty"] = {{"rule", penalty::to_string(c.penalty.rule)},
                  {"rho", c.penalty.rho},
                  {"h", c.penalty.h},
                  {"varphi", c.penalty.varphi},
                  {"lambda", c.penalty.lambda ? json(*c.penalty.lambda) : json(nullptr)},
                  {"phi1", c.penalty.phi1 ? json(*c.penalty.phi1) : json(nullptr)},
                  {"phi2", c.penalty.phi2 ? json(*c.penalty.phi2) : json(nullptr)}};
  j["solver"] = {{"tol", c.solver.tol},
                 {"objective_rel_tol", c.solver.objective_rel_tol},
                 {"max_iter", c.solver.max_iter},
                 {"condition_cap", c.solver.condition_cap},
                 {"sqrt_iters", c.sqrt_iters},
                 {"decompose_iters", c.decompose_iters},
                 {"first_iters", c.first_iters},
                 {"extra_iters", c.extra_iters}};
  j["threshold"] = {{"rule", to_string(c.threshold_rule)}, {"sigma_source", to_string(c.sigma_source)}};
  j["transform"] = {{"mode", c.transform_mode}};
  j["twostage"] = {{"method", to_string(c.method)},
                   {"level", c.level},
                   {"max_iter", c.bai_iters},
                   {"annihilators", to_string(c.annihilators)}};
  j["seed"] = c.seed;
  return j;
}

inline json penalty_plan_json(const penalty::PenaltyPlan& p) {
  return {{"rho", p.rho}, {"phi1", p.phi1}, {"phi2", p.phi2}, {"varphi", p.varphi},
          {"mu", p.mu},   {"psi", p.psi},   {"lambda", p.lambda}, {"h", p.h}};
}

inline json kkt_json(const KktCertificate& k) {
  return {{"z_operator_norm", num(k.z_operator_norm)},
          {"gradient_residuals", vec_json(k.gradient_residuals)},
          {"duality_gap_proxy", num(k.duality_gap_proxy)},
          {"gamma_nuclear", num(k.gamma_nuclear)},
          {"degenerate", k.degenerate}};
}

inline json fit_json(const FitResult& f) {
  const Svd s = svd(f.gamma);
  json trace = json::array();
  for (double v : f.objective_trace) trace.push_back(num(v));
  return {{"beta", vec_json(f.beta)},
          {"gamma", mat_json(f.gamma)},
          {"sigma", num(f.sigma)},
          {"lambda", num(f.lambda)},
          {"rank", s.rank()},
          {"rank_tol", num(s.rank_tol)},
          {"singular_values", vec_json(s.singular_values.head(s.rank()))},
          {"objective_trace", trace},
          {"iterations", f.iterations},
          {"converged", f.converged},
          {"degenerate", f.degenerate},
          {"gram_condition", num(f.gram_condition)},
          {"kkt", kkt_json(f.kkt)}};
}

inline FitResult fit_from_json(const json& j) {
  FitResult f;
  try {
    f.beta = vec_from(j.at("beta"));
    f.gamma = mat_from(j.at("gamma"));
    f.sigma = get_num(j.at("sigma"));
    f.lambda = get_num(j.at("lambda"));
    for (const auto& v : j.at("objective_trace")) f.objective_trace.push_back(get_num(v));
    f.iterations = j.at("iterations").get<int>();
    f.converged = j.at("converged").get<bool>();
    f.degenerate = j.value("degenerate", false);
    f.gram_condition = get_num(j.at("gram_condition"));
    const json& k = j.at("kkt");
    f.kkt.z_operator_norm = get_num(k.at("z_operator_norm"));
    f.kkt.gradient_residuals = vec_from(k.at("gradient_residuals"));
    f.kkt.duality_gap_proxy = get_num(k.at("duality_gap_proxy"));
    f.kkt.gamma_nuclear = get_num(k.at("gamma_nuclear"));
    f.kkt.degenerate = k.at("degenerate").get<bool>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed fit JSON: ") + e.what());
  }
  return f;
}

inline json threshold_json(const ThresholdedFit& t) {
  return {{"threshold", num(t.threshold)},
          {"est_rank", t.est_rank},
          {"kept_singular_values", vec_json(kept_singular_values(t))},
          {"source_singular_values", vec_json(t.source_singular_values)},
          {"gamma_t", mat_json(t.gamma_t)}};
}

inline json two_stage_json(const TwoStageFit& f) {
  json j = {{"method", to_string(f.method)},
            {"beta", vec_json(f.beta)},
            {"std_errors", vec_json(f.std_errors)},
            {"covariance", mat_json(f.covariance)},
            {"ci_level", f.ci_level},
            {"ci", mat_json(f.ci)},
            {"r_hat", f.r_hat},
            {"iterations", f.iterations},
            {"converged", f.converged}};
  if (f.method == TwoStageMethod::annihilated) {
    j["sigma_hat"] = num(f.sigma_hat);
    j["sigma_perp_hat"] = mat_json(f.sigma_perp_hat);
  } else {
    json rss = json::array();
    for (double v : f.rss_trace) rss.push_back(num(v));
    j["sigma_b"] = num(f.sigma_b);
    j["sigma_b_matrix"] = mat_json(f.sigma_b_matrix);
    j["covariance_literal_sigma_b_times_sigma_b_matrix"] = mat_json(f.literal_covariance);
    j["rss_trace"] = rss;
  }
  return j;
}

inline json decomposition_json(const RegressorDecomposition& d) {
  return {{"sigma_k_hat", num(d.sigma_k_hat)}, {"lambda_k", num(d.lambda_k)}, {"threshold", num(d.threshold)},
          {"rank_k", d.rank_k},                {"rank_raw", d.rank_raw},      {"thresholded", d.thresholded},
          {"converged", d.converged},          {"iterations", d.iterations}};
}

inline json compatibility_json(const CompatibilityBound& c) {
  return {{"a", num(c.a)},         {"b", vec_json(c.b)}, {"b_perp", vec_json(c.b_perp)},
          {"p_n", c.p_n},          {"rank", c.rank},     {"c", num(c.c)},
          {"q", num(c.q)},         {"branch", c.branch}, {"kappa_lb", num(c.kappa_lb)}};
}

inline json theta_json(const ThetaBound& t) {
  return {{"rho", num(t.rho)},
          {"rho_tilde", num(t.rho_tilde)},
          {"c", num(t.c)},
          {"d", num(t.d)},
          {"e", num(t.e)},
          {"theta_inf", num(t.theta_inf)},
          {"theta", num(t.theta)},
          {"theta_star", num(t.theta_star)},
          {"theta_sigma", num(t.theta_sigma)},
          {"rho_tilde_star", num(t.rho_tilde_star)},
          {"rho_tilde_sigma", num(t.rho_tilde_sigma)},
          {"kappa_used", num(t.kappa_used)},
          {"rank_used", t.rank_used},
          {"nuc_gamma_d", num(t.nuc_gamma_d)}};
}

inline json check_json(const InequalityCheck& c) {
  return {{"applicable", c.applicable}, {"holds", c.holds}, {"lhs", num(c.lhs)}, {"rhs", num(c.rhs)}};
}

inline json oracle_json(const OracleReport& r) {
  return {{"event_holds", r.event_holds},
          {"mxe_norm", num(r.mxe_norm)},
          {"mxe_op", num(r.mxe_op)},
          {"theta", theta_json(r.theta)},
          {"kappa_lb_c_rho", num(r.kappa_c_rho)},
          {"nuclear_error", check_json(r.nuclear_error)},
          {"sigma_error", check_json(r.sigma_error)},
          {"prediction_at_gamma_l", check_json(r.prediction_l)},
          {"prediction_at_zero", check_json(r.prediction_zero)},
          {"rank_bound", check_json(r.rank_bound)},
          {"rank_bound_outer", check_json(r.rank_bound_outer)}};
}

inline json pipeline_config_json(const PipelineConfig& p) {
  return {{"penalty_rule", penalty::to_string(p.penalty.rule)},
          {"rho", p.penalty.rho},
          {"h", p.penalty.h},
          {"threshold_rule", to_string(p.threshold.rule)},
          {"sigma_source", to_string(p.sigma_source)},
          {"transform_mode", p.transform_mode},
          {"sqrt_iters", p.sqrt_iters},
          {"decompose_iters", p.decompose_iters},
          {"first_iters", p.first_iters},
          {"extra_iters", p.extra_iters},
          {"bai_iters", p.bai_iters},
          {"tol", p.tol},
          {"level", p.level},
          {"annihilators", to_string(p.annihilators)},
          {"theory", p.theory},
          {"oracle_annihilators", p.oracle_annihilators}};
}

inline json report_json(const McReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"name", row.name}, {"mse", num(row.mse)}, {"bias", num(row.bias)}, {"std", num(row.std)}});
  json ranks = json::object();
  for (const auto& [name, m] : r.rank_frequencies) {
    json f = json::object();
    for (const auto& [k, v] : m) f[std::to_string(k)] = num(v);
    ranks[name] = f;
  }
  json cov = json::object();
  for (const auto& [k, v] : r.coverage) cov[k] = num(v);
  json j = {{"dgp", {{"n", r.dgp.n}, {"t", r.dgp.t}, {"seed", r.dgp.seed}, {"within", r.dgp.within},
                     {"replications", r.dgp.replications}}},
            {"pipeline", pipeline_config_json(r.pipeline)},
            {"replications_used", r.replications_used},
            {"failures", r.failures},
            {"failure_messages", r.failure_messages},
            {"nonconverged", r.nonconverged},
            {"lambda", num(r.lambda)},
            {"estimators", rows},
            {"rank_frequencies", ranks},
            {"coverage", cov}};
  if (r.pipeline.theory) {
    const auto& t = r.theory;
    j["theory"] = {{"evaluated", t.evaluated},
                   {"event", t.event},
                   {"theta_finite", t.theta_finite},
                   {"nuclear_checked", t.nuclear_checked},
                   {"nuclear_holds", t.nuclear_holds},
                   {"sigma_holds_on_event", t.sigma_holds_on_event},
                   {"prediction_holds", t.prediction_holds},
                   {"rank_holds", t.rank_holds},
                   {"kappa_lb_mean", num(t.kappa_lb_mean)}};
  }
  if (r.pipeline.oracle_annihilators) j["oracle_annihilator_gap_mean"] = num(r.oracle_gap_mean);
  return j;
}

inline McReport report_from_json(const json& j) {
  McReport r;
  try {
    const json& d = j.at("dgp");
    r.dgp.n = d.at("n").get<Index>();
    r.dgp.t = d.at("t").get<Index>();
    r.dgp.seed = d.at("seed").get<std::uint64_t>();
    r.dgp.within = d.at("within").get<bool>();
    r.dgp.replications = d.at("replications").get<int>();
    const json& p = j.at("pipeline");
    r.pipeline.theory = p.value("theory", false);
    r.pipeline.oracle_annihilators = p.value("oracle_annihilators", false);
    r.replications_used = j.at("replications_used").get<int>();
    r.failures = j.at("failures").get<int>();
    r.failure_messages = j.value("failure_messages", std::vector<std::string>{});
    r.nonconverged = j.value("nonconverged", 0);
    r.lambda = get_num(j.at("lambda"));
    for (const auto& row : j.at("estimators"))
      r.rows.push_back({row.at("name").get<std::string>(), get_num(row.at("mse")), get_num(row.at("bias")),
                        get_num(row.at("std"))});
    for (const auto& [name, m] : j.at("rank_frequencies").items())
      for (const auto& [k, v] : m.items()) r.rank_frequencies[name][std::stol(k)] = get_num(v);
    for (const auto& [k, v] : j.at("coverage").items()) r.coverage[k] = get_num(v);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

/// Canonical envelope: sorted keys (nlohmann's default object is ordered by
/// key), shortest round-trip decimals, version, config echo and input digest.
inline std::string canonical(const json& payload, const std::string& kind, const json& config, const std::string& input_digest) {
  json doc;
  doc["version"] = kVersion;
  doc["kind"] = kind;
  doc["config"] = config;
  doc["input_digest"] = input_digest;
  doc["result"] = payload;
  return doc.dump(2) + "\n";
}

inline void save_result(const std::string& path, const json& payload, const std::string& kind, const json& config,
                        const std::string& input_digest) {
  write_file(path, canonical(payload, kind, config, input_digest));
}

inline json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": invalid JSON (" + e.what() + ")");
  }
}

/// The `result` block of a file written by save_result.
inline json load_result(const std::string& path, const std::string& kind) {
  const json doc = load_json(path);
  if (!doc.contains("result") || doc.value("kind", std::string()) != kind)
    throw InvalidInput(path + ": expected a '" + kind + "' result file");
  return doc["result"];
}

}  // namespace ife::io
