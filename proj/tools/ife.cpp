// ife: command-line front end for the interactive fixed effects estimators.

#include "ife/ife.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ife;
using io::json;
using io::RunConfig;
namespace fs = std::filesystem;

/// Flattened `section.key` settings collected from flags; applied after the
/// config file so flags win.
struct Settings {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> flags;
  std::set<std::string> explicit_keys;

  void bind(CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [this, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  }

  RunConfig resolve() {
    RunConfig cfg;
    if (!config_path.empty())
      for (const auto& [k, v] : io::parse_ini(io::read_file(config_path), config_path)) {
        io::apply_setting(cfg, k, v);
        explicit_keys.insert(k);
      }
    for (const auto& [k, v] : flags) {
      io::apply_setting(cfg, k, v);
      explicit_keys.insert(k);
    }
    cfg.validate();
    return cfg;
  }

  bool lambda_explicit() const {
    return explicit_keys.count("penalty.rule") || explicit_keys.count("penalty.lambda");
  }
};

void add_config(CLI::App* sub, Settings& s) {
  sub->add_option("--config", s.config_path, "INI-style run configuration")->check(CLI::ExistingFile);
}

void add_penalty(CLI::App* sub, Settings& s) {
  sub->add_option_function<std::string>(
      "--lambda",
      [&s](const std::string& v) {
        char* end = nullptr;
        std::strtod(v.c_str(), &end);
        if (!v.empty() && end && *end == '\0') {
          s.flags.emplace_back("penalty.rule", "fixed");
          s.flags.emplace_back("penalty.lambda", v);
        } else {
          s.flags.emplace_back("penalty.rule", v);
        }
      },
      "penalty rule (paper-sim, assumption2) or a fixed value");
  s.bind(sub, "--rho", "penalty.rho", "rho in (0,1)");
  s.bind(sub, "--varphi", "penalty.varphi", "varphi >= 0 for the assumption2 rule");
  s.bind(sub, "--phi1", "penalty.phi1", "phi1 for the assumption2 rule");
  s.bind(sub, "--phi2", "penalty.phi2", "phi2 for the assumption2 rule");
}

void add_solver(CLI::App* sub, Settings& s) {
  s.bind(sub, "--tol", "solver.tol", "convergence tolerance");
  s.bind(sub, "--max-iter", "solver.max_iter", "iteration cap");
  s.bind(sub, "--condition-cap", "solver.condition_cap", "largest accepted condition number of X'X");
}

void add_iters(CLI::App* sub, Settings& s) {
  sub->add_option_function<std::vector<std::string>>(
      "--iters",
      [&s](const std::vector<std::string>& items) {
        for (const auto& it : items) {
          const auto eq = it.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--iters", "expected name=count, got '" + it + "'");
          const std::string name = it.substr(0, eq);
          static const std::map<std::string, std::string> keys = {{"sqrt", "solver.sqrt_iters"},
                                                                  {"decompose", "solver.decompose_iters"},
                                                                  {"first", "solver.first_iters"},
                                                                  {"extra", "solver.extra_iters"},
                                                                  {"bai", "twostage.max_iter"}};
          const auto k = keys.find(name);
          if (k == keys.end()) throw CLI::ValidationError("--iters", "unknown stage '" + name + "'");
          s.flags.emplace_back(k->second, it.substr(eq + 1));
        }
      },
      "iteration presets, e.g. first=100 extra=100");
}

void add_pipeline_opts(CLI::App* sub, Settings& s) {
  add_penalty(sub, s);
  s.bind(sub, "--tol", "solver.tol", "convergence tolerance");
  add_iters(sub, s);
  s.bind(sub, "--h", "penalty.h", "threshold constant h > 1");
  s.bind(sub, "--threshold-rule", "threshold.rule", "paper-sim or prop7");
  s.bind(sub, "--sigma-source", "threshold.sigma_source", "fit, bar or tilde");
  s.bind(sub, "--mode", "transform.mode", "regressor transform 1..5");
  s.bind(sub, "--level", "twostage.level", "confidence level");
  s.bind(sub, "--annihilators", "twostage.annihilators", "stacked or gamma");
}

void write_or_print(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") std::cout << text;
  else io::write_file(out, text);
}

SolverOptions solver_options(const RunConfig& cfg) { return cfg.solver; }

std::vector<RegressorDecomposition> decompositions_from(const io::Manifest& m) {
  std::vector<RegressorDecomposition> decs;
  if (m.pis.empty()) return decs;
  const json meta = m.doc.value("decomposition", json::array());
  require(meta.size() == m.pis.size(), m.path + ": \"decomposition\" must describe every pi matrix");
  for (std::size_t k = 0; k < m.pis.size(); ++k) {
    RegressorDecomposition d;
    d.pi_hat = m.pis[k];
    d.sigma_k_hat = io::get_num(meta[k].at("sigma_k_hat"));
    d.lambda_k = io::get_num(meta[k].at("lambda_k"));
    d.threshold = io::get_num(meta[k].at("threshold"));
    d.rank_k = meta[k].at("rank_k").get<Index>();
    d.rank_raw = meta[k].at("rank_raw").get<Index>();
    d.thresholded = meta[k].at("thresholded").get<bool>();
    d.converged = meta[k].at("converged").get<bool>();
    d.iterations = meta[k].at("iterations").get<int>();
    decs.push_back(std::move(d));
  }
  return decs;
}

// ---- stage implementations shared by the stage commands and `pipeline` ----

struct TransformOutput {
  double lambda = 0.0;
  std::vector<RegressorDecomposition> decs;
  PanelData panel;
};

TransformOutput run_transform(const PanelData& panel, const RunConfig& cfg, Index mode_l) {
  TransformOutput out;
  out.lambda = penalty::make_plan(cfg.penalty, panel.n(), panel.t(), panel.x).lambda;
  DecomposeOptions dopt;
  dopt.threshold = cfg.threshold_spec();
  dopt.solver = solver_options(cfg);
  dopt.solver.max_iter = cfg.decompose_iters;
  out.panel.y = panel.y;
  out.panel.transform_log = panel.transform_log;
  for (const auto& xk : panel.x) {
    out.decs.push_back(decompose_regressor(xk, out.lambda, dopt));
    out.panel.x.push_back(transform_regressor(xk, out.decs.back(), cfg.transform_mode, mode_l));
  }
  out.panel.transform_log.push_back("mode" + std::to_string(cfg.transform_mode));
  return out;
}

void save_transform(const std::string& path, const TransformOutput& t, const RunConfig& cfg,
                    const std::string& source_digest) {
  json extra;
  extra["lambda"] = t.lambda;
  extra["mode"] = cfg.transform_mode;
  extra["source_digest"] = source_digest;
  extra["decomposition"] = json::array();
  std::vector<Matrix> pis;
  for (const auto& d : t.decs) {
    extra["decomposition"].push_back(io::decomposition_json(d));
    pis.push_back(d.pi_hat);
  }
  io::write_manifest(path, t.panel, pis, extra);
}

struct ThresholdOutput {
  ThresholdedFit thr;
  double sigma_used = 0.0;
  std::vector<Matrix> pis;
};

ThresholdOutput run_threshold(const FitResult& fit, const std::vector<RegressorDecomposition>& decs,
                              const RunConfig& cfg) {
  ThresholdOutput out;
  Matrix gamma = fit.gamma;
  out.sigma_used = fit.sigma;
  if (!decs.empty()) {
    gamma = reconstruct_gamma(fit, decs);
    out.sigma_used = reconstruction_sigma(cfg.sigma_source, fit.sigma, decs, cfg.penalty.h);
    for (const auto& d : decs) out.pis.push_back(d.pi_hat);
  }
  out.thr = threshold_matrix(gamma, threshold_level(cfg.threshold_spec(), fit.lambda, out.sigma_used));
  return out;
}

json threshold_payload(const ThresholdOutput& t, const RunConfig& cfg) {
  json j = io::threshold_json(t.thr);
  j["rule"] = to_string(cfg.threshold_rule);
  j["sigma_source"] = to_string(cfg.sigma_source);
  j["sigma_used"] = io::num(t.sigma_used);
  j["reconstructed"] = !t.pis.empty();
  j["pis"] = json::array();
  for (const auto& p : t.pis) j["pis"].push_back(io::mat_json(p));
  return j;
}

TwoStageFit run_twostage(const PanelData& panel, const FitResult& fit, const Matrix& gamma_t, Index est_rank,
                         const std::vector<Matrix>& pis, const RunConfig& cfg) {
  if (cfg.method == TwoStageMethod::annihilated) {
    const ProjectorPair proj = cfg.annihilators == AnnihilatorSource::stacked ? stacked_projectors(gamma_t, pis)
                                                                              : projectors_of(gamma_t);
    return annihilated_ls(panel, proj, fit.sigma, cfg.level);
  }
  BaiOptions bo;
  bo.max_iter = cfg.bai_iters;
  bo.level = cfg.level;
  return bai_iterate(panel, est_rank, fit.beta, bo);
}

json fit_payload(const FitResult& fit, const std::string& manifest) {
  json j = io::fit_json(fit);
  j["data"] = manifest;
  return j;
}

// ---- subcommands ----

int cmd_estimate(Settings& s, const std::string& data, const std::string& warm, const std::string& out) {
  RunConfig cfg = s.resolve();
  const io::Manifest m = io::load_manifest(data);
  double lambda = 0.0;
  if (m.doc.contains("lambda") && !s.lambda_explicit()) lambda = io::get_num(m.doc["lambda"]);
  else lambda = penalty::make_plan(cfg.penalty, m.panel.n(), m.panel.t(), m.panel.x).lambda;
  FitResult fit;
  if (!warm.empty()) {
    const FitResult prev = io::fit_from_json(io::load_result(warm, "fit"));
    require(prev.beta.size() == m.panel.k(), "--warm: fit has a different number of regressors");
    require_same_shape(m.panel.y, prev.gamma, "--warm");
    fit = resume(m.panel, prev, cfg.solver.max_iter, solver_options(cfg));
  } else {
    fit = solve(m.panel, lambda, solver_options(cfg));
  }
  io::save_result(out, fit_payload(fit, data), "fit", io::config_json(cfg), io::panel_digest(m.panel));
  if (!fit.converged) {
    std::cerr << "ife estimate: not converged after " << fit.iterations << " iterations\n";
    return 4;
  }
  return 0;
}

int cmd_threshold(Settings& s, const std::string& fit_path, const std::string& data, const std::string& out) {
  RunConfig cfg = s.resolve();
  const FitResult fit = io::fit_from_json(io::load_result(fit_path, "fit"));
  std::vector<RegressorDecomposition> decs;
  std::string digest = "none";
  if (!data.empty()) {
    const io::Manifest m = io::load_manifest(data);
    decs = decompositions_from(m);
    require(decs.empty() || static_cast<Index>(decs.size()) == fit.beta.size(),
            "threshold: manifest and fit disagree on K");
    digest = io::panel_digest(m.panel);
  }
  const ThresholdOutput t = run_threshold(fit, decs, cfg);
  io::save_result(out, threshold_payload(t, cfg), "threshold", io::config_json(cfg), digest);
  return 0;
}

int cmd_transform(Settings& s, const std::string& data, Index mode_l, const std::string& out) {
  RunConfig cfg = s.resolve();
  const io::Manifest m = io::load_manifest(data);
  require(m.panel.k() >= 1, "transform: the panel has no regressors");
  const TransformOutput t = run_transform(m.panel, cfg, mode_l);
  save_transform(out, t, cfg, io::panel_digest(m.panel));
  for (const auto& d : t.decs)
    if (!d.converged) return 4;
  return 0;
}

int cmd_twostage(Settings& s, const std::string& fit_path, const std::string& thr_path, const std::string& data,
                 const std::string& out) {
  RunConfig cfg = s.resolve();
  const FitResult fit = io::fit_from_json(io::load_result(fit_path, "fit"));
  const json thr = io::load_result(thr_path, "threshold");
  const io::Manifest m = io::load_manifest(data);
  require(fit.beta.size() == m.panel.k(), "twostage: fit and data disagree on K");
  const Matrix gamma_t = io::mat_from(thr.at("gamma_t"));
  require_same_shape(m.panel.y, gamma_t, "twostage: thresholded Gamma");
  std::vector<Matrix> pis;
  for (const auto& p : thr.value("pis", json::array())) pis.push_back(io::mat_from(p));
  const TwoStageFit ts = run_twostage(m.panel, fit, gamma_t, thr.at("est_rank").get<Index>(), pis, cfg);
  io::save_result(out, io::two_stage_json(ts), "twostage", io::config_json(cfg), io::panel_digest(m.panel));
  return ts.converged ? 0 : 4;
}

Truth load_truth(const std::string& path, const PanelData& panel) {
  const json doc = io::load_json(path);
  auto mat = [&](const char* key, bool required) -> Matrix {
    if (!doc.contains(key)) {
      require(!required, path + ": missing \"" + std::string(key) + "\"");
      return Matrix::Zero(panel.n(), panel.t());
    }
    return io::load_matrix_csv(io::resolve(path, doc[key].get<std::string>()));
  };
  Truth t;
  t.gamma_l = mat("gamma_l", true);
  t.gamma_d = mat("gamma_d", false);
  t.e = mat("e", true);
  t.gamma = doc.contains("gamma") ? mat("gamma", true) : Matrix(t.gamma_l + t.gamma_d);
  return t;
}

int cmd_diagnose(Settings& s, const std::string& fit_path, const std::string& data, const std::string& truth_path,
                 const std::string& thr_path, double rho_tilde, int probes, const std::string& out) {
  RunConfig cfg = s.resolve();
  const FitResult fit = io::fit_from_json(io::load_result(fit_path, "fit"));
  const io::Manifest m = io::load_manifest(data);
  require(fit.beta.size() == m.panel.k(), "diagnose: fit and data disagree on K");
  require_same_shape(m.panel.y, fit.gamma, "diagnose: fit Gamma");
  require(rho_tilde > 0.0, "diagnose: --rho-tilde must be > 0");
  const double rho = cfg.penalty.rho;
  json j;
  j["kkt"] = io::kkt_json(kkt_certificate(m.panel, fit));

  // Feasible mode: the thresholded fit stands in for the low-rank part and
  // sqrt(NT) sigma-hat for |M_X E|_2.
  Matrix gamma_l;
  if (!thr_path.empty()) gamma_l = io::mat_from(io::load_result(thr_path, "threshold").at("gamma_t"));
  else gamma_l = threshold_fit(fit, threshold_level(cfg.threshold_spec(), fit.lambda, fit.sigma)).gamma_t;
  require_same_shape(m.panel.y, gamma_l, "diagnose: thresholded Gamma");
  const Matrix gamma_d = fit.gamma - gamma_l;
  const double mxe = std::sqrt(m.panel.nt()) * fit.sigma;
  const ThetaBound th = theta_bounds(rho, rho_tilde, gamma_l, gamma_d, m.panel.x, fit.lambda, mxe);
  const double c_rho = (1.0 + rho) / (1.0 - rho);
  json feasible;
  feasible["theta"] = io::theta_json(th);
  feasible["rank_gamma_l"] = th.rank_used;
  if (th.rank_used > 0) {
    const CompatibilityBound cb = compatibility_lower_bound(m.panel.x, gamma_l, c_rho);
    feasible["compatibility"] = io::compatibility_json(cb);
    feasible["rank_bound"] = io::num(rank_bound_from_kappa(rho, cb.kappa_lb, th.rank_used));
    if (probes > 0) feasible["sampled_cone_minimum"] = io::num(sampled_cone_minimum(m.panel.x, gamma_l, c_rho, probes, cfg.seed));
  }
  if (!m.pis.empty()) {
    std::vector<Index> ranks;
    for (const auto& p : m.pis) ranks.push_back(numerical_rank(p));
    const RankInflation ri = rank_inflation_bounds(th.rank_used, ranks, rho);
    feasible["rank_inflation"] = {{"inflation_18", ri.inflation_18},
                                  {"r_tilde_raw", ri.r_tilde_raw},
                                  {"r_tilde_thresholded", ri.r_tilde_thresholded}};
  }
  j["feasible"] = feasible;
  if (!truth_path.empty()) j["oracle"] = io::oracle_json(check_oracle_inequalities(m.panel, fit, load_truth(truth_path, m.panel), rho, rho_tilde));
  io::save_result(out, j, "diagnose", io::config_json(cfg), io::panel_digest(m.panel));
  return 0;
}

struct SimulateArgs {
  std::string pipeline = "paper";
  bool theory = false;
  bool oracle_annihilators = false;
  int dump_rep = -1;
  std::string dump_dir;
  std::string out;
};

int cmd_simulate(Settings& s, const SimulateArgs& a) {
  RunConfig cfg = s.resolve();
  require(a.pipeline == "paper", "simulate: unknown pipeline '" + a.pipeline + "' (expected paper)");
  DgpConfig dgp;
  dgp.n = cfg.sim_n;
  dgp.t = cfg.sim_t;
  dgp.seed = cfg.seed;
  dgp.within = cfg.sim_within;
  dgp.replications = cfg.sim_reps;
  dgp.validate();
  if (a.dump_rep >= 0) {
    require(!a.dump_dir.empty(), "simulate: --dump-rep needs --dump-dir");
    const SimDraw d = simulate_dgp(dgp, a.dump_rep);
    const fs::path dir(a.dump_dir);
    io::write_manifest((dir / "data.json").string(), d.panel, {}, {{"beta", d.truth.beta}});
    io::save_matrix_csv((dir / "gamma_l.csv").string(), d.truth.gamma_l);
    io::save_matrix_csv((dir / "e.csv").string(), d.truth.e);
    io::save_matrix_csv((dir / "pi_l.csv").string(), d.truth.pi_l);
    io::write_file((dir / "truth.json").string(),
                   json({{"gamma_l", "gamma_l.csv"}, {"e", "e.csv"}, {"pi_l", "pi_l.csv"}}).dump(2) + "\n");
    if (a.out.empty()) return 0;
  }
  PipelineConfig pc = cfg.pipeline();
  pc.theory = a.theory;
  pc.oracle_annihilators = a.oracle_annihilators;
  const McReport rep = run_monte_carlo(dgp, pc, thread_budget());
  json cfgj = io::config_json(cfg);
  cfgj["simulation"] = {{"n", dgp.n}, {"t", dgp.t}, {"reps", dgp.replications}, {"within", dgp.within}};
  io::save_result(a.out, io::report_json(rep), "report", cfgj, "simulated");
  return rep.failures > 0 ? 3 : 0;
}

std::string fixed(double v, int prec = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << v;
  return ss.str();
}

std::string report_table(const McReport& r) {
  std::ostringstream o;
  o << "N=" << r.dgp.n << " T=" << r.dgp.t << (r.dgp.within ? " within" : "") << " reps=" << r.replications_used
    << " failures=" << r.failures << " lambda=" << fixed(r.lambda) << "\n";
  o << std::left << std::setw(12) << "estimator" << std::right << std::setw(12) << "MSE" << std::setw(12) << "bias"
    << std::setw(12) << "std" << "\n";
  for (const auto& row : r.rows)
    o << std::left << std::setw(12) << row.name << std::right << std::setw(12) << fixed(row.mse, 6) << std::setw(12)
      << fixed(row.bias, 6) << std::setw(12) << fixed(row.std, 6) << "\n";
  for (const auto& [name, freq] : r.rank_frequencies) {
    o << "rank " << name << ":";
    for (const auto& [k, f] : freq) o << " " << k << "=" << fixed(f, 3);
    o << "\n";
  }
  for (const auto& [name, c] : r.coverage) o << "coverage " << name << ": " << fixed(c, 3) << "\n";
  return o.str();
}

std::string report_csv(const McReport& r) {
  std::ostringstream o;
  o << "n,t,within,estimator,mse,bias,std,coverage\n";
  for (const auto& row : r.rows) {
    const auto c = r.coverage.find(row.name);
    o << r.dgp.n << ',' << r.dgp.t << ',' << (r.dgp.within ? 1 : 0) << ',' << row.name << ',' << io::fmt17(row.mse)
      << ',' << io::fmt17(row.bias) << ',' << io::fmt17(row.std) << ','
      << (c == r.coverage.end() ? std::string() : io::fmt17(c->second)) << "\n";
  }
  return o.str();
}

int cmd_report(const std::vector<std::string>& ins, const std::string& format, const std::string& out) {
  require(format == "table" || format == "csv" || format == "json", "report: --format must be table, csv or json");
  std::vector<McReport> reports;
  std::vector<json> raw;
  for (const auto& in : ins) {
    raw.push_back(io::load_result(in, "report"));
    reports.push_back(io::report_from_json(raw.back()));
  }
  std::string text;
  if (format == "json") {
    text = (raw.size() == 1 ? raw.front() : json(raw)).dump(2) + "\n";
  } else if (format == "csv") {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::string part = report_csv(reports[i]);
      if (i > 0) part = part.substr(part.find('\n') + 1);
      text += part;
    }
  } else {
    for (const auto& r : reports) text += report_table(r) + "\n";
    if (reports.size() > 1) {
      std::ostringstream o;
      o << "coverage by design\n" << std::left << std::setw(8) << "within" << std::right << std::setw(6) << "N"
        << std::setw(6) << "T" << std::setw(12) << "twostage1" << std::setw(12) << "twostage2" << "\n";
      for (const auto& row : coverage_table(reports))
        o << std::left << std::setw(8) << (row.within ? "yes" : "no") << std::right << std::setw(6) << row.n
          << std::setw(6) << row.t << std::setw(12) << fixed(row.twostage1, 3) << std::setw(12)
          << fixed(row.twostage2, 3) << "\n";
      text += o.str();
    }
  }
  write_or_print(out, text);
  return 0;
}

int cmd_pipeline(Settings& s, const std::string& data, const std::string& out_dir) {
  RunConfig cfg = s.resolve();
  const io::Manifest m = io::load_manifest(data);
  const PipelineStages st = run_pipeline(m.panel, cfg.pipeline());
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const json cj = io::config_json(cfg);
  const std::string digest = io::panel_digest(m.panel);
  const std::string tman = (dir / "transformed.json").string();

  io::save_result((dir / "fit.json").string(), fit_payload(st.first, data), "fit", cj, digest);
  TransformOutput t{st.lambda, st.decs, st.transformed};
  save_transform(tman, t, cfg, digest);
  const std::string tdigest = io::panel_digest(st.transformed);
  io::save_result((dir / "fit_transformed.json").string(), fit_payload(st.transformed_fit, tman), "fit", cj, tdigest);
  io::save_result((dir / "fit_pt.json").string(), fit_payload(st.pt_fit, tman), "fit", cj, tdigest);
  ThresholdOutput th{st.thr, st.recon_sigma, {}};
  for (const auto& d : st.decs) th.pis.push_back(d.pi_hat);
  io::save_result((dir / "thr.json").string(), threshold_payload(th, cfg), "threshold", cj, tdigest);
  io::save_result((dir / "ts_annihilated.json").string(), io::two_stage_json(st.ts1), "twostage", cj, digest);
  io::save_result((dir / "ts_bai.json").string(), io::two_stage_json(st.ts2), "twostage", cj, digest);

  json summary = {{"lambda", st.lambda},
                  {"beta_ls", io::vec_json(st.beta_ls)},
                  {"beta_sqrt", io::vec_json(st.first.beta)},
                  {"beta_pt", io::vec_json(st.pt_fit.beta)},
                  {"beta_twostage_annihilated", io::vec_json(st.ts1.beta)},
                  {"beta_twostage_bai", io::vec_json(st.ts2.beta)},
                  {"est_rank", st.thr.est_rank}};
  io::save_result((dir / "summary.json").string(), summary, "pipeline", cj, digest);

  bool converged = st.first.converged && st.pt_fit.converged && st.ts2.converged;
  for (const auto& d : st.decs) converged = converged && d.converged;
  return converged ? 0 : 4;
}

// `--h` is the threshold constant, so subcommands only take the long help flag.
CLI::App* subcommand(CLI::App& app, const std::string& name, const std::string& desc) {
  CLI::App* sub = app.add_subcommand(name, desc);
  sub->set_help_flag("--help", "print this help message and exit");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Square-root nuclear-norm estimation of panels with interactive fixed effects"};
  app.require_subcommand(1);
  Settings s;
  std::string data, out, fit, thr, warm, truth;
  Index mode_l = -1;
  double rho_tilde = 1.0;
  int probes = 0;
  std::vector<std::string> ins;
  std::string format = "table";
  SimulateArgs sim;

  auto* est = subcommand(app, "estimate", "first-stage square-root fit");
  add_config(est, s);
  est->add_option("--data", data, "data manifest (JSON)")->required();
  add_penalty(est, s);
  add_solver(est, s);
  est->add_option("--warm", warm, "continue from a previous fit");
  est->add_option("--out", out, "output fit JSON")->required();

  auto* thc = subcommand(app, "threshold", "hard-threshold a fitted Gamma");
  add_config(thc, s);
  thc->add_option("--fit", fit, "fit JSON")->required();
  thc->add_option("--data", data, "transformed manifest; enables reconstruction of Gamma");
  s.bind(thc, "--rule", "threshold.rule", "paper-sim or prop7");
  s.bind(thc, "--h", "penalty.h", "h > 1");
  s.bind(thc, "--rho", "penalty.rho", "rho in (0,1)");
  s.bind(thc, "--sigma-source", "threshold.sigma_source", "fit, bar or tilde");
  thc->add_option("--out", out, "output JSON")->required();

  auto* tr = subcommand(app, "transform", "decompose and transform the regressors");
  add_config(tr, s);
  tr->add_option("--data", data, "data manifest")->required();
  s.bind(tr, "--mode", "transform.mode", "1..5");
  tr->add_option("--l", mode_l, "rank removed in mode 5 (default rank of Pi)");
  add_penalty(tr, s);
  s.bind(tr, "--h", "penalty.h", "h > 1");
  s.bind(tr, "--threshold-rule", "threshold.rule", "paper-sim or prop7");
  s.bind(tr, "--tol", "solver.tol", "convergence tolerance");
  add_iters(tr, s);
  tr->add_option("--out", out, "output manifest path")->required();

  auto* ts = subcommand(app, "twostage", "second-stage estimation and inference");
  add_config(ts, s);
  ts->add_option("--fit", fit, "fit JSON")->required();
  ts->add_option("--thr", thr, "threshold JSON")->required();
  ts->add_option("--data", data, "original data manifest")->required();
  s.bind(ts, "--method", "twostage.method", "annihilated or bai");
  s.bind(ts, "--level", "twostage.level", "confidence level");
  s.bind(ts, "--max-iter", "twostage.max_iter", "iteration cap for bai");
  s.bind(ts, "--annihilators", "twostage.annihilators", "stacked or gamma");
  ts->add_option("--out", out, "output JSON")->required();

  auto* dg = subcommand(app, "diagnose", "certificates, compatibility and error bounds");
  add_config(dg, s);
  dg->add_option("--fit", fit, "fit JSON")->required();
  dg->add_option("--data", data, "data manifest the fit was computed on")->required();
  dg->add_option("--truth", truth, "truth JSON (gamma_l, e, optional gamma_d)");
  dg->add_option("--thr", thr, "threshold JSON used as the low-rank part");
  s.bind(dg, "--rho", "penalty.rho", "rho in (0,1)");
  s.bind(dg, "--h", "penalty.h", "h > 1");
  s.bind(dg, "--seed", "seed", "seed of the sampled cone probes");
  dg->add_option("--rho-tilde", rho_tilde, "rho-tilde > 0");
  dg->add_option("--probes", probes, "sampled cone probes (0 skips)");
  dg->add_option("--out", out, "output JSON")->required();

  auto* sm = subcommand(app, "simulate", "Monte Carlo on the simulation design");
  add_config(sm, s);
  s.bind(sm, "--n", "simulation.n", "units");
  s.bind(sm, "--t", "simulation.t", "periods");
  s.bind(sm, "--reps", "simulation.reps", "replications");
  sm->add_flag_function("--within", [&s](std::int64_t) { s.flags.emplace_back("simulation.within", "true"); },
                        "apply the within transform");
  s.bind(sm, "--seed", "seed", "master seed");
  sm->add_option("--pipeline", sim.pipeline, "pipeline preset (paper)");
  add_pipeline_opts(sm, s);
  sm->add_flag("--theory", sim.theory, "evaluate the oracle inequalities per replication");
  sm->add_flag("--oracle-annihilators", sim.oracle_annihilators, "also run annihilated LS with true projectors");
  sm->add_option("--dump-rep", sim.dump_rep, "write replication R's data and truth");
  sm->add_option("--dump-dir", sim.dump_dir, "directory for --dump-rep");
  sm->add_option("--out", sim.out, "output report JSON");

  auto* rp = subcommand(app, "report", "tabulate Monte Carlo reports");
  rp->add_option("--in", ins, "report JSON (repeatable)")->required();
  rp->add_option("--format", format, "table, csv or json");
  rp->add_option("--out", out, "output file (default stdout)");

  auto* pl = subcommand(app, "pipeline", "estimate, threshold, transform, estimate, twostage");
  add_config(pl, s);
  pl->add_option("--data", data, "data manifest")->required();
  add_pipeline_opts(pl, s);
  s.bind(pl, "--condition-cap", "solver.condition_cap", "largest accepted condition number of X'X");
  s.bind(pl, "--max-iter-bai", "twostage.max_iter", "iteration cap for bai");
  pl->add_option("--out-dir", out, "directory for all stage outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*est) return cmd_estimate(s, data, warm, out);
    if (*thc) return cmd_threshold(s, fit, data, out);
    if (*tr) return cmd_transform(s, data, mode_l, out);
    if (*ts) return cmd_twostage(s, fit, thr, data, out);
    if (*dg) return cmd_diagnose(s, fit, data, truth, thr, rho_tilde, probes, out);
    if (*sm) {
      if (sim.out.empty() && sim.dump_rep < 0) throw InvalidInput("simulate: --out is required");
      return cmd_simulate(s, sim);
    }
    if (*rp) return cmd_report(ins, format, out);
    if (*pl) return cmd_pipeline(s, data, out);
  } catch (const ife::Error& e) {
    std::cerr << "ife: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "ife: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "ife: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ife: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
