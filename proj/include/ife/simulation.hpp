#pragma once

// Two-factor panel DGP with a factor-driven regressor, the full estimation
// pipeline per replication, and the Monte Carlo driver.

#include "ife/diagnostics.hpp"
#include "ife/matrix_core.hpp"
#include "ife/panel.hpp"
#include "ife/penalty.hpp"
#include "ife/rank_tools.hpp"
#include "ife/sqrt_estimator.hpp"
#include "ife/two_stage.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace ife {

struct DgpConfig {
  Index n = 50;
  Index t = 50;
  std::uint64_t seed = 20240101;
  bool within = false;
  int replications = 100;

  void validate() const {
    require(n >= 2 && t >= 2, "dgp: N and T must be >= 2");
    require(replications >= 1, "dgp: replications must be >= 1");
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of replication `rep`: splitmix64(splitmix64(seed) ^ rep).
inline std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep) {
  return splitmix64(splitmix64(seed) ^ rep);
}

struct SimTruth {
  double beta = 1.0;
  Matrix gamma_l;
  Matrix e;
  Matrix u;
  Matrix pi_l;  // low-rank part of X_1
};

struct SimDraw {
  PanelData panel;
  SimTruth truth;
};

/// Y = X_1 + sum_l (1 + l0_il) f_tl + E,
/// X_1 = 1 + sum_l (2 + l0_il + l1_il)(f_tl + f_{t-1,l}) + U, two factors,
/// all primitives iid N(0,1); f_{0,l} is drawn like the others.
inline SimDraw simulate_dgp(const DgpConfig& cfg, int rep) {
  cfg.validate();
  std::mt19937_64 rng(replication_seed(cfg.seed, static_cast<std::uint64_t>(rep)));
  std::normal_distribution<double> normal;
  auto draw = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
  };
  const Index n = cfg.n;
  const Index t = cfg.t;
  const Matrix f = draw(t + 1, 2);  // row 0 is the initial lag
  const Matrix l0 = draw(n, 2);
  const Matrix l1 = draw(n, 2);
  const Matrix u = draw(n, t);
  const Matrix e = draw(n, t);
  const Matrix fc = f.bottomRows(t);
  const Matrix flag = f.topRows(t);

  SimDraw out;
  out.truth.gamma_l = (l0.array() + 1.0).matrix() * fc.transpose();
  out.truth.pi_l = ((l0 + l1).array() + 2.0).matrix() * (fc + flag).transpose();
  out.truth.pi_l.array() += 1.0;
  out.truth.u = u;
  out.truth.e = e;
  Matrix x1 = out.truth.pi_l + u;
  Matrix y = x1 + out.truth.gamma_l + e;
  if (cfg.within) {
    x1 = within_transform(x1);
    y = within_transform(y);
    out.truth.gamma_l = within_transform(out.truth.gamma_l);
    out.truth.pi_l = within_transform(out.truth.pi_l);
    out.truth.u = within_transform(out.truth.u);
    out.truth.e = within_transform(out.truth.e);
  }
  out.panel.y = std::move(y);
  out.panel.x = {std::move(x1)};
  if (cfg.within) out.panel.transform_log.push_back("within");
  return out;
}

enum class AnnihilatorSource { stacked, gamma_only };

inline AnnihilatorSource parse_annihilator_source(const std::string& s) {
  if (s == "stacked") return AnnihilatorSource::stacked;
  if (s == "gamma") return AnnihilatorSource::gamma_only;
  throw InvalidInput("unknown annihilator source '" + s + "' (expected stacked or gamma)");
}

inline std::string to_string(AnnihilatorSource a) { return a == AnnihilatorSource::stacked ? "stacked" : "gamma"; }

struct PipelineConfig {
  penalty::PenaltyConfig penalty;
  ThresholdSpec threshold;
  SigmaSource sigma_source = SigmaSource::fit;
  int transform_mode = 2;
  int sqrt_iters = 200;       // first-stage fit on the raw regressors
  int decompose_iters = 200;  // K=0 fits of the regressors
  int first_iters = 100;      // fit on transformed regressors
  int extra_iters = 100;      // further sweeps giving beta-hat_pt
  int bai_iters = 100;
  double tol = 1e-8;
  double objective_rel_tol = 1e-10;
  double condition_cap = 1e12;
  double level = 0.95;
  AnnihilatorSource annihilators = AnnihilatorSource::stacked;
  bool theory = false;             // evaluate the oracle inequalities per replication
  bool oracle_annihilators = false;  // also run annihilated LS with the true projectors
};

/// Outcome of one replication of the pipeline.
struct RepResult {
  bool ok = false;
  std::string error;
  double beta_ls = 0.0;
  double beta_sqrt = 0.0;
  double beta_pt = 0.0;
  double beta_ts1 = 0.0;
  double beta_ts2 = 0.0;
  double ci1_low = 0.0, ci1_high = 0.0;
  double ci2_low = 0.0, ci2_high = 0.0;
  Index rank_pi = 0;
  Index rank_pi_t = 0;
  Index rank_gamma_t = 0;
  double sigma_hat = 0.0;
  double lambda = 0.0;
  bool converged = true;
  // theory
  bool event = false;
  bool theta_finite = false;
  bool nuclear_holds = false;
  bool sigma_holds = false;
  bool prediction_holds = false;
  bool rank_holds = false;
  double kappa_lb = 0.0;
  // oracle annihilators
  double beta_ts1_oracle = 0.0;
};

/// Pieces of the pipeline that the CLI also exposes stage by stage.
struct PipelineStages {
  double lambda = 0.0;
  Vector beta_ls;
  FitResult first;                       // raw-regressor fit
  std::vector<RegressorDecomposition> decs;
  PanelData transformed;
  FitResult transformed_fit;             // after first_iters
  FitResult pt_fit;                      // after extra_iters more
  Matrix gamma_hat;                      // reconstructed
  double recon_sigma = 0.0;
  ThresholdedFit thr;
  ProjectorPair annihilators;
  TwoStageFit ts1;
  TwoStageFit ts2;
};

inline PipelineStages run_pipeline(const PanelData& panel, const PipelineConfig& pc) {
  panel.validate();
  require(panel.k() >= 1, "pipeline: need at least one regressor");
  PipelineStages st;
  st.lambda = penalty::make_plan(pc.penalty, panel.n(), panel.t(), panel.x).lambda;
  st.beta_ls = least_squares(panel);

  SolverOptions so;
  so.tol = pc.tol;
  so.objective_rel_tol = pc.objective_rel_tol;
  so.condition_cap = pc.condition_cap;
  so.max_iter = pc.sqrt_iters;
  st.first = solve(panel, st.lambda, so);

  DecomposeOptions dopt;
  dopt.threshold = pc.threshold;
  dopt.solver = so;
  dopt.solver.max_iter = pc.decompose_iters;
  st.transformed.y = panel.y;
  st.transformed.transform_log = panel.transform_log;
  for (const auto& xk : panel.x) {
    st.decs.push_back(decompose_regressor(xk, st.lambda, dopt));
    st.transformed.x.push_back(transform_regressor(xk, st.decs.back(), pc.transform_mode));
  }
  st.transformed.transform_log.push_back("mode" + std::to_string(pc.transform_mode));

  so.max_iter = pc.first_iters;
  st.transformed_fit = solve(st.transformed, st.lambda, so);
  st.gamma_hat = reconstruct_gamma(st.transformed_fit, st.decs);
  st.recon_sigma = reconstruction_sigma(pc.sigma_source, st.transformed_fit.sigma, st.decs, pc.threshold.h);
  st.thr = threshold_matrix(st.gamma_hat, threshold_level(pc.threshold, st.lambda, st.recon_sigma));
  st.pt_fit = pc.extra_iters > 0 ? resume(st.transformed, st.transformed_fit, pc.extra_iters, so) : st.transformed_fit;

  if (pc.annihilators == AnnihilatorSource::stacked) {
    std::vector<Matrix> pis;
    for (const auto& d : st.decs) pis.push_back(d.pi_hat);
    st.annihilators = stacked_projectors(st.thr.gamma_t, pis);
  } else {
    st.annihilators = st.thr.projectors;
  }
  st.ts1 = annihilated_ls(panel, st.annihilators, st.pt_fit.sigma, pc.level);
  BaiOptions bo;
  bo.max_iter = pc.bai_iters;
  bo.level = pc.level;
  st.ts2 = bai_iterate(panel, st.thr.est_rank, st.pt_fit.beta, bo);
  return st;
}

inline RepResult run_replication(const DgpConfig& cfg, const PipelineConfig& pc, int rep) {
  RepResult r;
  try {
    const SimDraw d = simulate_dgp(cfg, rep);
    const PipelineStages st = run_pipeline(d.panel, pc);
    r.lambda = st.lambda;
    r.beta_ls = st.beta_ls(0);
    r.beta_sqrt = st.first.beta(0);
    r.beta_pt = st.pt_fit.beta(0);
    r.beta_ts1 = st.ts1.beta(0);
    r.beta_ts2 = st.ts2.beta(0);
    r.ci1_low = st.ts1.ci(0, 0);
    r.ci1_high = st.ts1.ci(0, 1);
    r.ci2_low = st.ts2.ci(0, 0);
    r.ci2_high = st.ts2.ci(0, 1);
    r.rank_pi = st.decs[0].rank_raw;
    r.rank_pi_t = st.decs[0].rank_k;
    r.rank_gamma_t = st.thr.est_rank;
    r.sigma_hat = st.first.sigma;
    r.converged = st.first.converged && st.decs[0].converged;
    if (pc.theory) {
      Truth tr{d.truth.gamma_l, d.truth.gamma_l, Matrix::Zero(cfg.n, cfg.t), d.truth.e};
      const double rho = pc.penalty.rho;
      const OracleReport rep_o = check_oracle_inequalities(d.panel, st.first, tr, rho);
      r.event = rep_o.event_holds;
      r.theta_finite = std::isfinite(rep_o.theta.theta_star);
      r.nuclear_holds = rep_o.nuclear_error.holds;
      r.sigma_holds = rep_o.sigma_error.holds;
      r.prediction_holds = (!rep_o.prediction_l.applicable || rep_o.prediction_l.holds) &&
                           (!rep_o.prediction_zero.applicable || rep_o.prediction_zero.holds);
      r.rank_holds = !rep_o.rank_bound.applicable || (rep_o.rank_bound.holds && rep_o.rank_bound_outer.holds);
      r.kappa_lb = rep_o.kappa_c_rho;
    }
    if (pc.oracle_annihilators) {
      const ProjectorPair pop = stacked_projectors(d.truth.gamma_l, {d.truth.pi_l});
      r.beta_ts1_oracle = annihilated_ls(d.panel, pop, st.pt_fit.sigma, pc.level).beta(0);
    }
    r.ok = true;
  } catch (const std::exception& ex) {
    r.ok = false;
    r.error = ex.what();
  }
  return r;
}

/// Worker count: IFE_THREADS if set (>= 1), else hardware concurrency.
inline int thread_budget() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IFE_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) n = v;
  }
  return std::max(1, n);
}

/// Runs replications [first, first + count) on up to `threads` workers; results
/// are stored by replication index, so the schedule does not affect them.
inline std::vector<RepResult> run_replications(const DgpConfig& cfg, const PipelineConfig& pc, int threads,
                                               int first = 0, int count = -1) {
  cfg.validate();
  if (count < 0) count = cfg.replications;
  std::vector<RepResult> out(static_cast<std::size_t>(count));
  threads = std::max(1, std::min(threads, count));
  std::atomic<int> next{0};
  auto work = [&]() {
    for (int i = next++; i < count; i = next++) out[static_cast<std::size_t>(i)] = run_replication(cfg, pc, first + i);
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return out;
}

struct EstimatorRow {
  std::string name;
  double mse = 0.0;
  double bias = 0.0;
  double std = 0.0;
};

struct TheorySummary {
  int evaluated = 0;
  int event = 0;
  int theta_finite = 0;
  int nuclear_checked = 0;  // event held and theta_star finite
  int nuclear_holds = 0;
  int sigma_holds_on_event = 0;
  int prediction_holds = 0;
  int rank_holds = 0;
  double kappa_lb_mean = 0.0;
};

struct McReport {
  DgpConfig dgp;
  PipelineConfig pipeline;
  int replications_used = 0;
  int failures = 0;
  int nonconverged = 0;
  std::vector<std::string> failure_messages;  // first few, in replication order
  std::vector<EstimatorRow> rows;
  std::map<std::string, std::map<Index, double>> rank_frequencies;
  std::map<std::string, double> coverage;
  double lambda = 0.0;
  TheorySummary theory;
  double oracle_gap_mean = 0.0;  // mean |beta_ts1 - beta_ts1_oracle|, when requested
};

/// Population-of-replications moments around the true value.
inline EstimatorRow moments(const std::string& name, const std::vector<double>& v, double truth) {
  EstimatorRow row;
  row.name = name;
  if (v.empty()) return row;
  const double m = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= m;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= m;
  row.bias = mean - truth;
  row.std = std::sqrt(var);
  row.mse = row.bias * row.bias + var;
  return row;
}

inline McReport aggregate(const DgpConfig& cfg, const PipelineConfig& pc, const std::vector<RepResult>& reps) {
  McReport rep;
  rep.dgp = cfg;
  rep.pipeline = pc;
  std::vector<double> ls, sq, pt, t1, t2;
  std::map<Index, int> rp, rpt, rg;
  int cov1 = 0, cov2 = 0;
  double gap = 0.0;
  double kappa_sum = 0.0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++rep.failures;
      if (rep.failure_messages.size() < 10) rep.failure_messages.push_back(r.error);
      continue;
    }
    ++rep.replications_used;
    if (!r.converged) ++rep.nonconverged;
    rep.lambda = r.lambda;
    ls.push_back(r.beta_ls);
    sq.push_back(r.beta_sqrt);
    pt.push_back(r.beta_pt);
    t1.push_back(r.beta_ts1);
    t2.push_back(r.beta_ts2);
    ++rp[r.rank_pi];
    ++rpt[r.rank_pi_t];
    ++rg[r.rank_gamma_t];
    cov1 += (r.ci1_low <= 1.0 && 1.0 <= r.ci1_high) ? 1 : 0;
    cov2 += (r.ci2_low <= 1.0 && 1.0 <= r.ci2_high) ? 1 : 0;
    gap += std::abs(r.beta_ts1 - r.beta_ts1_oracle);
    if (pc.theory) {
      auto& th = rep.theory;
      ++th.evaluated;
      th.event += r.event;
      th.theta_finite += r.theta_finite;
      if (r.event && r.theta_finite) {
        ++th.nuclear_checked;
        th.nuclear_holds += r.nuclear_holds;
      }
      if (r.event) th.sigma_holds_on_event += r.sigma_holds;
      th.prediction_holds += r.prediction_holds;
      th.rank_holds += r.rank_holds;
      kappa_sum += r.kappa_lb;
    }
  }
  const double used = static_cast<double>(rep.replications_used);
  rep.rows = {moments("LS", ls, 1.0), moments("sqrt", sq, 1.0), moments("sqrt_pt", pt, 1.0),
              moments("twostage1", t1, 1.0), moments("twostage2", t2, 1.0)};
  auto freqs = [used](const std::map<Index, int>& m) {
    std::map<Index, double> f;
    for (const auto& [k, c] : m) f[k] = static_cast<double>(c) / used;
    return f;
  };
  if (rep.replications_used > 0) {
    rep.rank_frequencies["pi"] = freqs(rp);
    rep.rank_frequencies["pi_t"] = freqs(rpt);
    rep.rank_frequencies["gamma_t"] = freqs(rg);
    rep.coverage["twostage1"] = cov1 / used;
    rep.coverage["twostage2"] = cov2 / used;
    if (pc.oracle_annihilators) rep.oracle_gap_mean = gap / used;
    if (pc.theory) rep.theory.kappa_lb_mean = kappa_sum / used;
  }
  return rep;
}

inline McReport run_monte_carlo(const DgpConfig& cfg, const PipelineConfig& pc, int threads = thread_budget()) {
  return aggregate(cfg, pc, run_replications(cfg, pc, threads));
}

struct CoverageRow {
  bool within = false;
  Index n = 0;
  Index t = 0;
  double twostage1 = 0.0;
  double twostage2 = 0.0;
  int replications = 0;
};

/// One row per report, ordered by (within, N, T).
inline std::vector<CoverageRow> coverage_table(const std::vector<McReport>& reports) {
  std::vector<CoverageRow> rows;
  for (const auto& r : reports) {
    CoverageRow row;
    row.within = r.dgp.within;
    row.n = r.dgp.n;
    row.t = r.dgp.t;
    row.replications = r.replications_used;
    auto get = [&](const char* k) {
      auto it = r.coverage.find(k);
      return it == r.coverage.end() ? 0.0 : it->second;
    };
    row.twostage1 = get("twostage1");
    row.twostage2 = get("twostage2");
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CoverageRow& a, const CoverageRow& b) {
    if (a.within != b.within) return !a.within;
    if (a.n != b.n) return a.n < b.n;
    return a.t < b.t;
  });
  return rows;
}

}  // namespace ife
