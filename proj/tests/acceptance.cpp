// Acceptance run: one PASS/FAIL line per criterion, details indented below.
//   acceptance --cli path/to/ife [--only 1,3,8] [--workdir DIR]

#include "support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <sys/wait.h>

using namespace ife;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

const EstimatorRow& row(const McReport& r, const std::string& name) {
  for (const auto& x : r.rows)
    if (x.name == name) return x;
  throw std::runtime_error("no estimator row " + name);
}

double rank_freq(const McReport& r, const std::string& which, Index rank) {
  const auto& m = r.rank_frequencies.at(which);
  auto it = m.find(rank);
  return it == m.end() ? 0.0 : it->second;
}

void describe(Outcome& o, const McReport& r, const std::string& label) {
  o.note(fmt("%s: %d replications used, %d failed, %d not converged, lambda %.4f", label.c_str(), r.replications_used,
             r.failures, r.nonconverged, r.lambda));
  for (const auto& x : r.rows)
    o.note(fmt("  %-10s mse %.5f  bias %+.5f  std %.5f", x.name.c_str(), x.mse, x.bias, x.std));
  for (const auto& [which, freqs] : r.rank_frequencies) {
    std::string line = "  rank " + which + ":";
    for (const auto& [k, f] : freqs) line += fmt(" %lld=%.3f", static_cast<long long>(k), f);
    o.note(line);
  }
  for (const auto& [name, c] : r.coverage) o.note(fmt("  coverage %s %.3f", name.c_str(), c));
}

McReport monte_carlo(Index n, bool within, int reps, bool theory = false) {
  DgpConfig cfg;
  cfg.n = cfg.t = n;
  cfg.within = within;
  cfg.replications = reps;
  PipelineConfig pc;
  pc.theory = theory;
  return aggregate(cfg, pc, run_replications(cfg, pc, thread_budget()));
}

// Criterion 1: solver against the independent oracle.
Outcome criterion1() {
  Outcome o;
  int skipped = 0;
  const auto insts = testing::oracle_instances(20, 20240101, &skipped);
  double worst_rel = 0.0, worst_z = 0.0, worst_grad = 0.0, worst_gap = 0.0;
  bool kkt_ok = true;
  for (const auto& in : insts) {
    const FitResult f = solve(in.panel, in.lambda);
    const double obj = objective(in.panel, f.beta, f.gamma, in.lambda);
    worst_rel = std::max(worst_rel, std::abs(obj - in.oracle.objective) / std::abs(in.oracle.objective));
    const KktCertificate& k = f.kkt;
    worst_z = std::max(worst_z, k.z_operator_norm - 1.0);
    if (k.gradient_residuals.size()) worst_grad = std::max(worst_grad, k.gradient_residuals.cwiseAbs().maxCoeff());
    worst_gap = std::max(worst_gap, k.duality_gap_proxy / (1.0 + k.gamma_nuclear));
    kkt_ok = kkt_ok && k.satisfied(1e-5);
  }
  o.note(fmt("%zu instances (N, T <= 8, K <= 2), %d perfect-fit draws skipped", insts.size(), skipped));
  o.check(insts.size() == 20, "20 instances solved");
  o.check(worst_rel <= 1e-6, fmt("max relative objective gap to oracle %.3g <= 1e-6", worst_rel));
  o.check(kkt_ok, fmt("KKT: max(|Z|op - 1) %.3g, max |grad| %.3g, max gap/(1+|G|*) %.3g, all <= 1e-5", worst_z,
                      worst_grad, worst_gap));
  return o;
}

// Criterion 2: solver invariants on every solve performed here.
Outcome criterion2() {
  Outcome o;
  int solves = 0, bad = 0;
  std::string first_bad;
  auto check = [&](const PanelData& p, const FitResult& f, const std::string& tag) {
    ++solves;
    const std::string v = testing::fit_invariant_violation(p, f);
    if (!v.empty()) {
      if (bad++ == 0) first_bad = tag + ": " + v;
    }
  };
  for (const auto& in : testing::oracle_instances(20, 20240101)) check(in.panel, solve(in.panel, in.lambda), "oracle");
  std::mt19937_64 rng(77);
  for (int i = 0; i < 60; ++i) {
    std::uniform_int_distribution<int> nd(2, 30), kd(0, 3), rd(0, 4);
    std::uniform_real_distribution<double> ld(0.05, 3.0);
    const Index n = nd(rng), t = nd(rng), k = std::min<Index>(kd(rng), n * t / 2), r = rd(rng);
    const PanelData p = testing::random_panel(rng(), n, t, k, std::min<Index>(r, std::min(n, t)), 1.0);
    const double lambda = ld(rng) * (std::sqrt(static_cast<double>(n)) + std::sqrt(static_cast<double>(t)));
    try {
      check(p, solve(p, lambda), fmt("random %d", i));
    } catch (const NumericalError&) {
      // ill-conditioned random designs are rejected by contract
    }
  }
  DgpConfig cfg;
  PipelineConfig pc;
  for (int rep = 0; rep < 10; ++rep) {
    const SimDraw d = simulate_dgp(cfg, rep);
    const PipelineStages st = run_pipeline(d.panel, pc);
    check(d.panel, st.first, fmt("pipeline %d first", rep));
    check(st.transformed, st.transformed_fit, fmt("pipeline %d transformed", rep));
    check(st.transformed, st.pt_fit, fmt("pipeline %d pt", rep));
    PanelData xk{d.panel.x[0], {}, {}};
    SolverOptions so;
    so.max_iter = pc.decompose_iters;
    check(xk, solve(xk, st.lambda, so), fmt("pipeline %d decomposition", rep));
  }
  o.check(bad == 0, fmt("%d solves, %d violations (monotone trace, profiled equivalence 1e-9, OLS identity 1e-9, "
                        "scale identity 1e-12)",
                        solves, bad));
  if (bad) o.note(first_bad);
  return o;
}

struct Runs {
  std::optional<McReport> n50;           // N=T=50, 500 reps
  std::optional<McReport> n150;          // N=T=150, 1000 reps
  std::optional<McReport> n150_first200; // first 200 of the above
  std::optional<McReport> n150_within;   // within, 200 reps
  std::optional<McReport> n50_within;    // within, 500 reps
};

// Criterion 3: N=T=50, 500 replications.
Outcome criterion3(Runs& runs) {
  Outcome o;
  if (!runs.n50) runs.n50 = monte_carlo(50, false, 500);
  const McReport& r = *runs.n50;
  describe(o, r, "N=T=50");
  o.check(r.failures == 0, "no failed replications");
  const auto& ls = row(r, "LS");
  o.check(std::abs(ls.mse - 0.053) <= 0.010, fmt("LS mse %.4f within 0.053 +- 0.010", ls.mse));
  o.check(std::abs(ls.bias - 0.230) <= 0.015, fmt("LS bias %.4f within 0.230 +- 0.015", ls.bias));
  o.check(row(r, "sqrt_pt").mse <= 0.002, fmt("sqrt_pt mse %.5f <= 0.002", row(r, "sqrt_pt").mse));
  o.check(row(r, "twostage2").mse <= 0.003, fmt("twostage2 mse %.5f <= 0.003", row(r, "twostage2").mse));
  return o;
}

void ensure_n150(Runs& runs, int reps) {
  if (runs.n150 && runs.n150->replications_used + runs.n150->failures >= reps) return;
  DgpConfig cfg;
  cfg.n = cfg.t = 150;
  cfg.replications = reps;
  const PipelineConfig pc;
  const auto all = run_replications(cfg, pc, thread_budget());
  const std::vector<RepResult> head(all.begin(), all.begin() + std::min<std::size_t>(200, all.size()));
  DgpConfig c200 = cfg;
  c200.replications = static_cast<int>(head.size());
  runs.n150_first200 = aggregate(c200, pc, head);
  runs.n150 = aggregate(cfg, pc, all);
}

// Criterion 4: N=T=150, 200 replications (the first 200 of criterion 6's run when both are selected).
Outcome criterion4(Runs& runs, bool with6) {
  Outcome o;
  ensure_n150(runs, with6 ? 1000 : 200);
  const McReport& r = *runs.n150_first200;
  describe(o, r, "N=T=150, replications 0-199");
  o.check(r.failures == 0, "no failed replications");
  const auto& ls = row(r, "LS");
  o.check(std::abs(ls.bias - 0.231) <= 0.02, fmt("LS bias %.4f within 0.231 +- 0.02", ls.bias));
  for (const char* name : {"twostage1", "twostage2"}) {
    const auto& x = row(r, name);
    o.check(std::abs(x.bias) <= 0.005, fmt("%s |bias| %.5f <= 0.005", name, std::abs(x.bias)));
    o.check(x.std <= 0.010, fmt("%s std %.5f <= 0.010", name, x.std));
  }
  return o;
}

// Criterion 5: rank recovery after the within transform.
Outcome criterion5(Runs& runs) {
  Outcome o;
  if (!runs.n150_within) runs.n150_within = monte_carlo(150, true, 200);
  if (!runs.n50_within) runs.n50_within = monte_carlo(50, true, 500);
  describe(o, *runs.n150_within, "within, N=T=150");
  describe(o, *runs.n50_within, "within, N=T=50");
  const double f150 = rank_freq(*runs.n150_within, "gamma_t", 2);
  const double f50 = rank_freq(*runs.n50_within, "gamma_t", 2);
  o.check(f150 >= 0.97, fmt("N=T=150 rank(Gamma^t) = 2 in %.3f >= 0.97", f150));
  o.check(std::abs(f50 - 0.81) <= 0.08, fmt("N=T=50 rank(Gamma^t) = 2 in %.3f within 0.81 +- 0.08", f50));
  return o;
}

// Criterion 6: coverage at N=T=150, 1000 replications.
Outcome criterion6(Runs& runs) {
  Outcome o;
  ensure_n150(runs, 1000);
  const McReport& r = *runs.n150;
  describe(o, r, "N=T=150");
  o.check(r.failures == 0, "no failed replications");
  const double c1 = r.coverage.at("twostage1"), c2 = r.coverage.at("twostage2");
  o.check(std::abs(c1 - 0.95) <= 0.03, fmt("twostage1 coverage %.3f within 0.95 +- 0.03", c1));
  o.check(std::abs(c2 - 0.94) <= 0.03, fmt("twostage2 coverage %.3f within 0.94 +- 0.03", c2));
  return o;
}

// Criterion 7: theory checks on simulated replications.
Outcome criterion7() {
  Outcome o;
  const McReport r = monte_carlo(50, false, 200, true);
  const TheorySummary& th = r.theory;
  const double event = th.evaluated ? static_cast<double>(th.event) / th.evaluated : 0.0;
  o.note(fmt("%d replications evaluated, rho = %.2f, lambda = %.4f", th.evaluated, PipelineConfig{}.penalty.rho,
             r.lambda));
  o.check(r.failures == 0 && th.evaluated == 200, "200 replications evaluated");
  o.check(event >= 0.99, fmt("event frequency %.3f >= 0.99", event));
  o.check(th.nuclear_holds == th.nuclear_checked,
          fmt("nuclear-norm bound holds in %d of %d replications with the event and finite theta_star "
              "(theta_star finite in %d)",
              th.nuclear_holds, th.nuclear_checked, th.theta_finite));
  o.note(fmt("sigma bound holds in %d of %d event replications; prediction bound %d/%d; rank bound %d/%d; "
             "mean kappa_lb %.4f",
             th.sigma_holds_on_event, th.event, th.prediction_holds, th.evaluated, th.rank_holds, th.evaluated,
             th.kappa_lb_mean));

  // Compatibility probes: simulated designs and random designs where the bound is positive.
  int probes = 0, ok = 0, positive = 0;
  DgpConfig cfg;
  const double rho = PipelineConfig{}.penalty.rho;
  for (int rep = 0; rep < 10; ++rep) {
    const SimDraw d = simulate_dgp(cfg, rep);
    for (double c : {0.25, 1.0, (1.0 + rho) / (1.0 - rho)}) {
      const double lb = compatibility_lower_bound(d.panel.x, d.truth.gamma_l, c).kappa_lb;
      const double sampled = sampled_cone_minimum(d.panel.x, d.truth.gamma_l, c, 1000, 1000 + rep);
      ++probes;
      ok += lb <= sampled;
      positive += lb > 0.0;
    }
  }
  std::mt19937_64 rng(31);
  for (int i = 0; i < 10; ++i) {
    const Matrix a = testing::low_rank(rng, 40, 40, 1 + i % 2);
    const std::vector<Matrix> x{testing::gaussian(rng, 40, 40)};
    for (double c : {0.25, 1.0, 3.0, 10.0}) {
      const double lb = compatibility_lower_bound(x, a, c).kappa_lb;
      const double sampled = sampled_cone_minimum(x, a, c, 1000, 2000 + i);
      ++probes;
      ok += lb <= sampled;
      positive += lb > 0.0;
    }
  }
  o.check(ok == probes, fmt("kappa_lb <= sampled cone minimum in %d of %d probes (%d with kappa_lb > 0)", ok,
                            probes, positive));
  return o;
}

// Criterion 8: byte-identical CLI reruns and serial/parallel agreement.
int run(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b, int& files, std::string& diff) {
  std::set<std::string> na, nb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) na.insert(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) nb.insert(fs::relative(e.path(), b).string());
  if (na != nb) {
    diff = "file sets differ";
    return false;
  }
  for (const auto& n : na) {
    ++files;
    if (slurp(a / n) != slurp(b / n)) {
      diff = n;
      return false;
    }
  }
  return true;
}

Outcome criterion8(const std::string& cli, const fs::path& work) {
  Outcome o;
  if (cli.empty() || !fs::exists(cli)) {
    o.check(false, "CLI binary not found (pass --cli)");
    return o;
  }
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string q = "'" + fs::absolute(cli).string() + "'";
  auto sh = [&](const std::string& args, const std::string& env = "") {
    return run(env + " " + q + " " + args + " > /dev/null 2>&1");
  };
  const std::string data = (work / "dump" / "data.json").string();
  bool ran = sh("simulate --n 20 --t 20 --reps 6 --seed 11 --dump-rep 2 --dump-dir '" + (work / "dump").string() +
                    "' --out '" + (work / "sim_serial.json").string() + "'",
                "IFE_THREADS=1") == 0;
  ran = ran && sh("simulate --n 20 --t 20 --reps 6 --seed 11 --out '" + (work / "sim_parallel.json").string() + "'",
                  "IFE_THREADS=3") == 0;
  o.check(ran, "simulate runs succeeded");
  const bool sim_same = ran && slurp(work / "sim_serial.json") == slurp(work / "sim_parallel.json");
  o.check(sim_same, "simulate report identical with 1 and 3 worker threads");

  int files = 0;
  bool all_same = true;
  for (int pass = 1; pass <= 2; ++pass) {
    // Each rerun works inside its own directory with relative output paths, so
    // paths recorded in the outputs are the same in both runs.
    const fs::path d = work / ("run" + std::to_string(pass));
    const std::string D = "'";
    const std::vector<std::string> steps = {
        "estimate --data '" + data + "' --out " + D + "fit.json'",
        "transform --data '" + data + "' --out " + D + "tr/transformed.json'",
        "estimate --data " + D + "tr/transformed.json' --out " + D + "fit_t.json'",
        "threshold --fit " + D + "fit_t.json' --data " + D + "tr/transformed.json' --out " + D + "thr.json'",
        "twostage --fit " + D + "fit_t.json' --thr " + D + "thr.json' --data '" + data + "' --out " + D + "ts1.json'",
        "twostage --fit " + D + "fit_t.json' --thr " + D + "thr.json' --data '" + data + "' --method bai --out " + D +
            "ts2.json'",
        "diagnose --fit " + D + "fit.json' --data '" + data + "' --truth '" + (work / "dump" / "truth.json").string() +
            "' --probes 50 --out " + D + "diag.json'",
        "pipeline --data '" + data + "' --out-dir " + D + "pipeline'",
        "report --in '" + (work / "sim_serial.json").string() + "' --format csv --out " + D + "report.csv'",
    };
    fs::create_directories(d);
    for (const auto& s : steps) {
      const int rc = run("cd '" + d.string() + "' && " + q + " " + s + " > /dev/null 2>&1");
      if (rc != 0 && rc != 4) {
        all_same = false;
        o.note("command failed: ife " + s);
      }
    }
  }
  std::string diff;
  const bool trees = same_tree(work / "run1", work / "run2", files, diff);
  o.check(all_same && trees, fmt("estimate, transform, threshold, twostage, diagnose, pipeline and report reruns "
                                 "byte-identical (%d files compared)%s",
                                 files, trees ? "" : (", first difference: " + diff).c_str()));

  DgpConfig cfg;
  cfg.n = cfg.t = 30;
  cfg.replications = 6;
  const PipelineConfig pc;
  const auto serial = run_replications(cfg, pc, 1);
  const auto parallel = run_replications(cfg, pc, 4);
  bool bitwise = true;
  for (std::size_t i = 0; i < serial.size(); ++i) {
    for (auto field : {&RepResult::beta_ls, &RepResult::beta_sqrt, &RepResult::beta_pt, &RepResult::beta_ts1,
                       &RepResult::beta_ts2, &RepResult::ci1_low, &RepResult::ci2_high, &RepResult::sigma_hat}) {
      const double a = serial[i].*field, b = parallel[i].*field;
      bitwise = bitwise && std::memcmp(&a, &b, sizeof a) == 0;
    }
  }
  o.check(bitwise, "library Monte Carlo: serial and 4-thread replications agree bitwise");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::string only;
  std::string workdir = (fs::temp_directory_path() / "ife_acceptance").string();
  app.add_option("--cli", cli, "path to the ife binary");
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--workdir", workdir, "scratch directory for CLI runs");
  CLI11_PARSE(app, argc, argv);

  std::set<int> want;
  if (only.empty()) {
    for (int i = 1; i <= 8; ++i) want.insert(i);
  } else {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ',')) want.insert(std::stoi(tok));
  }

  const std::map<int, std::string> titles = {
      {1, "solver matches independent oracle"},
      {2, "solver invariants on every solve"},
      {3, "N=T=50 simulation, 500 replications"},
      {4, "N=T=150 simulation, 200 replications"},
      {5, "rank recovery after within transform"},
      {6, "confidence interval coverage, N=T=150, 1000 replications"},
      {7, "event frequency, error bound, compatibility probes"},
      {8, "determinism"},
  };
  std::printf("threads: %d\n", thread_budget());
  Runs runs;
  int failed = 0;
  for (int c : want) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      switch (c) {
        case 1: o = criterion1(); break;
        case 2: o = criterion2(); break;
        case 3: o = criterion3(runs); break;
        case 4: o = criterion4(runs, want.count(6) > 0); break;
        case 5: o = criterion5(runs); break;
        case 6: o = criterion6(runs); break;
        case 7: o = criterion7(); break;
        case 8: o = criterion8(cli, workdir); break;
        default: o.check(false, "unknown criterion");
      }
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s (%.0f s)\n", o.pass ? "PASS" : "FAIL", c, titles.count(c) ? titles.at(c).c_str() : "?",
                secs);
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(want.size()) - failed, want.size());
  return failed == 0 ? 0 : 1;
}
