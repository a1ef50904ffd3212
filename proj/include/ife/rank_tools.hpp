#pragma once

// Rank recovery by hard thresholding, regressor decompositions and the
// transformed-regressor machinery built on them.

#include "ife/matrix_core.hpp"
#include "ife/penalty.hpp"
#include "ife/sqrt_estimator.hpp"

#include <string>
#include <vector>

namespace ife {

enum class ThresholdRule { paper_sim, prop7 };

inline ThresholdRule parse_threshold_rule(const std::string& name) {
  if (name == "paper-sim") return ThresholdRule::paper_sim;
  if (name == "prop7") return ThresholdRule::prop7;
  throw InvalidInput("unknown threshold rule '" + name + "' (expected paper-sim or prop7)");
}

inline std::string to_string(ThresholdRule r) { return r == ThresholdRule::paper_sim ? "paper-sim" : "prop7"; }

struct ThresholdSpec {
  ThresholdRule rule = ThresholdRule::paper_sim;
  double rho = 0.99;
  double h = 1.1;
};

/// Threshold level for a matrix estimated with penalty lambda and scale sigma_hat.
inline double threshold_level(const ThresholdSpec& spec, double lambda, double sigma_hat) {
  if (spec.rule == ThresholdRule::paper_sim) return penalty::paper_sim_threshold(lambda, sigma_hat);
  return penalty::hard_threshold_level(lambda, spec.rho, spec.h, sigma_hat);
}

struct ThresholdedFit {
  Matrix gamma_t;
  double threshold = 0.0;
  Index est_rank = 0;
  ProjectorPair projectors;
  Vector source_singular_values;  // all singular values of the thresholded input
};

/// Hard-thresholds `gamma` at t and keeps the projectors of the result.
inline ThresholdedFit threshold_matrix(const Matrix& gamma, double t) {
  require(t > 0.0 && std::isfinite(t), "threshold: t must be finite and > 0");
  const Svd s = svd(gamma);
  ThresholdedFit out;
  out.threshold = t;
  out.source_singular_values = s.singular_values;
  Index k = 0;
  while (k < s.u.cols() && s.singular_values(k) >= t) ++k;
  out.est_rank = k;
  out.gamma_t = hard_threshold(s, t);
  out.projectors = ProjectorPair(s.u.leftCols(k), s.v.leftCols(k));
  return out;
}

inline ThresholdedFit threshold_fit(const FitResult& fit, double t) { return threshold_matrix(fit.gamma, t); }

inline Vector kept_singular_values(const ThresholdedFit& thr) {
  return thr.source_singular_values.head(thr.est_rank);
}

struct RegressorDecomposition {
  Matrix pi_hat;        // Pi-tilde used downstream (thresholded or raw)
  Matrix pi_raw;        // K=0 first-stage estimate before thresholding
  double sigma_k_hat = 0.0;
  double lambda_k = 0.0;
  double threshold = 0.0;  // 0 when mode == raw
  Index rank_k = 0;
  Index rank_raw = 0;
  bool thresholded = true;
  bool converged = false;
  int iterations = 0;
};

struct DecomposeOptions {
  bool thresholded = true;
  ThresholdSpec threshold;
  SolverOptions solver;
};

/// K=0 square-root fit of X_k (iterated singular-value soft-thresholding),
/// optionally hard-thresholded.
inline RegressorDecomposition decompose_regressor(const Matrix& xk, double lambda_k,
                                                  const DecomposeOptions& opts = {}) {
  require(lambda_k > 0.0 && std::isfinite(lambda_k), "decompose_regressor: lambda_k must be > 0");
  PanelData p{xk, {}, {}};
  const FitResult fit = solve(p, lambda_k, opts.solver);
  RegressorDecomposition dec;
  dec.pi_raw = fit.gamma;
  dec.sigma_k_hat = fit.sigma;
  dec.lambda_k = lambda_k;
  dec.converged = fit.converged;
  dec.iterations = fit.iterations;
  dec.rank_raw = numerical_rank(fit.gamma);
  dec.thresholded = opts.thresholded;
  if (opts.thresholded && fit.sigma > 0.0) {
    dec.threshold = threshold_level(opts.threshold, lambda_k, fit.sigma);
    ThresholdedFit thr = threshold_matrix(fit.gamma, dec.threshold);
    dec.pi_hat = std::move(thr.gamma_t);
    dec.rank_k = thr.est_rank;
  } else {
    dec.pi_hat = dec.pi_raw;
    dec.rank_k = dec.rank_raw;
  }
  return dec;
}

/// Transformed regressor:
///   1: X - Pi      2: M_u(Pi) X      3: X M_v(Pi)
///   4: M_u(Pi) X M_v(Pi)              5: X minus its best rank-l approximation
/// For mode 5, l defaults to rank(Pi).
inline Matrix transform_regressor(const Matrix& xk, const Matrix& pi, int mode, Index l = -1) {
  require_same_shape(xk, pi, "transform_regressor");
  switch (mode) {
    case 1: return xk - pi;
    case 2: return projectors_of(pi).annihilate_left(xk);
    case 3: return projectors_of(pi).annihilate_right(xk);
    case 4: return projectors_of(pi).perp(xk);
    case 5: {
      const Index lk = l >= 0 ? l : numerical_rank(pi);
      return xk - rank_truncate(xk, lk);
    }
    default: throw InvalidInput("transform_regressor: mode must be in 1..5, got " + std::to_string(mode));
  }
}

inline Matrix transform_regressor(const Matrix& xk, const RegressorDecomposition& dec, int mode, Index l = -1) {
  return transform_regressor(xk, dec.pi_hat, mode, l);
}

/// Gamma-hat = Gamma-tilde-hat - sum_k beta_k Pi_k.
inline Matrix reconstruct_gamma(const FitResult& fit_on_transformed, const std::vector<Matrix>& pis) {
  require(static_cast<Index>(pis.size()) == fit_on_transformed.beta.size(),
          "reconstruct_gamma: number of Pi matrices must equal K");
  Matrix g = fit_on_transformed.gamma;
  for (std::size_t k = 0; k < pis.size(); ++k) {
    require_same_shape(g, pis[k], "reconstruct_gamma");
    g -= fit_on_transformed.beta(static_cast<Index>(k)) * pis[k];
  }
  return g;
}

inline Matrix reconstruct_gamma(const FitResult& fit_on_transformed, const std::vector<RegressorDecomposition>& decs) {
  std::vector<Matrix> pis;
  pis.reserve(decs.size());
  for (const auto& d : decs) pis.push_back(d.pi_hat);
  return reconstruct_gamma(fit_on_transformed, pis);
}

/// Projectors onto the column space of [G, Pi_1, ..., Pi_K] and the row space
/// of [G; Pi_1; ...; Pi_K].
inline ProjectorPair stacked_projectors(const Matrix& gamma_t, const std::vector<Matrix>& pis) {
  const Index n = gamma_t.rows();
  const Index t = gamma_t.cols();
  const Index blocks = static_cast<Index>(pis.size()) + 1;
  Matrix horiz(n, blocks * t);
  Matrix vert(blocks * n, t);
  horiz.leftCols(t) = gamma_t;
  vert.topRows(n) = gamma_t;
  for (Index k = 1; k < blocks; ++k) {
    const Matrix& p = pis[static_cast<std::size_t>(k - 1)];
    require_same_shape(gamma_t, p, "stacked_projectors");
    horiz.middleCols(k * t, t) = p;
    vert.middleRows(k * n, n) = p;
  }
  const Svd su = svd(horiz);
  const Svd sv = svd(vert);
  return ProjectorPair(su.u.leftCols(su.rank()), sv.v.leftCols(sv.rank()));
}

enum class SigmaSource { fit, bar, tilde };

inline SigmaSource parse_sigma_source(const std::string& name) {
  if (name == "fit") return SigmaSource::fit;
  if (name == "bar") return SigmaSource::bar;
  if (name == "tilde") return SigmaSource::tilde;
  throw InvalidInput("unknown sigma source '" + name + "' (expected fit, bar or tilde)");
}

inline std::string to_string(SigmaSource s) {
  switch (s) {
    case SigmaSource::fit: return "fit";
    case SigmaSource::bar: return "bar";
    case SigmaSource::tilde: return "tilde";
  }
  return "?";
}

/// sigma-bar^2 = sigma^2 + sum_k sigma_k^2
inline double sigma_bar(double sigma_hat, const std::vector<RegressorDecomposition>& decs) {
  double acc = sigma_hat * sigma_hat;
  for (const auto& d : decs) acc += d.sigma_k_hat * d.sigma_k_hat;
  return std::sqrt(acc);
}

/// Scale entering the threshold for a reconstructed Gamma-hat.
/// `tilde` inflates sigma-bar by (h^2 + 1) when the Pi's were thresholded.
inline double reconstruction_sigma(SigmaSource src, double sigma_hat, const std::vector<RegressorDecomposition>& decs,
                                   double h) {
  switch (src) {
    case SigmaSource::fit: return sigma_hat;
    case SigmaSource::bar: return sigma_bar(sigma_hat, decs);
    case SigmaSource::tilde: {
      bool any_thr = false;
      for (const auto& d : decs) any_thr = any_thr || d.thresholded;
      return (any_thr ? h * h + 1.0 : 1.0) * sigma_bar(sigma_hat, decs);
    }
  }
  return sigma_hat;
}

/// Candidate rank bounds for a fit on transformed regressors: 18 * sum r_k, and
/// r-tilde = r + 2((1+rho)/(1-rho))^2 sum r_k (raw Pi) or r + sum r_k (thresholded Pi).
struct RankInflation {
  double inflation_18 = 0.0;
  double r_tilde_raw = 0.0;
  double r_tilde_thresholded = 0.0;
};

inline RankInflation rank_inflation_bounds(Index rank_gamma, const std::vector<Index>& rank_pi, double rho) {
  require(rho > 0.0 && rho < 1.0, "rank_inflation_bounds: rho must lie in (0, 1)");
  double sum = 0.0;
  for (Index r : rank_pi) sum += static_cast<double>(r);
  const double f = (1.0 + rho) / (1.0 - rho);
  RankInflation out;
  out.inflation_18 = 18.0 * sum;
  out.r_tilde_raw = static_cast<double>(rank_gamma) + 2.0 * f * f * sum;
  out.r_tilde_thresholded = static_cast<double>(rank_gamma) + sum;
  return out;
}

}  // namespace ife
