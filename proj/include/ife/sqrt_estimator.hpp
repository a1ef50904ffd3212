#pragma once

// Square-root nuclear-norm penalized estimator
//
//   (beta, Gamma) in argmin |Y - sum_k beta_k X_k - Gamma|_2 / sqrt(NT) + lambda |Gamma|_* / NT,
//
// computed by exact block minimization of the equivalent concomitant program
//
//   sigma + |Y - sum_k beta_k X_k - Gamma|_2^2 / (sigma NT) + 2 lambda |Gamma|_* / NT
//
// over beta (least squares), Gamma (singular-value soft-thresholding at
// lambda * sigma) and sigma (residual scale).

#include "ife/matrix_core.hpp"
#include "ife/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace ife {

struct SolverOptions {
  double tol = 1e-8;
  double objective_rel_tol = 1e-10;
  int max_iter = 200;
  double condition_cap = 1e12;
};

struct KktCertificate {
  double z_operator_norm = 0.0;
  Vector gradient_residuals;
  double duality_gap_proxy = 0.0;
  double gamma_nuclear = 0.0;
  bool degenerate = false;

  bool satisfied(double tol) const {
    if (degenerate) return false;
    const double grad = gradient_residuals.size() ? gradient_residuals.cwiseAbs().maxCoeff() : 0.0;
    return z_operator_norm <= 1.0 + tol && grad <= tol && duality_gap_proxy <= tol * (1.0 + gamma_nuclear);
  }
};

struct FitResult {
  Vector beta;
  Matrix gamma;
  double sigma = 0.0;
  double lambda = 0.0;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  double gram_condition = 1.0;
  KktCertificate kkt;
};

/// Iterate to resume from; sigma must be > 0 unless the residual vanishes.
struct WarmStart {
  Vector beta;
  Matrix gamma;
  double sigma = 0.0;
};

inline WarmStart warm_start_from(const FitResult& fit) { return {fit.beta, fit.gamma, fit.sigma}; }

/// Value of |Y - X beta - Gamma|_2 / sqrt(NT) + lambda |Gamma|_* / NT.
inline double objective(const PanelData& panel, const Vector& beta, const Matrix& gamma, double lambda) {
  const Matrix resid = panel.y - combine(panel.x, beta, panel.n(), panel.t()) - gamma;
  return resid.norm() / std::sqrt(panel.nt()) + lambda * nuclear_norm(gamma) / panel.nt();
}

/// sigma + rss / (sigma NT) + 2 lambda nuc / NT, with its sigma -> 0 limit when rss = 0.
inline double concomitant_objective(double sigma, double rss, double gamma_nuclear, double lambda, double nt) {
  const double pen = 2.0 * lambda * gamma_nuclear / nt;
  if (sigma <= 0.0) return rss > 0.0 ? std::numeric_limits<double>::infinity() : pen;
  return sigma + rss / (sigma * nt) + pen;
}

inline Vector ols_given_gamma(const PanelData& panel, const Matrix& gamma, double condition_cap = 1e12) {
  panel.validate();
  require_same_shape(panel.y, gamma, "ols_given_gamma");
  return Design(panel.x, condition_cap).coefficients(panel.y - gamma);
}

/// |M_X(Y - Gamma)|_2 / sqrt(NT) + lambda |Gamma|_* / NT
inline double profiled_objective(const PanelData& panel, const Matrix& gamma, double lambda,
                                 double condition_cap = 1e12) {
  panel.validate();
  require_same_shape(panel.y, gamma, "profiled_objective");
  const Design design(panel.x, condition_cap);
  return design.annihilate(panel.y - gamma).norm() / std::sqrt(panel.nt()) +
         lambda * nuclear_norm(gamma) / panel.nt();
}

inline KktCertificate kkt_certificate(const PanelData& panel, const Vector& beta, const Matrix& gamma,
                                      double sigma, double lambda) {
  KktCertificate cert;
  const double nt = panel.nt();
  const Matrix resid = panel.y - combine(panel.x, beta, panel.n(), panel.t()) - gamma;
  cert.gradient_residuals.resize(panel.k());
  for (Index k = 0; k < panel.k(); ++k) cert.gradient_residuals(k) = inner(panel.x[k], resid) / nt;
  cert.gamma_nuclear = nuclear_norm(gamma);
  if (!(sigma > 0.0) || !(lambda > 0.0)) {
    cert.degenerate = true;
    return cert;
  }
  const Matrix z = resid / (lambda * sigma);
  cert.z_operator_norm = operator_norm(z);
  cert.duality_gap_proxy = std::abs(inner(gamma, z) - cert.gamma_nuclear);
  return cert;
}

inline KktCertificate kkt_certificate(const PanelData& panel, const FitResult& fit) {
  return kkt_certificate(panel, fit.beta, fit.gamma, fit.sigma, fit.lambda);
}

inline FitResult solve(const PanelData& panel, double lambda, const SolverOptions& opts = {},
                       const std::optional<WarmStart>& warm = std::nullopt) {
  panel.validate();
  require(lambda > 0.0 && std::isfinite(lambda), "solve: lambda must be finite and > 0");
  require(opts.max_iter >= 0, "solve: max_iter must be >= 0");
  const Index n = panel.n();
  const Index t = panel.t();
  const double nt = panel.nt();
  const double root_nt = std::sqrt(nt);
  const Design design(panel.x, opts.condition_cap);

  FitResult fit;
  fit.lambda = lambda;
  fit.gram_condition = design.condition();

  double gamma_nuclear = 0.0;
  if (warm) {
    require(warm->beta.size() == panel.k(), "solve: warm-start beta has wrong length");
    require_same_shape(panel.y, warm->gamma, "solve: warm-start gamma");
    fit.beta = warm->beta;
    fit.gamma = warm->gamma;
    fit.sigma = warm->sigma;
    gamma_nuclear = nuclear_norm(fit.gamma);
  } else {
    fit.gamma = Matrix::Zero(n, t);
    fit.beta = design.coefficients(panel.y);
    fit.sigma = (panel.y - design.fitted(fit.beta, n, t)).norm() / root_nt;
  }
  {
    const double rss = (panel.y - design.fitted(fit.beta, n, t) - fit.gamma).squaredNorm();
    fit.objective_trace.push_back(concomitant_objective(fit.sigma, rss, gamma_nuclear, lambda, nt));
  }

  const double sigma_floor = 1e-12 * panel.y.norm() / root_nt;
  for (int it = 0; it < opts.max_iter; ++it) {
    if (fit.sigma <= sigma_floor) {
      fit.degenerate = true;
      break;
    }
    // Gamma step given (beta, sigma), then beta and sigma given Gamma, so every
    // iterate has beta = OLS(Y - Gamma) and sigma equal to its residual scale.
    const Svd s = svd(panel.y - design.fitted(fit.beta, n, t));
    const double tau = lambda * fit.sigma;
    Matrix gamma = soft_threshold(s, tau);
    double nuc = 0.0;
    for (Index k = 0; k < s.u.cols() && s.singular_values(k) > tau; ++k) nuc += s.singular_values(k) - tau;
    Vector beta = design.coefficients(panel.y - gamma);
    const double rss = (panel.y - design.fitted(beta, n, t) - gamma).squaredNorm();
    const double sigma = std::sqrt(rss) / root_nt;
    const double obj = concomitant_objective(sigma, rss, nuc, lambda, nt);

    double step = (gamma - fit.gamma).norm() / root_nt;
    step = std::max(step, std::abs(sigma - fit.sigma));
    if (beta.size()) step = std::max(step, (beta - fit.beta).cwiseAbs().maxCoeff());
    const double prev = fit.objective_trace.back();
    const double rel_decrease = (prev - obj) / std::max(std::abs(prev), std::numeric_limits<double>::min());

    fit.beta = std::move(beta);
    fit.gamma = std::move(gamma);
    fit.sigma = sigma;
    fit.objective_trace.push_back(obj);
    fit.iterations = it + 1;
    if (step < opts.tol && rel_decrease < opts.objective_rel_tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.degenerate && fit.sigma <= sigma_floor) fit.degenerate = true;
  if (fit.degenerate) {
    // Perfect fit: beta is least squares given Gamma.
    fit.beta = design.coefficients(panel.y - fit.gamma);
    fit.sigma = (panel.y - design.fitted(fit.beta, n, t) - fit.gamma).norm() / root_nt;
    fit.converged = true;
  }
  fit.kkt = kkt_certificate(panel, fit);
  return fit;
}

/// Runs `extra_iter` more block-minimization sweeps from a previous fit.
inline FitResult resume(const PanelData& panel, const FitResult& fit, int extra_iter, SolverOptions opts = {}) {
  opts.max_iter = extra_iter;
  FitResult out = solve(panel, fit.lambda, opts, warm_start_from(fit));
  std::vector<double> trace = fit.objective_trace;
  trace.insert(trace.end(), out.objective_trace.begin() + 1, out.objective_trace.end());
  out.objective_trace = std::move(trace);
  out.iterations += fit.iterations;
  return out;
}

}  // namespace ife
