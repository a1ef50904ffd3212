#pragma once

// Penalty and threshold levels.

#include "ife/matrix_core.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace ife::penalty {

enum class Rule { paper_sim, assumption2, fixed };

inline Rule parse_rule(const std::string& name) {
  if (name == "paper-sim") return Rule::paper_sim;
  if (name == "assumption2") return Rule::assumption2;
  if (name == "fixed") return Rule::fixed;
  throw InvalidInput("unknown penalty rule '" + name + "' (expected paper-sim, assumption2 or fixed)");
}

inline std::string to_string(Rule r) {
  switch (r) {
    case Rule::paper_sim: return "paper-sim";
    case Rule::assumption2: return "assumption2";
    case Rule::fixed: return "fixed";
  }
  return "?";
}

struct PenaltyPlan {
  double rho = 0.99;
  double phi1 = 0.0;
  double phi2 = 0.0;
  double varphi = 0.0;
  double mu = 0.0;
  double psi = 0.0;
  double lambda = 0.0;
  double h = 1.0;
};

/// psi_N = (sqrt(N) + sqrt(T)) / rho + varphi, the Gaussian-noise rule.
/// rho = 1 is accepted as the limiting building block.
inline double psi_gaussian(Index n, Index t, double rho, double varphi) {
  require(n >= 1 && t >= 1, "psi_gaussian: N and T must be >= 1");
  require(rho > 0.0 && rho <= 1.0, "psi_gaussian: rho must lie in (0, 1)");
  require(varphi >= 0.0, "psi_gaussian: varphi must be >= 0");
  return (std::sqrt(static_cast<double>(n)) + std::sqrt(static_cast<double>(t))) / rho + varphi;
}

/// lambda_N = (1 - phi1/sqrt(NT))^{-1} (psi + phi2 * mu / sqrt(NT)).
inline double assumption2_rule(Index n, Index t, double psi, double phi1, double phi2, double mu) {
  const double root_nt = std::sqrt(static_cast<double>(n) * static_cast<double>(t));
  require(phi1 >= 0.0 && phi2 >= 0.0 && mu >= 0.0 && psi > 0.0,
          "assumption2_rule: psi must be > 0 and phi1, phi2, mu >= 0");
  if (phi1 >= root_nt)
    throw InvalidInput("assumption2_rule: phi1 = " + std::to_string(phi1) +
                       " must be < sqrt(NT) = " + std::to_string(root_nt));
  return (psi + phi2 * mu / root_nt) / (1.0 - phi1 / root_nt);
}

inline double simulation_default_lambda(Index n, Index t) {
  return 1.01 * (std::sqrt(static_cast<double>(n)) + std::sqrt(static_cast<double>(t)));
}

/// t = (rho + 1) * lambda * h^2 * sigma_hat.
inline double hard_threshold_level(double lambda, double rho, double h, double sigma_hat) {
  require(h > 1.0, "hard_threshold_level: h must be > 1");
  require(sigma_hat >= 0.0, "hard_threshold_level: sigma_hat must be >= 0");
  const double t = (rho + 1.0) * lambda * h * h * sigma_hat;
  if (!(t > 0.0)) throw InvalidInput("hard_threshold_level: resulting threshold is not > 0");
  return t;
}

/// The simulation preset t = 2 * lambda * sigma_hat.
inline double paper_sim_threshold(double lambda, double sigma_hat) {
  const double t = 2.0 * lambda * sigma_hat;
  if (!(t > 0.0)) throw InvalidInput("paper_sim_threshold: resulting threshold is not > 0");
  return t;
}

/// sqrt(sum_k |X_k|_op^2)
inline double mu_estimate(const std::vector<Matrix>& x) {
  require(!x.empty(), "mu_estimate: need at least one regressor");
  double acc = 0.0;
  for (const auto& xk : x) {
    const double op = operator_norm(xk);
    acc += op * op;
  }
  return std::sqrt(acc);
}

inline double default_phi(Index n, Index t) {
  return std::log(static_cast<double>(n) * static_cast<double>(t));
}

/// Checks the extra restriction on phi1 needed for the rank results:
/// (1 - phi1/sqrt(NT))^2 phi1 >= phi2 r / sqrt(NT) (psi + phi2 mu / sqrt(NT))^2.
/// It constrains sequences, so callers only warn when it fails.
inline bool pen2_condition_holds(Index n, Index t, double phi1, double phi2, double psi, double mu,
                                 double rank) {
  const double root_nt = std::sqrt(static_cast<double>(n) * static_cast<double>(t));
  const double lhs = std::pow(1.0 - phi1 / root_nt, 2) * phi1;
  const double rhs = phi2 * rank / root_nt * std::pow(psi + phi2 * mu / root_nt, 2);
  return lhs >= rhs;
}

struct PenaltyConfig {
  Rule rule = Rule::paper_sim;
  double rho = 0.99;
  double h = 1.1;
  std::optional<double> lambda;  // for Rule::fixed
  double varphi = 0.0;
  std::optional<double> phi1;
  std::optional<double> phi2;
};

/// Resolves the penalty level for an N x T panel with the given regressors.
inline PenaltyPlan make_plan(const PenaltyConfig& cfg, Index n, Index t, const std::vector<Matrix>& x) {
  PenaltyPlan plan;
  plan.rho = cfg.rho;
  plan.h = cfg.h;
  plan.varphi = cfg.varphi;
  require(cfg.rho > 0.0 && cfg.rho < 1.0, "penalty.rho must lie in (0, 1)");
  switch (cfg.rule) {
    case Rule::paper_sim:
      plan.lambda = simulation_default_lambda(n, t);
      plan.psi = plan.lambda;
      break;
    case Rule::fixed:
      require(cfg.lambda.has_value() && *cfg.lambda > 0.0, "penalty.rule=fixed needs penalty.lambda > 0");
      plan.lambda = *cfg.lambda;
      plan.psi = plan.lambda;
      break;
    case Rule::assumption2: {
      plan.phi1 = cfg.phi1.value_or(default_phi(n, t));
      plan.phi2 = cfg.phi2.value_or(default_phi(n, t));
      plan.psi = psi_gaussian(n, t, cfg.rho, cfg.varphi);
      plan.mu = x.empty() ? 0.0 : mu_estimate(x);
      plan.lambda = assumption2_rule(n, t, plan.psi, plan.phi1, plan.phi2, plan.mu);
      break;
    }
  }
  return plan;
}

}  // namespace ife::penalty
