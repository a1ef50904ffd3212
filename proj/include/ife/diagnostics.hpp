#pragma once

// Computable theory-side quantities: a compatibility-constant lower bound,
// the constants of the error bounds, and checkers for the oracle
// inequalities when the truth is known.

#include "ife/matrix_core.hpp"
#include "ife/panel.hpp"
#include "ife/sqrt_estimator.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace ife {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Regressor-dependent ingredients of the compatibility lower bound; they do
/// not depend on the cone constant c.
struct CompatibilityInputs {
  double a = 0.0;
  Vector b;
  Vector b_perp;
  Index p_n = 0;
  Index rank = 0;
};

struct CompatibilityBound {
  double a = 0.0;
  Vector b;
  Vector b_perp;
  Index p_n = 0;
  Index rank = 0;
  double c = 0.0;
  double q = 0.0;
  int branch = 0;  // which of the three Q pieces fired (1, 2 or 3)
  double kappa_lb = 0.0;
};

inline CompatibilityInputs compatibility_inputs(const std::vector<Matrix>& x, const Matrix& gamma_l) {
  CompatibilityInputs in;
  const Svd s = svd(gamma_l);
  in.rank = s.rank();
  in.p_n = std::min(gamma_l.rows(), gamma_l.cols()) - in.rank;
  const Index k = static_cast<Index>(x.size());
  in.b = Vector::Zero(k);
  in.b_perp = Vector::Zero(k);
  if (k == 0) return in;
  const double nt = static_cast<double>(gamma_l.rows()) * static_cast<double>(gamma_l.cols());
  const Matrix g = gram_matrix(x) / nt;
  const double g_op = Eigen::SelfAdjointEigenSolver<Matrix>(g, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  double frob2 = 0.0;
  for (const auto& xk : x) frob2 += xk.squaredNorm();
  in.a = g_op > 0.0 ? std::sqrt(frob2) / nt / g_op : 0.0;
  const ProjectorPair proj(s.u.leftCols(in.rank), s.v.leftCols(in.rank));
  for (Index i = 0; i < k; ++i) {
    const Matrix& xi = x[static_cast<std::size_t>(i)];
    const Matrix perp = proj.perp(xi);
    in.b(i) = in.a * std::min(operator_norm(xi - perp), operator_norm(xi));
    in.b_perp(i) = in.a * operator_norm(perp);
  }
  return in;
}

/// Three-piece Q(b, b_perp) = -min_{0<=u<=c} (u^2/p - |b + u b_perp|^2) and the
/// implied kappa lower bound sqrt((1 - 2 r Q)_+).
inline CompatibilityBound compatibility_from_inputs(const CompatibilityInputs& in, double c) {
  require(c > 0.0, "compatibility_lower_bound: c must be > 0");
  CompatibilityBound out;
  out.a = in.a;
  out.b = in.b;
  out.b_perp = in.b_perp;
  out.p_n = in.p_n;
  out.rank = in.rank;
  out.c = c;
  const double p = static_cast<double>(in.p_n);
  const double bp2 = in.b_perp.squaredNorm();
  const double cross = in.b_perp.dot(in.b);
  if (p * bp2 >= 1.0) {
    // The quadratic in u is concave here, so its minimum on [0, c] sits at u = c
    // (the value at c never exceeds the value at 0).
    out.branch = 1;
    out.q = (in.b + c * in.b_perp).squaredNorm() - c * c / p;
  } else if (1.0 - p * cross / c <= p * bp2) {
    out.branch = 2;
    out.q = (in.b + c * in.b_perp).squaredNorm() - c * c / p;
  } else {
    out.branch = 3;
    const double denom = 1.0 - p * bp2;
    const double u = p * cross / denom;
    out.q = (in.b + u * in.b_perp).squaredNorm() - p * cross * cross / (denom * denom);
  }
  out.kappa_lb = std::sqrt(std::max(0.0, 1.0 - 2.0 * static_cast<double>(in.rank) * out.q));
  return out;
}

inline CompatibilityBound compatibility_lower_bound(const std::vector<Matrix>& x, const Matrix& gamma_l, double c) {
  return compatibility_from_inputs(compatibility_inputs(x, gamma_l), c);
}

/// Smallest sampled value of sqrt(2 rank A) |M_X(D)|_2 / |P_A(D)|_* over random
/// members D of the cone C_{A,c}. Sampling can only overestimate the infimum.
inline double sampled_cone_minimum(const std::vector<Matrix>& x, const Matrix& a, double c, int samples,
                                   std::uint64_t seed) {
  require(c > 0.0 && samples >= 1, "sampled_cone_minimum: need c > 0 and samples >= 1");
  const ProjectorPair proj = projectors_of(a);
  const double r = static_cast<double>(proj.rank_u());
  require(r > 0.0, "sampled_cone_minimum: A must be nonzero");
  const Design design(x);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index n = a.rows();
  const Index t = a.cols();
  double best = kInf;
  for (int s = 0; s < samples; ++s) {
    Matrix g(n, t);
    for (Index j = 0; j < t; ++j)
      for (Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    // Half the probes lean on the regressors, where M_X shrinks the most.
    if (!x.empty() && (s % 2 == 1)) {
      Matrix dir = Matrix::Zero(n, t);
      for (const auto& xk : x) dir += normal(rng) * xk / std::max(xk.norm(), 1e-300);
      g = dir * g.norm() + 0.1 * unif(rng) * g;
    }
    const ProjectionSplit split = p_cal(proj, g);
    const double in_nuc = nuclear_norm(split.in_span);
    if (!(in_nuc > 0.0)) continue;
    const double perp_nuc = nuclear_norm(split.perp);
    double scale = 1.0;
    if (perp_nuc > 0.0) scale = std::min(1.0, c * in_nuc / perp_nuc) * (s % 4 < 2 ? unif(rng) : 1.0);
    const Matrix delta = split.in_span + scale * split.perp;
    const double ratio = std::sqrt(2.0 * r) * design.annihilate(delta).norm() / in_nuc;
    best = std::min(best, ratio);
  }
  return best;
}

struct ThetaBound {
  double rho = 0.0;
  double rho_tilde = 0.0;
  double c = 0.0;
  double d = 0.0;
  double e = 0.0;
  double theta_inf = 0.0;
  double theta = 0.0;
  double theta_star = 0.0;
  double theta_sigma = 0.0;
  double rho_tilde_star = 0.0;   // grid minimizer for theta_star
  double rho_tilde_sigma = 0.0;  // grid minimizer for theta_sigma
  double kappa_used = 0.0;
  Index rank_used = 0;
  double nuc_gamma_d = 0.0;
};

struct ThetaInputs {
  double rho = 0.99;
  Index rank = 0;
  double nuc_gamma_d = 0.0;
  double lambda = 0.0;
  double mxe_norm = 0.0;  // |M_X(E)|_2, or sqrt(NT) sigma-hat in feasible mode
  Index n = 1;
  Index t = 1;
};

/// c, d, e, theta_inf and the feasible theta upper bound at a single rho-tilde.
inline ThetaBound theta_at(const ThetaInputs& in, double rho_tilde, double kappa) {
  require(in.rho > 0.0 && in.rho < 1.0, "theta_bounds: rho must lie in (0, 1)");
  require(rho_tilde > 0.0, "theta_bounds: rho_tilde must be > 0");
  require(kappa >= 0.0, "theta_bounds: kappa must be >= 0");
  ThetaBound tb;
  tb.rho = in.rho;
  tb.rho_tilde = rho_tilde;
  tb.kappa_used = kappa;
  tb.rank_used = in.rank;
  tb.nuc_gamma_d = in.nuc_gamma_d;
  tb.c = (1.0 + in.rho + rho_tilde) / (1.0 - in.rho);
  tb.d = std::max(1.0 + rho_tilde, in.rho * (1.0 + tb.c));
  tb.e = tb.d + in.rho * (1.0 + tb.c);
  const double root_nt = std::sqrt(static_cast<double>(in.n) * static_cast<double>(in.t));
  const double r = static_cast<double>(in.rank);
  double first = 0.0;
  if (in.rank == 0) {
    tb.theta_inf = 2.0 * tb.e;
  } else if (!(kappa > 0.0)) {
    tb.theta_inf = kInf;
    first = kInf;
  } else {
    const double q = tb.d * std::sqrt(2.0 * r) * in.lambda / (root_nt * kappa);
    const double guard = 1.0 - q * q;
    tb.theta_inf = guard > 0.0 ? 2.0 * tb.e / guard : kInf;
    first = std::isinf(tb.theta_inf) ? kInf
                                     : tb.theta_inf * in.lambda * r * in.mxe_norm / (root_nt * kappa * kappa);
  }
  tb.theta = std::max(first, in.nuc_gamma_d / rho_tilde);
  tb.theta_star = (1.0 + tb.c) * tb.theta;
  tb.theta_sigma = tb.d * tb.theta;
  return tb;
}

inline std::vector<double> rho_tilde_grid(int points = 61, double lo = 1e-3, double hi = 1e3) {
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    g[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
  return g;
}

/// theta at `rho_tilde` plus theta_star and theta_sigma minimized over the
/// log grid of rho-tilde. `kappa_of_c` gives the compatibility constant (or a
/// lower bound on it) for the cone constant c(rho, rho-tilde).
inline ThetaBound theta_bounds(const ThetaInputs& in, double rho_tilde, const std::function<double(double)>& kappa_of_c) {
  const double c0 = (1.0 + in.rho + rho_tilde) / (1.0 - in.rho);
  ThetaBound out = theta_at(in, rho_tilde, kappa_of_c(c0));
  out.theta_star = kInf;
  out.theta_sigma = kInf;
  for (double rt : rho_tilde_grid()) {
    const double c = (1.0 + in.rho + rt) / (1.0 - in.rho);
    const ThetaBound tb = theta_at(in, rt, kappa_of_c(c));
    if (tb.theta_star < out.theta_star) {
      out.theta_star = tb.theta_star;
      out.rho_tilde_star = rt;
    }
    if (tb.theta_sigma < out.theta_sigma) {
      out.theta_sigma = tb.theta_sigma;
      out.rho_tilde_sigma = rt;
    }
  }
  return out;
}

inline ThetaBound theta_bounds(const ThetaInputs& in, double rho_tilde, double kappa) {
  return theta_bounds(in, rho_tilde, [kappa](double) { return kappa; });
}

/// Version driven by the regressors and the true low-rank part.
inline ThetaBound theta_bounds(double rho, double rho_tilde, const Matrix& gamma_l, const Matrix& gamma_d,
                               const std::vector<Matrix>& x, double lambda, double mxe_norm) {
  const CompatibilityInputs ci = compatibility_inputs(x, gamma_l);
  ThetaInputs in;
  in.rho = rho;
  in.rank = ci.rank;
  in.nuc_gamma_d = nuclear_norm(gamma_d);
  in.lambda = lambda;
  in.mxe_norm = mxe_norm;
  in.n = gamma_l.rows();
  in.t = gamma_l.cols();
  return theta_bounds(in, rho_tilde, [&ci](double c) { return compatibility_from_inputs(ci, c).kappa_lb; });
}

struct Truth {
  Matrix gamma;    // Gamma = Gamma_l + Gamma_d
  Matrix gamma_l;
  Matrix gamma_d;
  Matrix e;
};

struct InequalityCheck {
  bool applicable = false;  // premise of the statement held
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack() const { return rhs - lhs; }
};

struct OracleReport {
  bool event_holds = false;
  double mxe_norm = 0.0;
  double mxe_op = 0.0;
  ThetaBound theta;
  InequalityCheck nuclear_error;     // |Gamma-hat - Gamma|_* <= 2 theta_star
  InequalityCheck sigma_error;       // |sigma-hat - |M_X E|_2/sqrt(NT)| <= 2 lambda theta_sigma / NT
  InequalityCheck prediction_l;      // prediction-loss bound at candidate Gamma_l
  InequalityCheck prediction_zero;   // same at candidate 0
  InequalityCheck rank_bound;        // rank(Gamma-hat) inequality
  InequalityCheck rank_bound_outer;  // its weaker right-hand side
  double kappa_c_rho = 0.0;
};

/// Evaluates the error bounds of a first-stage fit against known truth.
inline OracleReport check_oracle_inequalities(const PanelData& panel, const FitResult& fit, const Truth& truth,
                                              double rho, double rho_tilde = 1.0) {
  require(rho > 0.0 && rho < 1.0, "check_oracle_inequalities: rho must lie in (0, 1)");
  require_same_shape(panel.y, truth.gamma, "check_oracle_inequalities: Gamma");
  require_same_shape(panel.y, truth.gamma_l, "check_oracle_inequalities: Gamma_l");
  require_same_shape(panel.y, truth.gamma_d, "check_oracle_inequalities: Gamma_d");
  require_same_shape(panel.y, truth.e, "check_oracle_inequalities: E");
  const double nt = panel.nt();
  const double root_nt = std::sqrt(nt);
  const double lambda = fit.lambda;
  const Design design(panel.x);
  OracleReport rep;
  const Matrix mxe = design.annihilate(truth.e);
  rep.mxe_norm = mxe.norm();
  rep.mxe_op = operator_norm(mxe);
  rep.event_holds = rho * lambda * rep.mxe_norm / root_nt >= rep.mxe_op;

  rep.theta = theta_bounds(rho, rho_tilde, truth.gamma_l, truth.gamma_d, panel.x, lambda, rep.mxe_norm);

  rep.nuclear_error.applicable = rep.event_holds;
  rep.nuclear_error.lhs = nuclear_norm(fit.gamma - truth.gamma);
  rep.nuclear_error.rhs = 2.0 * rep.theta.theta_star;
  rep.nuclear_error.holds = rep.nuclear_error.lhs <= rep.nuclear_error.rhs;

  rep.sigma_error.applicable = rep.event_holds;
  rep.sigma_error.lhs = std::abs(fit.sigma - rep.mxe_norm / root_nt);
  rep.sigma_error.rhs = 2.0 * lambda * rep.theta.theta_sigma / nt;
  rep.sigma_error.holds = rep.sigma_error.lhs <= rep.sigma_error.rhs;

  // Prediction-loss bound; the noise scale is |M_X E|_2 / sqrt(NT).
  const double sigma_e = rep.mxe_norm / root_nt;
  const double smin = std::min(fit.sigma, sigma_e);
  const double c_rho = (1.0 + rho) / (1.0 - rho);
  const CompatibilityInputs ci = compatibility_inputs(panel.x, truth.gamma_l);
  rep.kappa_c_rho = compatibility_from_inputs(ci, c_rho).kappa_lb;
  const double pred_lhs = design.annihilate(truth.gamma - fit.gamma).squaredNorm() / nt;
  const bool prem5 = rho * lambda * smin >= rep.mxe_op;
  auto candidate = [&](const Matrix& g_tilde, Index rank, double kappa) {
    InequalityCheck chk;
    chk.applicable = prem5;
    chk.lhs = pred_lhs;
    double pen = 0.0;
    if (rank > 0) {
      const double f = lambda * (1.0 + rho) * smin;
      pen = kappa > 0.0 ? 2.0 * f * f / nt * static_cast<double>(rank) / (kappa * kappa) : kInf;
    }
    chk.rhs = design.annihilate(truth.gamma - g_tilde).squaredNorm() / nt + pen;
    chk.holds = chk.lhs <= chk.rhs * (1.0 + 1e-10);
    return chk;
  };
  rep.prediction_l = candidate(truth.gamma_l, ci.rank, rep.kappa_c_rho);
  rep.prediction_zero = candidate(Matrix::Zero(panel.n(), panel.t()), 0, 1.0);

  // Rank inequality for Gamma-hat.
  const Svd sg = svd(fit.gamma);
  const Index rank_hat = sg.rank();
  const ProjectorPair pg(sg.u.leftCols(rank_hat), sg.v.leftCols(rank_hat));
  const Matrix mdiff = design.annihilate(truth.gamma_l - fit.gamma);
  const double lead = std::max(0.0, lambda * (1.0 - rho) * fit.sigma - operator_norm(truth.gamma_d));
  const double lhs6 = lead * lead * static_cast<double>(rank_hat);
  const Matrix inner_part = mdiff - pg.annihilate_left(mdiff);  // P_u mdiff
  const Matrix both = inner_part - pg.annihilate_right(inner_part);  // P_u mdiff P_v
  const bool prem6 = rho * lambda * fit.sigma >= rep.mxe_op;
  rep.rank_bound.applicable = prem6;
  rep.rank_bound.lhs = lhs6;
  rep.rank_bound.rhs = both.squaredNorm();
  rep.rank_bound.holds = lhs6 <= rep.rank_bound.rhs * (1.0 + 1e-9) + 1e-12;
  rep.rank_bound_outer.applicable = prem6;
  rep.rank_bound_outer.lhs = rep.rank_bound.rhs;
  rep.rank_bound_outer.rhs = mdiff.squaredNorm();
  rep.rank_bound_outer.holds = rep.rank_bound_outer.lhs <= rep.rank_bound_outer.rhs * (1.0 + 1e-12) + 1e-12;
  return rep;
}

/// rank(Gamma-hat) <= 2 ((1 + rho) / ((1 - rho) kappa))^2 rank(Gamma_l); +inf when kappa = 0.
inline double rank_bound_from_kappa(double rho, double kappa, Index rank_l) {
  if (!(kappa > 0.0)) return kInf;
  const double f = (1.0 + rho) / ((1.0 - rho) * kappa);
  return 2.0 * f * f * static_cast<double>(rank_l);
}

}  // namespace ife
