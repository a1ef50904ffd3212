#pragma once

// Second-stage estimators of beta: least squares on doubly annihilated data,
// and the rank-constrained alternating least squares iteration.

#include "ife/matrix_core.hpp"
#include "ife/panel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ife {

/// Inverse of the standard normal CDF: Acklam's rational approximation
/// followed by one Halley step against erfc.
inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

enum class TwoStageMethod { annihilated, bai };

inline TwoStageMethod parse_two_stage_method(const std::string& name) {
  if (name == "annihilated") return TwoStageMethod::annihilated;
  if (name == "bai") return TwoStageMethod::bai;
  throw InvalidInput("unknown two-stage method '" + name + "' (expected annihilated or bai)");
}

inline std::string to_string(TwoStageMethod m) { return m == TwoStageMethod::annihilated ? "annihilated" : "bai"; }

struct TwoStageFit {
  Vector beta;
  TwoStageMethod method = TwoStageMethod::annihilated;
  Matrix covariance;  // of sqrt(NT) (beta-tilde - beta)
  Vector std_errors;
  double ci_level = 0.95;
  Matrix ci;  // K x 2, columns (low, high)
  // annihilated
  Matrix sigma_perp_hat;
  double sigma_hat = 0.0;
  // bai
  double sigma_b = 0.0;
  Matrix sigma_b_matrix;
  Matrix literal_covariance;  // sigma_B * Sigma_B, kept for comparison only
  Matrix gamma;
  std::vector<double> rss_trace;
  Index r_hat = 0;
  int iterations = 0;
  bool converged = true;
};

/// beta_k +- z_{(1+level)/2} sqrt(cov_kk / NT), as a K x 2 matrix.
inline Matrix confidence_interval(const Vector& beta, const Matrix& covariance, Index n, Index t, double level) {
  require(level >= 0.0 && level < 1.0, "confidence_interval: level must lie in [0, 1)");
  require(covariance.rows() == beta.size() && covariance.cols() == beta.size(),
          "confidence_interval: covariance must be K x K");
  const Index k = beta.size();
  if (k > 0) {
    require(covariance.allFinite(), "confidence_interval: covariance is not finite");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale,
            "confidence_interval: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(covariance, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw NumericalError("confidence_interval: covariance is not positive semidefinite");
  }
  const double z = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
  const double nt = static_cast<double>(n) * static_cast<double>(t);
  Matrix ci(k, 2);
  for (Index i = 0; i < k; ++i) {
    const double half = z * std::sqrt(std::max(covariance(i, i), 0.0) / nt);
    ci(i, 0) = beta(i) - half;
    ci(i, 1) = beta(i) + half;
  }
  return ci;
}

inline void finish_inference(TwoStageFit& fit, Index n, Index t, double level) {
  const double nt = static_cast<double>(n) * static_cast<double>(t);
  fit.ci_level = level;
  fit.std_errors = (fit.covariance.diagonal().cwiseMax(0.0) / nt).cwiseSqrt();
  fit.ci = confidence_interval(fit.beta, fit.covariance, n, t, level);
}

inline Matrix symmetric_inverse(const Matrix& g, const char* what) {
  const double cond = condition_number(g);
  if (!(cond <= 1e12))
    throw NumericalError(std::string(what) + " is singular or ill-conditioned (condition number " +
                         std::to_string(cond) + ")");
  Matrix inv = g.llt().solve(Matrix::Identity(g.rows(), g.cols()));
  return 0.5 * (inv + inv.transpose());
}

/// Least squares of M_u Y M_v on M_u X_k M_v with covariance sigma^2 Sigma_perp^{-1},
/// Sigma_perp = P_perp(X)^T P_perp(X) / NT. When sigma_hat is not given it is
/// the residual scale with (N - r_u)(T - r_v) - K degrees of freedom.
inline TwoStageFit annihilated_ls(const PanelData& panel, const ProjectorPair& proj,
                                  std::optional<double> sigma_hat = std::nullopt, double level = 0.95) {
  panel.validate();
  require(panel.k() >= 1, "annihilated_ls: need at least one regressor");
  require(proj.rows() == panel.n() && proj.cols() == panel.t(), "annihilated_ls: projector shape mismatch");
  const double nt = panel.nt();
  const Matrix y = proj.perp(panel.y);
  std::vector<Matrix> x;
  x.reserve(panel.x.size());
  for (const auto& xk : panel.x) x.push_back(proj.perp(xk));
  const Design design(x);

  TwoStageFit fit;
  fit.method = TwoStageMethod::annihilated;
  fit.beta = design.coefficients(y);
  fit.sigma_perp_hat = design.gram() / nt;
  if (sigma_hat) {
    require(*sigma_hat >= 0.0, "annihilated_ls: sigma_hat must be >= 0");
    fit.sigma_hat = *sigma_hat;
  } else {
    const double df = static_cast<double>(panel.n() - proj.rank_u()) * static_cast<double>(panel.t() - proj.rank_v()) -
                      static_cast<double>(panel.k());
    require(df > 0.0, "annihilated_ls: no residual degrees of freedom");
    fit.sigma_hat = (y - design.fitted(fit.beta, panel.n(), panel.t())).norm() / std::sqrt(df);
  }
  fit.r_hat = std::max(proj.rank_u(), proj.rank_v());
  fit.covariance = fit.sigma_hat * fit.sigma_hat * symmetric_inverse(fit.sigma_perp_hat, "Sigma_perp-hat");
  finish_inference(fit, panel.n(), panel.t(), level);
  return fit;
}

/// Same with explicit dense annihilators M_u (N x N) and M_v (T x T).
inline TwoStageFit annihilated_ls(const PanelData& panel, const Matrix& m_u, const Matrix& m_v,
                                  std::optional<double> sigma_hat = std::nullopt, double level = 0.95) {
  require(m_u.rows() == panel.n() && m_u.cols() == panel.n(), "annihilated_ls: M_u must be N x N");
  require(m_v.rows() == panel.t() && m_v.cols() == panel.t(), "annihilated_ls: M_v must be T x T");
  auto check = [](const Matrix& m, const char* name) {
    const double tol = 1e-8 * std::max<double>(1.0, static_cast<double>(m.rows()));
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol || (m * m - m).cwiseAbs().maxCoeff() > tol)
      throw InvalidInput(std::string("annihilated_ls: ") + name + " is not symmetric idempotent");
  };
  check(m_u, "M_u");
  check(m_v, "M_v");
  // Orthonormal bases of the complements P = I - M.
  auto basis = [](const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix::Identity(m.rows(), m.cols()) - m);
    Index r = 0;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) r += es.eigenvalues()(i) > 0.5 ? 1 : 0;
    return Matrix(es.eigenvectors().rightCols(r));
  };
  return annihilated_ls(panel, ProjectorPair(basis(m_u), basis(m_v)), sigma_hat, level);
}

struct BaiCovariance {
  double sigma_b = 0.0;
  Matrix sigma_b_matrix;
};

/// sigma_B = |Y - X beta - Gamma|_2 / sqrt((N-r)(T-r) - K) and
/// (Sigma_B)_kl = <M_u(Gamma) X_k M_v(Gamma), X_l> / NT.
inline BaiCovariance bai_covariance(const PanelData& panel, const Vector& beta, const Matrix& gamma, Index r_hat) {
  panel.validate();
  require_same_shape(panel.y, gamma, "bai_covariance");
  require(beta.size() == panel.k(), "bai_covariance: beta has wrong length");
  const double df = static_cast<double>(panel.n() - r_hat) * static_cast<double>(panel.t() - r_hat) -
                    static_cast<double>(panel.k());
  require(r_hat >= 0 && df > 0.0, "bai_covariance: (N - r)(T - r) must exceed K");
  BaiCovariance out;
  const Matrix resid = panel.y - combine(panel.x, beta, panel.n(), panel.t()) - gamma;
  out.sigma_b = resid.norm() / std::sqrt(df);
  const Svd s = svd(gamma);
  const Index r = std::min(r_hat, s.rank());
  const ProjectorPair proj(s.u.leftCols(r), s.v.leftCols(r));
  const Index k = panel.k();
  out.sigma_b_matrix.resize(k, k);
  std::vector<Matrix> px;
  for (const auto& xk : panel.x) px.push_back(proj.perp(xk));
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) out.sigma_b_matrix(i, j) = inner(px[i], panel.x[j]) / panel.nt();
  out.sigma_b_matrix = 0.5 * (out.sigma_b_matrix + out.sigma_b_matrix.transpose());
  return out;
}

struct BaiOptions {
  int max_iter = 100;
  double tol = 1e-10;  // stop when max |beta change| falls below
  double level = 0.95;
};

/// Alternates OLS given Gamma and the best rank-r approximation of Y - X beta,
/// starting from beta0. Non-convex: returns the last iterate.
inline TwoStageFit bai_iterate(const PanelData& panel, Index r, const Vector& beta0, const BaiOptions& opts = {}) {
  panel.validate();
  require(panel.k() >= 1, "bai_iterate: need at least one regressor");
  require(r >= 0 && r <= std::min(panel.n(), panel.t()), "bai_iterate: r must lie in [0, min(N,T)]");
  require(beta0.size() == panel.k(), "bai_iterate: beta0 has wrong length");
  require(opts.max_iter >= 1, "bai_iterate: max_iter must be >= 1");
  const Index n = panel.n();
  const Index t = panel.t();
  const Design design(panel.x);

  TwoStageFit fit;
  fit.method = TwoStageMethod::bai;
  fit.r_hat = r;
  fit.converged = false;
  Vector beta = beta0;
  Matrix gamma = rank_truncate(panel.y - design.fitted(beta, n, t), r);
  for (int it = 0; it < opts.max_iter; ++it) {
    const Vector next = design.coefficients(panel.y - gamma);
    const Matrix z = panel.y - design.fitted(next, n, t);
    gamma = rank_truncate(z, r);
    fit.rss_trace.push_back((z - gamma).squaredNorm());
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    fit.iterations = it + 1;
    if (change < opts.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.beta = beta;
  fit.gamma = gamma;
  const BaiCovariance bc = bai_covariance(panel, beta, gamma, r);
  fit.sigma_b = bc.sigma_b;
  fit.sigma_b_matrix = bc.sigma_b_matrix;
  fit.literal_covariance = bc.sigma_b * bc.sigma_b_matrix;
  fit.covariance = bc.sigma_b * bc.sigma_b * symmetric_inverse(bc.sigma_b_matrix, "Sigma_B-hat");
  finish_inference(fit, n, t, opts.level);
  return fit;
}

}  // namespace ife
