#pragma once

// Dense matrix primitives: SVD, norms, projector calculus, singular-value
// thresholding, cone membership and within transforms.

#include "ife/core.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <utility>

namespace ife {

/// Thin SVD A = U diag(s) V^T with singular values sorted nonincreasing.
///
/// For an exactly zero matrix the factor set is empty: `u` and `v` have zero
/// columns while `singular_values` still holds min(N, T) zeros.
struct Svd {
  Vector singular_values;
  Matrix u;
  Matrix v;
  double rank_tol = 0.0;

  Index rank() const {
    Index r = 0;
    while (r < singular_values.size() && r < u.cols() && singular_values(r) > rank_tol) ++r;
    return r;
  }

  Matrix reconstruct() const {
    const Index k = u.cols();
    if (k == 0) return Matrix::Zero(u.rows(), v.rows());
    return u * singular_values.head(k).asDiagonal() * v.transpose();
  }
};

/// Standard numerical-rank cutoff: sigma_1 * max(N, T) * machine epsilon.
inline double default_rank_tol(double sigma1, Index rows, Index cols) {
  return sigma1 * static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
}

namespace detail {

inline bool bdc_svd(const Matrix& a, Vector& s, Matrix& u, Matrix& v) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) return false;
  s = svd.singularValues();
  u = svd.matrixU();
  v = svd.matrixV();
  return s.allFinite() && u.allFinite() && v.allFinite();
}

inline bool jacobi_svd(const Matrix& a, Vector& s, Matrix& u, Matrix& v) {
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) return false;
  s = svd.singularValues();
  u = svd.matrixU();
  v = svd.matrixV();
  return s.allFinite();
}

}  // namespace detail

/// Thin SVD of a finite matrix. Throws NumericalError if every backend fails.
inline Svd svd(const Matrix& a, std::optional<double> rank_tol = std::nullopt) {
  require(a.rows() >= 1 && a.cols() >= 1, "svd: matrix must have at least one row and column");
  require_finite(a, "svd input");
  const Index m = std::min(a.rows(), a.cols());
  Svd out;
  if (a.isZero(0.0)) {
    out.singular_values = Vector::Zero(m);
    out.u = Matrix(a.rows(), 0);
    out.v = Matrix(a.cols(), 0);
    out.rank_tol = rank_tol.value_or(0.0);
    return out;
  }
  if (!detail::bdc_svd(a, out.singular_values, out.u, out.v) &&
      !detail::jacobi_svd(a, out.singular_values, out.u, out.v)) {
    throw NumericalError("svd: decomposition did not converge");
  }
  out.rank_tol = rank_tol.value_or(default_rank_tol(out.singular_values(0), a.rows(), a.cols()));
  return out;
}

inline Index numerical_rank(const Matrix& a, std::optional<double> rank_tol = std::nullopt) {
  return svd(a, rank_tol).rank();
}

struct Norms {
  double frobenius = 0.0;
  double nuclear = 0.0;
  double op = 0.0;
};

inline Norms norms(const Matrix& a) {
  const Svd s = svd(a);
  return {a.norm(), s.singular_values.sum(), s.singular_values(0)};
}

inline double nuclear_norm(const Matrix& a) { return svd(a).singular_values.sum(); }
inline double operator_norm(const Matrix& a) { return svd(a).singular_values(0); }

/// Sum_k (sigma_k - tau)_+ u_k v_k^T, the proximal map of tau * nuclear norm.
inline Matrix soft_threshold(const Svd& s, double tau) {
  Index k = 0;
  while (k < s.u.cols() && s.singular_values(k) > tau) ++k;
  if (k == 0) return Matrix::Zero(s.u.rows(), s.v.rows());
  const Vector shrunk = s.singular_values.head(k).array() - tau;
  return s.u.leftCols(k) * shrunk.asDiagonal() * s.v.leftCols(k).transpose();
}

inline Matrix soft_threshold_svd(const Matrix& a, double tau) {
  require(tau >= 0.0 && std::isfinite(tau), "soft_threshold_svd: tau must be finite and >= 0");
  if (tau == 0.0) return a;
  return soft_threshold(svd(a), tau);
}

/// Keeps the SVD terms with sigma_k >= t (ties at t are kept).
inline Matrix hard_threshold(const Svd& s, double t) {
  Index k = 0;
  while (k < s.u.cols() && s.singular_values(k) >= t) ++k;
  if (k == 0) return Matrix::Zero(s.u.rows(), s.v.rows());
  return s.u.leftCols(k) * s.singular_values.head(k).asDiagonal() * s.v.leftCols(k).transpose();
}

inline Matrix hard_threshold_svd(const Matrix& a, double t) {
  require(t > 0.0 && std::isfinite(t), "hard_threshold_svd: threshold must be finite and > 0");
  return hard_threshold(svd(a), t);
}

/// Best rank-r approximation (keeps the r largest singular values).
inline Matrix rank_truncate(const Matrix& a, Index r) {
  require(r >= 0 && r <= std::min(a.rows(), a.cols()), "rank_truncate: r outside [0, min(N,T)]");
  if (r == 0) return Matrix::Zero(a.rows(), a.cols());
  const Svd s = svd(a);
  const Index k = std::min<Index>(r, s.u.cols());
  if (k == 0) return Matrix::Zero(a.rows(), a.cols());
  return s.u.leftCols(k) * s.singular_values.head(k).asDiagonal() * s.v.leftCols(k).transpose();
}

/// Orthogonal projectors onto the column space (u) and row space (v) of a
/// matrix, and their complements. Stored as orthonormal bases; the dense
/// N x N / T x T forms are materialized on request.
class ProjectorPair {
public:
  ProjectorPair() = default;
  ProjectorPair(Matrix u_basis, Matrix v_basis)
      : u_(std::move(u_basis)), v_(std::move(v_basis)) {}

  static ProjectorPair identity_complement(Index n, Index t) {
    return ProjectorPair(Matrix(n, 0), Matrix(t, 0));
  }

  Index rows() const { return u_.rows(); }
  Index cols() const { return v_.rows(); }
  Index rank_u() const { return u_.cols(); }
  Index rank_v() const { return v_.cols(); }
  const Matrix& u_basis() const { return u_; }
  const Matrix& v_basis() const { return v_; }

  Matrix pu() const { return u_ * u_.transpose(); }
  Matrix pv() const { return v_ * v_.transpose(); }
  Matrix mu() const { return Matrix::Identity(rows(), rows()) - pu(); }
  Matrix mv() const { return Matrix::Identity(cols(), cols()) - pv(); }

  /// M_u A
  Matrix annihilate_left(const Matrix& a) const {
    if (u_.cols() == 0) return a;
    return a - u_ * (u_.transpose() * a);
  }
  /// A M_v
  Matrix annihilate_right(const Matrix& a) const {
    if (v_.cols() == 0) return a;
    return a - (a * v_) * v_.transpose();
  }
  /// M_u A M_v
  Matrix perp(const Matrix& a) const { return annihilate_right(annihilate_left(a)); }
  /// A - M_u A M_v
  Matrix in_span(const Matrix& a) const { return a - perp(a); }

private:
  Matrix u_;
  Matrix v_;
};

inline ProjectorPair projectors_of(const Svd& s) {
  const Index r = s.rank();
  return ProjectorPair(s.u.leftCols(r), s.v.leftCols(r));
}

inline ProjectorPair projectors_of(const Matrix& a, std::optional<double> rank_tol = std::nullopt) {
  return projectors_of(svd(a, rank_tol));
}

struct ProjectionSplit {
  Matrix in_span;  // P_A(Delta)
  Matrix perp;     // M_u(A) Delta M_v(A)
};

inline ProjectionSplit p_cal(const ProjectorPair& proj, const Matrix& delta) {
  require(delta.rows() == proj.rows() && delta.cols() == proj.cols(), "p_cal: shape mismatch");
  Matrix perp = proj.perp(delta);
  Matrix in = delta - perp;
  return {std::move(in), std::move(perp)};
}

inline ProjectionSplit p_cal(const Matrix& a, const Matrix& delta) {
  require_same_shape(a, delta, "p_cal");
  return p_cal(projectors_of(a), delta);
}

struct ConeMembership {
  bool member = false;
  double gap = 0.0;  // c * |P_A(Delta)|_* - |P_A^perp(Delta)|_*
};

inline ConeMembership cone_membership(const Matrix& delta, const Matrix& a, double c) {
  require(c > 0.0, "cone_membership: c must be > 0");
  const ProjectionSplit split = p_cal(a, delta);
  const double gap = c * nuclear_norm(split.in_span) - nuclear_norm(split.perp);
  return {gap >= 0.0, gap};
}

/// Double demeaning M_u A M_v with M_u = I - J/N and M_v = I - J/T.
inline Matrix within_transform(const Matrix& a) {
  const Vector row_means = a.rowwise().mean();
  const Eigen::RowVectorXd col_means = a.colwise().mean();
  const double grand = a.mean();
  Matrix out = a;
  out.colwise() -= row_means;
  out.rowwise() -= col_means;
  out.array() += grand;
  return out;
}

}  // namespace ife
