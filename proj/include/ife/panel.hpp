#pragma once

#include "ife/core.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ife {

/// Outcome matrix Y and K regressor matrices X_k, all N x T.
struct PanelData {
  Matrix y;
  std::vector<Matrix> x;
  std::vector<std::string> transform_log;

  Index n() const { return y.rows(); }
  Index t() const { return y.cols(); }
  Index k() const { return static_cast<Index>(x.size()); }
  double nt() const { return static_cast<double>(y.rows()) * static_cast<double>(y.cols()); }

  void validate() const {
    require(y.rows() >= 1 && y.cols() >= 1, "panel: Y must be at least 1x1");
    require_finite(y, "Y");
    for (std::size_t k = 0; k < x.size(); ++k) {
      require_same_shape(y, x[k], ("panel: X_" + std::to_string(k + 1)).c_str());
      require_finite(x[k], ("X_" + std::to_string(k + 1)).c_str());
    }
  }
};

/// sum_k beta_k X_k
inline Matrix combine(const std::vector<Matrix>& x, const Vector& beta, Index rows, Index cols) {
  Matrix out = Matrix::Zero(rows, cols);
  for (std::size_t k = 0; k < x.size(); ++k) out += beta(static_cast<Index>(k)) * x[k];
  return out;
}

/// K x K Gram matrix with entries <X_j, X_k>.
inline Matrix gram_matrix(const std::vector<Matrix>& x) {
  const Index k = static_cast<Index>(x.size());
  Matrix g(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = i; j < k; ++j) g(i, j) = g(j, i) = inner(x[i], x[j]);
  return g;
}

/// Ratio of extreme eigenvalues of a symmetric PSD matrix (+inf if singular).
inline double condition_number(const Matrix& g) {
  if (g.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Least-squares machinery for the regressors of a panel: projections onto
/// span{X_k} (P_X) and its orthogonal complement (M_X).
class Design {
public:
  explicit Design(const std::vector<Matrix>& x, double condition_cap = 1e12)
      : x_(&x), gram_(gram_matrix(x)), cond_(condition_number(gram_)) {
    if (!x.empty()) {
      if (!(cond_ <= condition_cap)) {
        std::ostringstream msg;
        msg << "regressor Gram matrix X^T X is singular or ill-conditioned (condition number " << cond_
            << " exceeds cap " << condition_cap << ")";
        throw NumericalError(msg.str());
      }
      llt_.compute(gram_);
    }
  }

  Index k() const { return static_cast<Index>(x_->size()); }
  const Matrix& gram() const { return gram_; }
  double condition() const { return cond_; }

  /// (X^T X)^{-1} X^T vec(r)
  Vector coefficients(const Matrix& r) const {
    const Index k = this->k();
    if (k == 0) return Vector(0);
    Vector rhs(k);
    for (Index i = 0; i < k; ++i) rhs(i) = inner((*x_)[i], r);
    return llt_.solve(rhs);
  }

  Matrix fitted(const Vector& beta, Index rows, Index cols) const { return combine(*x_, beta, rows, cols); }

  /// M_X(r) = r - P_X(r)
  Matrix annihilate(const Matrix& r) const {
    if (k() == 0) return r;
    return r - fitted(coefficients(r), r.rows(), r.cols());
  }

private:
  const std::vector<Matrix>* x_;
  Matrix gram_;
  double cond_;
  Eigen::LLT<Matrix> llt_;
};

/// Plain least squares of Y on the regressors, ignoring Gamma.
inline Vector least_squares(const PanelData& panel, double condition_cap = 1e12) {
  return Design(panel.x, condition_cap).coefficients(panel.y);
}

}  // namespace ife
