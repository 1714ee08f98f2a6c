#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"

namespace qrcate {

/// Diagonal jitter used when an unpenalized normal-equation system is singular.
inline constexpr double kSingularJitter = 1e-10;

struct LinearFit {
  double intercept = 0.0;
  Vector coef;
  /// Set when the system was singular and the jitter fallback was applied.
  bool jittered = false;

  Vector predict(const Matrix& x) const {
    return (x * coef).array() + intercept;
  }
};

/// Minimizes sum_i w_i (y_i - b0 - b'x_i)^2 + ridge * |b|^2 with an
/// unpenalized intercept.
///
/// The intercept is profiled out by weighted centering, and the remaining
/// system is solved with LDLT on the normal equations.
inline LinearFit fit_weighted_linear(const Matrix& x, const Vector& y, const Vector& w,
                                     double ridge) {
  const Index n = x.rows();
  if (y.size() != n || w.size() != n) {
    throw DataError("dimension", "fit_weighted_linear: x, y and w must have the same rows");
  }
  if (ridge < 0.0) throw ConfigError("ridge penalty must be non-negative");
  if ((w.array() < 0.0).any() || !w.allFinite()) {
    throw DataError("weights", "weights must be finite and non-negative");
  }
  const double total = w.sum();
  if (!(total > 0.0)) throw FitError("fit_weighted_linear: weights sum to zero");

  const Eigen::RowVectorXd x_mean = (w.transpose() * x) / total;
  const double y_mean = w.dot(y) / total;
  const Matrix xc = x.rowwise() - x_mean;
  const Vector yc = y.array() - y_mean;
  const Matrix xw = xc.array().colwise() * w.array();

  Matrix gram = xw.transpose() * xc;
  const Vector rhs = xw.transpose() * yc;
  gram.diagonal().array() += ridge;

  LinearFit fit;
  Eigen::LDLT<Matrix> ldlt(gram);
  const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                        (gram.size() > 0 && (ldlt.rcond() < 1e-13 ||
                                             ldlt.vectorD().cwiseAbs().minCoeff() <=
                                                 1e-13 * ldlt.vectorD().cwiseAbs().maxCoeff()));
  if (singular) {
    gram.diagonal().array() += kSingularJitter;
    ldlt.compute(gram);
    fit.jittered = true;
  }
  fit.coef = x.cols() > 0 ? Vector(ldlt.solve(rhs)) : Vector();
  fit.intercept = y_mean - x_mean.dot(fit.coef);
  return fit;
}

/// Ordinary least squares on an explicit design (include a column of ones for
/// an intercept) with homoskedastic standard errors.
struct OlsResult {
  Vector coef;
  Vector se;
  double sigma2 = 0.0;
  Index dof = 0;
};

inline OlsResult ols(const Matrix& design, const Vector& y) {
  const Index n = design.rows();
  const Index p = design.cols();
  if (y.size() != n) throw DataError("dimension", "ols: design and response rows differ");
  if (n <= p) throw FitError("ols: need more rows than regressors");
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw FitError("ols: rank-deficient design");

  OlsResult out;
  out.coef = qr.solve(y);
  const Vector resid = y - design * out.coef;
  out.dof = n - p;
  out.sigma2 = resid.squaredNorm() / static_cast<double>(out.dof);
  const Matrix xtx_inv = (design.transpose() * design).inverse();
  out.se = (out.sigma2 * xtx_inv.diagonal().array()).sqrt();
  return out;
}

/// Residuals of y after least-squares projection onto the column space of
/// design. Rank-deficient designs are allowed (the projection is still
/// unique); the numerical rank is stored in *rank when given.
inline Vector residualize(const Matrix& design, const Vector& y, Index* rank = nullptr) {
  if (y.size() != design.rows()) throw DataError("dimension", "residualize: design and response rows differ");
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (rank != nullptr) *rank = qr.rank();
  return y - design * qr.solve(y);
}

}  // namespace qrcate
