#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"

namespace qrcate {

/// Cross-validated ridge logistic regression settings.
struct ProbClassifierSpec {
  /// Ridge penalties tried by cross-validation.
  std::vector<double> penalty_grid = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  int cv_folds = 5;
  /// Predictions are clipped to [clip, 1 - clip].
  double clip = 0.01;
  int max_iter = 100;
  /// Convergence when max |gradient| / n falls below this.
  double tolerance = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (penalty_grid.empty()) throw ConfigError("classifier penalty grid is empty");
    for (double p : penalty_grid) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("classifier penalties must be finite and >= 0");
    }
    if (cv_folds < 2) throw ConfigError("classifier cv folds must be >= 2");
    if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("classifier clip must be in (0, 0.5)");
    if (max_iter < 1) throw ConfigError("classifier max_iter must be >= 1");
  }
};

/// Penalized logistic solution for one penalty value.
struct LogisticSolution {
  double intercept = 0.0;
  Vector coef;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline double log1pexp(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double z = std::exp(t);
  return z / (1.0 + z);
}

}  // namespace detail

/// Negative log-likelihood (summed over rows) of the logistic model.
inline double logistic_log_loss(const Matrix& x, const Vector& labels, double intercept,
                                const Vector& coef) {
  const Vector eta = (x * coef).array() + intercept;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) total += detail::log1pexp(eta(i)) - labels(i) * eta(i);
  return total;
}

/// Summed log-loss plus (penalty / 2) |coef|^2; the intercept is unpenalized.
inline double logistic_objective(const Matrix& x, const Vector& labels, double intercept,
                                 const Vector& coef, double penalty) {
  return logistic_log_loss(x, labels, intercept, coef) + 0.5 * penalty * coef.squaredNorm();
}

/// Gradient of the summed log-loss with respect to (intercept, coef).
inline Vector logistic_log_loss_gradient(const Matrix& x, const Vector& labels, double intercept,
                                         const Vector& coef) {
  const Vector eta = (x * coef).array() + intercept;
  Vector resid(eta.size());
  for (Index i = 0; i < eta.size(); ++i) resid(i) = detail::sigmoid(eta(i)) - labels(i);
  Vector grad(coef.size() + 1);
  grad(0) = resid.sum();
  grad.tail(coef.size()) = x.transpose() * resid;
  return grad;
}

inline Vector logistic_gradient(const Matrix& x, const Vector& labels, double intercept,
                                const Vector& coef, double penalty) {
  Vector grad = logistic_log_loss_gradient(x, labels, intercept, coef);
  grad.tail(coef.size()) += penalty * coef;
  return grad;
}

/// Newton / IRLS with step halving, optionally warm-started.
inline LogisticSolution fit_ridge_logistic(const Matrix& x, const Vector& labels, double penalty,
                                           int max_iter, double tolerance,
                                           const LogisticSolution* warm = nullptr) {
  const Index n = x.rows();
  const Index p = x.cols();
  LogisticSolution sol;
  if (warm != nullptr && warm->coef.size() == p) {
    sol.intercept = warm->intercept;
    sol.coef = warm->coef;
  } else {
    const double mean = std::clamp(labels.mean(), 1e-6, 1.0 - 1e-6);
    sol.intercept = std::log(mean / (1.0 - mean));
    sol.coef = Vector::Zero(p);
  }

  Matrix z(n, p + 1);
  z.col(0).setOnes();
  z.rightCols(p) = x;
  const double scale = std::max<double>(1.0, static_cast<double>(n));

  double objective = logistic_objective(x, labels, sol.intercept, sol.coef, penalty);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector eta = (x * sol.coef).array() + sol.intercept;
    Vector prob(n);
    Vector weight(n);
    for (Index i = 0; i < n; ++i) {
      prob(i) = detail::sigmoid(eta(i));
      weight(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-12);
    }
    Vector grad = z.transpose() * (prob - labels);
    grad.tail(p) += penalty * sol.coef;
    sol.iterations = iter;
    if (grad.lpNorm<Eigen::Infinity>() / scale < tolerance) {
      sol.converged = true;
      return sol;
    }
    Matrix hessian = z.transpose() * (z.array().colwise() * weight.array()).matrix();
    hessian.diagonal().tail(p).array() += penalty;
    hessian.diagonal().array() += 1e-12 * scale;
    const Vector step = hessian.ldlt().solve(grad);

    double t = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const double b0 = sol.intercept - t * step(0);
      const Vector b = sol.coef - t * step.tail(p);
      const double candidate = logistic_objective(x, labels, b0, b, penalty);
      if (candidate <= objective) {
        sol.intercept = b0;
        sol.coef = b;
        objective = candidate;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }
  const Vector grad = logistic_gradient(x, labels, sol.intercept, sol.coef, penalty);
  sol.converged = grad.lpNorm<Eigen::Infinity>() / scale < tolerance;
  sol.iterations = max_iter;
  return sol;
}

/// Fitted probability model with clipped predictions.
struct FittedClassifier {
  double intercept = 0.0;
  Vector coef;
  double penalty = 0.0;
  double clip = 0.01;
  bool converged = true;
  /// When set, predict_proba returns this value for every row.
  std::optional<double> constant;
  /// Mean held-out log-loss per grid penalty (empty when CV was skipped).
  std::vector<double> cv_log_loss;

  static FittedClassifier constant_probability(double p, double clip) {
    FittedClassifier out;
    out.clip = clip;
    out.constant = std::clamp(p, clip, 1.0 - clip);
    return out;
  }

  Vector predict_proba(const Matrix& x) const {
    if (constant) return Vector::Constant(x.rows(), *constant);
    const Vector eta = (x * coef).array() + intercept;
    Vector out(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      out(i) = std::clamp(detail::sigmoid(eta(i)), clip, 1.0 - clip);
    }
    return out;
  }
};

/// Ridge logistic regression with the penalty chosen by K-fold cross-validated
/// log-loss, refit on all rows. Folds are stratified by label; the grid is
/// traversed from the largest penalty down with warm starts.
///
/// Columns are centered and scaled to unit SD before solving, so the penalty
/// acts on standardized coefficients; the returned coefficients are on the
/// original scale. Constant columns are only centered.
inline FittedClassifier fit_logistic(const Matrix& x_raw, const IntVector& labels,
                                     const ProbClassifierSpec& spec) {
  spec.validate();
  const Index n = x_raw.rows();
  const Eigen::RowVectorXd center = n > 0 ? Eigen::RowVectorXd(x_raw.colwise().mean())
                                          : Eigen::RowVectorXd::Zero(x_raw.cols());
  Eigen::RowVectorXd spread(x_raw.cols());
  for (Index j = 0; j < x_raw.cols(); ++j) {
    const double sd = n > 0 ? std::sqrt((x_raw.col(j).array() - center(j)).square().mean()) : 0.0;
    spread(j) = sd > 1e-12 * std::max(1.0, std::abs(center(j))) ? sd : 1.0;
  }
  const Matrix x = (x_raw.rowwise() - center).array().rowwise() / spread.array();
  if (labels.size() != n) throw DataError("dimension", "fit_logistic: labels and x differ in rows");
  Index positives = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels(i) != 0 && labels(i) != 1) throw DataError("binary", "labels must be 0 or 1", i);
    positives += labels(i);
  }
  if (positives == 0 || positives == n) {
    throw FitError("fit_logistic: labels contain a single class");
  }
  const Vector y = labels.cast<double>();

  std::vector<std::size_t> order(spec.penalty_grid.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return spec.penalty_grid[l] > spec.penalty_grid[r];
  });

  FittedClassifier out;
  out.clip = spec.clip;
  std::size_t best = order.front();

  const Index minority = std::min(positives, n - positives);
  const int k = static_cast<int>(std::min<Index>(spec.cv_folds, minority));
  if (spec.penalty_grid.size() > 1 && k >= 2) {
    std::vector<int> strata(labels.data(), labels.data() + n);
    const FoldPlan plan = make_folds(strata, k, spec.seed);
    std::vector<double> loss(spec.penalty_grid.size(), 0.0);
    for (int f = 0; f < k; ++f) {
      const RowList train = plan.rows_not_in(f);
      const RowList test = plan.rows_in(f);
      const Matrix x_train = [&] {
        Matrix m(static_cast<Index>(train.size()), x.cols());
        for (std::size_t r = 0; r < train.size(); ++r) m.row(static_cast<Index>(r)) = x.row(train[r]);
        return m;
      }();
      const Vector y_train = Dataset::gather(y, train);
      Matrix x_test(static_cast<Index>(test.size()), x.cols());
      for (std::size_t r = 0; r < test.size(); ++r) x_test.row(static_cast<Index>(r)) = x.row(test[r]);
      const Vector y_test = Dataset::gather(y, test);

      LogisticSolution previous;
      bool have_previous = false;
      for (std::size_t g : order) {
        LogisticSolution sol = fit_ridge_logistic(x_train, y_train, spec.penalty_grid[g], spec.max_iter,
                                                  spec.tolerance, have_previous ? &previous : nullptr);
        loss[g] += logistic_log_loss(x_test, y_test, sol.intercept, sol.coef);
        previous = std::move(sol);
        have_previous = true;
      }
    }
    for (double& l : loss) l /= static_cast<double>(n);
    out.cv_log_loss = loss;
    for (std::size_t g : order) {
      if (loss[g] < loss[best]) best = g;
    }
  }

  // Warm start the refit by walking the grid down to the chosen penalty.
  LogisticSolution sol;
  bool have = false;
  for (std::size_t g : order) {
    sol = fit_ridge_logistic(x, y, spec.penalty_grid[g], spec.max_iter, spec.tolerance,
                             have ? &sol : nullptr);
    have = true;
    if (g == best) break;
  }
  out.coef = sol.coef.array() / spread.transpose().array();
  out.intercept = sol.intercept - center.dot(out.coef);
  out.penalty = spec.penalty_grid[best];
  out.converged = sol.converged;
  return out;
}

}  // namespace qrcate
