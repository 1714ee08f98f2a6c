#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <boost/math/distributions/students_t.hpp>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/learners.hpp"
#include "qrcate/pseudo.hpp"
#include "qrcate/regressors/linear.hpp"

namespace qrcate {

/// Two-sided 97.5% standard normal quantile, so that CI exclusion of zero and
/// p < 0.05 agree.
inline constexpr double kZ975 = 1.959963984540054;

struct TestResult {
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
  bool rejected = false;
  std::string method;
  /// Test statistic (z or t) and its degrees of freedom (0 for normal tests).
  double statistic = 0.0;
  double dof = 0.0;
};

/// Wald test against the normal reference at level 0.05.
inline TestResult normal_test(double estimate, double se, std::string method) {
  TestResult out;
  out.estimate = estimate;
  out.se = se;
  out.method = std::move(method);
  out.ci_lo = estimate - kZ975 * se;
  out.ci_hi = estimate + kZ975 * se;
  if (se > 0.0) {
    out.statistic = estimate / se;
    out.p_value = std::erfc(std::abs(out.statistic) / std::sqrt(2.0));
  } else {
    out.statistic = estimate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), estimate);
    out.p_value = estimate == 0.0 ? 1.0 : 0.0;
  }
  out.rejected = out.p_value < 0.05;
  return out;
}

/// OLS of y on (1, a, z, a z) over trial rows, or every row when pooled;
/// tests the interaction coefficient.
inline TestResult interaction_test_ols(const Dataset& data, Index z_index, bool pooled) {
  if (z_index < 0 || z_index >= data.d()) throw ConfigError("interaction test: z index out of range");
  const RowList rows = pooled ? data.all_rows() : data.trial_rows();
  detail::require_arms(data, rows, "interaction test");
  const auto n = static_cast<Index>(rows.size());
  Matrix design(n, 4);
  Vector y(n);
  for (Index r = 0; r < n; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    const double a = data.a(i);
    const double z = data.x(i, z_index);
    design.row(r) << 1.0, a, z, a * z;
    y(r) = data.y(i);
  }
  const OlsResult fit = ols(design, y);
  return normal_test(fit.coef(3), fit.se(3), pooled ? "pooled-cov-adj" : "cov-adj");
}

/// Mean of two per-fold estimates with se = sqrt((se0^2 + se1^2) / 4).
inline TestResult average_two_folds(double alpha0, double se0, double alpha1, double se1, std::string method) {
  return normal_test(0.5 * (alpha0 + alpha1), std::sqrt(0.25 * (se0 * se0 + se1 * se1)), std::move(method));
}

/// Two-fold pseudo-outcome test: eta from one S-stratified fold (linear
/// nuisance regressors), psi on the other fold's trial rows regressed on
/// (1, z); the slope estimates are averaged with se = sqrt((se1^2 + se2^2) / 4).
inline TestResult interaction_test_pseudo(const Dataset& data, NuisanceKind kind, Index z_index,
                                          LearnerConfig cfg = {}) {
  if (z_index < 0 || z_index >= data.d()) throw ConfigError("interaction test: z index out of range");
  cfg.stage1 = RegressorSpec::linear();
  const FoldPlan plan = make_folds(data, 2, cfg.seed);
  double alpha[2];
  double se[2];
  for (int f = 0; f < 2; ++f) {
    const RowList train = plan.rows_not_in(f);
    const RowList apply = detail::filter_rows(data, plan.rows_in(f), 1, -1);
    detail::require_arms(data, apply, "pseudo interaction test");
    const NuisancePair eta = fit_nuisance(kind, data, train, cfg);
    const PseudoVector psi = pseudo_outcomes(data, apply, eta);
    Matrix design(static_cast<Index>(apply.size()), 2);
    for (std::size_t r = 0; r < apply.size(); ++r) {
      design.row(static_cast<Index>(r)) << 1.0, data.x(apply[r], z_index);
    }
    const OlsResult fit = ols(design, psi.values);
    alpha[f] = fit.coef(1);
    se[f] = fit.se(1);
  }
  return average_two_folds(alpha[0], se[0], alpha[1], se[1], std::string(to_string(kind)) + "-pseudo");
}

/// Partial Pearson correlation of y and s given (1, x, a), with a Student-t
/// reference on n - rank(1, x, a) - 1 degrees of freedom (n - d - 3 for a
/// full-rank design; one-hot blocks with an intercept are rank-deficient).
/// The CI is for the correlation (Fisher z). Zero residual variance in y or s
/// gives r = 0.
inline TestResult transportability_test(const Dataset& data) {
  const Index n = data.n();
  const Index d = data.d();
  if (n <= d + 3) throw DataError("dimension", "transportability test needs n > d + 3");
  Matrix design(n, d + 2);
  design.col(0).setOnes();
  design.middleCols(1, d) = data.x;
  design.col(d + 1) = data.a.cast<double>();
  Index rank = 0;
  const Vector ry = residualize(design, data.y, &rank);
  const Vector rs = residualize(design, data.s.cast<double>());
  const Index dof = n - rank - 1;

  const double syy = ry.squaredNorm();
  const double sss = rs.squaredNorm();
  const double scale = std::max(1.0, data.y.squaredNorm());
  double r = 0.0;
  if (syy > 1e-24 * scale && sss > 1e-24 * static_cast<double>(n)) {
    r = std::clamp(ry.dot(rs) / std::sqrt(syy * sss), -1.0, 1.0);
  }

  TestResult out;
  out.method = "transportability";
  out.estimate = r;
  out.dof = static_cast<double>(dof);
  out.se = std::sqrt((1.0 - r * r) / out.dof);
  if (std::abs(r) >= 1.0) {
    out.statistic = std::copysign(std::numeric_limits<double>::infinity(), r);
    out.p_value = 0.0;
  } else {
    out.statistic = r * std::sqrt(out.dof / (1.0 - r * r));
    const boost::math::students_t dist(out.dof);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.statistic))));
  }
  const double fz = std::atanh(std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15));
  const double fz_se = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(dof, 1)));
  out.ci_lo = std::min(r, std::tanh(fz - kZ975 * fz_se));
  out.ci_hi = std::max(r, std::tanh(fz + kZ975 * fz_se));
  out.rejected = out.p_value < 0.05;
  return out;
}

}  // namespace qrcate
