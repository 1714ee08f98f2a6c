#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/regressors.hpp"

namespace qrcate {

/// Batch function of covariates, x -> f(x) row by row.
using OutcomeFunction = std::function<Vector(const Matrix&)>;

/// The trial randomization probability e(x) = Pr(A = 1 | X = x, S = 1),
/// needed at external covariates by the participation-weighted losses.
///
/// Either a user function of x, or (by default) the constant recorded on the
/// trial rows of the data, which must then be the same on every trial row.
struct TrialPropensity {
  std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)> function;

  Vector evaluate(const Dataset& data, const Matrix& x) const {
    if (function) {
      Vector out(x.rows());
      for (Index i = 0; i < x.rows(); ++i) out(i) = function(x.row(i));
      return out;
    }
    return Vector::Constant(x.rows(), constant_from(data));
  }

  /// Propensity per listed row: the recorded e on trial rows, the design
  /// propensity at the covariates on external rows.
  Vector for_rows(const Dataset& data, std::span<const Index> rows) const {
    Vector out(static_cast<Index>(rows.size()));
    std::optional<double> constant;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Index i = rows[r];
      if (data.s(i) == 1) {
        out(static_cast<Index>(r)) = data.e(i);
      } else if (function) {
        out(static_cast<Index>(r)) = function(data.x.row(i));
      } else {
        if (!constant) constant = constant_from(data);
        out(static_cast<Index>(r)) = *constant;
      }
    }
    return out;
  }

  static double constant_from(const Dataset& data) {
    std::optional<double> value;
    for (Index i = 0; i < data.n(); ++i) {
      if (data.s(i) != 1) continue;
      if (!value) {
        value = data.e(i);
      } else if (data.e(i) != *value) {
        throw ConfigError(
            "trial propensity varies across trial rows; supply a propensity function for "
            "external covariates");
      }
    }
    if (!value) throw FitError("no trial rows to read the trial propensity from");
    return *value;
  }
};

/// eta = {h1, h0}: outcome-scale functions indexing the pseudo-outcome.
struct NuisancePair {
  OutcomeFunction h1;
  OutcomeFunction h0;
  std::string tag;

  static NuisancePair zero() {
    auto z = [](const Matrix& x) -> Vector { return Vector::Zero(x.rows()); };
    return {z, z, "zero"};
  }

  static NuisancePair from(const FittedRegressor& m1, const FittedRegressor& m0, std::string tag) {
    return {[m1](const Matrix& x) { return m1.predict(x); },
            [m0](const Matrix& x) { return m0.predict(x); }, std::move(tag)};
  }
};

/// Randomization-aware pseudo-outcome
///   (a - e) / (e (1 - e)) * (y - h_a) + h1 - h0.
inline double pseudo_outcome(int a, double y, double e, double h1, double h0) {
  if (!(e > 0.0 && e < 1.0)) throw DataError("propensity", "pseudo_outcome: e must lie in (0,1)");
  const double ha = a == 1 ? h1 : h0;
  return (a - e) / (e * (1.0 - e)) * (y - ha) + h1 - h0;
}

struct PseudoVector {
  RowList rows;
  Vector values;
  std::string tag;
};

/// Pseudo-outcomes on the listed trial rows, using their recorded e.
inline PseudoVector pseudo_outcomes(const Dataset& data, std::span<const Index> rows,
                                    const NuisancePair& eta) {
  PseudoVector out;
  out.rows.assign(rows.begin(), rows.end());
  out.tag = eta.tag;
  const Matrix x = data.x_rows(rows);
  const Vector h1 = eta.h1(x);
  const Vector h0 = eta.h0(x);
  out.values.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    if (data.s(i) != 1) throw DataError("source", "pseudo-outcomes are defined on trial rows only", i);
    const auto k = static_cast<Index>(r);
    out.values(k) = pseudo_outcome(data.a(i), data.y(i), data.e(i), h1(k), h0(k));
  }
  return out;
}

/// Mean of (psi_i - prediction_i)^2.
inline double empirical_pseudo_risk(const Vector& predictions, const Vector& psi) {
  if (predictions.size() != psi.size()) throw DataError("dimension", "pseudo risk: length mismatch");
  if (psi.size() == 0) throw DataError("dimension", "pseudo risk: empty input");
  return (psi - predictions).squaredNorm() / static_cast<double>(psi.size());
}

inline double empirical_pseudo_risk(const Vector& predictions, const PseudoVector& psi) {
  return empirical_pseudo_risk(predictions, psi.values);
}

/// Weights pi_a(x) * ((1 - e) / e)^(2a - 1) of the arm-a participation-weighted loss.
inline Vector arm_weights(int arm, const Vector& participation, const Vector& propensity) {
  if (participation.size() != propensity.size()) {
    throw DataError("dimension", "arm weights: length mismatch");
  }
  Vector w(participation.size());
  for (Index i = 0; i < w.size(); ++i) {
    const double e = propensity(i);
    if (!(e > 0.0 && e < 1.0)) throw DataError("propensity", "arm weights: e must lie in (0,1)", i);
    const double odds = (1.0 - e) / e;
    w(i) = participation(i) * (arm == 1 ? odds : 1.0 / odds);
  }
  return w;
}

/// Participation-weighted squared loss of h_a over pooled arm-a rows:
///   sum_i pi_a(x_i) ((1 - e(x_i)) / e(x_i))^(2a - 1) (y_i - h_a(x_i))^2.
/// The constant 1 / Pr(S = 1 | A = a) is omitted.
inline double arm_loss(const Dataset& data, std::span<const Index> rows, int arm,
                       const OutcomeFunction& h, const OutcomeFunction& participation,
                       const TrialPropensity& propensity = {}) {
  if (rows.empty()) throw FitError("arm_loss: empty arm");
  for (Index i : rows) {
    if (data.a(i) != arm) throw DataError("arm", "arm_loss: row has a different treatment", i);
  }
  const Matrix x = data.x_rows(rows);
  const Vector w = arm_weights(arm, participation(x), propensity.for_rows(data, rows));
  const Vector resid = Dataset::gather(data.y, rows) - h(x);
  return (w.array() * resid.array().square()).sum();
}

/// Three-way split of the empirical pseudo-risk around the true CATE.
struct RiskDecomposition {
  double true_error = 0.0;           // mean (tau - pred)^2
  double finite_sample_error = 0.0;  // mean 2 (tau - pred)(psi - tau)
  double residual = 0.0;             // mean (psi - tau)^2

  double total() const { return true_error + finite_sample_error + residual; }
};

inline RiskDecomposition risk_decomposition(const Vector& tau, const Vector& predictions,
                                            const Vector& psi) {
  if (tau.size() != predictions.size() || tau.size() != psi.size()) {
    throw DataError("dimension", "risk decomposition: length mismatch");
  }
  if (tau.size() == 0) throw DataError("dimension", "risk decomposition: empty input");
  const double n = static_cast<double>(tau.size());
  const Vector err = tau - predictions;
  const Vector noise = psi - tau;
  return {err.squaredNorm() / n, 2.0 * err.dot(noise) / n, noise.squaredNorm() / n};
}

}  // namespace qrcate
