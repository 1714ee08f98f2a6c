#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/pseudo.hpp"
#include "qrcate/regressors.hpp"
#include "qrcate/rng.hpp"

namespace qrcate {

struct LearnerConfig {
  /// Nuisance (outcome-model) regressor.
  RegressorSpec stage1 = RegressorSpec::boosted();
  /// Final regression of pseudo-outcomes on covariates.
  RegressorSpec stage2 = RegressorSpec::ridge_linear(1e-6);
  /// Participation and external-propensity classifier.
  ProbClassifierSpec classifier;
  int folds = 2;
  /// Folds of the cross-validated pseudo-risk used by the combined learner.
  int combine_folds = 3;
  std::uint64_t seed = 0;
  TrialPropensity trial_propensity;

  void validate() const {
    stage1.validate();
    stage2.validate();
    classifier.validate();
    if (folds < 2) throw ConfigError("cross-fit folds must be >= 2");
    if (combine_folds < 2) throw ConfigError("combined-learner folds must be >= 2");
  }
};

struct Provenance {
  std::string learner;
  int folds = 0;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::vector<std::string> warnings;
};

/// Fitted CATE predictor. Cross-fit models keep their per-fold parts and
/// predict the arithmetic mean of them.
class CATEModel {
 public:
  Provenance provenance;

  CATEModel() = default;
  CATEModel(OutcomeFunction fn, Provenance prov) : provenance(std::move(prov)), fn_(std::move(fn)) {}

  static CATEModel average(std::vector<CATEModel> parts, Provenance prov) {
    if (parts.empty()) throw FitError("cannot average zero sub-models");
    CATEModel out;
    out.provenance = std::move(prov);
    out.parts_ = std::move(parts);
    return out;
  }

  Vector predict(const Matrix& x) const {
    if (fn_) return fn_(x);
    if (parts_.empty()) throw FitError("predict called on an unfitted CATE model");
    Vector total = parts_.front().predict(x);
    for (std::size_t p = 1; p < parts_.size(); ++p) total += parts_[p].predict(x);
    return total / static_cast<double>(parts_.size());
  }

  const std::vector<CATEModel>& parts() const noexcept { return parts_; }

 private:
  OutcomeFunction fn_;
  std::vector<CATEModel> parts_;
};

inline CATEModel constant_model(double value, Provenance prov) {
  return {[value](const Matrix& x) -> Vector { return Vector::Constant(x.rows(), value); },
          std::move(prov)};
}

inline CATEModel regressor_model(const FittedRegressor& fit, Provenance prov) {
  return {[fit](const Matrix& x) { return fit.predict(x); }, std::move(prov)};
}

namespace detail {

inline void require_arms(const Dataset& data, std::span<const Index> rows, const char* what) {
  bool treated = false;
  bool control = false;
  for (Index i : rows) (data.a(i) == 1 ? treated : control) = true;
  if (!treated || !control) {
    throw FitError(std::string(what) + ": both treatment arms are required");
  }
}

inline RowList filter_rows(const Dataset& data, std::span<const Index> rows, int source, int arm) {
  RowList out;
  for (Index i : rows) {
    if ((source < 0 || data.s(i) == source) && (arm < 0 || data.a(i) == arm)) out.push_back(i);
  }
  return out;
}

inline FittedRegressor fit_on_rows(const RegressorSpec& spec, const Dataset& data,
                                   std::span<const Index> rows, const Vector& w) {
  return fit_regressor(spec, data.x_rows(rows), Dataset::gather(data.y, rows), w);
}

inline FittedRegressor fit_on_rows(const RegressorSpec& spec, const Dataset& data,
                                   std::span<const Index> rows) {
  return fit_on_rows(spec, data, rows, Vector::Ones(static_cast<Index>(rows.size())));
}

inline ProbClassifierSpec seeded(ProbClassifierSpec spec, std::uint64_t seed, std::string_view role) {
  spec.seed = mix64(seed ^ hash_tag(role));
  return spec;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view role) {
  return CounterRng::stream(seed, {hash_tag(role)})();
}

}  // namespace detail

enum class NuisanceKind { dr, qr, asiaee, zero };

inline std::string_view to_string(NuisanceKind kind) {
  switch (kind) {
    case NuisanceKind::dr: return "dr";
    case NuisanceKind::qr: return "qr";
    case NuisanceKind::asiaee: return "asiaee";
    case NuisanceKind::zero: return "zero";
  }
  return "unknown";
}

/// Fits eta on the training rows:
///   dr     - trial-only outcome models g_a;
///   qr     - participation-weighted models h*_a over pooled arm-a rows;
///   asiaee - {m*, m*} with m* = e mu0 + (1 - e) mu1 from external outcome models;
///   zero   - {0, 0}.
inline NuisancePair fit_nuisance(NuisanceKind kind, const Dataset& data, std::span<const Index> train,
                                 const LearnerConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  switch (kind) {
    case NuisanceKind::zero: return NuisancePair::zero();

    case NuisanceKind::dr: {
      FittedRegressor g[2];
      for (int arm = 0; arm < 2; ++arm) {
        const RowList rows = detail::filter_rows(data, train, 1, arm);
        if (rows.empty()) throw FitError("dr nuisance: trial arm " + std::to_string(arm) + " is empty");
        g[arm] = detail::fit_on_rows(cfg.stage1, data, rows);
      }
      return NuisancePair::from(g[1], g[0], "dr");
    }

    case NuisanceKind::qr: {
      FittedRegressor h[2];
      for (int arm = 0; arm < 2; ++arm) {
        const RowList rows = detail::filter_rows(data, train, -1, arm);
        if (rows.empty()) throw FitError("qr nuisance: arm " + std::to_string(arm) + " is empty");
        const Matrix x = data.x_rows(rows);
        const IntVector source = Dataset::gather(data.s, rows);
        FittedClassifier participation;
        if (source.minCoeff() == source.maxCoeff()) {
          participation = FittedClassifier::constant_probability(1.0 - cfg.classifier.clip,
                                                                 cfg.classifier.clip);
          if (warnings != nullptr) {
            warnings->push_back("arm " + std::to_string(arm) +
                                " has a single source; participation fixed at " +
                                std::to_string(1.0 - cfg.classifier.clip));
          }
        } else {
          participation = fit_logistic(
              x, source, detail::seeded(cfg.classifier, cfg.seed, arm == 1 ? "pi1" : "pi0"));
          if (!participation.converged && warnings != nullptr) {
            warnings->push_back("participation classifier did not converge");
          }
        }
        const Vector w = arm_weights(arm, participation.predict_proba(x),
                                     cfg.trial_propensity.for_rows(data, rows));
        h[arm] = fit_regressor(cfg.stage1, x, Dataset::gather(data.y, rows), w);
      }
      return NuisancePair::from(h[1], h[0], "qr");
    }

    case NuisanceKind::asiaee: {
      FittedRegressor mu[2];
      for (int arm = 0; arm < 2; ++arm) {
        const RowList rows = detail::filter_rows(data, train, 0, arm);
        if (rows.empty()) throw FitError("asiaee nuisance: external arm " + std::to_string(arm) + " is empty");
        mu[arm] = detail::fit_on_rows(cfg.stage1, data, rows);
      }
      std::function<Vector(const Matrix&)> propensity;
      if (cfg.trial_propensity.function) {
        propensity = [fn = cfg.trial_propensity.function](const Matrix& x) -> Vector {
          Vector out(x.rows());
          for (Index i = 0; i < x.rows(); ++i) out(i) = fn(x.row(i));
          return out;
        };
      } else {
        const double e = TrialPropensity::constant_from(data);
        propensity = [e](const Matrix& x) -> Vector { return Vector::Constant(x.rows(), e); };
      }
      OutcomeFunction blend = [m0 = mu[0], m1 = mu[1], propensity](const Matrix& x) -> Vector {
        const Vector e = propensity(x);
        return (e.array() * m0.predict(x).array() + (1.0 - e.array()) * m1.predict(x).array()).matrix();
      };
      return {blend, blend, "asiaee"};
    }
  }
  throw ConfigError("unknown nuisance kind");
}

/// Generic cross-fitting: S-stratified folds; for each fold the nuisance is
/// fit on the other folds, pseudo-outcomes are formed on the fold's trial rows
/// and regressed on x with the stage-2 regressor. The result averages the
/// per-fold models.
inline CATEModel cross_fit(const Dataset& data, NuisanceKind kind, const LearnerConfig& cfg,
                           std::string name) {
  cfg.validate();
  const FoldPlan plan = make_folds(data, cfg.folds, cfg.seed);
  Provenance prov{std::move(name), cfg.folds, cfg.seed, std::nullopt, {}};
  std::vector<CATEModel> parts;
  for (int f = 0; f < plan.k; ++f) {
    const RowList train = plan.rows_not_in(f);
    const RowList apply = detail::filter_rows(data, plan.rows_in(f), 1, -1);
    if (apply.empty()) throw FitError(prov.learner + ": fold " + std::to_string(f) + " has no trial rows");
    const NuisancePair eta = fit_nuisance(kind, data, train, cfg, &prov.warnings);
    const PseudoVector psi = pseudo_outcomes(data, apply, eta);
    const FittedRegressor final_model = fit_regressor(cfg.stage2, data.x_rows(apply), psi.values);
    if (final_model.warning()) prov.warnings.push_back("stage-2 regression needed jitter");
    Provenance part = prov;
    part.learner += "/fold" + std::to_string(f);
    parts.push_back(regressor_model(final_model, part));
  }
  return CATEModel::average(std::move(parts), prov);
}

/// Trial-only DR-learner: eta = {g1, g0} from the trial arms.
inline CATEModel fit_dr(const Dataset& data, const LearnerConfig& cfg) {
  const RowList trial = data.trial_rows();
  detail::require_arms(data, trial, "dr");
  const Dataset sub = trial.size() == static_cast<std::size_t>(data.n()) ? data : data.subset(trial);
  return cross_fit(sub, NuisanceKind::dr, cfg, "dr");
}

/// QR-learner: stage 1 minimizes the participation-weighted arm losses over
/// pooled rows, stage 2 regresses pseudo-outcomes over trial rows.
inline CATEModel fit_qr(const Dataset& data, const LearnerConfig& cfg) {
  detail::require_arms(data, data.trial_rows(), "qr");
  return cross_fit(data, NuisanceKind::qr, cfg, "qr");
}

inline CATEModel fit_asiaee(const Dataset& data, const LearnerConfig& cfg) {
  detail::require_arms(data, data.trial_rows(), "asiaee");
  detail::require_arms(data, data.external_rows(), "asiaee (external)");
  return cross_fit(data, NuisanceKind::asiaee, cfg, "asiaee");
}

/// T-learner g1 - g0, on trial rows or (pooled) on every row.
inline CATEModel fit_t(const Dataset& data, bool pooled, const LearnerConfig& cfg) {
  cfg.validate();
  const RowList rows = pooled ? data.all_rows() : data.trial_rows();
  FittedRegressor g[2];
  for (int arm = 0; arm < 2; ++arm) {
    const RowList arm_rows = detail::filter_rows(data, rows, -1, arm);
    if (arm_rows.empty()) throw FitError("t-learner: arm " + std::to_string(arm) + " is empty");
    g[arm] = detail::fit_on_rows(cfg.stage1, data, arm_rows);
  }
  return {[g1 = g[1], g0 = g[0]](const Matrix& x) -> Vector { return g1.predict(x) - g0.predict(x); },
          Provenance{pooled ? "pooled-t" : "t", 0, cfg.seed, std::nullopt, {}}};
}

/// Difference in trial arm means, as a constant CATE.
inline CATEModel fit_ate_constant(const Dataset& data) {
  double sum[2] = {0.0, 0.0};
  Index count[2] = {0, 0};
  for (Index i = 0; i < data.n(); ++i) {
    if (data.s(i) != 1) continue;
    sum[data.a(i)] += data.y(i);
    ++count[data.a(i)];
  }
  if (count[0] == 0 || count[1] == 0) throw FitError("ate: both trial arms are required");
  const double ate = sum[1] / static_cast<double>(count[1]) - sum[0] / static_cast<double>(count[0]);
  return constant_model(ate, Provenance{"ate", 0, 0, std::nullopt, {}});
}

/// Additive bias correction: an external DR-learner omega (external propensity
/// estimated by the classifier) plus a linear bias model fitted to
/// psi(O; {0,0}) - omega(x) on trial rows.
inline CATEModel fit_kallus(const Dataset& data, const LearnerConfig& cfg) {
  cfg.validate();
  const RowList trial = data.trial_rows();
  const RowList external = data.external_rows();
  detail::require_arms(data, trial, "kallus");
  detail::require_arms(data, external, "kallus (external)");

  Dataset ext = data.subset(external);
  const FittedClassifier e0 =
      fit_logistic(ext.x, ext.a, detail::seeded(cfg.classifier, cfg.seed, "external-propensity"));
  ext.e = e0.predict_proba(ext.x);
  ext.s.setOnes();
  const CATEModel omega = fit_dr(ext, cfg);

  const PseudoVector psi = pseudo_outcomes(data, trial, NuisancePair::zero());
  const Matrix x_trial = data.x_rows(trial);
  const Vector target = psi.values - omega.predict(x_trial);
  const FittedRegressor bias = fit_regressor(RegressorSpec::linear(), x_trial, target);

  Provenance prov{"kallus", cfg.folds, cfg.seed, std::nullopt, omega.provenance.warnings};
  if (!e0.converged) prov.warnings.push_back("external propensity classifier did not converge");
  if (bias.warning()) prov.warnings.push_back("bias regression needed jitter");
  CATEModel out{[omega, bias](const Matrix& x) -> Vector { return omega.predict(x) + bias.predict(x); },
                prov};
  return out;
}

/// Cross-validated pseudo-risk of lambda u + (1 - lambda) v against
/// psi(O; {0,0}), stored as the quadratic a lambda^2 + b lambda + c
/// (coefficients are means over the held-out trial rows).
struct LambdaFit {
  double lambda = 0.0;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  int k = 0;

  struct Fold {
    Index rows = 0;
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
  };
  std::vector<Fold> folds;

  /// Held-out pseudo-outcomes and QR / DR predictions, in fold order.
  Vector psi;
  Vector u;
  Vector v;

  double risk(double l) const { return a * l * l + b * l + c; }
};

/// Closed-form minimizer over [0, 1]. With a = 0 the risk is flat in lambda
/// and lambda = 0 (the trial-only learner) is returned.
inline LambdaFit lambda_from_predictions(const Vector& psi, const Vector& u, const Vector& v) {
  if (psi.size() != u.size() || psi.size() != v.size()) {
    throw DataError("dimension", "lambda: psi, u and v must have equal length");
  }
  if (psi.size() == 0) throw DataError("dimension", "lambda: empty input");
  const double n = static_cast<double>(psi.size());
  const Vector r = psi - v;
  const Vector delta = u - v;
  LambdaFit fit;
  fit.a = delta.squaredNorm() / n;
  fit.b = -2.0 * r.dot(delta) / n;
  fit.c = r.squaredNorm() / n;
  fit.lambda = fit.a > 0.0 ? std::clamp(-fit.b / (2.0 * fit.a), 0.0, 1.0) : 0.0;
  fit.psi = psi;
  fit.u = u;
  fit.v = v;
  return fit;
}

using LearnerFactory = std::function<CATEModel(const Dataset&)>;

/// K-fold CV over S-stratified folds: both learners are refit without the
/// fold and evaluated on its trial rows.
inline LambdaFit select_lambda_cv(const Dataset& data, const LearnerFactory& qr,
                                  const LearnerFactory& dr, int k, std::uint64_t seed) {
  const FoldPlan plan = make_folds(data, k, seed);
  std::vector<LambdaFit::Fold> folds;
  std::vector<double> psi;
  std::vector<double> u;
  std::vector<double> v;
  for (int f = 0; f < k; ++f) {
    const RowList held = detail::filter_rows(data, plan.rows_in(f), 1, -1);
    detail::require_arms(data, held, ("combined: cv fold " + std::to_string(f)).c_str());
    const Dataset train = data.subset(plan.rows_not_in(f));
    const Matrix x = data.x_rows(held);
    const Vector uf = qr(train).predict(x);
    const Vector vf = dr(train).predict(x);
    const Vector pf = pseudo_outcomes(data, held, NuisancePair::zero()).values;
    const Vector r = pf - vf;
    const Vector delta = uf - vf;
    folds.push_back({static_cast<Index>(held.size()), delta.squaredNorm(), -2.0 * r.dot(delta),
                     r.squaredNorm()});
    for (Index i = 0; i < x.rows(); ++i) {
      psi.push_back(pf(i));
      u.push_back(uf(i));
      v.push_back(vf(i));
    }
  }
  auto to_vector = [](const std::vector<double>& values) {
    return Vector(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
  };
  LambdaFit fit = lambda_from_predictions(to_vector(psi), to_vector(u), to_vector(v));
  fit.k = k;
  fit.folds = std::move(folds);
  return fit;
}

/// lambda QR + (1 - lambda) DR with lambda from the CV pseudo-risk.
inline CATEModel fit_combined(const Dataset& data, const LearnerConfig& cfg, LambdaFit* diagnostics = nullptr) {
  cfg.validate();
  const LearnerFactory qr = [&cfg](const Dataset& d) { return fit_qr(d, cfg); };
  const LearnerFactory dr = [&cfg](const Dataset& d) { return fit_dr(d, cfg); };
  const CATEModel full_qr = qr(data);
  const CATEModel full_dr = dr(data);
  LambdaFit fit = select_lambda_cv(data, qr, dr, cfg.combine_folds, detail::derive_seed(cfg.seed, "combine"));
  const double lambda = fit.lambda;

  Provenance prov{"combined", cfg.folds, cfg.seed, lambda, full_qr.provenance.warnings};
  prov.warnings.insert(prov.warnings.end(), full_dr.provenance.warnings.begin(),
                       full_dr.provenance.warnings.end());
  if (diagnostics != nullptr) *diagnostics = std::move(fit);
  return {[full_qr, full_dr, lambda](const Matrix& x) -> Vector {
            if (lambda == 0.0) return full_dr.predict(x);
            if (lambda == 1.0) return full_qr.predict(x);
            return lambda * full_qr.predict(x) + (1.0 - lambda) * full_dr.predict(x);
          },
          prov};
}

enum class LearnerKind { dr, t, pooled_t, ate, qr, asiaee, kallus, combined };

inline std::string_view to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::dr: return "dr";
    case LearnerKind::t: return "t";
    case LearnerKind::pooled_t: return "pooled-t";
    case LearnerKind::ate: return "ate";
    case LearnerKind::qr: return "qr";
    case LearnerKind::asiaee: return "asiaee";
    case LearnerKind::kallus: return "kallus";
    case LearnerKind::combined: return "combined";
  }
  return "unknown";
}

inline LearnerKind parse_learner_kind(std::string_view name) {
  for (LearnerKind kind : {LearnerKind::dr, LearnerKind::t, LearnerKind::pooled_t, LearnerKind::ate,
                           LearnerKind::qr, LearnerKind::asiaee, LearnerKind::kallus,
                           LearnerKind::combined}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown learner '" + std::string(name) + "'");
}

inline CATEModel fit_learner(LearnerKind kind, const Dataset& data, const LearnerConfig& cfg) {
  switch (kind) {
    case LearnerKind::dr: return fit_dr(data, cfg);
    case LearnerKind::t: return fit_t(data, false, cfg);
    case LearnerKind::pooled_t: return fit_t(data, true, cfg);
    case LearnerKind::ate: return fit_ate_constant(data);
    case LearnerKind::qr: return fit_qr(data, cfg);
    case LearnerKind::asiaee: return fit_asiaee(data, cfg);
    case LearnerKind::kallus: return fit_kallus(data, cfg);
    case LearnerKind::combined: return fit_combined(data, cfg);
  }
  throw ConfigError("unknown learner kind");
}

}  // namespace qrcate
