#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <variant>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/regressors/gbrt.hpp"
#include "qrcate/regressors/linear.hpp"
#include "qrcate/regressors/logistic.hpp"

namespace qrcate {

enum class RegressorKind { linear, ridge_linear, gbrt };

inline std::string_view to_string(RegressorKind kind) {
  switch (kind) {
    case RegressorKind::linear: return "linear";
    case RegressorKind::ridge_linear: return "ridge-linear";
    case RegressorKind::gbrt: return "gbrt";
  }
  return "unknown";
}

inline RegressorKind parse_regressor_kind(std::string_view name) {
  if (name == "linear") return RegressorKind::linear;
  if (name == "ridge-linear" || name == "ridge") return RegressorKind::ridge_linear;
  if (name == "gbrt") return RegressorKind::gbrt;
  throw ConfigError("unknown regressor kind '" + std::string(name) + "'");
}

struct RegressorSpec {
  RegressorKind kind = RegressorKind::gbrt;
  double ridge = 0.0;
  GbrtConfig gbrt;

  static RegressorSpec linear() { return {RegressorKind::linear, 0.0, {}}; }
  static RegressorSpec ridge_linear(double penalty) { return {RegressorKind::ridge_linear, penalty, {}}; }
  static RegressorSpec boosted(GbrtConfig config = {}) { return {RegressorKind::gbrt, 0.0, config}; }

  void validate() const {
    if (ridge < 0.0) throw ConfigError("ridge penalty must be >= 0");
    if (kind == RegressorKind::gbrt) gbrt.validate();
  }
};

/// Immutable fitted regressor; cheap to copy (shared state).
class FittedRegressor {
 public:
  using State = std::variant<LinearFit, GbrtModel>;

  FittedRegressor() = default;
  explicit FittedRegressor(State state) : state_(std::make_shared<const State>(std::move(state))) {}

  Vector predict(const Matrix& x) const {
    if (!state_) throw FitError("predict called on an unfitted regressor");
    return std::visit([&](const auto& model) { return model.predict(x); }, *state_);
  }

  /// True when the linear solver had to fall back to diagonal jitter.
  bool warning() const {
    if (!state_) return false;
    if (const auto* lin = std::get_if<LinearFit>(state_.get())) return lin->jittered;
    return false;
  }

  const LinearFit* linear() const { return state_ ? std::get_if<LinearFit>(state_.get()) : nullptr; }
  const GbrtModel* boosted() const { return state_ ? std::get_if<GbrtModel>(state_.get()) : nullptr; }

 private:
  std::shared_ptr<const State> state_;
};

inline FittedRegressor fit_regressor(const RegressorSpec& spec, const Matrix& x, const Vector& y,
                                     const Vector& w) {
  spec.validate();
  switch (spec.kind) {
    case RegressorKind::linear: return FittedRegressor(fit_weighted_linear(x, y, w, 0.0));
    case RegressorKind::ridge_linear: return FittedRegressor(fit_weighted_linear(x, y, w, spec.ridge));
    case RegressorKind::gbrt: return FittedRegressor(fit_gbrt(x, y, w, spec.gbrt));
  }
  throw ConfigError("unknown regressor kind");
}

inline FittedRegressor fit_regressor(const RegressorSpec& spec, const Matrix& x, const Vector& y) {
  return fit_regressor(spec, x, y, Vector::Ones(x.rows()));
}

}  // namespace qrcate
