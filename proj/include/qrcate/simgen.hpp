#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "qrcate/csv.hpp"
#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/rng.hpp"

namespace qrcate {

enum class Scenario { rmse_aligned, rmse_violated, power };

inline std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::rmse_aligned: return "aligned";
    case Scenario::rmse_violated: return "violated";
    case Scenario::power: return "power";
  }
  return "unknown";
}

inline Scenario parse_scenario(std::string_view name) {
  if (name == "aligned" || name == "rmse-aligned") return Scenario::rmse_aligned;
  if (name == "violated" || name == "rmse-violated") return Scenario::rmse_violated;
  if (name == "power") return Scenario::power;
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

/// Simulation law. Covariates are N(mu_s, Sigma / sqrt(d)) with Sigma unit
/// diagonal and 0.1 off-diagonal, mu_1 = 0 and mu_0 = mean_shift * 1. Trial
/// treatment is Bernoulli(trial_e); external treatment is
/// logistic(alpha0 + alpha'x). The last `masked` covariates enter the law but
/// are dropped from the emitted Dataset.
struct DGPConfig {
  Scenario scenario = Scenario::rmse_aligned;
  Index n1 = 250;
  Index n0 = 1000;
  int d = 5;
  int masked = 0;
  double beta = 0.0;
  double sigma2 = 0.25;
  double mean_shift = 0.2;
  double trial_e = 0.5;
  double alpha0 = 0.0;
  /// External propensity slopes; empty means 1 / sqrt(d) on every covariate.
  Vector alpha;
  std::uint64_t seed = 0;

  static DGPConfig aligned(Index n1, Index n0, std::uint64_t seed = 0) {
    DGPConfig cfg;
    cfg.scenario = Scenario::rmse_aligned;
    cfg.n1 = n1;
    cfg.n0 = n0;
    cfg.seed = seed;
    return cfg;
  }

  static DGPConfig violated(Index n1, Index n0, std::uint64_t seed = 0) {
    DGPConfig cfg = aligned(n1, n0, seed);
    cfg.scenario = Scenario::rmse_violated;
    cfg.d = 7;
    cfg.masked = 2;
    return cfg;
  }

  static DGPConfig power(Index n1, Index n0, double beta, std::uint64_t seed = 0) {
    DGPConfig cfg = aligned(n1, n0, seed);
    cfg.scenario = Scenario::power;
    cfg.beta = beta;
    return cfg;
  }

  int observed_d() const { return d - masked; }

  Vector alpha_or_default() const {
    if (alpha.size() == 0) return Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
    return alpha;
  }

  void validate() const {
    if (n1 < 0 || n0 < 0) throw ConfigError("sample sizes must be >= 0");
    if (n1 + n0 < 1) throw ConfigError("at least one row must be generated");
    if (d < 1) throw ConfigError("d must be >= 1");
    if (masked < 0 || masked >= d) throw ConfigError("masked must be in [0, d)");
    if (!(sigma2 > 0.0)) throw ConfigError("noise variance must be > 0");
    if (!(trial_e > 0.0 && trial_e < 1.0)) throw ConfigError("trial propensity must be in (0, 1)");
    if (alpha.size() != 0 && alpha.size() != d) throw ConfigError("alpha must have d entries");
  }
};

/// Generated data with the ground truth: tau per row and the full
/// (unmasked) covariates.
struct LabeledDraw {
  Dataset data;
  Vector tau;
  Matrix x_full;
};

/// Baseline outcome b(x).
inline double baseline(const DGPConfig& cfg, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double d = static_cast<double>(cfg.d);
  if (cfg.scenario == Scenario::power) return x.sum() / d;
  double cos_part = 0.0;
  for (Index j = 0; j < x.size(); ++j) cos_part += std::cos(1.5 * x(j));
  const double total = x.sum();
  return 3.0 / d * cos_part + total * total / d;
}

/// tau(x) for a row of the full generative covariates in source s.
inline double true_cate(const DGPConfig& cfg, const Eigen::Ref<const Eigen::RowVectorXd>& x, int s) {
  if (x.size() != cfg.d) throw DataError("dimension", "true_cate: covariate row has the wrong length");
  const double d = static_cast<double>(cfg.d);
  if (cfg.scenario == Scenario::power) {
    const double slope = s == 1 ? cfg.beta : cfg.beta + 1.0 / 20.0;
    return slope * d * x(0);
  }
  return x.sum() / d;
}

namespace detail {

inline Matrix covariate_factor(int d) {
  Matrix sigma = Matrix::Constant(d, d, 0.1);
  sigma.diagonal().setOnes();
  sigma *= 1.0 / std::sqrt(static_cast<double>(d));
  return Eigen::LLT<Matrix>(sigma).matrixL();
}

inline void draw_block(const DGPConfig& cfg, const Matrix& factor, int s, Index rows, Index offset,
                       CounterRng& rng, LabeledDraw& out) {
  const int d = cfg.d;
  const double mu = s == 1 ? 0.0 : cfg.mean_shift;
  const Vector alpha = cfg.alpha_or_default();
  const double noise_sd = std::sqrt(cfg.sigma2);
  Vector z(d);
  for (Index r = 0; r < rows; ++r) {
    const Index i = offset + r;
    for (int j = 0; j < d; ++j) z(j) = rng.normal();
    const Vector xi = (factor * z).array() + mu;
    out.x_full.row(i) = xi.transpose();
    double e;
    if (s == 1) {
      e = cfg.trial_e;
    } else {
      const double eta = cfg.alpha0 + alpha.dot(xi);
      e = 1.0 / (1.0 + std::exp(-eta));
    }
    const int a = rng.bernoulli(e) ? 1 : 0;
    const double tau = true_cate(cfg, xi.transpose(), s);
    out.tau(i) = tau;
    out.data.s(i) = s;
    out.data.a(i) = a;
    out.data.e(i) = e;
    out.data.y(i) = baseline(cfg, xi.transpose()) + a * tau + noise_sd * rng.normal();
  }
}

}  // namespace detail

/// Draws the trial block (rows 0..n1-1) then the external block. Each block
/// has its own stream keyed on (seed, source), so the trial rows do not depend
/// on n0.
inline LabeledDraw generate(const DGPConfig& cfg) {
  cfg.validate();
  const Index n = cfg.n1 + cfg.n0;
  LabeledDraw out;
  out.x_full.resize(n, cfg.d);
  out.tau.resize(n);
  out.data.s.resize(n);
  out.data.a.resize(n);
  out.data.y.resize(n);
  out.data.e.resize(n);
  const Matrix factor = detail::covariate_factor(cfg.d);
  auto trial_rng = CounterRng::stream(cfg.seed, {hash_tag("simgen"), 1});
  auto external_rng = CounterRng::stream(cfg.seed, {hash_tag("simgen"), 0});
  detail::draw_block(cfg, factor, 1, cfg.n1, 0, trial_rng, out);
  detail::draw_block(cfg, factor, 0, cfg.n0, cfg.n1, external_rng, out);
  out.data.x = out.x_full.leftCols(cfg.observed_d());
  for (int j = 0; j < cfg.observed_d(); ++j) out.data.feature_names.push_back("x" + std::to_string(j + 1));
  return out;
}

/// Fresh trial-only draw of n rows for out-of-sample evaluation.
inline LabeledDraw generate_evaluation(DGPConfig cfg, Index n) {
  cfg.n1 = n;
  cfg.n0 = 0;
  cfg.seed = CounterRng::stream(cfg.seed, {hash_tag("evaluation")})();
  return generate(cfg);
}

/// Dataset columns plus the true tau (and masked covariates, named x6, x7, ...).
inline void write_draw_csv(const std::string& path, const LabeledDraw& draw) {
  std::vector<std::pair<std::string, Vector>> extra;
  for (Index j = draw.data.d(); j < draw.x_full.cols(); ++j) {
    extra.emplace_back("x" + std::to_string(j + 1) + "_masked", draw.x_full.col(j));
  }
  extra.emplace_back("tau", draw.tau);
  write_csv(path, draw.data, extra);
}

}  // namespace qrcate
