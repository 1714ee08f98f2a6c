#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "qrcate/csv.hpp"
#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/inference.hpp"
#include "qrcate/learners.hpp"
#include "qrcate/pseudo.hpp"
#include "qrcate/rng.hpp"
#include "qrcate/simgen.hpp"
#include "qrcate/star.hpp"

namespace qrcate {

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs task(0..count-1) on up to `threads` workers. Tasks write only to
/// their own slot, so results do not depend on scheduling. The first
/// exception thrown by a task is rethrown after all workers join.
template <class Task>
void parallel_for(std::size_t count, int threads, Task&& task) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        task(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// sqrt(mean (tau - tau_hat)^2) over the trial rows of an evaluation draw.
inline double rmse_vs_truth(const CATEModel& model, const LabeledDraw& eval) {
  const RowList rows = eval.data.trial_rows();
  if (rows.empty()) throw DataError("dimension", "rmse: empty evaluation set");
  const Vector pred = model.predict(eval.data.x_rows(rows));
  const Vector tau = Dataset::gather(eval.tau, rows);
  return std::sqrt((tau - pred).squaredNorm() / static_cast<double>(rows.size()));
}

/// sqrt(mean (psi(O; {0,0}) - tau_hat)^2) over held-out trial rows.
inline double rmse_vs_proxy(const CATEModel& model, const Dataset& heldout) {
  const RowList rows = heldout.trial_rows();
  if (rows.empty()) throw DataError("dimension", "proxy rmse: empty holdout");
  const PseudoVector psi = pseudo_outcomes(heldout, rows, NuisancePair::zero());
  const Vector pred = model.predict(heldout.x_rows(rows));
  return std::sqrt((psi.values - pred).squaredNorm() / static_cast<double>(rows.size()));
}

struct Summary {
  double mean = 0.0;
  double se = 0.0;
  Index count = 0;
};

/// Mean and sample SD / sqrt(R) (0 when R = 1).
inline Summary summarize(const std::vector<double>& values) {
  Summary out;
  out.count = static_cast<Index>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.se = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

/// Per-replication seed derived from the experiment seed.
inline std::uint64_t replication_seed(std::uint64_t seed, std::string_view role, std::uint64_t rep) {
  return CounterRng::stream(seed, {hash_tag(role), rep})();
}

/// One aggregated row of an RMSE table. `values` holds the successful
/// per-replication metrics in replication order.
struct MetricRow {
  std::string learner;
  std::string scenario;
  Index n1 = 0;
  Index n0 = 0;
  Summary summary;
  Index failures = 0;
  std::vector<double> values;
};

struct RmseSpec {
  Scenario scenario = Scenario::rmse_aligned;
  Index n1 = 250;
  std::vector<Index> n0s = {100, 1000, 10000};
  std::vector<LearnerKind> learners = {LearnerKind::dr, LearnerKind::qr};
  int reps = 100;
  std::uint64_t seed = 0;
  Index eval_n = 2000;
  int threads = 1;
  LearnerConfig learner;
  /// Overrides of the DGP defaults (alpha0, alpha) for the scenario.
  double alpha0 = 0.0;
  Vector alpha;

  void validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (learners.empty()) throw ConfigError("learner list is empty");
    if (n0s.empty()) throw ConfigError("n0 list is empty");
    if (n1 < 2) throw ConfigError("n1 must be >= 2");
    if (eval_n < 1) throw ConfigError("evaluation size must be >= 1");
    if (scenario == Scenario::power) throw ConfigError("rmse experiments use the aligned or violated scenario");
    learner.validate();
  }

  DGPConfig dgp(Index n0, std::uint64_t seed_value) const {
    DGPConfig cfg = scenario == Scenario::rmse_violated ? DGPConfig::violated(n1, n0, seed_value)
                                                        : DGPConfig::aligned(n1, n0, seed_value);
    cfg.alpha0 = alpha0;
    cfg.alpha = alpha;
    return cfg;
  }
};

/// Replication r uses the same data seed for every n0, so a larger external
/// sample extends a smaller one and the trial rows are shared.
inline std::vector<MetricRow> run_rmse_experiment(const RmseSpec& spec) {
  spec.validate();
  const std::size_t nl = spec.learners.size();
  const std::size_t reps = static_cast<std::size_t>(spec.reps);
  // slot[(n0 index * reps + r) * nl + learner]
  std::vector<std::optional<double>> slot(spec.n0s.size() * reps * nl);
  parallel_for(spec.n0s.size() * reps, spec.threads, [&](std::size_t task) {
    const std::size_t k = task / reps;
    const std::size_t r = task % reps;
    const std::uint64_t data_seed = replication_seed(spec.seed, "data", r);
    const DGPConfig dgp = spec.dgp(spec.n0s[k], data_seed);
    const LabeledDraw draw = generate(dgp);
    const LabeledDraw eval = generate_evaluation(dgp, spec.eval_n);
    LearnerConfig cfg = spec.learner;
    cfg.seed = replication_seed(spec.seed, "learner", r);
    for (std::size_t l = 0; l < nl; ++l) {
      try {
        const CATEModel model = fit_learner(spec.learners[l], draw.data, cfg);
        const double value = rmse_vs_truth(model, eval);
        if (std::isfinite(value)) slot[task * nl + l] = value;
      } catch (const Error&) {
        // recorded as a failure below
      }
    }
  });

  std::vector<MetricRow> rows;
  for (std::size_t k = 0; k < spec.n0s.size(); ++k) {
    for (std::size_t l = 0; l < nl; ++l) {
      MetricRow row;
      row.learner = std::string(to_string(spec.learners[l]));
      row.scenario = std::string(to_string(spec.scenario));
      row.n1 = spec.n1;
      row.n0 = spec.n0s[k];
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& v = slot[(k * reps + r) * nl + l];
        if (v) {
          row.values.push_back(*v);
        } else {
          ++row.failures;
        }
      }
      row.summary = summarize(row.values);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

enum class PowerMethod { cov_adj, pooled_cov_adj, dr_pseudo, qr_pseudo, asiaee_pseudo };

inline std::string_view to_string(PowerMethod m) {
  switch (m) {
    case PowerMethod::cov_adj: return "cov-adj";
    case PowerMethod::pooled_cov_adj: return "pooled-cov-adj";
    case PowerMethod::dr_pseudo: return "dr-pseudo";
    case PowerMethod::qr_pseudo: return "qr-pseudo";
    case PowerMethod::asiaee_pseudo: return "asiaee-pseudo";
  }
  return "unknown";
}

inline PowerMethod parse_power_method(std::string_view name) {
  for (PowerMethod m : {PowerMethod::cov_adj, PowerMethod::pooled_cov_adj, PowerMethod::dr_pseudo,
                        PowerMethod::qr_pseudo, PowerMethod::asiaee_pseudo}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown test method '" + std::string(name) + "'");
}

inline TestResult run_power_method(PowerMethod method, const Dataset& data, Index z_index,
                                   const LearnerConfig& cfg) {
  switch (method) {
    case PowerMethod::cov_adj: return interaction_test_ols(data, z_index, false);
    case PowerMethod::pooled_cov_adj: return interaction_test_ols(data, z_index, true);
    case PowerMethod::dr_pseudo: return interaction_test_pseudo(data, NuisanceKind::dr, z_index, cfg);
    case PowerMethod::qr_pseudo: return interaction_test_pseudo(data, NuisanceKind::qr, z_index, cfg);
    case PowerMethod::asiaee_pseudo: return interaction_test_pseudo(data, NuisanceKind::asiaee, z_index, cfg);
  }
  throw ConfigError("unknown test method");
}

struct PowerRow {
  std::string method;
  Index n1 = 0;
  std::string setting;  // "absent" or "present"
  double rejection_rate = 0.0;
  Index reps = 0;
  Index failures = 0;
};

struct PowerSpec {
  std::vector<Index> n1s = {250, 500, 1000};
  Index n0 = 1000;
  /// Interaction strength of the effect-present setting.
  double beta = 0.03;
  std::vector<PowerMethod> methods = {PowerMethod::cov_adj, PowerMethod::pooled_cov_adj,
                                      PowerMethod::dr_pseudo, PowerMethod::qr_pseudo,
                                      PowerMethod::asiaee_pseudo};
  /// Which settings to run: absent (beta = 0), present (beta = beta).
  bool absent = true;
  bool present = true;
  int reps = 500;
  std::uint64_t seed = 0;
  int threads = 1;
  LearnerConfig learner;
  double alpha0 = 0.0;
  Vector alpha;

  void validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (methods.empty()) throw ConfigError("method list is empty");
    if (n1s.empty()) throw ConfigError("n1 list is empty");
    if (!absent && !present) throw ConfigError("no power setting selected");
    learner.validate();
  }
};

inline std::vector<PowerRow> run_power_experiment(const PowerSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, double>> settings;
  if (spec.absent) settings.emplace_back("absent", 0.0);
  if (spec.present) settings.emplace_back("present", spec.beta);
  const std::size_t nm = spec.methods.size();
  const std::size_t reps = static_cast<std::size_t>(spec.reps);
  const std::size_t cells = settings.size() * spec.n1s.size();
  // 1 = rejected, 0 = not rejected, -1 = failed
  std::vector<int> slot(cells * reps * nm, -1);
  parallel_for(cells * reps, spec.threads, [&](std::size_t task) {
    const std::size_t cell = task / reps;
    const std::size_t r = task % reps;
    const auto& [setting, beta] = settings[cell / spec.n1s.size()];
    const Index n1 = spec.n1s[cell % spec.n1s.size()];
    DGPConfig dgp = DGPConfig::power(n1, spec.n0, beta, replication_seed(spec.seed, "data", r));
    dgp.alpha0 = spec.alpha0;
    dgp.alpha = spec.alpha;
    const LabeledDraw draw = generate(dgp);
    LearnerConfig cfg = spec.learner;
    cfg.seed = replication_seed(spec.seed, "learner", r);
    for (std::size_t m = 0; m < nm; ++m) {
      try {
        slot[task * nm + m] = run_power_method(spec.methods[m], draw.data, 0, cfg).rejected ? 1 : 0;
      } catch (const Error&) {
        // left as a failure
      }
    }
  });

  std::vector<PowerRow> rows;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t m = 0; m < nm; ++m) {
      PowerRow row;
      row.method = std::string(to_string(spec.methods[m]));
      row.n1 = spec.n1s[cell % spec.n1s.size()];
      row.setting = settings[cell / spec.n1s.size()].first;
      Index rejections = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        const int v = slot[(cell * reps + r) * nm + m];
        if (v < 0) {
          ++row.failures;
        } else {
          ++row.reps;
          rejections += v;
        }
      }
      row.rejection_rate = row.reps > 0 ? static_cast<double>(rejections) / static_cast<double>(row.reps) : 0.0;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

struct StarSpec {
  Index n1 = 1000;
  std::vector<Index> n0s = {100, 500, 1000, 1500};
  std::vector<LearnerKind> learners = {LearnerKind::t, LearnerKind::pooled_t, LearnerKind::dr,
                                       LearnerKind::qr, LearnerKind::asiaee, LearnerKind::combined};
  int reps = 50;
  double holdout = 0.3;
  std::uint64_t seed = 0;
  int threads = 1;
  LearnerConfig learner = [] {
    LearnerConfig cfg;
    cfg.stage2 = RegressorSpec::ridge_linear(10.0);
    return cfg;
  }();

  void validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (learners.empty()) throw ConfigError("learner list is empty");
    if (n0s.empty()) throw ConfigError("n0 list is empty");
    if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
    learner.validate();
  }
};

/// Proxy-RMSE sweep over n0. Replication r draws its trial subsample and
/// holdout independently of n0; the external draw depends on (r, n0).
inline std::vector<MetricRow> run_star_experiment(const StarPartition& partition, const StarSpec& spec) {
  spec.validate();
  if (spec.n1 > partition.trial.n()) throw ConfigError("n1 exceeds the trial partition");
  for (Index n0 : spec.n0s) {
    if (n0 > partition.external.n()) throw ConfigError("n0 exceeds the external partition");
  }
  const std::size_t nl = spec.learners.size();
  const std::size_t reps = static_cast<std::size_t>(spec.reps);
  std::vector<std::optional<double>> slot(spec.n0s.size() * reps * nl);
  parallel_for(spec.n0s.size() * reps, spec.threads, [&](std::size_t task) {
    const std::size_t k = task / reps;
    const std::size_t r = task % reps;
    const std::uint64_t rep_seed = replication_seed(spec.seed, "star", r);
    auto trial_rng = CounterRng::stream(rep_seed, {hash_tag("trial")});
    const RowList trial_ids = sample_without_replacement(partition.trial.n(), spec.n1, trial_rng);
    const auto n_test = static_cast<Index>(std::floor(spec.holdout * static_cast<double>(spec.n1)));
    auto split_rng = CounterRng::stream(rep_seed, {hash_tag("holdout")});
    const RowList test_pos = sample_without_replacement(spec.n1, n_test, split_rng);
    RowList test_ids;
    RowList train_ids;
    std::size_t t = 0;
    for (Index p = 0; p < spec.n1; ++p) {
      if (t < test_pos.size() && test_pos[t] == p) {
        test_ids.push_back(trial_ids[static_cast<std::size_t>(p)]);
        ++t;
      } else {
        train_ids.push_back(trial_ids[static_cast<std::size_t>(p)]);
      }
    }
    auto external_rng = CounterRng::stream(rep_seed, {hash_tag("external"), static_cast<std::uint64_t>(spec.n0s[k])});
    const RowList ext_ids = sample_without_replacement(partition.external.n(), spec.n0s[k], external_rng);
    const Dataset train = Dataset::concat(partition.trial.subset(train_ids), partition.external.subset(ext_ids));
    const Dataset test = partition.trial.subset(test_ids);
    LearnerConfig cfg = spec.learner;
    cfg.seed = replication_seed(spec.seed, "learner", r);
    for (std::size_t l = 0; l < nl; ++l) {
      try {
        const double value = rmse_vs_proxy(fit_learner(spec.learners[l], train, cfg), test);
        if (std::isfinite(value)) slot[task * nl + l] = value;
      } catch (const Error&) {
      }
    }
  });

  std::vector<MetricRow> rows;
  for (std::size_t k = 0; k < spec.n0s.size(); ++k) {
    for (std::size_t l = 0; l < nl; ++l) {
      MetricRow row;
      row.learner = std::string(to_string(spec.learners[l]));
      row.scenario = "star";
      row.n1 = spec.n1;
      row.n0 = spec.n0s[k];
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& v = slot[(k * reps + r) * nl + l];
        if (v) {
          row.values.push_back(*v);
        } else {
          ++row.failures;
        }
      }
      row.summary = summarize(row.values);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

struct HistogramRow {
  std::string source;
  double lo = 0.0;
  double hi = 0.0;
  Index count = 0;
};

/// Histogram of estimated Pr(S = 1 | X) per source over the full partition.
inline std::vector<HistogramRow> overlap_histogram(const StarPartition& partition, int bins,
                                                   const ProbClassifierSpec& classifier) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  const Dataset pooled = Dataset::concat(partition.trial, partition.external);
  const FittedClassifier model = fit_logistic(pooled.x, pooled.s, classifier);
  const Vector p = model.predict_proba(pooled.x);
  std::vector<HistogramRow> rows;
  for (int s : {1, 0}) {
    std::vector<Index> counts(static_cast<std::size_t>(bins), 0);
    for (Index i = 0; i < pooled.n(); ++i) {
      if (pooled.s(i) != s) continue;
      const int b = std::min(bins - 1, static_cast<int>(p(i) * bins));
      ++counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < bins; ++b) {
      rows.push_back({s == 1 ? "trial" : "external", static_cast<double>(b) / bins,
                      static_cast<double>(b + 1) / bins, counts[static_cast<std::size_t>(b)]});
    }
  }
  return rows;
}

// CSV emission. Column order is fixed; reals use 17 significant digits.

inline void write_rmse_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "learner,scenario,n1,n0,mean_rmse,se,R,failures\n";
  for (const auto& r : rows) {
    out << r.learner << ',' << r.scenario << ',' << r.n1 << ',' << r.n0 << ','
        << detail::format_double(r.summary.mean) << ',' << detail::format_double(r.summary.se) << ','
        << r.summary.count << ',' << r.failures << '\n';
  }
}

inline void write_power_csv(std::ostream& out, const std::vector<PowerRow>& rows) {
  out << "method,n1,setting,rejection_rate,R,failures\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.n1 << ',' << r.setting << ',' << detail::format_double(r.rejection_rate)
        << ',' << r.reps << ',' << r.failures << '\n';
  }
}

inline void write_star_csv_results(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "learner,n1,n0,mean_proxy_rmse,se,R,failures\n";
  for (const auto& r : rows) {
    out << r.learner << ',' << r.n1 << ',' << r.n0 << ',' << detail::format_double(r.summary.mean) << ','
        << detail::format_double(r.summary.se) << ',' << r.summary.count << ',' << r.failures << '\n';
  }
}

inline void write_histogram_csv(std::ostream& out, const std::vector<HistogramRow>& rows) {
  out << "source,bin_lo,bin_hi,count\n";
  for (const auto& r : rows) {
    out << r.source << ',' << detail::format_double(r.lo) << ',' << detail::format_double(r.hi) << ','
        << r.count << '\n';
  }
}

template <class Rows, class Writer>
void write_file(const std::string& path, const Rows& rows, Writer writer) {
  std::ofstream out(path);
  if (!out) throw FileError(path);
  writer(out, rows);
}

}  // namespace qrcate
