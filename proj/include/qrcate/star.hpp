#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "qrcate/csv.hpp"
#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/rng.hpp"

namespace qrcate {

/// Raw STAR-style records. Column names in the input CSV:
///   location    rural | urban
///   class_type  small | regular (or 0 | 1; regular = treated)
///   score       average test score
///   gender, race, teacher_id, free_lunch   categorical
///   birth_date  YYYY-MM-DD
struct StarRaw {
  std::vector<std::string> location;
  IntVector a;
  Vector y;
  std::vector<double> birth_days;
  /// Categorical covariates by column name, in star_categorical_columns() order.
  std::vector<std::vector<std::string>> categorical;

  Index n() const { return y.size(); }
};

inline const std::vector<std::string>& star_categorical_columns() {
  static const std::vector<std::string> columns = {"gender", "race", "teacher_id", "free_lunch"};
  return columns;
}

namespace detail {

/// Days since 1970-01-01 for an ISO calendar date.
inline double parse_iso_date(std::string_view text, std::size_t row) {
  const std::string_view t = trim(text);
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  const bool shaped = t.size() == 10 && t[4] == '-' && t[7] == '-';
  if (shaped) {
    auto digits = [&](std::size_t from, std::size_t len, auto& out) {
      for (std::size_t k = from; k < from + len; ++k) {
        if (t[k] < '0' || t[k] > '9') return false;
        out = out * 10 + static_cast<std::remove_reference_t<decltype(out)>>(t[k] - '0');
      }
      return true;
    };
    if (digits(0, 4, y) && digits(5, 2, m) && digits(8, 2, d)) {
      const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
      if (ymd.ok()) {
        return static_cast<double>(std::chrono::sys_days{ymd}.time_since_epoch().count());
      }
    }
  }
  throw ParseError(row + 1, "birth_date", std::string(text));
}

}  // namespace detail

inline StarRaw star_from_table(const CsvTable& table) {
  const std::size_t loc_col = table.column("location");
  const std::size_t a_col = table.column("class_type");
  const std::size_t y_col = table.column("score");
  const std::size_t birth_col = table.column("birth_date");
  std::vector<std::size_t> cat_cols;
  for (const auto& name : star_categorical_columns()) cat_cols.push_back(table.column(name));

  StarRaw raw;
  const auto n = static_cast<Index>(table.rows.size());
  raw.a.resize(n);
  raw.y.resize(n);
  raw.categorical.assign(cat_cols.size(), {});
  for (Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    const auto& row = table.rows[r];
    std::string loc(detail::trim(row[loc_col]));
    if (loc != "rural" && loc != "urban") throw ParseError(r + 1, "location", loc);
    raw.location.push_back(std::move(loc));
    const std::string_view cls = detail::trim(row[a_col]);
    if (cls == "regular" || cls == "1") {
      raw.a(i) = 1;
    } else if (cls == "small" || cls == "0") {
      raw.a(i) = 0;
    } else {
      throw ParseError(r + 1, "class_type", std::string(cls));
    }
    raw.y(i) = numeric_cell(table, r, y_col);
    if (!std::isfinite(raw.y(i))) throw DataError("non_finite", "non-finite score at row " + std::to_string(i), i);
    raw.birth_days.push_back(detail::parse_iso_date(row[birth_col], r));
    for (std::size_t c = 0; c < cat_cols.size(); ++c) {
      raw.categorical[c].emplace_back(detail::trim(row[cat_cols[c]]));
    }
  }
  return raw;
}

inline StarRaw load_star_csv(const std::string& path) { return star_from_table(read_csv_table(path)); }

inline void write_star_csv(const std::string& path, const StarRaw& raw) {
  std::ofstream out(path);
  if (!out) throw FileError(path);
  out << "location,class_type,score,gender,race,birth_date,teacher_id,free_lunch\n";
  for (Index i = 0; i < raw.n(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    const std::chrono::year_month_day ymd{
        std::chrono::sys_days{std::chrono::days{static_cast<int>(raw.birth_days[r])}}};
    char date[16];
    std::snprintf(date, sizeof date, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    out << raw.location[r] << ',' << (raw.a(i) == 1 ? "regular" : "small") << ','
        << detail::format_double(raw.y(i)) << ',' << raw.categorical[0][r] << ','
        << raw.categorical[1][r] << ',' << date << ',' << raw.categorical[2][r] << ','
        << raw.categorical[3][r] << '\n';
  }
}

struct StarPartition {
  Dataset trial;
  Dataset external;
  Index dropped = 0;
  Index dim = 0;
  /// Raw row ids behind each emitted row.
  RowList trial_ids;
  RowList external_ids;
};

/// Encoded covariates: birth date (days since epoch) then one indicator per
/// level of each categorical column, levels sorted over the whole raw table.
inline Dataset encode_star_rows(const StarRaw& raw, std::span<const Index> rows, int source,
                                double trial_e) {
  std::vector<std::vector<std::string>> levels;
  std::vector<std::string> names = {"birth_date"};
  for (std::size_t c = 0; c < raw.categorical.size(); ++c) {
    std::set<std::string> seen(raw.categorical[c].begin(), raw.categorical[c].end());
    levels.emplace_back(seen.begin(), seen.end());
    for (const auto& level : levels.back()) names.push_back(star_categorical_columns()[c] + "=" + level);
  }
  Dataset out;
  const auto n = static_cast<Index>(rows.size());
  out.x = Matrix::Zero(n, static_cast<Index>(names.size()));
  out.s = IntVector::Constant(n, source);
  out.a.resize(n);
  out.y.resize(n);
  out.e = Vector::Constant(n, trial_e);
  out.feature_names = names;
  for (Index r = 0; r < n; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    const auto ri = static_cast<std::size_t>(i);
    out.x(r, 0) = raw.birth_days[ri];
    Index j = 1;
    for (std::size_t c = 0; c < levels.size(); ++c) {
      const auto& lv = levels[c];
      const auto pos = std::lower_bound(lv.begin(), lv.end(), raw.categorical[c][ri]) - lv.begin();
      out.x(r, j + pos) = 1.0;
      j += static_cast<Index>(lv.size());
    }
    out.a(r) = raw.a(i);
    out.y(r) = raw.y(i);
  }
  return out;
}

/// Rural rows are shuffled and split in half (the first floor(n/2) form the
/// trial); the other rural half and every urban row form the external set.
/// Within each location of the external set, treated rows whose outcome is
/// strictly above that location's treated median are removed. Location is not
/// among the emitted covariates.
inline StarPartition build_star_partition(const StarRaw& raw, std::uint64_t seed, double trial_e = 0.5) {
  if (!(trial_e > 0.0 && trial_e < 1.0)) throw ConfigError("trial propensity must be in (0, 1)");
  RowList rural;
  RowList urban;
  for (Index i = 0; i < raw.n(); ++i) {
    (raw.location[static_cast<std::size_t>(i)] == "rural" ? rural : urban).push_back(i);
  }
  if (rural.size() < 2 || urban.empty()) throw DataError("location", "STAR data needs rural and urban rows");
  auto rng = CounterRng::stream(seed, {hash_tag("star-split")});
  shuffle(rural, rng);
  const std::size_t half = rural.size() / 2;
  RowList trial(rural.begin(), rural.begin() + static_cast<std::ptrdiff_t>(half));
  std::sort(trial.begin(), trial.end());

  StarPartition out;
  RowList candidates[2] = {RowList(rural.begin() + static_cast<std::ptrdiff_t>(half), rural.end()), urban};
  RowList external;
  for (RowList& stratum : candidates) {
    std::vector<double> treated;
    for (Index i : stratum) {
      if (raw.a(i) == 1) treated.push_back(raw.y(i));
    }
    if (treated.empty()) throw DataError("location", "a location stratum has no treated rows");
    std::sort(treated.begin(), treated.end());
    const std::size_t m = treated.size();
    const double median = m % 2 == 1 ? treated[m / 2] : 0.5 * (treated[m / 2 - 1] + treated[m / 2]);
    for (Index i : stratum) {
      if (raw.a(i) == 1 && raw.y(i) > median) {
        ++out.dropped;
      } else {
        external.push_back(i);
      }
    }
  }
  std::sort(external.begin(), external.end());

  out.trial = encode_star_rows(raw, trial, 1, trial_e);
  out.external = encode_star_rows(raw, external, 0, trial_e);
  out.dim = out.trial.d();
  out.trial_ids = std::move(trial);
  out.external_ids = std::move(external);
  return out;
}

/// Seeded without-replacement draw of k of n positions, returned sorted.
inline RowList sample_without_replacement(Index n, Index k, CounterRng& rng) {
  if (k < 0 || k > n) throw ConfigError("cannot draw " + std::to_string(k) + " of " + std::to_string(n) + " rows");
  RowList ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < k; ++i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i))) + i;
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// n1 trial and n0 external rows, drawn without replacement with
/// independent streams, so the trial draw does not depend on n0.
inline std::pair<Dataset, Dataset> subsample(const StarPartition& partition, Index n1, Index n0,
                                             std::uint64_t seed) {
  auto trial_rng = CounterRng::stream(seed, {hash_tag("star-subsample"), 1});
  auto external_rng = CounterRng::stream(seed, {hash_tag("star-subsample"), 0});
  const RowList t = sample_without_replacement(partition.trial.n(), n1, trial_rng);
  const RowList e = sample_without_replacement(partition.external.n(), n0, external_rng);
  return {partition.trial.subset(t), partition.external.subset(e)};
}

/// Shape of the synthetic STAR-like table.
struct StarSynthConfig {
  Index n_rural = 2811;
  Index n_urban = 1407;
  /// Teachers are drawn from one pool shared by both locations, so the
  /// covariates carry no location information.
  int teachers = 16;
  /// Urban baseline score shift and urban / rural treatment effects.
  double urban_shift = 1.5;
  double urban_effect = -0.8;
  double rural_effect = -0.2;
  double noise_sd = 0.8;
  std::uint64_t seed = 0;
};

/// STAR-shaped synthetic records for running the pipeline without the real
/// extract. Scores are on a standardized scale; urban schools score higher
/// and respond differently to class size, and teachers add clustered shifts.
inline StarRaw synth_star(const StarSynthConfig& cfg) {
  if (cfg.n_rural < 2 || cfg.n_urban < 1 || cfg.teachers < 1) {
    throw ConfigError("synthetic STAR needs rural and urban rows and at least one teacher");
  }
  auto rng = CounterRng::stream(cfg.seed, {hash_tag("star-synth")});
  std::vector<double> teacher_effect(static_cast<std::size_t>(cfg.teachers));
  for (double& t : teacher_effect) t = 0.4 * rng.normal();

  StarRaw raw;
  const Index n = cfg.n_rural + cfg.n_urban;
  raw.a.resize(n);
  raw.y.resize(n);
  raw.categorical.assign(4, {});
  const double base_day = static_cast<double>(
      std::chrono::sys_days{std::chrono::year{1979} / 9 / 1}.time_since_epoch().count());
  static const char* races[] = {"black", "other", "white"};
  for (Index i = 0; i < n; ++i) {
    const bool urban = i >= cfg.n_rural;
    raw.location.emplace_back(urban ? "urban" : "rural");
    const int teacher = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.teachers)));
    const int female = rng.bernoulli(0.48) ? 1 : 0;
    const double u = rng.uniform();
    const int race = urban ? (u < 0.55 ? 0 : (u < 0.6 ? 1 : 2)) : (u < 0.15 ? 0 : (u < 0.18 ? 1 : 2));
    const int lunch = rng.bernoulli(urban ? 0.65 : 0.4) ? 1 : 0;
    const double age = rng.uniform();  // fraction of the cohort year
    const int a = rng.bernoulli(0.5) ? 1 : 0;

    const double base = (urban ? cfg.urban_shift : 0.0) + 0.2 * female - 0.3 * (race == 0) - 0.4 * lunch +
                        0.3 * (age - 0.5) + teacher_effect[static_cast<std::size_t>(teacher)];
    const double effect = (urban ? cfg.urban_effect : cfg.rural_effect) - 0.1 * lunch + 0.1 * female;
    raw.a(i) = a;
    raw.y(i) = base + a * effect + cfg.noise_sd * rng.normal();
    raw.birth_days.push_back(base_day + std::floor(365.0 * age));
    char id[16];
    std::snprintf(id, sizeof id, "t%03d", teacher);
    raw.categorical[0].emplace_back(female ? "female" : "male");
    raw.categorical[1].emplace_back(races[race]);
    raw.categorical[2].emplace_back(id);
    raw.categorical[3].emplace_back(lunch ? "yes" : "no");
  }
  return raw;
}

}  // namespace qrcate
