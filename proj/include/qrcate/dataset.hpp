#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrcate/error.hpp"
#include "qrcate/rng.hpp"

namespace qrcate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;
using RowList = std::vector<Index>;

/// The fused trial + external table.
///
/// Rows with s = 1 belong to the randomized trial and carry the known
/// randomization probability e = Pr(A = 1 | X, S = 1). For external rows
/// (s = 0) the e column is informational only.
struct Dataset {
  Matrix x;
  IntVector s;
  IntVector a;
  Vector y;
  Vector e;
  std::vector<std::string> feature_names;

  Index n() const noexcept { return y.size(); }
  Index d() const noexcept { return x.cols(); }

  bool is_trial(Index i) const { return s(i) == 1; }

  RowList all_rows() const {
    RowList rows(static_cast<std::size_t>(n()));
    for (Index i = 0; i < n(); ++i) rows[static_cast<std::size_t>(i)] = i;
    return rows;
  }

  RowList rows_where(int source, int arm = -1) const {
    RowList rows;
    for (Index i = 0; i < n(); ++i) {
      if ((source < 0 || s(i) == source) && (arm < 0 || a(i) == arm)) rows.push_back(i);
    }
    return rows;
  }

  RowList trial_rows() const { return rows_where(1); }
  RowList external_rows() const { return rows_where(0); }

  Matrix x_rows(std::span<const Index> rows) const {
    Matrix out(static_cast<Index>(rows.size()), d());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
    return out;
  }

  template <class V>
  static V gather(const V& v, std::span<const Index> rows) {
    V out(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
    return out;
  }

  Dataset subset(std::span<const Index> rows) const {
    Dataset out;
    out.x = x_rows(rows);
    out.s = gather(s, rows);
    out.a = gather(a, rows);
    out.y = gather(y, rows);
    out.e = gather(e, rows);
    out.feature_names = feature_names;
    return out;
  }

  /// Row-wise concatenation; feature layouts must agree.
  static Dataset concat(const Dataset& first, const Dataset& second) {
    if (first.d() != second.d()) {
      throw DataError("dimension", "cannot concatenate datasets with different feature counts");
    }
    Dataset out;
    const Index n = first.n() + second.n();
    out.x.resize(n, first.d());
    out.x << first.x, second.x;
    out.s.resize(n);
    out.s << first.s, second.s;
    out.a.resize(n);
    out.a << first.a, second.a;
    out.y.resize(n);
    out.y << first.y, second.y;
    out.e.resize(n);
    out.e << first.e, second.e;
    out.feature_names = first.feature_names.empty() ? second.feature_names : first.feature_names;
    return out;
  }
};

/// Throws DataError (tagged with the offending row) unless every Dataset
/// invariant holds.
inline void validate(const Dataset& data) {
  const Index n = data.y.size();
  if (n < 1) throw DataError("dimension", "dataset has no rows");
  if (data.x.cols() < 1) throw DataError("dimension", "dataset has no covariates");
  if (data.x.rows() != n || data.s.size() != n || data.a.size() != n || data.e.size() != n) {
    throw DataError("dimension", "x, s, a, y and e must have the same number of rows");
  }
  if (!data.feature_names.empty() &&
      static_cast<Index>(data.feature_names.size()) != data.x.cols()) {
    throw DataError("dimension", "feature name count does not match covariate count");
  }
  for (Index i = 0; i < n; ++i) {
    if (data.s(i) != 0 && data.s(i) != 1) {
      throw DataError("binary", "source indicator must be 0 or 1 at row " + std::to_string(i), i);
    }
    if (data.a(i) != 0 && data.a(i) != 1) {
      throw DataError("binary", "treatment must be 0 or 1 at row " + std::to_string(i), i);
    }
    if (!std::isfinite(data.y(i))) {
      throw DataError("non_finite", "non-finite outcome at row " + std::to_string(i), i);
    }
    if (!data.x.row(i).allFinite()) {
      throw DataError("non_finite", "non-finite covariate at row " + std::to_string(i), i);
    }
    if (data.s(i) == 1 && !(data.e(i) > 0.0 && data.e(i) < 1.0)) {
      throw DataError("propensity",
                      "trial propensity outside (0,1) at row " + std::to_string(i), i);
    }
  }
}

/// Assignment of rows to K folds, stratified by a label per row.
struct FoldPlan {
  std::vector<int> assignment;
  int k = 0;

  RowList rows_in(int fold) const {
    RowList rows;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == fold) rows.push_back(static_cast<Index>(i));
    }
    return rows;
  }

  RowList rows_not_in(int fold) const {
    RowList rows;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] != fold) rows.push_back(static_cast<Index>(i));
    }
    return rows;
  }
};

/// Stratified fold plan: within each stratum, positions are shuffled with a
/// stream keyed on (seed, stratum) and dealt round-robin, so fold sizes within
/// a stratum differ by at most one. The plan depends only on the stratum
/// sequence and the seed. Every non-empty stratum needs at least k rows.
inline FoldPlan make_folds(std::span<const int> strata, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  FoldPlan plan;
  plan.k = k;
  plan.assignment.assign(strata.size(), -1);

  std::vector<int> labels(strata.begin(), strata.end());
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

  for (int label : labels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < strata.size(); ++i) {
      if (strata[i] == label) members.push_back(i);
    }
    if (members.size() < static_cast<std::size_t>(k)) {
      throw DataError("fold", "stratum " + std::to_string(label) + " has " +
                                  std::to_string(members.size()) + " rows, fewer than " +
                                  std::to_string(k) + " folds");
    }
    auto rng = CounterRng::stream(seed, {hash_tag("folds"),
                                         static_cast<std::uint64_t>(static_cast<std::int64_t>(label))});
    std::vector<std::size_t> order(members.size());
    for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
    shuffle(order, rng);
    for (std::size_t p = 0; p < order.size(); ++p) {
      plan.assignment[members[order[p]]] = static_cast<int>(p % static_cast<std::size_t>(k));
    }
  }
  return plan;
}

/// Fold plan stratified by the source indicator S.
inline FoldPlan make_folds(const Dataset& data, int k, std::uint64_t seed) {
  std::vector<int> strata(data.s.data(), data.s.data() + data.s.size());
  return make_folds(strata, k, seed);
}

}  // namespace qrcate
