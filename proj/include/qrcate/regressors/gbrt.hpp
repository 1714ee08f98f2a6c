#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"

namespace qrcate {

struct GbrtConfig {
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_leaf = 20;
  int bins = 255;

  void validate() const {
    if (rounds < 1) throw ConfigError("gbrt rounds must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
      throw ConfigError("gbrt learning rate must be in (0, 1]");
    }
    if (max_depth < 1) throw ConfigError("gbrt max depth must be >= 1");
    if (min_leaf < 1) throw ConfigError("gbrt min leaf must be >= 1");
    if (bins < 2 || bins > 256) throw ConfigError("gbrt bins must be in [2, 256]");
  }
};

/// Per-feature quantile thresholds. A value v falls in bin b when
/// thresholds[b - 1] < v <= thresholds[b]; going left at split threshold t
/// means v <= t.
class BinMapper {
 public:
  BinMapper() = default;

  BinMapper(const Matrix& x, int max_bins) {
    thresholds_.resize(static_cast<std::size_t>(x.cols()));
    std::vector<double> values(static_cast<std::size_t>(x.rows()));
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) values[static_cast<std::size_t>(i)] = x(i, j);
      std::sort(values.begin(), values.end());
      std::vector<double> distinct = values;
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      auto& thr = thresholds_[static_cast<std::size_t>(j)];
      if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        for (std::size_t k = 1; k < distinct.size(); ++k) {
          thr.push_back(0.5 * (distinct[k - 1] + distinct[k]));
        }
      } else {
        const std::size_t m = values.size();
        for (int q = 1; q < max_bins; ++q) {
          const std::size_t idx = static_cast<std::size_t>(q) * m / static_cast<std::size_t>(max_bins);
          if (idx == 0 || idx >= m) continue;
          const double t = 0.5 * (values[idx - 1] + values[idx]);
          if (thr.empty() || t > thr.back()) thr.push_back(t);
        }
        // The largest value must land strictly above the last threshold.
        while (!thr.empty() && thr.back() >= values.back()) thr.pop_back();
      }
    }
  }

  int bin_count(Index feature) const {
    return static_cast<int>(thresholds_[static_cast<std::size_t>(feature)].size()) + 1;
  }

  double threshold(Index feature, int bin) const {
    return thresholds_[static_cast<std::size_t>(feature)][static_cast<std::size_t>(bin)];
  }

  std::uint8_t bin(Index feature, double value) const {
    const auto& thr = thresholds_[static_cast<std::size_t>(feature)];
    return static_cast<std::uint8_t>(std::lower_bound(thr.begin(), thr.end(), value) - thr.begin());
  }

 private:
  std::vector<std::vector<double>> thresholds_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double gain = 0.0;
};

class RegressionTree {
 public:
  std::vector<TreeNode> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int id = 0;
    while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
      const TreeNode& node = nodes[static_cast<std::size_t>(id)];
      id = row(node.feature) <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(id)].value;
  }

  bool is_stump_leaf() const { return nodes.size() == 1; }
};

class GbrtModel {
 public:
  double base = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;
  /// Weighted training squared error after initialization (index 0) and after
  /// each boosting round.
  std::vector<double> training_loss;

  Vector predict(const Matrix& x) const {
    Vector out = Vector::Constant(x.rows(), base);
    for (const auto& tree : trees) {
      for (Index i = 0; i < x.rows(); ++i) out(i) += learning_rate * tree.predict(x.row(i));
    }
    return out;
  }
};

namespace detail {

struct HistBin {
  double grad = 0.0;  // sum of w * residual
  double weight = 0.0;
  Index count = 0;
};

struct SplitChoice {
  int feature = -1;
  int bin = -1;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::uint8_t>& binned, Index n, const BinMapper& mapper, Index d,
              const GbrtConfig& config)
      : binned_(binned), n_(n), mapper_(mapper), d_(d), config_(config) {}

  RegressionTree build(const Vector& residual, const Vector& w) {
    RegressionTree tree;
    std::vector<Index> rows(static_cast<std::size_t>(n_));
    for (Index i = 0; i < n_; ++i) rows[static_cast<std::size_t>(i)] = i;
    grow(tree, rows, 0, residual, w);
    return tree;
  }

 private:
  std::uint8_t code(Index row, Index feature) const {
    return binned_[static_cast<std::size_t>(feature * n_ + row)];
  }

  int grow(RegressionTree& tree, std::vector<Index>& rows, int depth, const Vector& r,
           const Vector& w) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double g_total = 0.0;
    double w_total = 0.0;
    for (Index i : rows) {
      g_total += w(i) * r(i);
      w_total += w(i);
    }
    tree.nodes[static_cast<std::size_t>(id)].value = w_total > 0.0 ? g_total / w_total : 0.0;

    const auto count = static_cast<Index>(rows.size());
    if (depth >= config_.max_depth || count < 2 * static_cast<Index>(config_.min_leaf)) return id;

    const SplitChoice best = find_split(rows, r, w, g_total, w_total);
    if (best.feature < 0) return id;

    std::vector<Index> left_rows;
    std::vector<Index> right_rows;
    for (Index i : rows) {
      (code(i, best.feature) <= best.bin ? left_rows : right_rows).push_back(i);
    }
    rows.clear();
    rows.shrink_to_fit();

    const int left = grow(tree, left_rows, depth + 1, r, w);
    const int right = grow(tree, right_rows, depth + 1, r, w);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = mapper_.threshold(best.feature, best.bin);
    node.left = left;
    node.right = right;
    node.gain = best.gain;
    return id;
  }

  SplitChoice find_split(const std::vector<Index>& rows, const Vector& r, const Vector& w,
                         double g_total, double w_total) const {
    SplitChoice best;
    const double parent = w_total > 0.0 ? g_total * g_total / w_total : 0.0;
    const auto count = static_cast<Index>(rows.size());
    const Index min_leaf = config_.min_leaf;
    std::vector<HistBin> hist;
    for (Index j = 0; j < d_; ++j) {
      const int nb = mapper_.bin_count(j);
      if (nb < 2) continue;
      hist.assign(static_cast<std::size_t>(nb), HistBin{});
      for (Index i : rows) {
        HistBin& h = hist[code(i, j)];
        h.grad += w(i) * r(i);
        h.weight += w(i);
        ++h.count;
      }
      double g_left = 0.0;
      double w_left = 0.0;
      Index c_left = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        const HistBin& h = hist[static_cast<std::size_t>(b)];
        g_left += h.grad;
        w_left += h.weight;
        c_left += h.count;
        if (h.count == 0) continue;
        const Index c_right = count - c_left;
        if (c_left < min_leaf) continue;
        if (c_right < min_leaf) break;
        const double w_right = w_total - w_left;
        if (!(w_left > 0.0) || !(w_right > 0.0)) continue;
        const double g_right = g_total - g_left;
        const double gain = g_left * g_left / w_left + g_right * g_right / w_right - parent;
        if (gain > best.gain) {
          best.feature = static_cast<int>(j);
          best.bin = b;
          best.gain = gain;
        }
      }
    }
    return best;
  }

  const std::vector<std::uint8_t>& binned_;
  Index n_;
  const BinMapper& mapper_;
  Index d_;
  const GbrtConfig& config_;
};

}  // namespace detail

/// Stagewise least-squares boosting with histogram-split regression trees.
///
/// Starts from the weighted mean of y; each round fits a depth-limited tree
/// to the current residuals (weighted squared-error gain, leaves hold the
/// weighted mean residual, at least min_leaf rows per child) and adds it
/// scaled by the learning rate.
inline GbrtModel fit_gbrt(const Matrix& x, const Vector& y, const Vector& w,
                          const GbrtConfig& config) {
  config.validate();
  const Index n = x.rows();
  const Index d = x.cols();
  if (y.size() != n || w.size() != n) {
    throw DataError("dimension", "fit_gbrt: x, y and w must have the same rows");
  }
  if ((w.array() < 0.0).any() || !w.allFinite()) {
    throw DataError("weights", "weights must be finite and non-negative");
  }
  const double w_total = w.sum();
  if (!(w_total > 0.0)) throw FitError("fit_gbrt: weights sum to zero");

  const BinMapper mapper(x, config.bins);
  std::vector<std::uint8_t> binned(static_cast<std::size_t>(n * d));
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < n; ++i) binned[static_cast<std::size_t>(j * n + i)] = mapper.bin(j, x(i, j));
  }

  GbrtModel model;
  model.learning_rate = config.learning_rate;
  model.base = w.dot(y) / w_total;
  Vector fitted = Vector::Constant(n, model.base);
  auto loss = [&] { return (w.array() * (y - fitted).array().square()).sum(); };
  model.training_loss.push_back(loss());

  detail::TreeBuilder builder(binned, n, mapper, d, config);
  model.trees.reserve(static_cast<std::size_t>(config.rounds));
  for (int round = 0; round < config.rounds; ++round) {
    const Vector residual = y - fitted;
    RegressionTree tree = builder.build(residual, w);
    for (Index i = 0; i < n; ++i) fitted(i) += config.learning_rate * tree.predict(x.row(i));
    model.trees.push_back(std::move(tree));
    model.training_loss.push_back(loss());
  }
  return model;
}

}  // namespace qrcate
