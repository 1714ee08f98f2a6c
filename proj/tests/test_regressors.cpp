#include <gtest/gtest.h>

#include <cmath>

#include "qrcate/regressors.hpp"
#include "qrcate/rng.hpp"

using namespace qrcate;

namespace {

Matrix random_matrix(Index n, Index d, CounterRng& rng) {
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rng.normal();
  }
  return x;
}

}  // namespace

TEST(WeightedLinear, MatchesNormalEquations) {
  auto rng = CounterRng::stream(1, {});
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 50 + 10 * rep;
    const Index d = 1 + rep % 4;
    const Matrix x = random_matrix(n, d, rng);
    Vector y(n);
    Vector w(n);
    for (Index i = 0; i < n; ++i) {
      y(i) = 2.0 + x.row(i).sum() + rng.normal();
      w(i) = 0.1 + rng.uniform();
    }
    for (double ridge : {0.0, 0.5}) {
      const LinearFit fit = fit_weighted_linear(x, y, w, ridge);
      Matrix z(n, d + 1);
      z.col(0).setOnes();
      z.rightCols(d) = x;
      Matrix gram = z.transpose() * w.asDiagonal() * z;
      gram.diagonal().tail(d).array() += ridge;
      const Vector beta = gram.ldlt().solve(z.transpose() * w.asDiagonal() * y);
      EXPECT_NEAR(fit.intercept, beta(0), 1e-8);
      for (Index j = 0; j < d; ++j) EXPECT_NEAR(fit.coef(j), beta(j + 1), 1e-8);
    }
  }
}

TEST(WeightedLinear, ZeroWeightRowsAreIgnored) {
  Matrix x(4, 1);
  x << 0, 1, 2, 100;
  Vector y(4);
  y << 1, 3, 5, -1000;
  Vector w(4);
  w << 1, 1, 1, 0;
  const LinearFit fit = fit_weighted_linear(x, y, w, 0.0);
  EXPECT_NEAR(fit.intercept, 1.0, 1e-12);
  EXPECT_NEAR(fit.coef(0), 2.0, 1e-12);
}

TEST(WeightedLinear, RejectsBadInput) {
  Matrix x = Matrix::Ones(3, 1);
  Vector y = Vector::Ones(3);
  EXPECT_THROW(fit_weighted_linear(x, y, Vector::Zero(3), 0.0), FitError);
  EXPECT_THROW(fit_weighted_linear(x, y, -Vector::Ones(3), 0.0), DataError);
  EXPECT_THROW(fit_weighted_linear(x, y, Vector::Ones(3), -1.0), ConfigError);
}

TEST(WeightedLinear, SingularDesignFallsBackToJitter) {
  Matrix x(5, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10;
  Vector y(5);
  y << 1, 2, 3, 4, 5;
  const LinearFit fit = fit_weighted_linear(x, y, Vector::Ones(5), 0.0);
  EXPECT_TRUE(fit.jittered);
  EXPECT_TRUE(fit.predict(x).isApprox(y, 1e-6));
}

TEST(Ols, StandardErrorsMatchClassicalFormula) {
  auto rng = CounterRng::stream(2, {});
  const Matrix x = random_matrix(40, 2, rng);
  Matrix design(40, 3);
  design.col(0).setOnes();
  design.rightCols(2) = x;
  Vector y(40);
  for (Index i = 0; i < 40; ++i) y(i) = 1.0 - x(i, 0) + 0.5 * rng.normal();
  const OlsResult r = ols(design, y);
  const Vector beta = (design.transpose() * design).ldlt().solve(design.transpose() * y);
  const double s2 = (y - design * beta).squaredNorm() / 37.0;
  const Matrix cov = s2 * (design.transpose() * design).inverse();
  for (Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(r.coef(j), beta(j), 1e-10);
    EXPECT_NEAR(r.se(j), std::sqrt(cov(j, j)), 1e-10);
  }
  EXPECT_EQ(r.dof, 37);
}

TEST(Logistic, GradientMatchesCentralDifferences) {
  auto rng = CounterRng::stream(3, {});
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 30;
    const Index d = 3;
    const Matrix x = random_matrix(n, d, rng);
    Vector labels(n);
    for (Index i = 0; i < n; ++i) labels(i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    const double b0 = rng.normal();
    Vector b(d);
    for (Index j = 0; j < d; ++j) b(j) = rng.normal();
    const double penalty = 0.3 * rep;
    const Vector grad = logistic_gradient(x, labels, b0, b, penalty);
    const double h = 1e-5;
    for (Index k = 0; k <= d; ++k) {
      double plus;
      double minus;
      if (k == 0) {
        plus = logistic_objective(x, labels, b0 + h, b, penalty);
        minus = logistic_objective(x, labels, b0 - h, b, penalty);
      } else {
        Vector bp = b;
        Vector bm = b;
        bp(k - 1) += h;
        bm(k - 1) -= h;
        plus = logistic_objective(x, labels, b0, bp, penalty);
        minus = logistic_objective(x, labels, b0, bm, penalty);
      }
      const double fd = (plus - minus) / (2.0 * h);
      EXPECT_LE(std::abs(fd - grad(k)), 1e-4 * std::max(1.0, std::abs(grad(k))));
    }
  }
}

TEST(Logistic, SolverReachesStationaryPoint) {
  auto rng = CounterRng::stream(4, {});
  const Matrix x = random_matrix(200, 2, rng);
  Vector labels(200);
  for (Index i = 0; i < 200; ++i) labels(i) = rng.bernoulli(1.0 / (1.0 + std::exp(-x(i, 0)))) ? 1.0 : 0.0;
  const LogisticSolution sol = fit_ridge_logistic(x, labels, 0.1, 100, 1e-8);
  EXPECT_TRUE(sol.converged);
  EXPECT_LT(logistic_gradient(x, labels, sol.intercept, sol.coef, 0.1).lpNorm<Eigen::Infinity>(), 1e-8 * 200);
}

TEST(Logistic, HeavyPenaltyGivesLabelMean) {
  auto rng = CounterRng::stream(5, {});
  const Matrix x = random_matrix(100, 3, rng);
  IntVector labels(100);
  for (Index i = 0; i < 100; ++i) labels(i) = i % 4 == 0 ? 1 : 0;
  ProbClassifierSpec spec;
  spec.penalty_grid = {1e12};
  const FittedClassifier fit = fit_logistic(x, labels, spec);
  EXPECT_LT(fit.coef.lpNorm<Eigen::Infinity>(), 1e-8);
  const Vector p = fit.predict_proba(x);
  EXPECT_NEAR(p.minCoeff(), 0.25, 1e-6);
  EXPECT_NEAR(p.maxCoeff(), 0.25, 1e-6);
}

TEST(Logistic, PredictionsAreClipped) {
  Matrix x(40, 1);
  IntVector labels(40);
  for (Index i = 0; i < 40; ++i) {
    x(i, 0) = static_cast<double>(i) - 19.5 + (i % 2 == 0 ? 0.1 : -0.1);
    labels(i) = i >= 20 ? 1 : 0;
  }
  ProbClassifierSpec spec;
  spec.penalty_grid = {1e-6};
  const Vector p = fit_logistic(x, labels, spec).predict_proba(x);
  EXPECT_GE(p.minCoeff(), 0.01);
  EXPECT_LE(p.maxCoeff(), 0.99);
  EXPECT_EQ(p.minCoeff(), 0.01);
}

TEST(Logistic, SingleClassIsAFitError) {
  const Matrix x = Matrix::Ones(10, 1);
  EXPECT_THROW(fit_logistic(x, IntVector::Ones(10), {}), FitError);
}

TEST(Logistic, StandardizationLeavesUnpenalizedFitUnchanged) {
  auto rng = CounterRng::stream(6, {});
  Matrix x = random_matrix(300, 2, rng);
  IntVector labels(300);
  for (Index i = 0; i < 300; ++i) labels(i) = rng.bernoulli(1.0 / (1.0 + std::exp(-x(i, 1)))) ? 1 : 0;
  ProbClassifierSpec spec;
  spec.penalty_grid = {0.0};
  const Vector p = fit_logistic(x, labels, spec).predict_proba(x);
  Matrix shifted = x;
  shifted.col(0) = 1000.0 * x.col(0).array() + 5000.0;
  const Vector q = fit_logistic(shifted, labels, spec).predict_proba(shifted);
  EXPECT_LT((p - q).lpNorm<Eigen::Infinity>(), 1e-7);
}

TEST(Gbrt, TrainingLossNeverIncreases) {
  auto rng = CounterRng::stream(7, {});
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 100 + 20 * rep;
    const Matrix x = random_matrix(n, 3, rng);
    Vector y(n);
    Vector w(n);
    for (Index i = 0; i < n; ++i) {
      y(i) = std::sin(2.0 * x(i, 0)) + x(i, 1) * x(i, 2) + 0.3 * rng.normal();
      w(i) = rep % 2 == 0 ? 1.0 : 0.2 + rng.uniform();
    }
    GbrtConfig cfg;
    cfg.rounds = 30;
    cfg.min_leaf = 5 + rep % 3;
    cfg.bins = rep % 3 == 0 ? 16 : 255;
    const GbrtModel model = fit_gbrt(x, y, w, cfg);
    ASSERT_EQ(model.training_loss.size(), 31u);
    for (std::size_t t = 1; t < model.training_loss.size(); ++t) {
      EXPECT_LE(model.training_loss[t], model.training_loss[t - 1]) << "rep " << rep << " round " << t;
    }
  }
}

TEST(Gbrt, DepthOneTreeMatchesExhaustiveSplit) {
  auto rng = CounterRng::stream(8, {});
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 30 + rep;
    const Index d = 2 + rep % 2;
    const Matrix x = random_matrix(n, d, rng);
    Vector y(n);
    Vector w(n);
    for (Index i = 0; i < n; ++i) {
      y(i) = (x(i, 0) > 0.3 ? 1.0 : 0.0) + x(i, 1) + 0.5 * rng.normal();
      w(i) = 0.5 + rng.uniform();
    }
    GbrtConfig cfg;
    cfg.rounds = 1;
    cfg.max_depth = 1;
    cfg.learning_rate = 1.0;
    cfg.min_leaf = 4;
    const GbrtModel model = fit_gbrt(x, y, w, cfg);

    // Oracle: every midpoint between consecutive distinct values.
    const double base = w.dot(y) / w.sum();
    const Vector r = y.array() - base;
    int best_j = -1;
    double best_t = 0.0;
    double best_sse = (w.array() * r.array().square()).sum();
    for (Index j = 0; j < d; ++j) {
      std::vector<double> v(x.col(j).data(), x.col(j).data() + n);
      std::sort(v.begin(), v.end());
      for (std::size_t k = 1; k < v.size(); ++k) {
        const double t = 0.5 * (v[k - 1] + v[k]);
        double wl = 0, gl = 0, wr = 0, gr = 0;
        Index cl = 0;
        for (Index i = 0; i < n; ++i) {
          if (x(i, j) <= t) {
            wl += w(i); gl += w(i) * r(i); ++cl;
          } else {
            wr += w(i); gr += w(i) * r(i);
          }
        }
        if (cl < cfg.min_leaf || n - cl < cfg.min_leaf) continue;
        double sse = 0.0;
        for (Index i = 0; i < n; ++i) {
          const double fit = x(i, j) <= t ? gl / wl : gr / wr;
          sse += w(i) * (r(i) - fit) * (r(i) - fit);
        }
        if (sse < best_sse - 1e-12) {
          best_sse = sse;
          best_j = static_cast<int>(j);
          best_t = t;
        }
      }
    }
    ASSERT_EQ(model.trees.size(), 1u);
    const RegressionTree& tree = model.trees.front();
    ASSERT_EQ(tree.nodes.front().feature, best_j) << "rep " << rep;
    EXPECT_EQ(tree.nodes.front().threshold, best_t);
    EXPECT_NEAR(model.training_loss.back(), best_sse, 1e-9 * best_sse);
  }
}

TEST(Gbrt, ConstantTargetGivesConstantModel) {
  auto rng = CounterRng::stream(9, {});
  const Matrix x = random_matrix(50, 2, rng);
  const Vector y = Vector::Constant(50, 3.5);
  const GbrtModel model = fit_gbrt(x, y, Vector::Ones(50), {});
  EXPECT_TRUE(model.predict(x).isApprox(y));
  for (const auto& tree : model.trees) EXPECT_TRUE(tree.is_stump_leaf());
}

TEST(Gbrt, MinLeafIsRespected) {
  auto rng = CounterRng::stream(10, {});
  const Matrix x = random_matrix(60, 1, rng);
  Vector y = x.col(0);
  GbrtConfig cfg;
  cfg.rounds = 3;
  cfg.min_leaf = 31;
  const GbrtModel model = fit_gbrt(x, y, Vector::Ones(60), cfg);
  for (const auto& tree : model.trees) EXPECT_TRUE(tree.is_stump_leaf());
}

TEST(Regressor, DispatchesOnKind) {
  auto rng = CounterRng::stream(11, {});
  const Matrix x = random_matrix(80, 2, rng);
  const Vector y = 1.0 + 2.0 * x.col(0).array();
  const FittedRegressor lin = fit_regressor(RegressorSpec::linear(), x, y);
  ASSERT_NE(lin.linear(), nullptr);
  EXPECT_TRUE(lin.predict(x).isApprox(y, 1e-10));
  const FittedRegressor boosted = fit_regressor(RegressorSpec::boosted(), x, y);
  EXPECT_NE(boosted.boosted(), nullptr);
  EXPECT_THROW(parse_regressor_kind("forest"), ConfigError);
  EXPECT_THROW(FittedRegressor().predict(x), FitError);
}
