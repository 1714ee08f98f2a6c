#include <gtest/gtest.h>

#include "qrcate/simgen.hpp"

using namespace qrcate;

TEST(Simgen, ShapesAndSources) {
  const LabeledDraw draw = generate(DGPConfig::violated(100, 300, 1));
  EXPECT_EQ(draw.data.n(), 400);
  EXPECT_EQ(draw.data.d(), 5);
  EXPECT_EQ(draw.x_full.cols(), 7);
  EXPECT_EQ(draw.data.s.head(100).minCoeff(), 1);
  EXPECT_EQ(draw.data.s.tail(300).maxCoeff(), 0);
  EXPECT_EQ(draw.data.e.head(100), Vector::Constant(100, 0.5));
  EXPECT_NO_THROW(validate(draw.data));
  EXPECT_EQ(draw.data.x, draw.x_full.leftCols(5));
}

TEST(Simgen, TrialRowsDoNotDependOnExternalSize) {
  const LabeledDraw a = generate(DGPConfig::aligned(50, 10, 2));
  const LabeledDraw b = generate(DGPConfig::aligned(50, 500, 2));
  EXPECT_EQ(a.data.x.topRows(50), b.data.x.topRows(50));
  EXPECT_EQ(a.data.y.head(50), b.data.y.head(50));
  EXPECT_EQ(a.data.x.bottomRows(10), b.data.x.middleRows(50, 10));
}

TEST(Simgen, CovariateMoments) {
  const DGPConfig cfg = DGPConfig::aligned(40000, 40000, 3);
  const LabeledDraw draw = generate(cfg);
  const Matrix trial = draw.x_full.topRows(40000);
  const Matrix external = draw.x_full.bottomRows(40000);
  const double n = 40000.0;
  const double sd = std::pow(5.0, -0.25);  // diagonal of Sigma / sqrt(d) is 1 / sqrt(5)
  for (int j = 0; j < 5; ++j) {
    EXPECT_NEAR(trial.col(j).mean(), 0.0, 4.0 * sd / std::sqrt(n));
    EXPECT_NEAR(external.col(j).mean(), 0.2, 4.0 * sd / std::sqrt(n));
  }
  const Matrix centered = trial.rowwise() - trial.colwise().mean();
  const Matrix cov = centered.transpose() * centered / n;
  EXPECT_NEAR(cov(0, 0), 1.0 / std::sqrt(5.0), 0.02);
  EXPECT_NEAR(cov(0, 1), 0.1 / std::sqrt(5.0), 0.02);
}

TEST(Simgen, TreatmentRates) {
  const LabeledDraw draw = generate(DGPConfig::aligned(20000, 20000, 4));
  const double trial = draw.data.a.head(20000).cast<double>().mean();
  EXPECT_NEAR(trial, 0.5, 0.02);
  // External propensity is the logistic of alpha' x, recorded in e.
  const double ext = draw.data.a.tail(20000).cast<double>().mean();
  EXPECT_NEAR(ext, draw.data.e.tail(20000).mean(), 0.02);
}

TEST(Simgen, TrueCateFormulas) {
  DGPConfig cfg = DGPConfig::aligned(1, 1);
  Eigen::RowVectorXd x(5);
  x << 1, 2, 3, 4, 5;
  EXPECT_DOUBLE_EQ(true_cate(cfg, x, 1), 3.0);
  EXPECT_DOUBLE_EQ(true_cate(cfg, x, 0), 3.0);
  cfg = DGPConfig::power(1, 1, 0.1);
  EXPECT_DOUBLE_EQ(true_cate(cfg, x, 1), 0.1 * 5 * 1);
  EXPECT_DOUBLE_EQ(true_cate(cfg, x, 0), (0.1 + 0.05) * 5 * 1);
  EXPECT_DOUBLE_EQ(baseline(cfg, x), 3.0);
}

TEST(Simgen, NoiseVarianceAroundTruth) {
  const DGPConfig cfg = DGPConfig::power(50000, 0, 0.0, 5);
  const LabeledDraw draw = generate(cfg);
  double s2 = 0.0;
  for (Index i = 0; i < draw.data.n(); ++i) {
    const double mean = baseline(cfg, draw.x_full.row(i)) + draw.data.a(i) * draw.tau(i);
    s2 += (draw.data.y(i) - mean) * (draw.data.y(i) - mean);
  }
  EXPECT_NEAR(s2 / 50000.0, 0.25, 0.01);
}

TEST(Simgen, EvaluationDrawIsFreshTrialData) {
  const DGPConfig cfg = DGPConfig::aligned(100, 100, 6);
  const LabeledDraw eval = generate_evaluation(cfg, 300);
  EXPECT_EQ(eval.data.n(), 300);
  EXPECT_EQ(eval.data.s.minCoeff(), 1);
  EXPECT_NE(eval.data.x.row(0), generate(cfg).data.x.row(0));
}

TEST(Simgen, ConfigValidation) {
  DGPConfig cfg = DGPConfig::aligned(10, 10);
  cfg.alpha = Vector::Ones(3);
  EXPECT_THROW(generate(cfg), ConfigError);
  cfg = DGPConfig::aligned(10, 10);
  cfg.masked = 5;
  EXPECT_THROW(generate(cfg), ConfigError);
  EXPECT_EQ(parse_scenario("violated"), Scenario::rmse_violated);
  EXPECT_THROW(parse_scenario("other"), ConfigError);
}
