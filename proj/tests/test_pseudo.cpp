#include <gtest/gtest.h>

#include "qrcate/pseudo.hpp"
#include "qrcate/rng.hpp"

using namespace qrcate;

TEST(PseudoOutcome, HandComputedValues) {
  // a = 1, e = 0.5: 2 (y - h1) + h1 - h0
  EXPECT_DOUBLE_EQ(pseudo_outcome(1, 3.0, 0.5, 1.0, 0.5), 2.0 * 2.0 + 0.5);
  // a = 0, e = 0.5: -2 (y - h0) + h1 - h0
  EXPECT_DOUBLE_EQ(pseudo_outcome(0, 3.0, 0.5, 1.0, 0.5), -2.0 * 2.5 + 0.5);
  // eta = {0, 0}: a y / e - (1 - a) y / (1 - e)
  EXPECT_DOUBLE_EQ(pseudo_outcome(1, 2.0, 0.25, 0.0, 0.0), 8.0);
  EXPECT_DOUBLE_EQ(pseudo_outcome(0, 2.0, 0.25, 0.0, 0.0), -2.0 / 0.75);
}

TEST(PseudoOutcome, CorrectOutcomeModelsGiveTheirDifference) {
  for (int a : {0, 1}) {
    const double h1 = 1.7;
    const double h0 = -0.4;
    const double y = a == 1 ? h1 : h0;
    EXPECT_DOUBLE_EQ(pseudo_outcome(a, y, 0.3, h1, h0), h1 - h0);
  }
}

TEST(PseudoOutcome, RejectsDegeneratePropensity) {
  EXPECT_THROW(pseudo_outcome(1, 1.0, 0.0, 0.0, 0.0), DataError);
  EXPECT_THROW(pseudo_outcome(1, 1.0, 1.0, 0.0, 0.0), DataError);
}

TEST(PseudoOutcome, VectorFormRejectsExternalRows) {
  Dataset d;
  d.x = Matrix::Zero(3, 1);
  d.s = IntVector(3);
  d.s << 1, 0, 1;
  d.a = IntVector(3);
  d.a << 1, 0, 0;
  d.y = Vector::Ones(3);
  d.e = Vector::Constant(3, 0.5);
  const RowList trial = {0, 2};
  const PseudoVector psi = pseudo_outcomes(d, trial, NuisancePair::zero());
  EXPECT_DOUBLE_EQ(psi.values(0), 2.0);
  EXPECT_DOUBLE_EQ(psi.values(1), -2.0);
  EXPECT_EQ(psi.tag, "zero");
  const RowList all = {0, 1};
  EXPECT_THROW(pseudo_outcomes(d, all, NuisancePair::zero()), DataError);
}

TEST(PseudoOutcome, MonteCarloUnbiasedForArbitraryEta) {
  // tau(x) = x, y = x + a tau(x) + noise, e = 0.3; eta is deliberately wrong.
  auto rng = CounterRng::stream(21, {});
  const int n = 200000;
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    const int a = rng.bernoulli(0.3) ? 1 : 0;
    const double y = x + a * x + rng.normal();
    const double d = pseudo_outcome(a, y, 0.3, 5.0 * x * x, -2.0) - x;
    sum += d;
    sum2 += d * d;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean), 4.0 * se);
}

TEST(ArmWeights, OddsPowers) {
  Vector pi(2);
  pi << 0.5, 0.2;
  Vector e(2);
  e << 0.5, 0.25;
  const Vector w1 = arm_weights(1, pi, e);
  const Vector w0 = arm_weights(0, pi, e);
  EXPECT_DOUBLE_EQ(w1(0), 0.5);
  EXPECT_DOUBLE_EQ(w1(1), 0.2 * 3.0);
  EXPECT_DOUBLE_EQ(w0(1), 0.2 / 3.0);
}

TEST(ArmLoss, SumsWeightedSquares) {
  Dataset d;
  d.x = Matrix(3, 1);
  d.x << 0.0, 1.0, 2.0;
  d.s = IntVector(3);
  d.s << 1, 0, 1;
  d.a = IntVector::Ones(3);
  d.y = Vector(3);
  d.y << 1.0, 2.0, 4.0;
  d.e = Vector::Constant(3, 0.25);
  const RowList rows = {0, 1, 2};
  auto h = [](const Matrix& x) -> Vector { return x.col(0); };
  auto pi = [](const Matrix& x) -> Vector { return Vector::Constant(x.rows(), 0.5); };
  // weights 0.5 * 3, residuals 1, 1, 2
  EXPECT_DOUBLE_EQ(arm_loss(d, rows, 1, h, pi), 1.5 * (1.0 + 1.0 + 4.0));
  EXPECT_THROW(arm_loss(d, rows, 0, h, pi), DataError);
}

TEST(TrialPropensity, ConstantMustAgreeAcrossTrialRows) {
  Dataset d;
  d.x = Matrix::Zero(3, 1);
  d.s = IntVector(3);
  d.s << 1, 1, 0;
  d.e = Vector(3);
  d.e << 0.4, 0.4, 0.9;
  d.a = IntVector::Zero(3);
  d.y = Vector::Zero(3);
  EXPECT_DOUBLE_EQ(TrialPropensity::constant_from(d), 0.4);
  const RowList rows = {0, 2};
  const Vector v = TrialPropensity{}.for_rows(d, rows);
  EXPECT_DOUBLE_EQ(v(1), 0.4);
  d.e(1) = 0.6;
  EXPECT_THROW(TrialPropensity::constant_from(d), ConfigError);
  TrialPropensity fn{[](const Eigen::Ref<const Eigen::RowVectorXd>&) { return 0.7; }};
  EXPECT_DOUBLE_EQ(fn.for_rows(d, rows)(1), 0.7);
  EXPECT_DOUBLE_EQ(fn.for_rows(d, rows)(0), 0.4);
}

TEST(RiskDecomposition, ComponentsSumToPseudoRisk) {
  auto rng = CounterRng::stream(22, {});
  Vector tau(50);
  Vector pred(50);
  Vector psi(50);
  for (Index i = 0; i < 50; ++i) {
    tau(i) = rng.normal();
    pred(i) = rng.normal();
    psi(i) = tau(i) + 3.0 * rng.normal();
  }
  const RiskDecomposition r = risk_decomposition(tau, pred, psi);
  EXPECT_NEAR(r.total(), empirical_pseudo_risk(pred, psi), 1e-12);
  EXPECT_NEAR(r.true_error, (tau - pred).squaredNorm() / 50.0, 1e-15);
}
