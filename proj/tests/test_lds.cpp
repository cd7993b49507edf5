#include <gtest/gtest.h>

#include <cmath>

#include "nkpc/lds.hpp"

using namespace nkpc;

namespace {

MatrixXd sample_cov(const std::vector<VectorXd>& xs) {
  MatrixXd c = MatrixXd::Zero(xs[0].size(), xs[0].size());
  for (const auto& x : xs) c += x * x.transpose();
  return c / double(xs.size());
}

}  // namespace

TEST(SampleGaussian, ZeroCovarianceGivesZero) {
  RngStream rng(1, 0);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_gaussian(MatrixXd::Zero(3, 3), rng), VectorXd::Zero(3));
}

TEST(SampleGaussian, CovarianceMatchesRequest) {
  RngStream rng(2, 0);
  const MatrixXd cov = 1e-4 * MatrixXd::Identity(2, 2);
  std::vector<VectorXd> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(sample_gaussian(cov, rng));
  const MatrixXd c = sample_cov(xs);
  EXPECT_NEAR(c(0, 0), 1e-4, 5e-6);
  EXPECT_NEAR(c(1, 1), 1e-4, 5e-6);
  EXPECT_NEAR(c(0, 1), 0.0, 5e-6);
}

TEST(SampleGaussian, SameStreamSameDraws) {
  RngStream a(7, 3), b(7, 3), c(7, 4);
  const MatrixXd cov = (MatrixXd(2, 2) << 2, 0.5, 0.5, 1).finished();
  bool any_diff = false;
  for (int i = 0; i < 20; ++i) {
    const VectorXd va = sample_gaussian(cov, a);
    EXPECT_EQ(va, sample_gaussian(cov, b));
    any_diff |= (va != sample_gaussian(cov, c));
  }
  EXPECT_TRUE(any_diff);
}

TEST(SampleGaussian, SingularCovarianceZeroesDirection) {
  RngStream rng(3, 0);
  const MatrixXd cov = (MatrixXd(2, 2) << 1, 0, 0, 0).finished();
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_gaussian(cov, rng)(1), 0.0);
}

TEST(SampleGaussian, RejectsBadCovariance) {
  RngStream rng(3, 0);
  EXPECT_THROW(sample_gaussian((MatrixXd(2, 2) << 1, 0.5, 0, 1).finished(), rng), ParameterError);
  EXPECT_THROW(sample_gaussian((MatrixXd(2, 2) << 1, 0, 0, -1).finished(), rng), ParameterError);
}

TEST(StepPlant, IdentityDynamicsHoldState) {
  LdsModel<double> m = rotation_model<double>(0, 0, 0, 0);
  m.B.setZero();
  RngStream rng(0, 0);
  PlantState<double> s{(VectorXd(2) << 0.3, -2).finished(), 0};
  const VectorXd x0 = s.x;
  for (int t = 0; t < 50; ++t) s = step_plant(m, s, VectorXd(VectorXd::Ones(2)), rng);
  EXPECT_EQ(s.x, x0);
  EXPECT_EQ(s.t, 50);
}

TEST(StepPlant, FullTurnAfter24Rotations) {
  const auto m = rotation_model<double>(15, 50, 0, 0);
  RngStream rng(0, 0);
  PlantState<double> s{(VectorXd(2) << 1, 0).finished(), 0};
  for (int t = 0; t < 24; ++t) s = step_plant(m, s, VectorXd(VectorXd::Zero(2)), rng);
  EXPECT_NEAR(s.x(0), 1.0, 1e-12);
  EXPECT_NEAR(s.x(1), 0.0, 1e-12);
}

TEST(StepPlant, PlantNoiseCovariance) {
  const auto m = rotation_model<double>();
  RngStream rng(5, 0);
  std::vector<VectorXd> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(step_plant(m, PlantState<double>{VectorXd::Zero(2), 0}, VectorXd(VectorXd::Zero(2)), rng).x);
  EXPECT_LT(rel_frobenius(sample_cov(xs), m.Q), 0.05);
}

TEST(StepPlant, DimensionMismatch) {
  const auto m = rotation_model<double>();
  RngStream rng(0, 0);
  EXPECT_THROW(step_plant(m, PlantState<double>{VectorXd::Zero(3), 0}, VectorXd(VectorXd::Zero(2)), rng), ParameterError);
  EXPECT_THROW(step_plant(m, PlantState<double>{VectorXd::Zero(2), 0}, VectorXd(VectorXd::Zero(1)), rng), ParameterError);
}

TEST(Measure, NoiselessSensorIsExact) {
  const auto m = rotation_model<double>(15, 50, 1e-5, 0);
  RngStream rng(0, 0);
  const auto y = measure(m, {(VectorXd(2) << 1, 0).finished(), 0}, rng);
  EXPECT_NEAR(y.y(0), std::cos(50 * M_PI / 180), 1e-15);
  EXPECT_NEAR(y.y(1), std::sin(50 * M_PI / 180), 1e-15);
  EXPECT_EQ(y.y, y.ideal);
}

TEST(Measure, NoiseHasZeroMean) {
  const auto m = rotation_model<double>();
  RngStream rng(9, 0);
  const PlantState<double> s{(VectorXd(2) << 0.4, 0.7).finished(), 0};
  const int n = 100000;
  VectorXd sum = VectorXd::Zero(2);
  for (int i = 0; i < n; ++i) {
    const auto y = measure(m, s, rng);
    sum += y.y - m.H * s.x;
  }
  const double se = std::sqrt(1e-4 / n);
  EXPECT_LT(std::abs(sum(0) / n), 3 * se);
  EXPECT_LT(std::abs(sum(1) / n), 3 * se);
}

TEST(SimulateEnsemble, ShapesOfExperimentRuns) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  const auto single = simulate_ensemble(m, 1, 700, RngStream(1, 0), init);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].size(), 700u);
  const auto many = simulate_ensemble(m, 100, 7, RngStream(1, 0), init);
  ASSERT_EQ(many.size(), 100u);
  for (const auto& tr : many) {
    EXPECT_EQ(tr.states.size(), 7u);
    EXPECT_EQ(tr.measurements.size(), 7u);
    EXPECT_EQ(tr.ideal_measurements.size(), 7u);
    EXPECT_EQ(tr.controls.size(), 7u);
  }
}

TEST(SimulateEnsemble, DeterministicAndIdealIdentity) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  const auto a = simulate_ensemble(m, 5, 30, RngStream(42, 1), init);
  const auto b = simulate_ensemble(m, 5, 30, RngStream(42, 1), init);
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t t = 0; t < a[p].size(); ++t) {
      EXPECT_EQ(a[p].states[t].x, b[p].states[t].x);
      EXPECT_EQ(a[p].measurements[t], b[p].measurements[t]);
      EXPECT_EQ(a[p].ideal_measurements[t], m.H * a[p].states[t].x);
      EXPECT_EQ(a[p].states[t].t, long(t));
    }
  // Features are independent.
  EXPECT_NE(a[0].measurements[3], a[1].measurements[3]);
}

TEST(SimulateEnsemble, FeatureStreamsIndependentOfCount) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  const auto a = simulate_ensemble(m, 3, 10, RngStream(4, 0), init);
  const auto b = simulate_ensemble(m, 8, 10, RngStream(4, 0), init);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(a[p].measurements[9], b[p].measurements[9]);
}

TEST(SimulateEnsemble, InitialStateDistribution) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  const auto ens = simulate_ensemble(m, 20000, 1, RngStream(6, 0), init);
  VectorXd mean = VectorXd::Zero(2);
  for (const auto& tr : ens) mean += tr.states[0].x;
  mean /= double(ens.size());
  EXPECT_NEAR(mean(0), 1.0, 4 / std::sqrt(20000.0));
  EXPECT_NEAR(mean(1), 0.0, 4 / std::sqrt(20000.0));
}

TEST(SimulateEnsemble, RejectsEmpty) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  EXPECT_THROW(simulate_ensemble(m, 0, 5, RngStream(1, 0), init), ParameterError);
  EXPECT_THROW(simulate_ensemble(m, 1, 0, RngStream(1, 0), init), ParameterError);
}

TEST(LdsModel, ValidateRejectsInconsistentShapes) {
  auto m = rotation_model<double>();
  m.Q = MatrixXd::Identity(3, 3);
  EXPECT_THROW(m.validate(), ParameterError);
  m = rotation_model<double>();
  m.g = -MatrixXd::Identity(2, 2);
  EXPECT_THROW(m.validate(), ParameterError);
}
