#include <gtest/gtest.h>

#include "nkpc/controller.hpp"
#include "nkpc/transformed.hpp"

using namespace nkpc;

namespace {

using Ctrl = NeuralController<double>;

const MatrixXd kG = (MatrixXd(2, 2) << 1.0, 0.0, 0.0, 2.0).finished();
const MatrixXd kR = (MatrixXd(2, 2) << 1.0, 0.3, 0.3, 1.0).finished();

ControllerConfig config_with(std::size_t n_w, InverseMethod m = InverseMethod::kNeumann) {
  ControllerConfig c;
  c.n_w = n_w;
  c.t_method = m;
  c.neumann = {2000, 1e-12};
  return c;
}

TransformedModel<double> toy_tm(const MatrixXd& F) {
  TransformedModel<double> tm;
  tm.F_tilde = F;
  tm.g_tilde = kG;
  tm.r_tilde = kR;
  return tm;
}

MatrixXd second_moment(const MatrixXd& w) { return w * w.transpose() / double(w.cols()); }

}  // namespace

TEST(InitW, ZeroCovariancesGiveZeroEnsemble) {
  Ctrl c(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2), config_with(10));
  RngStream rng(1, 0);
  c.init_w_ensemble(3, 0, 10, rng);
  EXPECT_EQ(c.w().norm(), 0.0);
  EXPECT_EQ(c.w().cols(), 10);
}

TEST(InitW, CovarianceIsSum) {
  Ctrl c(kG, kR, config_with(100000));
  RngStream rng(2, 0);
  c.init_w_ensemble(3, 0, 100000, rng);
  const MatrixXd target = kG + kR;
  EXPECT_LT((second_moment(c.w()) - target).cwiseAbs().maxCoeff(), 0.05 * target.cwiseAbs().maxCoeff());
  EXPECT_EQ(c.tau(), 3);
}

TEST(InitW, Deterministic) {
  Ctrl a(kG, kR, config_with(50)), b(kG, kR, config_with(50));
  RngStream ra(3, 1), rb(3, 1);
  a.init_w_ensemble(4, 0, 50, ra);
  b.init_w_ensemble(4, 0, 50, rb);
  EXPECT_EQ(a.w(), b.w());
}

TEST(InitW, RejectsEmptyHorizon) {
  Ctrl c(kG, kR, config_with(5));
  RngStream rng(3, 2);
  EXPECT_THROW(c.init_w_ensemble(2, 2, 5, rng), ParameterError);
}

TEST(WStep, ZeroDynamics) {
  Ctrl c(kG, kR, config_with(100000));
  c.set_g_hat(kG);
  RngStream rng(4, 0);
  c.init_w_ensemble(3, 0, 100000, rng);
  c.w_step_backward(rng);
  EXPECT_EQ(c.tau(), 2);
  const MatrixXd target = kG + kR;
  EXPECT_LT((second_moment(c.w()) - target).cwiseAbs().maxCoeff(), 0.05 * target.cwiseAbs().maxCoeff());
}

TEST(WStep, ZeroControlCost) {
  Ctrl c(MatrixXd::Zero(2, 2), kR, config_with(100000));
  c.couple(rotation2d<double>(15.0));
  RngStream rng(5, 0);
  c.init_w_ensemble(3, 0, 100000, rng);
  c.w_step_backward(rng);
  EXPECT_LT((second_moment(c.w()) - kR).cwiseAbs().maxCoeff(), 0.05 * kR.cwiseAbs().maxCoeff());
}

TEST(WStep, FreshDrawsFollowCompletedEnsemble) {
  // Replaying the stream by hand: init draws nu^r then nu^g; the step then draws
  // nu^g_{tau-1} followed by nu^r_tau.
  const std::size_t n = 7;
  Ctrl c(kG, kR, config_with(n));
  RngStream rng(6, 0), replay(6, 0);
  c.init_w_ensemble(3, 0, n, rng);
  c.step_w_only(rng);
  const MatrixXd gf = covariance_factor(kG), rf = covariance_factor(kR);
  const MatrixXd r0 = sample_gaussian_factored(rf, n, replay);
  const MatrixXd g0 = sample_gaussian_factored(gf, n, replay);
  const MatrixXd g1 = sample_gaussian_factored(gf, n, replay);
  const MatrixXd r1 = sample_gaussian_factored(rf, n, replay);
  (void)r0;
  (void)g0;
  EXPECT_LT((c.w() - (r1 - g1)).norm(), 1e-14);  // F~ = 0
  EXPECT_EQ(c.pending_nu_g(), g1);
  EXPECT_EQ(c.draws(), 4 * n);
}

TEST(WStep, OneStepMatchesOracle) {
  const MatrixXd F = 1.1 * rotation2d<double>(15.0);
  const auto tm = toy_tm(F);
  Ctrl c(kG, kR, config_with(100000));
  c.set_g_hat(kG);
  c.couple(F);
  RngStream rng(7, 0);
  c.init_w_ensemble(3, 0, 100000, rng);
  const MatrixXd T = kG + kR;
  c.set_T(T);
  c.step_w_only(rng);
  EXPECT_LT(rel_frobenius(second_moment(c.w()), t_step(tm, T)), 0.03);
}

TEST(WStep, LearnedPathFollowsOracle) {
  const MatrixXd F = rotation2d<double>(15.0);
  const auto tm = toy_tm(F);
  for (auto m : {InverseMethod::kNeumann, InverseMethod::kDirectInverse}) {
    Ctrl c(kG, kR, config_with(100000, m));
    c.set_g_hat(kG);
    c.couple(F);
    RngStream rng(8, 0);
    c.init_w_ensemble(11, 0, 100000, rng);
    if (m == InverseMethod::kDirectInverse) c.set_T(kG + kR);
    const auto oracle = t_path(tm, 10);
    EXPECT_LT(rel_frobenius(c.t_rep().matrix(), oracle[0]), 0.05);
    for (int k = 1; k <= 10; ++k) {
      if (m == InverseMethod::kDirectInverse) {
        c.step_w_only(rng);
        c.set_T(second_moment(c.w()));
      } else {
        c.w_step_backward(rng);
      }
      EXPECT_LT(rel_frobenius(c.t_rep().matrix(), oracle[k]), 0.05) << "k = " << k;
    }
  }
}

TEST(LearnT, FixedPoints) {
  const MatrixXd T = kG + kR;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
  const MatrixXd batch = std::sqrt(2.0) * es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal();
  ControllerConfig cfg = config_with(2);
  cfg.gamma_t = 0.5;
  Ctrl a(kG, kR, cfg);
  a.set_T(T);
  a.learn_t(batch);
  EXPECT_LT((a.t_rep().matrix() - T).cwiseAbs().maxCoeff(), 1e-12);
  cfg.t_method = InverseMethod::kDirectInverse;
  cfg.gamma_t = 0.01;
  Ctrl b(kG, kR, cfg);
  b.set_T(T);
  b.learn_tinv(T.inverse() * batch);
  EXPECT_LT((b.t_rep().zinv() - T.inverse()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LearnT, ZeroRateFrozen) {
  ControllerConfig cfg = config_with(4);
  cfg.gamma_t = 0.0;
  Ctrl c(kG, kR, cfg);
  c.set_T(kG + kR);
  RngStream rng(9, 0);
  c.learn_t(rng.standard_normal<double>(2, 4));
  EXPECT_LT((c.t_rep().matrix() - (kG + kR)).norm(), 1e-14);
}

TEST(LearnT, InverseRuleNeedsDirectMethod) {
  Ctrl c(kG, kR, config_with(4));
  c.set_T(kG);
  EXPECT_THROW(c.learn_tinv(MatrixXd::Ones(2, 1)), ModeError);
}

TEST(LearnG, ZeroCovariance) {
  Ctrl c(MatrixXd::Zero(2, 2), kR, config_with(4));
  RngStream rng(10, 0);
  c.learn_g_offline(1000, rng);
  EXPECT_EQ(c.g_hat().norm(), 0.0);
  EXPECT_TRUE(c.warnings().empty());
}

TEST(LearnG, MonteCarlo) {
  Ctrl c(kG, kR, config_with(4));
  RngStream rng(11, 0);
  c.learn_g_offline(100000, rng);
  EXPECT_NEAR(c.g_hat()(0, 0), 1.0, 0.05);
  EXPECT_NEAR(c.g_hat()(1, 1), 2.0, 0.1);
  EXPECT_LT(std::abs(c.g_hat()(0, 1)), 0.05);
}

TEST(LearnG, SingleSampleFlagged) {
  Ctrl c(kG, kR, config_with(4));
  RngStream rng(12, 0);
  c.learn_g_offline(1, rng);
  EXPECT_EQ(Eigen::FullPivLU<MatrixXd>(c.g_hat()).setThreshold(1e-10).rank(), 1);
  EXPECT_FALSE(c.warnings().empty());
}

TEST(Sweep, OneStepHorizon) {
  Ctrl c(kG, kR, config_with(1000));
  c.set_g_hat(kG);
  c.kc_learning_sweep(1, 0, RngStream(13, 0));
  EXPECT_EQ(c.stored_snapshots(), 1u);
  EXPECT_NO_THROW(c.schedule_entry(0));
  EXPECT_THROW(c.schedule_entry(1), ScheduleError);
  EXPECT_THROW(c.schedule_entry(-1), ScheduleError);
}

TEST(Sweep, StoreAllCoversHorizon) {
  Ctrl c(kG, kR, config_with(500));
  c.set_g_hat(kG);
  c.couple(rotation2d<double>(15.0));
  c.kc_learning_sweep(7, 2, RngStream(14, 0));
  EXPECT_EQ(c.stored_snapshots(), 5u);
  EXPECT_EQ(c.t_path().size(), 5u);
  EXPECT_EQ(c.tau(), 3);
}

TEST(Sweep, PolicyOnlyChangesStorage) {
  const MatrixXd F = rotation2d<double>(15.0);
  RngStream yr(15, 0);
  const MatrixXd yhat = yr.standard_normal<double>(2, 3);
  MatrixXd u[2];
  int i = 0;
  for (auto policy : {StoragePolicy::kStoreAll, StoragePolicy::kRelearnEachStep}) {
    ControllerConfig cfg = config_with(300);
    cfg.policy = policy;
    Ctrl c(kG, kR, cfg);
    c.set_g_hat(kG);
    c.couple(F);
    c.kc_learning_sweep(5, 0, RngStream(15, 1));
    u[i++] = c.control_execute(0, yhat);
  }
  EXPECT_EQ(u[0], u[1]);
}

TEST(Sweep, ReuseKeepsEveryKth) {
  ControllerConfig cfg = config_with(300);
  cfg.policy = StoragePolicy::kReuseK;
  cfg.reuse_k = 2;
  Ctrl c(kG, kR, cfg);
  c.set_g_hat(kG);
  c.couple(rotation2d<double>(15.0));
  c.kc_learning_sweep(5, 0, RngStream(16, 0));
  EXPECT_EQ(c.stored_snapshots(), 3u);  // t = 4, 2, 0
  EXPECT_EQ(c.schedule_entry(3).matrix(), c.schedule_entry(4).matrix());
  EXPECT_NE(c.schedule_entry(1).matrix(), c.schedule_entry(0).matrix());
}

TEST(Sweep, SameStreamSameSchedule) {
  Ctrl c(kG, kR, config_with(200));
  c.set_g_hat(kG);
  c.couple(rotation2d<double>(15.0));
  const RngStream rng(17, 0);
  c.kc_learning_sweep(4, 0, rng);
  const auto first = c.t_path();
  c.kc_learning_sweep(4, 0, rng);
  const auto second = c.t_path();
  for (std::size_t k = 0; k < first.size(); ++k) EXPECT_EQ(first[k], second[k]);
}

TEST(ControlExecute, ZeroEstimateZeroControl) {
  Ctrl c(kG, kR, config_with(200));
  c.set_g_hat(kG);
  c.couple(rotation2d<double>(15.0));
  c.kc_learning_sweep(3, 0, RngStream(18, 0));
  EXPECT_EQ(c.control_execute(0, MatrixXd::Zero(2, 4)).norm(), 0.0);
}

TEST(ControlExecute, CancelsWhenTEqualsG) {
  Ctrl c(kG, kR, config_with(200, InverseMethod::kDirectInverse));
  c.couple(rotation2d<double>(15.0));
  c.kc_learning_sweep(1, 0, RngStream(19, 0));
  c.set_g_hat(c.schedule_entry(0).matrix());
  EXPECT_LT(c.control_execute(0, MatrixXd::Ones(2, 3)).norm(), 1e-12);
}

TEST(ControlExecute, MissingScheduleThrows) {
  Ctrl c(kG, kR, config_with(200));
  EXPECT_THROW(c.control_execute(0, MatrixXd::Ones(2, 1)), ScheduleError);
  c.kc_learning_sweep(3, 1, RngStream(20, 0));
  EXPECT_THROW(c.control_execute(0, MatrixXd::Ones(2, 1)), ScheduleError);
  EXPECT_THROW(c.control_execute(3, MatrixXd::Ones(2, 1)), ScheduleError);
}

TEST(ControlExecute, ScalarSteadyStateMatchesClassical) {
  // Scalar plant with H = B = 1: T is the classical S, and u = -(1 - g/T) F x = -L x.
  LdsModel<double> m;
  m.F = MatrixXd::Constant(1, 1, 0.9);
  m.H = m.B = MatrixXd::Identity(1, 1);
  m.Q = m.R_true = MatrixXd::Constant(1, 1, 1e-3);
  m.g = MatrixXd::Constant(1, 1, 0.5);
  m.r = MatrixXd::Identity(1, 1);
  const auto kc = kc_backward(m, 4, 0);
  Ctrl c(m.g, m.r, config_with(200000));
  c.set_g_hat(m.g);
  c.couple(m.F);
  c.kc_learning_sweep(4, 0, RngStream(21, 0));
  for (long t = 0; t < 4; ++t) {
    const double u = c.control_execute(t, MatrixXd::Ones(1, 1))(0, 0);
    EXPECT_NEAR(u, -kc.gain(t)(0, 0), 0.03 * std::abs(kc.gain(t)(0, 0))) << "t = " << t;
  }
}

TEST(Coupling, TransposeOfEstimatorMatrix) {
  Ctrl c(kG, kR, config_with(4));
  const MatrixXd F = (MatrixXd(2, 2) << 1, 2, 3, 4).finished();
  c.couple(F);
  EXPECT_EQ(c.F_tilde_transpose(), MatrixXd(F.transpose()));
  EXPECT_THROW(c.couple(MatrixXd::Ones(3, 3)), ParameterError);
}

TEST(Config, Validation) {
  ControllerConfig c;
  c.gamma_t = 1.5;
  EXPECT_THROW(c.validate(), ParameterError);
  c.gamma_t = 0.5;
  c.n_w = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c.n_w = 1;
  c.policy = StoragePolicy::kReuseK;
  c.reuse_k = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}

namespace {

NeuralEstimator<double> execution_estimator(const LdsModel<double>& m) {
  const auto tm = derive_transformed(m);
  NeuralEstimator<double> e(m.dy(), 1, {}, tm.F_tilde);
  e.set_R(m.R_true);
  e.set_Z(z_path(tm, MatrixXd(m.R_true + tm.HQH), 200).back());
  e.set_mode(EstimatorMode::kKalman);
  return e;
}

}  // namespace

TEST(ClosedLoop, NoiselessAtTargetCostsNothing) {
  auto m = rotation_model<double>();
  m.Q.setZero();
  m.R_true = 1e-30 * MatrixXd::Identity(2, 2);
  InitialStateDistribution<double> init{VectorXd::Zero(2), MatrixXd::Zero(2, 2)};
  const auto tm = derive_transformed(m);
  Ctrl c(tm.g_tilde, tm.r_tilde, config_with(100));
  c.set_g_hat(tm.g_tilde);
  NeuralEstimator<double> e(2, 1, {}, tm.F_tilde);
  e.set_R(m.R_true);
  e.set_Z(MatrixXd::Identity(2, 2));
  e.set_mode(EstimatorMode::kKalman);
  const auto stats = closed_loop_run(m, e, c, 0, 5, {1, 2}, init);
  EXPECT_LT(stats.neural.mean, 1e-20);
  EXPECT_LT(stats.classical.mean, 1e-20);
  EXPECT_EQ(stats.zero.mean, 0.0);
}

TEST(ClosedLoop, ClassicalBeatsZeroControl) {
  const auto m = rotation_model<double>();
  const auto init = InitialStateDistribution<double>::standard(2);
  const auto tm = derive_transformed(m);
  Ctrl c(tm.g_tilde, tm.r_tilde, config_with(2000));
  c.set_g_hat(tm.g_tilde);
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 40; ++s) seeds.push_back(s);
  const auto stats = closed_loop_run(m, execution_estimator(m), c, 0, 5, seeds, init, true);
  EXPECT_LT(stats.classical.mean, stats.zero.mean);
  EXPECT_LT(stats.neural.mean, stats.zero.mean);
  EXPECT_EQ(stats.neural.per_seed.size(), 40u);
  EXPECT_EQ(stats.neural_u_tilde.front().size(), 5u);
}

TEST(ClosedLoop, RequiresKalmanMode) {
  const auto m = rotation_model<double>();
  const auto tm = derive_transformed(m);
  NeuralEstimator<double> e(2, 1, {}, tm.F_tilde);
  Ctrl c(tm.g_tilde, tm.r_tilde, config_with(10));
  EXPECT_THROW(closed_loop_run(m, e, c, 0, 3, {1}, InitialStateDistribution<double>::standard(2)), ModeError);
}
