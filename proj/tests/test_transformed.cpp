#include <gtest/gtest.h>

#include <cmath>

#include "nkpc/kalman.hpp"
#include "nkpc/transformed.hpp"

using namespace nkpc;

namespace {

MatrixXd spd(Eigen::Index n, RngStream& rng, double scale) {
  const MatrixXd a = rng.standard_normal<double>(n, n);
  return symmetrize(scale * (a * a.transpose() + 0.5 * MatrixXd::Identity(n, n)));
}

// Square, well-conditioned maps so that H+H = I and HB is invertible.
LdsModel<double> random_model(Eigen::Index n, RngStream& rng) {
  LdsModel<double> m;
  m.F = rng.standard_normal<double>(n, n);
  m.F *= 0.9 / spectral_radius(m.F);
  m.H = MatrixXd::Identity(n, n) + 0.3 * rng.standard_normal<double>(n, n);
  m.B = MatrixXd::Identity(n, n) + 0.3 * rng.standard_normal<double>(n, n);
  m.Q = spd(n, rng, 0.05);
  m.R_true = spd(n, rng, 0.02);
  m.g = spd(n, rng, 1.0);
  m.r = spd(n, rng, 1.0);
  return m;
}

}  // namespace

TEST(DeriveTransformed, CommutingRotations) {
  const auto m = rotation_model<double>();
  const auto tm = derive_transformed(m);
  const MatrixXd expected = m.H * m.F * m.H.inverse();
  EXPECT_LT((tm.F_tilde - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((tm.F_tilde - m.F).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(tm.F_tilde(1, 1), std::cos(15 * M_PI / 180), 1e-14);
  EXPECT_NEAR(tm.F_tilde(1, 1), 0.96593, 1e-5);
  EXPECT_TRUE(tm.warnings.empty());
}

TEST(DeriveTransformed, IdentityMeasurementMap) {
  RngStream rng(3, 0);
  auto m = random_model(3, rng);
  m.H = MatrixXd::Identity(3, 3);
  const auto tm = derive_transformed(m);
  const MatrixXd Bp = m.B.inverse();
  EXPECT_LT((tm.F_tilde - m.F).norm(), 1e-13);
  EXPECT_LT((tm.g_tilde - Bp.transpose() * m.g * Bp).norm(), 1e-12);
  EXPECT_LT((tm.r_tilde - m.r).norm(), 1e-13);
  EXPECT_LT((tm.HQH - m.Q).norm(), 1e-15);
}

TEST(DeriveTransformed, OrthogonalHKeepsIdentityCost) {
  const auto m = rotation_model<double>(10, 77);
  const auto tm = derive_transformed(m);
  EXPECT_LT((tm.r_tilde - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DeriveTransformed, RankDeficientHWarns) {
  auto m = rotation_model<double>();
  m.H = (MatrixXd(1, 2) << 1, 0).finished();
  m.R_true = MatrixXd::Constant(1, 1, 1e-4);
  const auto tm = derive_transformed(m);
  EXPECT_EQ(tm.h_rank, 1);
  EXPECT_FALSE(tm.warnings.empty());
}

TEST(ZStep, ZeroDynamics) {
  auto m = rotation_model<double>();
  m.F.setZero();
  const auto tm = derive_transformed(m);
  RngStream rng(1, 0);
  const MatrixXd Z = spd(2, rng, 1e-3);
  EXPECT_LT((z_step(tm, Z) - (tm.HQH + tm.R)).norm(), 1e-18);
}

TEST(ZStep, PriorEqualToNoiseCancels) {
  const auto tm = derive_transformed(rotation_model<double>());
  EXPECT_LT((z_step(tm, tm.R) - (tm.HQH + tm.R)).norm(), 1e-18);
}

TEST(ZStep, MatchesClassicalOnExampleModel) {
  const auto m = rotation_model<double>();
  const auto tm = derive_transformed(m);
  RngStream rng(2, 0);
  auto kf = KfState<double>::initial(m, VectorXd::Zero(2), spd(2, rng, 0.3));
  MatrixXd Z = m.H * kf.P_minus * m.H.transpose() + m.R_true;
  for (int t = 0; t < 50; ++t) {
    ASSERT_LT((Z - (m.H * kf.P_minus * m.H.transpose() + m.R_true)).norm(), 1e-10) << "t=" << t;
    kf = kf_learn_step(m, kf);
    Z = z_step(tm, Z);
  }
}

TEST(ZStep, SingularZThrows) {
  const auto tm = derive_transformed(rotation_model<double>());
  EXPECT_THROW(z_step(tm, MatrixXd(MatrixXd::Zero(2, 2))), SingularityError);
}

TEST(ZStep, RandomModelEquivalence) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed, 1);
    const auto m = random_model(2 + Eigen::Index(seed % 2), rng);
    const auto tm = derive_transformed(m);
    auto kf = KfState<double>::initial(m, VectorXd::Zero(m.dx()), spd(m.dx(), rng, 1.0));
    MatrixXd Z = m.H * kf.P_minus * m.H.transpose() + m.R_true;
    for (int t = 0; t < 50; ++t) {
      ASSERT_LT((Z - (m.H * kf.P_minus * m.H.transpose() + m.R_true)).norm(), 1e-9);
      ASSERT_GT(min_eigenvalue(Z), 0.0);
      kf = kf_learn_step(m, kf);
      Z = z_step(tm, Z);
    }
  }
}

TEST(TStep, ZeroDynamics) {
  auto m = rotation_model<double>();
  m.F.setZero();
  const auto tm = derive_transformed(m);
  EXPECT_LT((t_step(tm, MatrixXd(3 * MatrixXd::Identity(2, 2))) - (tm.r_tilde + tm.g_tilde)).norm(), 1e-15);
}

TEST(TStep, TEqualToGCancels) {
  const auto tm = derive_transformed(rotation_model<double>());
  EXPECT_LT((t_step(tm, tm.g_tilde) - (tm.r_tilde + tm.g_tilde)).norm(), 1e-15);
}

TEST(TStep, ScalarMapsToClassicalS) {
  LdsModel<double> m;
  m.F = MatrixXd::Constant(1, 1, 1.05);
  m.B = MatrixXd::Constant(1, 1, 0.7);
  m.H = MatrixXd::Constant(1, 1, 1.3);
  m.Q = MatrixXd::Constant(1, 1, 0.1);
  m.R_true = MatrixXd::Constant(1, 1, 0.2);
  m.g = MatrixXd::Constant(1, 1, 0.5);
  m.r = MatrixXd::Constant(1, 1, 2.0);
  const auto tm = derive_transformed(m);
  const long N = 20;
  const auto kc = kc_backward(m, N, 0);
  const auto tp = t_path(tm, std::size_t(N));
  for (long tau = 0; tau <= N; ++tau) {
    const double T = tp[std::size_t(N - tau)](0, 0);
    EXPECT_NEAR(1.3 * (T - tm.g_tilde(0, 0)) * 1.3, kc.S_at(tau)(0, 0), 1e-10 * kc.S_at(tau)(0, 0));
  }
}

TEST(TStep, RandomModelEquivalence) {
  const long N = 20;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed, 2);
    const auto m = random_model(2 + Eigen::Index(seed % 2), rng);
    const auto tm = derive_transformed(m);
    const auto kc = kc_backward(m, N, 0);
    const auto tp = t_path(tm, std::size_t(N));
    const MatrixXd Hinv = m.H.inverse();
    for (long tau = 0; tau <= N; ++tau) {
      const MatrixXd& T = tp[std::size_t(N - tau)];
      ASSERT_LT((m.H.transpose() * (T - tm.g_tilde) * m.H - kc.S_at(tau)).norm(), 1e-9);
      ASSERT_GT(min_eigenvalue(T), 0.0);
      if (tau < N) {
        const MatrixXd Lt = control_gain_from_t(tm, tp[std::size_t(N - tau - 1)]);
        ASSERT_LT((Lt + m.H * m.B * kc.gain(tau) * Hinv).norm(), 1e-9);
      }
    }
  }
}

TEST(GainFromZ, SpecialCases) {
  const auto tm = derive_transformed(rotation_model<double>());
  EXPECT_LT((gain_from_z(tm.R, tm.R) - MatrixXd::Identity(2, 2)).norm(), 1e-14);
  EXPECT_LT((gain_from_z(tm.R, MatrixXd(2 * tm.R)) - 0.5 * MatrixXd::Identity(2, 2)).norm(), 1e-14);
  EXPECT_THROW(gain_from_z(tm.R, MatrixXd::Zero(2, 2)), SingularityError);
}

TEST(GainFromZ, ExampleSteadyState) {
  const auto tm = derive_transformed(rotation_model<double>());
  const auto path = z_path(tm, MatrixXd(MatrixXd::Identity(2, 2)), 300);
  const double q = 1e-5, rho = 1e-4;
  const double p = (q + std::sqrt(q * q + 4 * q * rho)) / 2;
  EXPECT_NEAR(gain_from_z(tm.R, path.back())(1, 1), rho / (p + rho), 1e-10);
  EXPECT_NEAR(gain_from_z(tm.R, path.back())(1, 1), 0.7299, 1e-4);
}

TEST(ControlGainFromT, TEqualToGIssuesNoControl) {
  const auto tm = derive_transformed(rotation_model<double>());
  EXPECT_LT(control_gain_from_t(tm, tm.g_tilde).norm(), 1e-15);
}

TEST(ControlGainFromT, CheapControlCancelsPrediction) {
  auto m = rotation_model<double>();
  m.g *= 1e-8;
  const auto tm = derive_transformed(m);
  const auto tp = t_path(tm, 5);
  for (const auto& T : tp) EXPECT_LT((control_gain_from_t(tm, T) + tm.F_tilde).norm(), 1e-6);
}

TEST(ControlGainFromT, ScalarMatchesClassical) {
  LdsModel<double> m;
  m.F = MatrixXd::Constant(1, 1, 0.9);
  m.B = MatrixXd::Constant(1, 1, 2.0);
  m.H = MatrixXd::Constant(1, 1, 0.5);
  m.Q = MatrixXd::Constant(1, 1, 0.1);
  m.R_true = MatrixXd::Constant(1, 1, 0.1);
  m.g = MatrixXd::Constant(1, 1, 0.3);
  m.r = MatrixXd::Constant(1, 1, 1.0);
  const auto tm = derive_transformed(m);
  const auto kc = kc_backward(m, 8, 0);
  const auto tp = t_path(tm, 8);
  for (long t = 0; t < 8; ++t) {
    const double Lt = control_gain_from_t(tm, tp[std::size_t(8 - t - 1)])(0, 0);
    EXPECT_NEAR(Lt, -0.5 * 2.0 * kc.gain(t)(0, 0) / 0.5, 1e-10);
  }
}

TEST(Paths, PositiveDefinitenessPreserved) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed, 3);
    const auto m = random_model(3, rng);
    const auto tm = derive_transformed(m);
    for (const auto& Z : z_path(tm, spd(3, rng, 0.5), 30)) EXPECT_GT(min_eigenvalue(Z), 0.0);
    for (const auto& T : t_path(tm, 30)) EXPECT_GT(min_eigenvalue(T), 0.0);
  }
}
