#include "nkpc/harness/invariants.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "nkpc/controller.hpp"
#include "nkpc/estimator.hpp"
#include "nkpc/hebbian.hpp"
#include "nkpc/kalman.hpp"
#include "nkpc/transformed.hpp"

namespace nkpc::harness {
namespace {

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

MatrixXd random_orthogonal(Eigen::Index n, RngStream& rng) {
  const MatrixXd a = rng.standard_normal<double>(n, n);
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ();
  const VectorXd d = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < n; ++j)
    if (d(j) < 0) q.col(j) = -q.col(j);
  return q;
}

MatrixXd random_conditioned(Eigen::Index n, RngStream& rng, double lo, double hi) {
  VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = rng.uniform(lo, hi);
  return random_orthogonal(n, rng) * s.asDiagonal() * random_orthogonal(n, rng);
}

MatrixXd random_spd(Eigen::Index n, RngStream& rng, double scale) {
  const MatrixXd a = rng.standard_normal<double>(n, n);
  return symmetrize(scale * (a * a.transpose() / double(n) + 0.2 * MatrixXd::Identity(n, n)));
}

MatrixXd sample_second_moment(const MatrixXd& batch) {
  return batch * batch.transpose() / double(batch.cols());
}

}  // namespace

LdsModel<double> random_full_rank_model(Eigen::Index dim, RngStream& rng) {
  LdsModel<double> m;
  MatrixXd F = rng.standard_normal<double>(dim, dim);
  F *= rng.uniform(0.5, 0.95) / spectral_radius(F);
  m.F = F;
  m.H = random_conditioned(dim, rng, 0.5, 2.0);
  m.B = random_conditioned(dim, rng, 0.5, 2.0);
  m.Q = random_spd(dim, rng, 0.1);
  m.R_true = random_spd(dim, rng, 0.05);
  m.g = random_spd(dim, rng, 1.0);
  m.r = random_spd(dim, rng, 1.0);
  m.validate();
  return m;
}

std::vector<CheckResult> run_oracle_equivalence(const ExperimentConfig& config) {
  const std::size_t n_models = config.invariants.models;
  std::vector<CheckResult> out;
  out.push_back(timed("estimation-equivalence", [&] {
    double worst = 0;
    for (std::size_t k = 0; k < n_models; ++k) {
      RngStream rng(config.seed + k, 100);
      const auto model = random_full_rank_model(Eigen::Index(2 + k % 2), rng);
      const auto tm = derive_transformed(model);
      auto kf = KfState<double>::initial(model, VectorXd::Zero(model.dx()), random_spd(model.dx(), rng, 1.0));
      MatrixXd Z = symmetrize(model.H * kf.P_minus * model.H.transpose() + model.R_true);
      for (int t = 0; t < 50; ++t) {
        const MatrixXd classical = model.H * kf.P_minus * model.H.transpose() + model.R_true;
        worst = std::max(worst, (Z - classical).norm());
        kf = kf_learn_step(model, kf);
        Z = z_step(tm, Z);
      }
    }
    return CheckResult{"", worst < 1e-9, "max ||Z - (HP-H' + R)||_F = " + sci(worst) + " over " +
                                             std::to_string(n_models) + " models x 50 steps"};
  }));
  out.push_back(timed("control-equivalence", [&] {
    double worst_s = 0, worst_l = 0;
    const long N = 20;
    for (std::size_t k = 0; k < n_models; ++k) {
      RngStream rng(config.seed + k, 101);
      const auto model = random_full_rank_model(Eigen::Index(2 + k % 2), rng);
      const auto tm = derive_transformed(model);
      const auto kc = kc_backward(model, N, 0);
      const auto tp = t_path(tm, std::size_t(N));  // [j] = T_{N-j}
      const MatrixXd Hp = pseudoinverse(model.H).value;
      for (long tau = 0; tau <= N; ++tau) {
        const MatrixXd& T = tp[std::size_t(N - tau)];
        worst_s = std::max(worst_s, (model.H.transpose() * (T - tm.g_tilde) * model.H - kc.S_at(tau)).norm());
        if (tau < N) {
          const MatrixXd Lt = control_gain_from_t(tm, tp[std::size_t(N - tau - 1)]);
          worst_l = std::max(worst_l, (Lt + tm.HB * kc.gain(tau) * Hp).norm());
        }
      }
    }
    return CheckResult{"", worst_s < 1e-9 && worst_l < 1e-9,
                       "max ||H'(T - g~)H - S||_F = " + sci(worst_s) + ", max ||L~ + HBLH+||_F = " + sci(worst_l)};
  }));
  return out;
}

std::vector<CheckResult> run_invariant_suite(const ExperimentConfig& config) {
  const auto& spec = config.invariants;
  std::vector<CheckResult> out;
  const auto model = config.model.build();
  const auto init = config.model.initial_state();
  const auto tm = derive_transformed(model);

  out.push_back(timed("noise-statistics", [&] {
    RngStream rng(config.seed, 200);
    const std::size_t n = 100000;
    const MatrixXd draws = sample_gaussian_factored(covariance_factor(model.R_true), n, rng);
    const VectorXd mean = draws.rowwise().mean();
    const MatrixXd cov = sample_second_moment(draws.colwise() - mean);
    const VectorXd se = (model.R_true.diagonal() / double(n)).cwiseSqrt();
    const double z = (mean.cwiseAbs().array() / se.array()).maxCoeff();
    const double rel = rel_frobenius(cov, model.R_true);
    return CheckResult{"", z < 4 && rel < 0.05, "max |mean|/se = " + sci(z) + ", cov rel err = " + sci(rel)};
  }));

  out.push_back(timed("riccati-fixed-point", [&] {
    const double q = model.Q(0, 0), rho = model.R_true(0, 0);
    const double p_star = (q + std::sqrt(q * q + 4 * q * rho)) / 2;
    auto kf = KfState<double>::initial(model, init.mean, init.cov);
    for (int t = 0; t < 200; ++t) kf = kf_learn_step(model, kf);
    const double err = (kf.P_minus - p_star * MatrixXd::Identity(model.dx(), model.dx())).cwiseAbs().maxCoeff();
    return CheckResult{"", err < 1e-12, "max |P- - p* I| = " + sci(err) + " (isotropic model assumed)"};
  }));

  out.push_back(timed("eta-covariance", [&] {
    const std::size_t n = spec.features;
    const auto path = z_path(tm, symmetrize(model.H * init.cov * model.H.transpose() + model.R_true), spec.steps);
    RngStream root(config.seed, 201);
    RngStream x_rng = root.child(0), q_rng = root.child(1), r_rng = root.child(2);
    const MatrixXd qf = covariance_factor(model.Q), rf = covariance_factor(model.R_true);
    MatrixXd x = (covariance_factor(init.cov) * x_rng.standard_normal<double>(model.dx(), n)).colwise() + init.mean;
    MatrixXd yhat_minus = (model.H * init.mean).replicate(1, Eigen::Index(n));
    double worst = 0;
    for (std::size_t t = 0; t <= spec.steps; ++t) {
      const MatrixXd y = model.H * x + rf * r_rng.standard_normal<double>(model.dy(), n);
      const MatrixXd eta = yhat_minus - y;
      worst = std::max(worst, rel_frobenius(sample_second_moment(eta), path[t]));
      const MatrixXd yhat = y + tm.R * spd_solve(path[t], eta, "Z");
      yhat_minus = tm.F_tilde * yhat;
      x = model.F * x + qf * q_rng.standard_normal<double>(model.dx(), n);
    }
    return CheckResult{"", worst < 0.03, "max rel ||cov(eta) - Z_t||_F = " + sci(worst) + " (" + std::to_string(n) +
                                             " features, " + std::to_string(spec.steps) + " steps)"};
  }));

  out.push_back(timed("w-covariance", [&] {
    const auto oracle = t_path(tm, spec.steps);
    ControllerConfig cc;
    NeuralController<double> ctrl(tm.g_tilde, tm.r_tilde, cc);
    ctrl.set_g_hat(tm.g_tilde);
    ctrl.couple(tm.F_tilde);
    RngStream rng(config.seed, 202);
    const long N = long(spec.steps);
    ctrl.init_w_ensemble(N + 1, 0, spec.members, rng);
    double worst = rel_frobenius(sample_second_moment(ctrl.w()), oracle[0]);
    for (std::size_t k = 0; k < spec.steps; ++k) {
      ctrl.set_T(oracle[k]);
      ctrl.step_w_only(rng);
      worst = std::max(worst, rel_frobenius(sample_second_moment(ctrl.w()), oracle[k + 1]));
    }
    return CheckResult{"", worst < 0.03, "max rel ||cov(w) - T_tau||_F = " + sci(worst) + " (" +
                                             std::to_string(spec.members) + " members)"};
  }));

  out.push_back(timed("fixed-points", [&] {
    RngStream rng(config.seed, 203);
    double worst = 0;
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index d = 2 + k % 3;
      // A batch whose second moment is exactly Z: columns sqrt(d) * (scaled eigenvectors).
      const MatrixXd Z = random_spd(d, rng, 1.0);
      const Eigen::SelfAdjointEigenSolver<MatrixXd> es(Z);
      const MatrixXd batch = std::sqrt(double(d)) * es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal();
      const double c = 1.0 / Z.trace();
      const MatrixXd Zt = MatrixXd::Identity(d, d) - c * Z;
      const MatrixXd Zinv = spd_inverse(Z, "Z");
      worst = std::max(worst, (learn_ztilde_rule(Zt, c, batch, 0.3) - Zt).cwiseAbs().maxCoeff());
      worst = std::max(worst, (learn_zinv_rule(Zinv, MatrixXd(Zinv * batch), 0.03) - Zinv).cwiseAbs().maxCoeff() /
                                  Zinv.cwiseAbs().maxCoeff());
    }
    return CheckResult{"", worst < 1e-12, "max deviation at the fixed point = " + sci(worst)};
  }));

  out.push_back(timed("f-gradient", [&] {
    RngStream rng(config.seed, 204);
    double worst = 0;
    for (int k = 0; k < 10; ++k) {
      const Eigen::Index d = 3;
      const std::size_t n = 8;
      const MatrixXd F0 = rng.standard_normal<double>(d, d);
      const MatrixXd y_prev = rng.standard_normal<double>(d, n), y_now = rng.standard_normal<double>(d, n);
      const MatrixXd u = rng.standard_normal<double>(d, n);
      EstimatorConfig ec;
      ec.order = UpdateOrder::kBatch;
      ec.gamma_f_initial = 0.01;
      NeuralEstimator<double> est(d, n, ec, F0);
      est.initialize_features(y_prev);
      est.learn_f_initial(y_now, u);
      const MatrixXd grad = -(est.F_hat() - F0) / ec.gamma_f_initial;
      auto cost = [&](const MatrixXd& F) { return 0.5 * (F * y_prev + u - y_now).squaredNorm() / double(n); };
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
          MatrixXd Fp = F0, Fm = F0;
          Fp(i, j) += h;
          Fm(i, j) -= h;
          const double fd = (cost(Fp) - cost(Fm)) / (2 * h);
          worst = std::max(worst, std::abs(fd - grad(i, j)) / std::max(std::abs(fd), 1e-8));
        }
    }
    return CheckResult{"", worst < 1e-6, "max relative gradient error = " + sci(worst)};
  }));

  out.push_back(timed("neumann-vs-solve", [&] {
    RngStream rng(config.seed, 205);
    double worst = 0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index d = 2 + k % 4;
      VectorXd ev(d);
      for (Eigen::Index i = 0; i < d; ++i) ev(i) = std::pow(10.0, rng.uniform(0, 3));
      ev(0) = 1;
      ev(d - 1) = 1000;
      const MatrixXd Q = random_orthogonal(d, rng);
      const MatrixXd Z = symmetrize(Q * ev.asDiagonal() * Q.transpose());
      const VectorXd eta = rng.standard_normal<double>(d);
      const double c = 1.0 / Z.trace();
      const auto res = apply_neumann(MatrixXd(MatrixXd::Identity(d, d) - c * Z), c, eta, 200000, 1e-14);
      const VectorXd direct = spd_solve(Z, eta, "Z");
      worst = std::max(worst, (res.value - direct).norm() / direct.norm());
    }
    return CheckResult{"", worst < 1e-8, "max relative error vs solve = " + sci(worst) + " (cond <= 1e3)"};
  }));

  out.push_back(timed("zinv-symmetry", [&] {
    RngStream rng(config.seed, 206);
    MatrixXd Zinv = spd_inverse(random_spd(3, rng, 1.0), "Z");
    double worst = 0;
    for (int k = 0; k < 1000; ++k) {
      const MatrixXd eta = rng.standard_normal<double>(3, 4);
      Zinv = learn_zinv_rule(Zinv, MatrixXd(Zinv * eta), 0.01);
      worst = std::max(worst, (Zinv - Zinv.transpose()).cwiseAbs().maxCoeff() / Zinv.cwiseAbs().maxCoeff());
    }
    return CheckResult{"", worst <= 1e-10, "max relative asymmetry = " + sci(worst)};
  }));
  return out;
}

std::string format_checks(const std::vector<CheckResult>& checks) {
  std::string out;
  for (const auto& c : checks) {
    char t[32];
    std::snprintf(t, sizeof t, " [%.2fs]", c.seconds);
    out += (c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + t + "\n";
  }
  return out;
}

}  // namespace nkpc::harness
