#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "nkpc/errors.hpp"
#include "nkpc/estimator.hpp"
#include "nkpc/hebbian.hpp"
#include "nkpc/kalman.hpp"
#include "nkpc/lds.hpp"
#include "nkpc/linalg.hpp"
#include "nkpc/rng.hpp"
#include "nkpc/transformed.hpp"

namespace nkpc {

/// How the backward-computed T schedule is kept for the forward pass.
enum class StoragePolicy { kStoreAll, kRelearnEachStep, kReuseK };

inline const char* to_string(StoragePolicy p) {
  switch (p) {
    case StoragePolicy::kStoreAll: return "store-all";
    case StoragePolicy::kRelearnEachStep: return "relearn";
    case StoragePolicy::kReuseK: return "reuse-k";
  }
  return "?";
}

struct ControllerConfig {
  InverseMethod t_method = InverseMethod::kNeumann;
  double gamma_t = 1.0;
  /// Repeated updates on the same w batch per backward step (useful for the direct
  /// inverse rule, whose rate must stay small).
  int t_iterations = 1;
  std::size_t n_w = 10000;
  StoragePolicy policy = StoragePolicy::kStoreAll;
  std::size_t reuse_k = 1;
  typename LearnedCovariance<double>::NeumannSettings neumann{};

  void validate() const {
    if (!(gamma_t >= 0 && gamma_t <= 1)) throw ParameterError("gamma_T must be in [0, 1]");
    if (t_iterations < 1) throw ParameterError("t_iterations must be >= 1");
    if (n_w < 1) throw ParameterError("N_w must be >= 1");
    if (policy == StoragePolicy::kReuseK && reuse_k < 1) throw ParameterError("reuse_k must be >= 1");
  }
};

/// Neural Kalman controller working in measurement space.
///
/// The internally generated noises nu^g ~ N(0, g~) and nu^r ~ N(0, r~) drive a w ensemble
/// backward from the horizon; T (or T^-1) is learned from <ww'> at every step and the
/// control u~_t = (-I + T_{t+1}^-1 g^) F^ y^_t is issued in the forward pass.
template <typename Scalar>
class NeuralController {
 public:
  using Mat = Matrix<Scalar>;
  using Rep = LearnedCovariance<Scalar>;

  /// `g_gen` and `r_gen` are the covariances of the generated noise (g~, r~).
  NeuralController(Mat g_gen, Mat r_gen, ControllerConfig config)
      : config_(std::move(config)), g_gen_(symmetrize(g_gen)), r_gen_(symmetrize(r_gen)) {
    config_.validate();
    const Eigen::Index d = g_gen_.rows();
    require_shape(g_gen_, d, d, "g~");
    require_shape(r_gen_, d, d, "r~");
    g_factor_ = covariance_factor(g_gen_);
    r_factor_ = covariance_factor(r_gen_);
    g_hat_ = Mat::Zero(d, d);
    F_tilde_ = Mat::Zero(d, d);
    if (config_.t_method == InverseMethod::kDirectInverse && config_.gamma_t > kMaxDirectInverseRate) {
      warnings_.push_back("direct T^-1 learning with gamma_T = " + std::to_string(config_.gamma_t) +
                          " > " + std::to_string(kMaxDirectInverseRate));
    }
  }

  Eigen::Index dy() const { return g_gen_.rows(); }
  const ControllerConfig& config() const { return config_; }
  const Mat& g_hat() const { return g_hat_; }
  const Mat& F_tilde() const { return F_tilde_; }
  /// F~' as used in the backward recursion.
  Mat F_tilde_transpose() const { return F_tilde_.transpose(); }
  const Mat& w() const { return w_; }
  const Mat& pending_nu_g() const { return nu_g_; }
  long tau() const { return tau_; }
  long horizon() const { return N_; }
  long t0() const { return t0_; }
  const Rep& t_rep() const { return t_rep_; }
  const Warnings& warnings() const { return warnings_; }
  /// Noise draws consumed so far (columns of nu^g and nu^r combined).
  std::size_t draws() const { return draws_; }

  void set_g_hat(const Mat& g) {
    require_shape(g, dy(), dy(), "g^");
    g_hat_ = symmetrize(g);
  }
  /// Replaces the current T representation (oracle injection for tests and checks).
  void set_T(const Mat& T) { t_rep_ = Rep::from_matrix(config_.t_method, T, neumann()); }

  /// Uses the estimator's learned F~ (same object read in the transposed direction).
  void couple(const Mat& F_hat) {
    require_shape(F_hat, dy(), dy(), "F^");
    F_tilde_ = F_hat;
  }

  /// g^ = <nu^g nu^g'> over n_samples generated draws. Warns when the result is
  /// rank deficient.
  void learn_g_offline(std::size_t n_samples, RngStream& rng) {
    if (n_samples < 1) throw ParameterError("learn_g_offline: n_samples must be >= 1");
    const Mat nu = sample_gaussian_factored(g_factor_, n_samples, rng);
    g_hat_ = symmetrize(nu * nu.transpose() / Scalar(n_samples));
    const Eigen::Index rank = Eigen::FullPivLU<Mat>(g_hat_).setThreshold(1e-10).rank();
    if (rank < dy() && max_abs(g_gen_) > 0) {
      warnings_.push_back("learned g~ is rank " + std::to_string(rank) + " < " + std::to_string(dy()) +
                          " (insufficient samples)");
    }
  }

  /// w_N = nu^r - nu^g for N_w members; T_N is learned from this batch.
  void init_w_ensemble(long N, long t0, std::size_t n_w, RngStream& rng) {
    if (N <= t0) throw ParameterError("init_w_ensemble: requires N > t0");
    N_ = N;
    t0_ = t0;
    tau_ = N;
    const Mat nu_r = sample_gaussian_factored(r_factor_, n_w, rng);
    nu_g_ = sample_gaussian_factored(g_factor_, n_w, rng);
    draws_ = 2 * n_w;
    w_ = nu_r - nu_g_;
    t_rep_ = Rep();
    learn_t_from_w();
  }

  /// One backward step tau -> tau - 1 followed by learning T_{tau-1}.
  void w_step_backward(RngStream& rng) {
    if (tau_ <= t0_ + 1) throw ScheduleError("w_step_backward: tau already at t0 + 1");
    step_w_only(rng);
    learn_t_from_w();
  }

  /// Backward step of the ensemble only (T untouched).
  void step_w_only(RngStream& rng) {
    if (t_rep_.empty()) throw ModeError("w_step_backward before init_w_ensemble");
    const Eigen::Index n = w_.cols();
    const Mat x = t_rep_.apply_inverse(w_);
    // Fresh draws only after w_tau is complete.
    const Mat nu_g_prev = sample_gaussian_factored(g_factor_, std::size_t(n), rng);
    const Mat nu_r = sample_gaussian_factored(r_factor_, std::size_t(n), rng);
    draws_ += 2 * std::size_t(n);
    w_ = -nu_g_prev + nu_r + F_tilde_.transpose() * (nu_g_ + g_hat_ * x);
    nu_g_ = nu_g_prev;
    --tau_;
  }

  /// Method 1 rule on a w batch: T' = (1 - gamma) T + gamma <ww'>.
  void learn_t(const Mat& w_batch) {
    for (int i = 0; i < config_.t_iterations; ++i) t_rep_.learn(w_batch, Scalar(config_.gamma_t));
  }
  /// Method 2 rule on v = T^-1 w: Tinv' = (1 + gamma) Tinv - gamma <vv'>.
  void learn_tinv(const Mat& v_batch) {
    if (t_rep_.method() != InverseMethod::kDirectInverse) throw ModeError("learn_tinv requires direct-inverse T");
    t_rep_ = Rep::from_matrix(InverseMethod::kDirectInverse,
                              spd_inverse(learn_zinv_rule(t_rep_.zinv(), v_batch, Scalar(config_.gamma_t)), "T^-1"),
                              neumann());
  }

  /// Full backward sweep from N to t0 + 1 with `rng` (copied, so the same stream always
  /// yields the same schedule). Snapshots are keyed by the application time t, holding
  /// T_{t+1}.
  void kc_learning_sweep(long N, long t0, const RngStream& rng) {
    sweep_rng_ = rng;
    N_ = N;
    t0_ = t0;
    snapshots_.clear();
    if (config_.policy == StoragePolicy::kRelearnEachStep) {
      run_sweep(t0, nullptr);
      return;
    }
    run_sweep(t0, &snapshots_);
  }

  /// T_{t+1} representation used for the control at time t.
  Rep schedule_entry(long t) const {
    if (!sweep_rng_) throw ScheduleError("no control schedule (run kc_learning_sweep first)");
    if (t < t0_ || t >= N_) throw ScheduleError("control time " + std::to_string(t) + " outside [t0, N)");
    if (config_.policy == StoragePolicy::kRelearnEachStep) {
      NeuralController tmp = *this;
      tmp.run_sweep(t, nullptr);
      return tmp.t_rep_;
    }
    auto it = snapshots_.lower_bound(t);
    if (it == snapshots_.end()) throw ScheduleError("missing T snapshot for t = " + std::to_string(t));
    if (config_.policy == StoragePolicy::kStoreAll && it->first != t)
      throw ScheduleError("missing T snapshot for t = " + std::to_string(t));
    return it->second;
  }

  std::size_t stored_snapshots() const { return snapshots_.size(); }

  /// u~_t = (-I + T_{t+1}^-1 g^) F^ y^_t for every column of `yhat`.
  Mat control_execute(long t, const Mat& yhat) const {
    const Rep rep = schedule_entry(t);
    const Mat pred = F_tilde_ * yhat;
    return -pred + rep.apply_inverse(g_hat_ * pred);
  }

  /// T_{t+1} matrices of the schedule for t = t0..N-1.
  std::vector<Mat> t_path() const {
    std::vector<Mat> out;
    for (long t = t0_; t < N_; ++t) out.push_back(schedule_entry(t).matrix());
    return out;
  }

 private:
  typename Rep::NeumannSettings neumann() const { return {config_.neumann.n_passes, Scalar(config_.neumann.tol)}; }

  void learn_t_from_w() {
    const Eigen::Index n = w_.cols();
    const Mat second = w_ * w_.transpose() / Scalar(n);
    if (t_rep_.empty()) {
      if (!(second.trace() > Scalar(0))) return;  // degenerate ensemble (g~ = r~ = 0)
      // Start from the ensemble second moment of the current batch.
      t_rep_ = Rep::from_matrix(config_.t_method, symmetrize(second), neumann());
      if (config_.t_method == InverseMethod::kNeumann) return;
    }
    if (config_.t_method == InverseMethod::kNeumann) {
      learn_t(w_);
    } else {
      for (int i = 0; i < config_.t_iterations; ++i) learn_tinv(t_rep_.zinv() * w_);
    }
  }

  void run_sweep(long stop_t, std::map<long, Rep>* store) {
    RngStream rng = *sweep_rng_;
    init_w_ensemble(N_, t0_, config_.n_w, rng);
    const std::size_t k = config_.policy == StoragePolicy::kReuseK ? config_.reuse_k : 1;
    auto keep = [&](long t) {
      if (store && (std::size_t(N_ - 1 - t) % k == 0 || t == t0_)) store->emplace(t, t_rep_);
    };
    keep(N_ - 1);
    while (tau_ > stop_t + 1) {
      w_step_backward(rng);
      keep(tau_ - 1);
    }
  }

  ControllerConfig config_;
  Mat g_gen_, r_gen_, g_factor_, r_factor_;
  Mat g_hat_;
  Mat F_tilde_;
  Mat w_;
  Mat nu_g_;
  Rep t_rep_;
  long N_ = 0, t0_ = 0, tau_ = 0;
  std::size_t draws_ = 0;
  std::optional<RngStream> sweep_rng_;
  std::map<long, Rep> snapshots_;
  Warnings warnings_;
};

/// Mean and spread of a sample of costs.
struct CostStats {
  std::vector<double> per_seed;
  double mean = 0;
  double stddev = 0;

  void finalize() {
    const double n = double(per_seed.size());
    if (n == 0) return;
    mean = 0;
    for (double v : per_seed) mean += v;
    mean /= n;
    double ss = 0;
    for (double v : per_seed) ss += (v - mean) * (v - mean);
    stddev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  }
};

struct ClosedLoopStats {
  CostStats neural, classical, zero;
  std::vector<std::vector<VectorXd>> neural_u_tilde;  // per seed, t0..N-1
  std::vector<std::vector<VectorXd>> classical_u_tilde;
};

/// Closed-loop comparison of neural KC, classical KC and zero control. Each seed shares
/// the initial state and every plant and sensor draw across the three controllers.
/// The plant is actuated with u = (HB)^+ u~.
template <typename Scalar>
ClosedLoopStats closed_loop_run(const LdsModel<Scalar>& model, const NeuralEstimator<Scalar>& trained,
                                const NeuralController<Scalar>& ctrl_template, long t0, long N,
                                const std::vector<std::uint64_t>& seeds,
                                const InitialStateDistribution<Scalar>& init,
                                bool keep_controls = false) {
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;
  if (trained.mode() != EstimatorMode::kKalman) throw ModeError("closed_loop_run requires a Kalman-mode estimator");
  if (N <= t0 || t0 < 0) throw ParameterError("closed_loop_run requires 0 <= t0 < N");
  const auto tm = derive_transformed(model);
  const Mat hb_pinv = pseudoinverse(tm.HB).value;
  const auto kc = kc_backward(model, N, t0);
  const Mat q_factor = covariance_factor(model.Q);
  const Mat r_factor = covariance_factor(model.R_true);
  const Mat p0_factor = covariance_factor(init.cov);
  const Vec zero_u = Vec::Zero(model.du());

  ClosedLoopStats out;
  for (std::uint64_t seed : seeds) {
    const RngStream root(seed, 0);
    RngStream x0_rng = root.child(0);
    const Vec x0 = init.mean + sample_gaussian_factored(p0_factor, 1, x0_rng).col(0);
    // Pre-draw all noise so the three controllers see identical realizations.
    RngStream plant_rng = root.child(1), sensor_rng = root.child(2);
    const Mat m = sample_gaussian_factored(q_factor, std::size_t(N - t0), plant_rng);
    const Mat n = sample_gaussian_factored(r_factor, std::size_t(N - t0 + 1), sensor_rng);

    NeuralController<Scalar> ctrl = ctrl_template;
    ctrl.couple(trained.F_hat());
    ctrl.kc_learning_sweep(N, t0, root.child(3));

    // Neural.
    {
      NeuralEstimator<Scalar> est = trained.clone_for_execution(1);
      std::vector<Vec> xs{x0};
      std::vector<Vec> us;
      std::vector<VectorXd> uts;
      Vec x = x0;
      est.initialize_features(Mat(model.H * x + n.col(0)));
      for (long t = t0; t < N; ++t) {
        const long k = t - t0;
        const Mat ut = ctrl.control_execute(t, est.yhat());
        const Vec u = hb_pinv * ut.col(0);
        x = model.F * x + model.B * u + m.col(k);
        xs.push_back(x);
        us.push_back(u);
        if (keep_controls) uts.push_back(ut.col(0).template cast<double>());
        est.predict(ut);
        if (t + 1 < N) est.execute_step(Mat(model.H * x + n.col(k + 1)));
      }
      out.neural.per_seed.push_back(double(evaluate_cost(xs, us, model)));
      if (keep_controls) out.neural_u_tilde.push_back(std::move(uts));
    }
    // Classical.
    {
      auto kf = KfState<Scalar>::initial(model, init.mean, init.cov);
      std::vector<Vec> xs{x0};
      std::vector<Vec> us;
      std::vector<VectorXd> uts;
      Vec x = x0;
      for (long t = t0; t < N; ++t) {
        const long k = t - t0;
        kf = kf_learn_step(model, kf);
        const Vec y = model.H * x + n.col(k);
        const Vec xhat = kf.xhat_minus + kf.K * (y - model.H * kf.xhat_minus);
        const Vec u = -kc.gain(t) * xhat;
        kf = kf_execute_step(model, kf, y, u);
        x = model.F * x + model.B * u + m.col(k);
        xs.push_back(x);
        us.push_back(u);
        if (keep_controls) uts.push_back((tm.HB * u).template cast<double>());
      }
      out.classical.per_seed.push_back(double(evaluate_cost(xs, us, model)));
      if (keep_controls) out.classical_u_tilde.push_back(std::move(uts));
    }
    // Zero control.
    {
      std::vector<Vec> xs{x0};
      std::vector<Vec> us;
      Vec x = x0;
      for (long t = t0; t < N; ++t) {
        x = model.F * x + m.col(t - t0);
        xs.push_back(x);
        us.push_back(zero_u);
      }
      out.zero.per_seed.push_back(double(evaluate_cost(xs, us, model)));
    }
  }
  out.neural.finalize();
  out.classical.finalize();
  out.zero.finalize();
  return out;
}

}  // namespace nkpc
