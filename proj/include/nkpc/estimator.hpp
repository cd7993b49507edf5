#pragma once

#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nkpc/adaptive_rate.hpp"
#include "nkpc/errors.hpp"
#include "nkpc/hebbian.hpp"
#include "nkpc/linalg.hpp"
#include "nkpc/rng.hpp"

namespace nkpc {

enum class EstimatorMode { kInitialF, kOfflineSensor, kKalman };

inline const char* to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::kInitialF: return "initial-f";
    case EstimatorMode::kOfflineSensor: return "offline-sensor";
    case EstimatorMode::kKalman: return "kalman";
  }
  return "?";
}

/// Which F~ rule runs during a Kalman-mode step: none, the raw-measurement rule
/// (eps y'_{t-1}) or the refined rule (eta y^'_{t-1}).
enum class FLearning { kOff, kRaw, kRefined };

/// Incremental: features are processed one at a time, each with rate gamma / n_feat and
/// each seeing the matrices left by the previous feature. Batch: one update per step
/// from the feature average, with rate gamma.
enum class UpdateOrder { kIncremental, kBatch };

struct EstimatorConfig {
  InverseMethod z_method = InverseMethod::kNeumann;
  UpdateOrder order = UpdateOrder::kIncremental;
  double gamma_z = 1.0;          // per time step
  double gamma_f = 5.0;          // per time step, Kalman-mode refinement
  double gamma_f_initial = 5.0;  // per time step, initial-F mode
  double gamma_r = 1.0;
  typename LearnedCovariance<double>::NeumannSettings neumann{};
  /// Z starts at the sample covariance of the first eta batch when at least this many
  /// features are tracked; otherwise at a scaled identity.
  std::size_t z_init_min_features = 20;
  std::optional<AdaptiveRateParams> adaptive_z;
  std::optional<AdaptiveRateParams> adaptive_f;

  void validate() const {
    if (!(gamma_z >= 0) || !(gamma_f >= 0) || !(gamma_f_initial >= 0))
      throw ParameterError("estimator rates must be non-negative");
    if (!(gamma_r > 0 && gamma_r <= 1)) throw ParameterError("gamma_R must be in (0, 1]");
    if (neumann.n_passes < 1 || !(neumann.tol > 0)) throw ParameterError("bad Neumann settings");
    if (adaptive_z) adaptive_z->validate();
    if (adaptive_f) adaptive_f->validate();
  }
};

/// Regime-change detector settings: fires when the mean prediction distance ||y^- - y|| over the last
/// `window` steps exceeds `k` times the mean over the preceding `baseline` steps.
/// Detection is armed only after `warmup` Kalman-mode steps.
struct RegimeSettings {
  std::size_t window = 5;
  std::size_t baseline = 50;
  double k = 3.0;
  std::size_t warmup = 200;
};

/// Neural Kalman filter and system identification over an ensemble of tracked features.
///
/// Everything lives in measurement space: the learned F~, R and Z (as Ztilde = I - cZ or
/// as Z^-1), plus per-feature activities. Within a step features are processed strictly
/// in order.
template <typename Scalar>
class NeuralEstimator {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  NeuralEstimator(Eigen::Index dy, std::size_t n_feat, EstimatorConfig config, Mat F_hat0)
      : dy_(dy), n_feat_(n_feat), config_(std::move(config)), F_hat_(std::move(F_hat0)) {
    if (dy < 1 || n_feat < 1) throw ParameterError("estimator needs dy >= 1 and n_feat >= 1");
    config_.validate();
    require_shape(F_hat_, dy, dy, "F_hat0");
    R_hat_ = Mat::Zero(dy, dy);
    yhat_prev_ = Mat::Zero(dy, Eigen::Index(n_feat));
    y_prev_ = yhat_prev_;
    yhat_minus_ = yhat_prev_;
    eta_ = yhat_prev_;
    u_prev_ = yhat_prev_;
    if (config_.adaptive_z) rate_z_ = AdaptiveRateState(*config_.adaptive_z);
    if (config_.adaptive_f) rate_f_ = AdaptiveRateState(*config_.adaptive_f);
    if (config_.z_method == InverseMethod::kDirectInverse) {
      const double per_update = config_.adaptive_z ? config_.adaptive_z->cap : per_feature(config_.gamma_z);
      if (per_update > kMaxDirectInverseRate) {
        warnings_.push_back("direct Z^-1 learning with per-update rate " + std::to_string(per_update) +
                            " > " + std::to_string(kMaxDirectInverseRate) + "; the rule assumes gamma_Z << 1");
      }
    }
  }

  /// Small random F~ start with entries uniform in [-0.1, 0.1].
  static Mat random_f(Eigen::Index dy, RngStream& rng) {
    Mat F(dy, dy);
    for (Eigen::Index j = 0; j < dy; ++j)
      for (Eigen::Index i = 0; i < dy; ++i) F(i, j) = Scalar(rng.uniform(-0.1, 0.1));
    return F;
  }

  // --- accessors -------------------------------------------------------------------
  EstimatorMode mode() const { return mode_; }
  Eigen::Index dy() const { return dy_; }
  std::size_t n_feat() const { return n_feat_; }
  long t() const { return t_; }
  const EstimatorConfig& config() const { return config_; }
  const Mat& F_hat() const { return F_hat_; }
  const Mat& R_hat() const { return R_hat_; }
  bool has_r() const { return r_known_; }
  const LearnedCovariance<Scalar>& z_rep() const { return z_; }
  bool z_initialized() const { return !z_.empty(); }
  const Mat& yhat() const { return yhat_prev_; }
  const Mat& yhat_minus() const { return yhat_minus_; }
  const Mat& eta() const { return eta_; }
  const Warnings& warnings() const { return warnings_; }
  long steps_in_mode() const { return steps_in_mode_; }
  const std::vector<Scalar>& residual_history() const { return residual_history_; }
  double z_rate() const { return rate_z_ ? rate_z_->rate() : per_feature(config_.gamma_z); }
  double f_rate() const { return rate_f_ ? rate_f_->rate() : per_feature(config_.gamma_f); }

  /// R Z^-1 from the current representation (= I - HK).
  Mat gain() const { return (R_hat_ * z_.inverse()); }

  // --- configuration of learned quantities ------------------------------------------
  void set_F_hat(const Mat& F) {
    require_shape(F, dy_, dy_, "F_hat");
    F_hat_ = F;
  }
  /// Supplies R directly (sensor already characterized).
  void set_R(const Mat& R) {
    require_shape(R, dy_, dy_, "R");
    R_hat_ = symmetrize(R);
    r_known_ = true;
  }
  void set_Z(const Mat& Z) { z_ = LearnedCovariance<Scalar>::from_matrix(config_.z_method, Z, neumann()); }
  void reset_Z() { z_ = LearnedCovariance<Scalar>(); }

  /// Allowed: initial-F -> offline-sensor -> kalman, kalman -> initial-F, and
  /// initial-F -> kalman once R is available.
  void set_mode(EstimatorMode next) {
    const bool ok = (mode_ == next) ||
                    (mode_ == EstimatorMode::kInitialF && next == EstimatorMode::kOfflineSensor) ||
                    (mode_ == EstimatorMode::kOfflineSensor && next == EstimatorMode::kKalman && r_known_) ||
                    (mode_ == EstimatorMode::kInitialF && next == EstimatorMode::kKalman && r_known_) ||
                    (mode_ == EstimatorMode::kKalman && next == EstimatorMode::kInitialF);
    if (!ok) {
      throw ModeError(std::string("illegal mode transition ") + to_string(mode_) + " -> " + to_string(next) +
                      (r_known_ ? "" : " (R not learned)"));
    }
    if (next != mode_) {
      if (next == EstimatorMode::kOfflineSensor && config_.gamma_r < 1) R_hat_.setZero();
      if (next == EstimatorMode::kKalman) residual_history_.clear();
      steps_in_mode_ = 0;
    }
    mode_ = next;
  }

  /// First measurements of every feature: y^_0 = y_0 and the raw history start at y_0.
  void initialize_features(const Mat& y0) {
    require_shape(y0, dy_, Eigen::Index(n_feat_), "y0");
    yhat_prev_ = y0;
    y_prev_ = y0;
    yhat_minus_ = F_hat_ * y0;
    u_prev_.setZero();
    eta_.setZero();
    t_ = 0;
  }

  // --- learning rules -----------------------------------------------------------------

  /// Offline-sensor mode: R' = (1 - gamma_R) R + gamma_R <n n'>.
  void learn_r_offline(const Mat& noise_batch) {
    if (mode_ != EstimatorMode::kOfflineSensor) throw ModeError("learn_r_offline requires offline-sensor mode");
    R_hat_ = symmetrize(learn_expectation(R_hat_, noise_batch, noise_batch, Scalar(config_.gamma_r)));
    r_known_ = true;
    ++steps_in_mode_;
  }

  /// eta_t = y^-_t - y_t for every feature.
  const Mat& compute_eta(const Mat& y) {
    require_shape(y, dy_, Eigen::Index(n_feat_), "y");
    eta_ = yhat_minus_ - y;
    return eta_;
  }

  /// Initial-F mode: eps = F~ y_{t-1} + u~_{t-1} - y_t and F~ -= gamma <eps y'_{t-1}>.
  /// `u_tilde_prev` (Dy x n_feat or Dy x 1) is the input applied at t-1; empty for none.
  void learn_f_initial(const Mat& y_now, const Mat& u_tilde_prev = Mat()) {
    if (mode_ != EstimatorMode::kInitialF) throw ModeError("learn_f_initial requires initial-F mode");
    require_shape(y_now, dy_, Eigen::Index(n_feat_), "y");
    const Mat u = expand_u(u_tilde_prev);
    if (config_.order == UpdateOrder::kBatch) {
      const Mat eps = F_hat_ * y_prev_ + u - y_now;
      F_hat_ -= Scalar(config_.gamma_f_initial) / Scalar(n_feat_) * eps * y_prev_.transpose();
    } else {
      const Scalar g = Scalar(per_feature(config_.gamma_f_initial));
      for (Eigen::Index p = 0; p < Eigen::Index(n_feat_); ++p) {
        const Vec eps = F_hat_ * y_prev_.col(p) + u.col(p) - y_now.col(p);
        F_hat_ -= g * eps * y_prev_.col(p).transpose();
      }
    }
    // Flow is cut before the Z layer: the R layer holds the raw measurement.
    y_prev_ = y_now;
    yhat_prev_ = y_now;
    yhat_minus_ = F_hat_ * y_now;
    u_prev_.setZero();
    ++t_;
    ++steps_in_mode_;
  }

  /// Refined rule on its own: F~ -= gamma <eta y^'_{t-1}> (batch form).
  void learn_f_refined(const Mat& yhat_prev, const Mat& eta_now) {
    if (mode_ != EstimatorMode::kKalman) throw ModeError("learn_f_refined requires kalman mode");
    F_hat_ -= Scalar(config_.gamma_f) / Scalar(eta_now.cols()) * eta_now * yhat_prev.transpose();
  }

  /// One Kalman-mode time step for all features (learning plus execution up to y^_t).
  /// Call `predict` afterwards with the control issued at t to form y^-_{t+1}.
  void kalman_step(const Mat& y, FLearning f_rule = FLearning::kOff, bool learn_z = true) {
    if (mode_ != EstimatorMode::kKalman) throw ModeError("kalman_step requires kalman mode");
    if (!r_known_) throw ModeError("kalman_step requires R");
    require_shape(y, dy_, Eigen::Index(n_feat_), "y");
    if (z_.empty()) init_z_from(F_hat_ * yhat_prev_ + u_prev_ - y);

    const Eigen::Index n = Eigen::Index(n_feat_);
    Mat yhat(dy_, n);
    if (config_.order == UpdateOrder::kBatch) {
      eta_ = F_hat_ * yhat_prev_ + u_prev_ - y;
      if (f_rule != FLearning::kOff) {
        const Mat& src = f_rule == FLearning::kRaw ? y_prev_ : yhat_prev_;
        F_hat_ -= Scalar(config_.gamma_f) / Scalar(n) * eta_ * src.transpose();
      }
      const Mat zinv_eta = learn_z ? z_.learn_and_apply(eta_, Scalar(config_.gamma_z)) : z_.apply_inverse(eta_);
      yhat = y + R_hat_ * zinv_eta;
    } else {
      for (Eigen::Index p = 0; p < n; ++p) {
        const Vec eta = F_hat_ * yhat_prev_.col(p) + u_prev_.col(p) - y.col(p);
        eta_.col(p) = eta;
        if (f_rule != FLearning::kOff) {
          const Vec src = f_rule == FLearning::kRaw ? Vec(y_prev_.col(p)) : Vec(yhat_prev_.col(p));
          const Mat grad = eta * src.transpose();
          F_hat_ -= Scalar(f_rate()) * grad;
          if (rate_f_) rate_f_->update(Mat(grad / std::max(src.squaredNorm(), Scalar(1e-300))));
        }
        Vec zinv_eta;
        if (learn_z) {
          if (rate_z_) {
            const Mat Z = z_.matrix();
            rate_z_->update(Mat((eta * eta.transpose() - Z) / Z.trace()));
          }
          zinv_eta = z_.learn_and_apply(eta, Scalar(z_rate()));
        } else {
          zinv_eta = z_.apply_inverse(eta);
        }
        yhat.col(p) = y.col(p) + R_hat_ * zinv_eta;
      }
    }
    residual_history_.push_back(Scalar(eta_.colwise().norm().mean()));
    y_prev_ = y;
    yhat_prev_ = yhat;
    ++t_;
    ++steps_in_mode_;
  }

  /// Execution only: y^_t from frozen matrices (no learning). Same contract as kalman_step.
  void execute_step(const Mat& y) { kalman_step(y, FLearning::kOff, false); }

  /// y^-_{t+1} = F~ y^_t + u~_t; `u_tilde` is the control issued at t (efference copy),
  /// Dy x n_feat, Dy x 1 (shared), or empty for none.
  void predict(const Mat& u_tilde = Mat()) {
    u_prev_ = expand_u(u_tilde);
    yhat_minus_ = F_hat_ * yhat_prev_ + u_prev_;
  }

  /// Returns true and re-enters initial-F mode when the recent ||y^- - y|| level jumps
  /// above k times its trailing baseline.
  bool detect_regime_change(const RegimeSettings& s) {
    if (mode_ != EstimatorMode::kKalman) return false;
    if (std::size_t(steps_in_mode_) < s.warmup) return false;
    const auto& h = residual_history_;
    if (h.size() < 2 * s.window) return false;
    const std::size_t end_base = h.size() - s.window;
    const std::size_t base_len = std::min(s.baseline, end_base);
    const double recent = mean_of(h, end_base, h.size());
    const double base = mean_of(h, end_base - base_len, end_base);
    if (recent > s.k * base) {
      set_mode(EstimatorMode::kInitialF);
      reset_Z();
      residual_history_.clear();
      return true;
    }
    return false;
  }

  /// Execution-only copy with the same learned matrices tracking `n_feat` features.
  NeuralEstimator clone_for_execution(std::size_t n_feat) const {
    if (z_.empty()) throw ModeError("clone_for_execution requires an initialized Z");
    NeuralEstimator out(dy_, n_feat, config_, F_hat_);
    out.R_hat_ = R_hat_;
    out.r_known_ = r_known_;
    out.z_ = z_;
    out.mode_ = EstimatorMode::kKalman;
    return out;
  }

  /// Clears the residual history used by the regime detector (e.g. after warm-up).
  void clear_residual_history() { residual_history_.clear(); }

 private:
  double per_feature(double gamma) const {
    return config_.order == UpdateOrder::kIncremental ? gamma / double(n_feat_) : gamma;
  }

  typename LearnedCovariance<Scalar>::NeumannSettings neumann() const {
    return {config_.neumann.n_passes, Scalar(config_.neumann.tol)};
  }

  Mat expand_u(const Mat& u) const {
    const Eigen::Index n = Eigen::Index(n_feat_);
    if (u.size() == 0) return Mat::Zero(dy_, n);
    if (u.rows() != dy_ || (u.cols() != 1 && u.cols() != n))
      throw ParameterError("u_tilde must be Dy x 1 or Dy x n_feat");
    if (u.cols() == 1 && n != 1) return u.col(0).replicate(1, n);
    return u;
  }

  void init_z_from(const Mat& eta0) {
    Mat Z0;
    if (n_feat_ >= config_.z_init_min_features) {
      Z0 = symmetrize(eta0 * eta0.transpose() / Scalar(eta0.cols()));
    } else {
      Scalar s = eta0.squaredNorm() / Scalar(eta0.cols() * dy_);
      s = std::max(s, R_hat_.trace() / Scalar(dy_));
      if (!(s > Scalar(0))) s = Scalar(1);
      Z0 = s * Mat::Identity(dy_, dy_);
    }
    set_Z(Z0);
  }

  static double mean_of(const std::vector<Scalar>& h, std::size_t a, std::size_t b) {
    if (b <= a) return 0.0;
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += double(h[i]);
    return s / double(b - a);
  }

  Eigen::Index dy_;
  std::size_t n_feat_;
  EstimatorConfig config_;
  EstimatorMode mode_ = EstimatorMode::kInitialF;
  Mat F_hat_;
  Mat R_hat_;
  bool r_known_ = false;
  LearnedCovariance<Scalar> z_;
  Mat yhat_prev_;   // y^_{t-1} (Dy x n_feat)
  Mat y_prev_;      // y_{t-1}
  Mat yhat_minus_;  // y^-_t
  Mat eta_;         // eta_t
  Mat u_prev_;      // u~_{t-1}
  long t_ = 0;
  long steps_in_mode_ = 0;
  std::optional<AdaptiveRateState> rate_z_;
  std::optional<AdaptiveRateState> rate_f_;
  std::vector<Scalar> residual_history_;
  Warnings warnings_;
};

}  // namespace nkpc
