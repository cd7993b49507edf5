#pragma once

#include <algorithm>

#include "nkpc/errors.hpp"
#include "nkpc/types.hpp"

namespace nkpc {

/// Adaptive learning rate driven by a leaky average of the update direction.
///
///   r    <- (1 - delta) r + delta * e          (e: the raw update direction)
///   rate <- rate + alpha * rate * (beta * |r| - rate)
///   rate  = clamp(rate, floor, cap)
///
/// The rate starts at `gamma`. A consistently signed error keeps |r| large and the rate
/// grows toward min(beta |r|, cap); zero-mean or vanishing errors shrink |r| and the rate
/// decays toward `floor`. With `enabled == false` the rate stays at `gamma`.
struct AdaptiveRateParams {
  double alpha = 0.5;
  double beta = 30.0;
  double gamma = 0.05;
  double delta = 0.1;
  double floor = 1e-6;
  double cap = 0.5;
  bool enabled = true;

  /// Parameter set used for covariance (Z) learning.
  static AdaptiveRateParams for_covariance() { return {0.5, 30.0, 0.05, 0.1, 1e-6, 0.5, true}; }
  /// Parameter set used for F~ learning.
  static AdaptiveRateParams for_dynamics() { return {0.1, 3.0, 0.05, 0.04, 1e-6, 0.5, true}; }

  void validate() const {
    if (!(alpha > 0) || !(beta > 0) || !(delta > 0 && delta <= 1))
      throw ParameterError("adaptive rate: alpha, beta > 0 and 0 < delta <= 1 required");
    if (!(floor > 0) || !(cap >= floor) || !(gamma > 0))
      throw ParameterError("adaptive rate: need 0 < floor <= cap and gamma > 0");
  }
};

class AdaptiveRateState {
 public:
  AdaptiveRateState() = default;
  explicit AdaptiveRateState(const AdaptiveRateParams& p) : params_(p), rate_(p.gamma) {
    p.validate();
    if (p.enabled) rate_ = std::clamp(rate_, p.floor, p.cap);
  }

  double rate() const { return rate_; }
  const AdaptiveRateParams& params() const { return params_; }
  double flow_norm() const { return flow_.size() ? flow_.norm() : 0.0; }

  template <typename Derived>
  void update(const Eigen::MatrixBase<Derived>& error_signal) {
    if (!params_.enabled) return;
    const Eigen::VectorXd e = error_signal.template cast<double>().reshaped();
    if (flow_.size() != e.size()) flow_ = Eigen::VectorXd::Zero(e.size());
    flow_ = (1.0 - params_.delta) * flow_ + params_.delta * e;
    rate_ += params_.alpha * rate_ * (params_.beta * flow_.norm() - rate_);
    rate_ = std::clamp(rate_, params_.floor, params_.cap);
  }

 private:
  AdaptiveRateParams params_{};
  double rate_ = 0.05;
  Eigen::VectorXd flow_;
};

/// Free-function form.
template <typename Derived>
AdaptiveRateState adaptive_rate_update(AdaptiveRateState state, const Eigen::MatrixBase<Derived>& error_signal) {
  state.update(error_signal);
  return state;
}

}  // namespace nkpc
