#pragma once

#include <vector>

#include "nkpc/errors.hpp"
#include "nkpc/lds.hpp"
#include "nkpc/linalg.hpp"

namespace nkpc {

/// Classical filter state. Between kf_learn_step and kf_execute_step, `K` is the gain
/// for time `t` and `P_minus` has already advanced to P-_{t+1}.
template <typename Scalar>
struct KfState {
  Matrix<Scalar> K;
  Matrix<Scalar> P_minus;
  Vector<Scalar> xhat;
  Vector<Scalar> xhat_minus;
  long t = 0;

  static KfState initial(const LdsModel<Scalar>& model, const Vector<Scalar>& xhat_minus0,
                         const Matrix<Scalar>& P_minus0) {
    KfState s;
    s.K = Matrix<Scalar>::Zero(model.dx(), model.dy());
    s.P_minus = P_minus0;
    s.xhat = xhat_minus0;
    s.xhat_minus = xhat_minus0;
    return s;
  }
};

/// K_t = P- H' (H P- H' + R)^-1 and P-_{t+1} = F (I - K_t H) P- F' + Q.
template <typename Scalar>
KfState<Scalar> kf_learn_step(const LdsModel<Scalar>& model, const KfState<Scalar>& state) {
  require_shape(state.P_minus, model.dx(), model.dx(), "P_minus");
  const auto& H = model.H;
  const Matrix<Scalar> PHt = state.P_minus * H.transpose();
  const Matrix<Scalar> Z = symmetrize(H * PHt + model.R_true);
  KfState<Scalar> next = state;
  // K = PH' Z^-1  <=>  K' = Z^-1 H P.
  next.K = spd_solve(Z, PHt.transpose(), "H P- H' + R").transpose();
  const Matrix<Scalar> I = Matrix<Scalar>::Identity(model.dx(), model.dx());
  next.P_minus = symmetrize(model.F * (I - next.K * H) * state.P_minus * model.F.transpose() + model.Q);
  return next;
}

/// x^_t = x^-_t + K_t (y_t - H x^-_t);  x^-_{t+1} = F x^_t + B u_t.
template <typename Scalar>
KfState<Scalar> kf_execute_step(const LdsModel<Scalar>& model, const KfState<Scalar>& state,
                                const Vector<Scalar>& y, const Vector<Scalar>& u) {
  require_size(y, model.dy(), "measurement y");
  require_size(u, model.du(), "control u");
  require_shape(state.K, model.dx(), model.dy(), "K");
  KfState<Scalar> next = state;
  next.xhat = state.xhat_minus + state.K * (y - model.H * state.xhat_minus);
  next.xhat_minus = model.F * next.xhat + model.B * u;
  next.t = state.t + 1;
  return next;
}

/// Finite-horizon regulator schedule. The gain applied at time t (t0 <= t < N) is
/// L_t = (B' S_{t+1} B + g)^-1 B' S_{t+1} F, with S_N = r and
/// S_{t} = (F' - L_t' B') S_{t+1} F + r.
template <typename Scalar>
struct KcSchedule {
  long t0 = 0;
  long N = 0;
  std::vector<Matrix<Scalar>> L;  // index t - t0, t in [t0, N-1]
  std::vector<Matrix<Scalar>> S;  // index tau - t0, tau in [t0, N]

  const Matrix<Scalar>& gain(long t) const {
    if (t < t0 || t >= N) throw ScheduleError("KcSchedule: no gain for t=" + std::to_string(t));
    return L[static_cast<std::size_t>(t - t0)];
  }
  const Matrix<Scalar>& S_at(long tau) const {
    if (tau < t0 || tau > N) throw ScheduleError("KcSchedule: no S for tau=" + std::to_string(tau));
    return S[static_cast<std::size_t>(tau - t0)];
  }
};

namespace detail {

template <typename Scalar>
void kc_backward_from(const LdsModel<Scalar>& model, long N, long t0, const Matrix<Scalar>& S_N,
                      KcSchedule<Scalar>& out) {
  const std::size_t steps = static_cast<std::size_t>(N - t0);
  out.t0 = t0;
  out.N = N;
  out.L.assign(steps, Matrix<Scalar>());
  out.S.assign(steps + 1, Matrix<Scalar>());
  out.S[steps] = S_N;
  const auto& F = model.F;
  const auto& B = model.B;
  for (std::size_t k = steps; k-- > 0;) {
    const Matrix<Scalar>& S_next = out.S[k + 1];
    const Matrix<Scalar> BtS = B.transpose() * S_next;
    const Matrix<Scalar> lhs = symmetrize(BtS * B + model.g);
    out.L[k] = spd_solve(lhs, BtS * F, "B' S B + g");
    out.S[k] = symmetrize((F.transpose() - out.L[k].transpose() * B.transpose()) * S_next * F + model.r);
  }
}

}  // namespace detail

template <typename Scalar>
KcSchedule<Scalar> kc_backward(const LdsModel<Scalar>& model, long N, long t0) {
  if (N <= t0) throw ParameterError("kc_backward: requires N > t0");
  KcSchedule<Scalar> out;
  detail::kc_backward_from(model, N, t0, model.r, out);
  return out;
}

/// Backward recursion from an arbitrary terminal S_N (used for determinism checks).
template <typename Scalar>
KcSchedule<Scalar> kc_backward_from(const LdsModel<Scalar>& model, long N, long t0,
                                    const Matrix<Scalar>& S_N) {
  if (N <= t0) throw ParameterError("kc_backward: requires N > t0");
  KcSchedule<Scalar> out;
  detail::kc_backward_from(model, N, t0, S_N, out);
  return out;
}

/// One-realization cost sum_{t0}^{N-1} (u'gu + x'rx) + x_N' r x_N.
/// `states` holds x_{t0..N} and `controls` u_{t0..N-1}.
template <typename Scalar>
Scalar evaluate_cost(const std::vector<Vector<Scalar>>& states, const std::vector<Vector<Scalar>>& controls,
                     const LdsModel<Scalar>& model) {
  if (states.empty() || controls.size() + 1 != states.size())
    throw ParameterError("evaluate_cost: need N-t0 controls and N-t0+1 states");
  Scalar J(0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    J += controls[k].dot(model.g * controls[k]) + states[k].dot(model.r * states[k]);
  }
  J += states.back().dot(model.r * states.back());
  return J;
}

/// Trajectory-based overload: covers t0..N of a simulated trajectory.
template <typename Scalar>
Scalar evaluate_cost(const Trajectory<Scalar>& traj, const std::vector<Vector<Scalar>>& controls,
                     const LdsModel<Scalar>& model, long t0, long N) {
  if (t0 < 0 || N <= t0 || N >= static_cast<long>(traj.states.size()))
    throw ParameterError("evaluate_cost: trajectory does not cover [t0, N]");
  std::vector<Vector<Scalar>> xs;
  for (long t = t0; t <= N; ++t) xs.push_back(traj.states[static_cast<std::size_t>(t)].x);
  return evaluate_cost(xs, controls, model);
}

}  // namespace nkpc
