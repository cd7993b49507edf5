#pragma once

#include <cmath>
#include <string>

#include "nkpc/errors.hpp"
#include "nkpc/linalg.hpp"

namespace nkpc {

/// How the expectation E(v z') behind each learned matrix is sampled:
/// (a) across features at one time step, (b) a recency-weighted time average of a
/// single feature, or (c) both.
enum class SampleKind { kFeaturesOnly, kTimeAverage, kCombined };

struct SampleMethod {
  SampleKind kind = SampleKind::kFeaturesOnly;
  std::size_t n_feat = 1;
  double gamma_m = 1.0;

  void validate() const {
    switch (kind) {
      case SampleKind::kFeaturesOnly:
        if (gamma_m != 1.0) throw ParameterError("sample method (a) requires gamma_M = 1");
        break;
      case SampleKind::kTimeAverage:
        if (n_feat != 1) throw ParameterError("sample method (b) requires n_feat = 1");
        if (!(gamma_m > 0.0 && gamma_m < 1.0))
          throw ParameterError("sample method (b) requires 0 < gamma_M << 1");
        break;
      case SampleKind::kCombined:
        if (n_feat <= 1) throw ParameterError("sample method (c) requires n_feat > 1");
        if (!(gamma_m > 0.0 && gamma_m < 1.0))
          throw ParameterError("sample method (c) requires 0 < gamma_M < 1");
        break;
    }
  }
};

/// M' = (1 - gamma) M + gamma <v_p z_p'>_p with the batch average over columns.
template <typename DM, typename DV, typename DZ>
Matrix<typename DM::Scalar> learn_expectation(const Eigen::MatrixBase<DM>& M, const Eigen::MatrixBase<DV>& v_batch,
                                              const Eigen::MatrixBase<DZ>& z_batch,
                                              typename DM::Scalar gamma) {
  using Scalar = typename DM::Scalar;
  if (v_batch.cols() < 1 || v_batch.cols() != z_batch.cols())
    throw ParameterError("learn_expectation: batches must be non-empty and of equal length");
  require_shape(M, v_batch.rows(), z_batch.rows(), "M");
  const Scalar n = Scalar(v_batch.cols());
  return (Scalar(1) - gamma) * M + (gamma / n) * (v_batch * z_batch.transpose());
}

/// Incremental variant: one pair at a time, each with rate gamma.
template <typename DM, typename DV, typename DZ>
Matrix<typename DM::Scalar> learn_expectation_incremental(const Eigen::MatrixBase<DM>& M,
                                                          const Eigen::MatrixBase<DV>& v_batch,
                                                          const Eigen::MatrixBase<DZ>& z_batch,
                                                          typename DM::Scalar gamma) {
  using Scalar = typename DM::Scalar;
  if (v_batch.cols() < 1 || v_batch.cols() != z_batch.cols())
    throw ParameterError("learn_expectation: batches must be non-empty and of equal length");
  require_shape(M, v_batch.rows(), z_batch.rows(), "M");
  Matrix<Scalar> out = M;
  for (Eigen::Index p = 0; p < v_batch.cols(); ++p)
    out = (Scalar(1) - gamma) * out + gamma * v_batch.col(p) * z_batch.col(p).transpose();
  return out;
}

template <typename Scalar>
struct NeumannResult {
  Matrix<Scalar> value;
  int passes = 0;
  Scalar residual = 0;  // ||v(n) - v(n-1)|| / ||v(n)|| at the last pass
  bool converged = false;
};

/// c * sum_k Ztilde^k rhs, i.e. Z^-1 rhs for Ztilde = I - cZ, by repeated passes
/// v(n) = Ztilde v(n-1) + rhs. Stops when the pass increment falls below
/// tol * ||v||. Throws DivergenceError when the increments grow instead of shrinking.
template <typename DZ, typename DR>
NeumannResult<typename DZ::Scalar> apply_neumann(const Eigen::MatrixBase<DZ>& Ztilde, typename DZ::Scalar c,
                                                 const Eigen::MatrixBase<DR>& rhs, int n_passes,
                                                 typename DZ::Scalar tol) {
  using Scalar = typename DZ::Scalar;
  NeumannResult<Scalar> out;
  Matrix<Scalar> v = rhs;
  const Scalar rhs_norm = rhs.norm();
  if (rhs_norm == Scalar(0)) {
    out.value = Matrix<Scalar>::Zero(rhs.rows(), rhs.cols());
    out.converged = true;
    return out;
  }
  Scalar first_step = -1;
  Scalar step = 0;
  for (int n = 1; n <= n_passes; ++n) {
    Matrix<Scalar> next = Ztilde * v + rhs;
    step = (next - v).norm();
    v.swap(next);
    out.passes = n;
    if (first_step < 0) first_step = step;
    const Scalar vn = v.norm();
    if (!std::isfinite(double(step)) || step > Scalar(1e8) * rhs_norm) {
      throw DivergenceError("Neumann series diverged after " + std::to_string(n) + " passes (residual " +
                                std::to_string(double(step / rhs_norm)) + ")",
                            double(step / rhs_norm));
    }
    out.residual = vn > Scalar(0) ? step / vn : step;
    if (step <= tol * vn) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged && n_passes > 1 && step >= first_step) {
    throw DivergenceError("Neumann series not contracting after " + std::to_string(n_passes) +
                              " passes (residual " + std::to_string(double(out.residual)) + ")",
                          double(out.residual));
  }
  out.value = c * v;
  return out;
}

/// Method 1 rule: Ztilde' = (1 - gamma) Ztilde + gamma I - gamma c <eta eta'>.
template <typename DZ, typename DE>
Matrix<typename DZ::Scalar> learn_ztilde_rule(const Eigen::MatrixBase<DZ>& Ztilde, typename DZ::Scalar c,
                                              const Eigen::MatrixBase<DE>& eta_batch,
                                              typename DZ::Scalar gamma) {
  using Scalar = typename DZ::Scalar;
  if (eta_batch.cols() < 1) throw ParameterError("learn_ztilde: empty batch");
  const auto I = Matrix<Scalar>::Identity(Ztilde.rows(), Ztilde.cols());
  const Matrix<Scalar> second = eta_batch * eta_batch.transpose() / Scalar(eta_batch.cols());
  return (Scalar(1) - gamma) * Ztilde + gamma * I - gamma * c * second;
}

/// Method 2 rule: Zinv' = (1 + gamma) Zinv - gamma <v v'>, v = Zinv eta, then symmetrized.
template <typename DZ, typename DV>
Matrix<typename DZ::Scalar> learn_zinv_rule(const Eigen::MatrixBase<DZ>& Zinv, const Eigen::MatrixBase<DV>& v_batch,
                                            typename DZ::Scalar gamma) {
  using Scalar = typename DZ::Scalar;
  if (v_batch.cols() < 1) throw ParameterError("learn_zinv: empty batch");
  const Matrix<Scalar> second = v_batch * v_batch.transpose() / Scalar(v_batch.cols());
  return symmetrize((Scalar(1) + gamma) * Zinv - gamma * second);
}

/// Method 1 represents a covariance through lateral weights Ztilde = I - cZ and applies
/// the inverse with a Neumann series; Method 2 learns the inverse directly.
enum class InverseMethod { kNeumann, kDirectInverse };

inline const char* to_string(InverseMethod m) {
  return m == InverseMethod::kNeumann ? "neumann" : "direct";
}

/// Largest per-update rate accepted for the direct-inverse rule without a warning.
inline constexpr double kMaxDirectInverseRate = 0.05;

/// A covariance matrix (Z or T) learned from samples whose covariance it should equal,
/// held in one of the two representations.
template <typename Scalar>
class LearnedCovariance {
 public:
  struct NeumannSettings {
    int n_passes = 50;
    Scalar tol = Scalar(1e-8);
  };

  LearnedCovariance() = default;

  static LearnedCovariance from_matrix(InverseMethod method, const Matrix<Scalar>& Z,
                                       NeumannSettings neumann = {}) {
    LearnedCovariance rep;
    rep.method_ = method;
    rep.neumann_ = neumann;
    rep.dim_ = Z.rows();
    if (method == InverseMethod::kNeumann) {
      rep.set_ztilde_from(symmetrize(Z));
    } else {
      rep.zinv_ = symmetrize(spd_inverse(Z, "initial covariance"));
    }
    return rep;
  }

  InverseMethod method() const { return method_; }
  Eigen::Index dim() const { return dim_; }
  bool empty() const { return dim_ == 0; }
  Scalar c() const { return c_; }
  const Matrix<Scalar>& ztilde() const { return ztilde_; }
  const Matrix<Scalar>& zinv() const { return zinv_; }
  const NeumannSettings& neumann_settings() const { return neumann_; }
  long nonconverged_applications() const { return nonconverged_; }

  /// Current covariance estimate.
  Matrix<Scalar> matrix() const {
    if (method_ == InverseMethod::kNeumann)
      return (Matrix<Scalar>::Identity(dim_, dim_) - ztilde_) / c_;
    return spd_inverse(zinv_, "learned inverse");
  }

  Matrix<Scalar> inverse() const {
    if (method_ == InverseMethod::kNeumann) return spd_inverse(matrix(), "learned covariance");
    return zinv_;
  }

  /// Z^-1 rhs through the network representation.
  template <typename Derived>
  Matrix<Scalar> apply_inverse(const Eigen::MatrixBase<Derived>& rhs) const {
    if (method_ == InverseMethod::kDirectInverse) return zinv_ * rhs;
    auto res = apply_neumann(ztilde_, c_, rhs, neumann_.n_passes, neumann_.tol);
    if (!res.converged) ++nonconverged_;
    return std::move(res.value);
  }

  /// One Hebbian update from a batch of samples (columns). Returns Z^-1 applied to the
  /// batch in the order the circuit produces it: Method 1 learns first and then iterates
  /// with the new weights; Method 2 makes one pass with the current Zinv and learns from
  /// that same activity.
  template <typename Derived>
  Matrix<Scalar> learn_and_apply(const Eigen::MatrixBase<Derived>& batch, Scalar gamma) {
    if (method_ == InverseMethod::kNeumann) {
      ztilde_ = symmetrize(learn_ztilde_rule(ztilde_, c_, batch, gamma));
      refresh_scale();
      return apply_inverse(batch);
    }
    Matrix<Scalar> v = zinv_ * batch;
    zinv_ = learn_zinv_rule(zinv_, v, gamma);
    return v;
  }

  template <typename Derived>
  void learn(const Eigen::MatrixBase<Derived>& batch, Scalar gamma) {
    if (method_ == InverseMethod::kNeumann) {
      ztilde_ = symmetrize(learn_ztilde_rule(ztilde_, c_, batch, gamma));
      refresh_scale();
    } else {
      zinv_ = learn_zinv_rule(zinv_, Matrix<Scalar>(zinv_ * batch), gamma);
    }
  }

  /// Method 1: re-derive c = 1 / trace(Z) and re-express Ztilde, keeping Z unchanged.
  void refresh_scale() {
    if (method_ != InverseMethod::kNeumann) return;
    set_ztilde_from((Matrix<Scalar>::Identity(dim_, dim_) - ztilde_) / c_);
  }

 private:
  void set_ztilde_from(const Matrix<Scalar>& Z) {
    const Scalar tr = Z.trace();
    if (!(tr > Scalar(0))) throw SingularityError("learned covariance has non-positive trace");
    c_ = Scalar(1) / tr;
    ztilde_ = Matrix<Scalar>::Identity(dim_, dim_) - c_ * Z;
  }

  InverseMethod method_ = InverseMethod::kNeumann;
  NeumannSettings neumann_{};
  Eigen::Index dim_ = 0;
  Scalar c_ = Scalar(1);
  Matrix<Scalar> ztilde_;
  Matrix<Scalar> zinv_;
  mutable long nonconverged_ = 0;
};

}  // namespace nkpc
