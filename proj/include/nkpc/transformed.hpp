#pragma once

#include <vector>

#include "nkpc/lds.hpp"
#include "nkpc/linalg.hpp"

namespace nkpc {

/// Measurement-space quantities. Only the combinations below are visible to a learner
/// that never sees x or H.
template <typename Scalar>
struct TransformedModel {
  Matrix<Scalar> F_tilde;  // H F H+
  Matrix<Scalar> HQH;      // H Q H'
  Matrix<Scalar> R;
  Matrix<Scalar> g_tilde;  // H'+ B'+ g B+ H+
  Matrix<Scalar> r_tilde;  // H'+ r H+
  Matrix<Scalar> HB;       // maps u to u~ = H B u
  Eigen::Index h_rank = 0;
  Eigen::Index b_rank = 0;
  Warnings warnings;

  Eigen::Index dy() const { return F_tilde.rows(); }
  Vector<Scalar> u_tilde_of(const Vector<Scalar>& u) const { return HB * u; }
};

/// Builds the transformed model. The exact equivalences with the classical recursions
/// need H+ H = I (H of full column rank) and an invertible H B; violations are reported in
/// `warnings` rather than rejected.
template <typename Scalar>
TransformedModel<Scalar> derive_transformed(const LdsModel<Scalar>& model) {
  model.validate();
  TransformedModel<Scalar> tm;
  const auto h_pinv = pseudoinverse(model.H);
  const auto b_pinv = pseudoinverse(model.B);
  const Matrix<Scalar>& Hp = h_pinv.value;
  const Matrix<Scalar>& Bp = b_pinv.value;
  tm.h_rank = h_pinv.rank;
  tm.b_rank = b_pinv.rank;
  tm.F_tilde = model.H * model.F * Hp;
  tm.HQH = symmetrize(model.H * model.Q * model.H.transpose());
  tm.R = model.R_true;
  tm.g_tilde = symmetrize(Hp.transpose() * Bp.transpose() * model.g * Bp * Hp);
  tm.r_tilde = symmetrize(Hp.transpose() * model.r * Hp);
  tm.HB = model.H * model.B;
  if (!h_pinv.full_row_rank || !h_pinv.full_column_rank) {
    tm.warnings.push_back("H is " + shape_str(model.H.rows(), model.H.cols()) + " with rank " +
                          std::to_string(h_pinv.rank) +
                          "; measurement-space identities assume square invertible H");
  }
  if (!b_pinv.full_column_rank || !b_pinv.full_row_rank) {
    tm.warnings.push_back("B is " + shape_str(model.B.rows(), model.B.cols()) + " with rank " +
                          std::to_string(b_pinv.rank) + "; g~ uses its pseudoinverse");
  }
  return tm;
}

/// R Z^-1 (= I - H K). Uses symmetry of R and Z: R Z^-1 = (Z^-1 R)'.
template <typename DR, typename DZ>
Matrix<typename DR::Scalar> gain_from_z(const Eigen::MatrixBase<DR>& R, const Eigen::MatrixBase<DZ>& Z) {
  return spd_solve(Z, R, "Z").transpose();
}

/// Z' = F~ (I - R Z^-1) R F~' + H Q H' + R, symmetrized.
template <typename Scalar>
Matrix<Scalar> z_step(const TransformedModel<Scalar>& tm, const Matrix<Scalar>& Z) {
  require_shape(Z, tm.dy(), tm.dy(), "Z");
  const auto I = Matrix<Scalar>::Identity(tm.dy(), tm.dy());
  const Matrix<Scalar> RZinv = gain_from_z(tm.R, Z);
  return symmetrize(tm.F_tilde * (I - RZinv) * tm.R * tm.F_tilde.transpose() + tm.HQH + tm.R);
}

/// T_{tau-1} = F~' g~ (I - T^-1 g~) F~ + r~ + g~, symmetrized.
template <typename Scalar>
Matrix<Scalar> t_step(const TransformedModel<Scalar>& tm, const Matrix<Scalar>& T) {
  require_shape(T, tm.dy(), tm.dy(), "T");
  const auto I = Matrix<Scalar>::Identity(tm.dy(), tm.dy());
  const Matrix<Scalar> Tinv_g = spd_solve(T, tm.g_tilde, "T");
  return symmetrize(tm.F_tilde.transpose() * tm.g_tilde * (I - Tinv_g) * tm.F_tilde + tm.r_tilde +
                    tm.g_tilde);
}

/// L~ = (-I + T^-1 g~) F~; the control is u~ = L~ y^.
template <typename Scalar>
Matrix<Scalar> control_gain_from_t(const TransformedModel<Scalar>& tm, const Matrix<Scalar>& T) {
  require_shape(T, tm.dy(), tm.dy(), "T");
  const auto I = Matrix<Scalar>::Identity(tm.dy(), tm.dy());
  return (-I + spd_solve(T, tm.g_tilde, "T")) * tm.F_tilde;
}

/// Z path of `steps` + 1 matrices starting at Z0.
template <typename Scalar>
std::vector<Matrix<Scalar>> z_path(const TransformedModel<Scalar>& tm, const Matrix<Scalar>& Z0,
                                   std::size_t steps) {
  std::vector<Matrix<Scalar>> path{Z0};
  for (std::size_t k = 0; k < steps; ++k) path.push_back(z_step(tm, path.back()));
  return path;
}

/// T path indexed backward: result[k] = T_{N-k}, starting at T_N = r~ + g~.
template <typename Scalar>
std::vector<Matrix<Scalar>> t_path(const TransformedModel<Scalar>& tm, std::size_t steps) {
  std::vector<Matrix<Scalar>> path{symmetrize(tm.r_tilde + tm.g_tilde)};
  for (std::size_t k = 0; k < steps; ++k) path.push_back(t_step(tm, path.back()));
  return path;
}

}  // namespace nkpc
