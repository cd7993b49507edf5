#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "nkpc/errors.hpp"
#include "nkpc/types.hpp"

namespace nkpc {

/// Relative cutoff used for pivots, singular values and symmetry checks.
template <typename Scalar>
constexpr Scalar kRelTol = Scalar(1e-12);

template <typename Derived>
Matrix<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

template <typename Derived>
typename Derived::Scalar max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? typename Derived::Scalar(0) : m.cwiseAbs().maxCoeff();
}

/// Symmetric to `rel_tol` relative to the largest entry.
template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m,
                  typename Derived::Scalar rel_tol = typename Derived::Scalar(1e-10)) {
  if (m.rows() != m.cols()) return false;
  const auto scale = std::max(max_abs(m), typename Derived::Scalar(1e-300));
  return max_abs(m - m.transpose()) <= rel_tol * scale;
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

template <typename Derived>
void require_shape(const Eigen::MatrixBase<Derived>& m, Eigen::Index rows, Eigen::Index cols,
                   const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ParameterError(std::string(name) + ": expected " + shape_str(rows, cols) + ", got " +
                         shape_str(m.rows(), m.cols()));
  }
}

template <typename Derived>
void require_size(const Eigen::MatrixBase<Derived>& v, Eigen::Index n, const char* name) {
  if (v.size() != n) {
    throw ParameterError(std::string(name) + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
  }
}

/// Lower-triangular factor L with L L' = cov for symmetric PSD input.
/// Pivots below 1e-12 * max(diag) are treated as zero and give an all-zero column,
/// so singular covariances (Q = 0, R = 0, rank-deficient) are accepted.
template <typename Derived>
Matrix<typename Derived::Scalar> covariance_factor(const Eigen::MatrixBase<Derived>& cov_in) {
  using Scalar = typename Derived::Scalar;
  const Matrix<Scalar> cov = cov_in;
  if (cov.rows() != cov.cols()) throw ParameterError("covariance must be square");
  if (!is_symmetric(cov, Scalar(1e-10))) throw ParameterError("covariance is not symmetric");
  const Eigen::Index n = cov.rows();
  Matrix<Scalar> L = Matrix<Scalar>::Zero(n, n);
  if (n == 0) return L;
  const Scalar max_diag = cov.diagonal().cwiseAbs().maxCoeff();
  const Scalar tol = kRelTol<Scalar> * std::max(max_diag, Scalar(0));
  for (Eigen::Index j = 0; j < n; ++j) {
    Scalar d = cov(j, j) - L.row(j).head(j).squaredNorm();
    if (d < -tol) {
      throw ParameterError("covariance is indefinite (negative pivot " + std::to_string(double(d)) +
                           ")");
    }
    if (d <= tol) continue;  // zero pivot: this direction carries no noise
    const Scalar ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      L(i, j) = (cov(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / ljj;
    }
  }
  return L;
}

/// Factorization of a symmetric positive definite system matrix with an explicit
/// singularity threshold (pivot < 1e-12 * largest pivot).
template <typename Scalar>
class SpdSolver {
 public:
  explicit SpdSolver(const Matrix<Scalar>& a, const char* what = "matrix") {
    if (a.rows() != a.cols()) throw ParameterError(std::string(what) + " must be square");
    ldlt_.compute(a);
    const auto d = ldlt_.vectorD();
    const Scalar dmax = d.size() ? d.cwiseAbs().maxCoeff() : Scalar(0);
    const Scalar dmin = d.size() ? d.minCoeff() : Scalar(0);
    if (ldlt_.info() != Eigen::Success || !(dmax > Scalar(0)) || dmin <= kRelTol<Scalar> * dmax) {
      throw SingularityError(std::string(what) + " is numerically singular or not positive definite");
    }
  }

  template <typename Rhs>
  Matrix<Scalar> solve(const Eigen::MatrixBase<Rhs>& rhs) const {
    return ldlt_.solve(rhs);
  }

  Matrix<Scalar> inverse(Eigen::Index n) const { return ldlt_.solve(Matrix<Scalar>::Identity(n, n)); }

 private:
  Eigen::LDLT<Matrix<Scalar>> ldlt_;
};

/// A^{-1} B for symmetric positive definite A.
template <typename DA, typename DB>
Matrix<typename DA::Scalar> spd_solve(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                      const char* what = "matrix") {
  using Scalar = typename DA::Scalar;
  return SpdSolver<Scalar>(Matrix<Scalar>(a), what).solve(b);
}

template <typename Derived>
Matrix<typename Derived::Scalar> spd_inverse(const Eigen::MatrixBase<Derived>& a,
                                             const char* what = "matrix") {
  using Scalar = typename Derived::Scalar;
  return SpdSolver<Scalar>(Matrix<Scalar>(a), what).inverse(a.rows());
}

template <typename Scalar>
struct Pseudoinverse {
  Matrix<Scalar> value;
  Eigen::Index rank = 0;
  bool full_row_rank = false;
  bool full_column_rank = false;
};

/// Moore-Penrose pseudoinverse via SVD; singular values below 1e-12 * sigma_max are dropped.
template <typename Derived>
Pseudoinverse<typename Derived::Scalar> pseudoinverse(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Pseudoinverse<Scalar> out;
  const Matrix<Scalar> a = m;
  if (a.size() == 0) {
    out.value = Matrix<Scalar>::Zero(a.cols(), a.rows());
    return out;
  }
  Eigen::JacobiSVD<Matrix<Scalar>> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const Scalar cutoff = kRelTol<Scalar> * (s.size() ? s(0) : Scalar(0));
  Vector<Scalar> s_inv = Vector<Scalar>::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) {
      s_inv(i) = Scalar(1) / s(i);
      ++out.rank;
    }
  }
  out.value = svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
  out.full_row_rank = out.rank == a.rows();
  out.full_column_rank = out.rank == a.cols();
  return out;
}

template <typename Derived>
typename Derived::Scalar min_eigenvalue(const Eigen::MatrixBase<Derived>& sym) {
  using Scalar = typename Derived::Scalar;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

template <typename Derived>
typename Derived::Scalar spectral_radius(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return Scalar(0);
  Eigen::EigenSolver<Matrix<Scalar>> es(Matrix<Scalar>(m), false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Relative Frobenius error ||a - b|| / ||b||.
template <typename DA, typename DB>
typename DA::Scalar rel_frobenius(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  return (a - b).norm() / b.norm();
}

/// 2-d counterclockwise rotation by `degrees`.
template <typename Scalar>
Matrix<Scalar> rotation2d(Scalar degrees) {
  const Scalar rad = degrees * Scalar(M_PI) / Scalar(180);
  Matrix<Scalar> m(2, 2);
  m << std::cos(rad), -std::sin(rad), std::sin(rad), std::cos(rad);
  return m;
}

}  // namespace nkpc
