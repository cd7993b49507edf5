#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nkpc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Non-fatal diagnostics collected by operations that may still return a usable result.
using Warnings = std::vector<std::string>;

}  // namespace nkpc
