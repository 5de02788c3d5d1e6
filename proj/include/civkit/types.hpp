#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace civkit {

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Dense category codes in {0, ..., G-1}.
using Codes = std::vector<int>;

/// Two-sided 5% critical value of the standard normal.
inline constexpr double kNormalCritical95 = 1.959964;

}  // namespace civkit
