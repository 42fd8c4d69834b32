#pragma once

#include <Eigen/Dense>

namespace valc {

/// Row-major dense matrix; one row per token or per concept.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace valc
