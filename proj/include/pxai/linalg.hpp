#pragma once

#include <Eigen/Dense>

namespace pxai {

// Row-major so that a batch row maps onto a contiguous feature vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace pxai
