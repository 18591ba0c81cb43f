#pragma once

#include <Eigen/Core>

namespace fo3d {

template <class T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x C row-major feature matrix.
using FeatureMatrix = MatrixT<float>;

}  // namespace fo3d
