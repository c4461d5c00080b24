#pragma once

#include <Eigen/Dense>

#include "rng.hpp"

namespace selfe {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatXd = Mat<double>;
using VecXd = Vec<double>;

template <typename T>
Mat<T> randn_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<T>(rng.normal());
  return m;
}

template <typename T>
Vec<T> randn_vec(Rng& rng, Eigen::Index n) {
  Vec<T> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<T>(rng.normal());
  return v;
}

}  // namespace selfe
