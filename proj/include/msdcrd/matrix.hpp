#pragma once

#include <Eigen/Dense>

#include "msdcrd/tensor.hpp"

namespace msdcrd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

/// Views a tensor as rows x (product of the remaining extents). A rank-1
/// tensor becomes a single column.
inline Matrix to_matrix(const Tensor& t) {
  const std::size_t rows = t.extent(0);
  const std::size_t cols = t.size() / rows;
  return Eigen::Map<const Matrix>(t.data().data(), idx(rows), idx(cols));
}

inline Vector to_vector(const Tensor& t) {
  detail::require(t.rank() == 1, "expected a rank-1 tensor, got " + shape_string(t.shape()));
  return Eigen::Map<const Vector>(t.data().data(), idx(t.size()));
}

inline Tensor to_tensor(const Matrix& m) {
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::vector<double>(m.data(), m.data() + m.size()));
}

inline Tensor to_tensor(const Vector& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace msdcrd
