#pragma once

#include <Eigen/Dense>

#include <sstream>
#include <stdexcept>
#include <string>

namespace rejgen::nd {

using Index = Eigen::Index;

/// Dense row-major rank-2 tensor. Vectors are 1 x n or n x 1.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensord = Tensor<double>;

/// Lower clamp applied by every log and division in the library.
inline constexpr double kEps = 1e-12;

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << '[' << rows << " x " << cols << ']';
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& t) {
  return shape_string(t.rows(), t.cols());
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, Index r0, Index c0, Index r1, Index c1)
      : std::invalid_argument(op + ": incompatible shapes " + shape_string(r0, c0) + " and " +
                              shape_string(r1, c1)) {}
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace rejgen::nd
