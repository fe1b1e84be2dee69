#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace qimpulse {

using Complex = std::complex<double>;

/// Spatial vector, D <= 3. Fixed max size so no heap traffic in inner loops.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
/// D x D matrix, D <= 3.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

inline constexpr double kPi = 3.14159265358979323846;

inline Vec vec1(double x) {
  Vec v(1);
  v(0) = x;
  return v;
}

inline Vec vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

// Error hierarchy. The CLI maps these onto exit codes, so keep the split
// between "bad input" and "numerics gave up" meaningful.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad parameters, wrong dimension...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two fields that must share a grid do not.
class GridMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Map is not certified as the gradient of a convex function.
class CertificateFailure : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Density has a zero-mass gap, monotone rearrangement is not unique.
class DegenerateDensity : public Error {
 public:
  using Error::Error;
};

/// A numerical guard fired: step too coarse, mass leaking through the
/// periodic boundary, support escaping the grid, Newton not converging,
/// projected resources exceeded.
class NumericalGuard : public Error {
 public:
  using Error::Error;
};

}  // namespace qimpulse
