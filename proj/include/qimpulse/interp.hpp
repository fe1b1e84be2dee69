#pragma once

// Interpolants used to evaluate grid data off-grid: monotone cubic Hermite
// tables (maps, inverse CDFs), cubic convolution on periodic grids, and
// band-limited Fourier interpolation in 1D.

#include "qimpulse/fft.hpp"
#include "qimpulse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace qimpulse {

/// Monotonicity-preserving piecewise cubic Hermite interpolant
/// (Fritsch-Carlson slopes). Outside the node range it continues affinely
/// with the end-point derivative, so value, derivative and antiderivative are
/// all continuous everywhere.
class Pchip1D {
 public:
  Pchip1D() = default;

  Pchip1D(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw InvalidArgument("Pchip1D needs >= 2 matching nodes");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(x_[i] > x_[i - 1])) throw InvalidArgument("Pchip1D nodes must be strictly increasing");
    }
    d_.assign(n, 0.0);
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
    } else {
      for (std::size_t k = 1; k + 1 < n; ++k) {
        if (delta[k - 1] * delta[k] <= 0.0) {
          d_[k] = 0.0;
        } else {
          const double w1 = 2.0 * h[k] + h[k - 1];
          const double w2 = h[k] + 2.0 * h[k - 1];
          d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
      }
      d_[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
      d_[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }
    cum_.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      cum_[i + 1] = cum_[i] + h[i] * (y_[i] + y_[i + 1]) / 2.0 + h[i] * h[i] * (d_[i] - d_[i + 1]) / 12.0;
    }
  }

  double operator()(double x) const { return eval(x); }

  double eval(double x) const {
    const std::size_t n = x_.size();
    if (x <= x_[0]) return y_[0] + d_[0] * (x - x_[0]);
    if (x >= x_[n - 1]) return y_[n - 1] + d_[n - 1] * (x - x_[n - 1]);
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k];
    const double t = (x - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[k] + (t3 - 2 * t2 + t) * h * d_[k] + (-2 * t3 + 3 * t2) * y_[k + 1] +
           (t3 - t2) * h * d_[k + 1];
  }

  double derivative(double x) const {
    const std::size_t n = x_.size();
    if (x <= x_[0]) return d_[0];
    if (x >= x_[n - 1]) return d_[n - 1];
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k];
    const double t = (x - x_[k]) / h;
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * y_[k] + (-6 * t2 + 6 * t) * y_[k + 1]) / h + (3 * t2 - 4 * t + 1) * d_[k] +
           (3 * t2 - 2 * t) * d_[k + 1];
  }

  /// Integral of the interpolant from the first node to x.
  double antiderivative(double x) const {
    const std::size_t n = x_.size();
    if (x <= x_[0]) {
      const double u = x - x_[0];
      return y_[0] * u + 0.5 * d_[0] * u * u;
    }
    if (x >= x_[n - 1]) {
      const double u = x - x_[n - 1];
      return cum_[n - 1] + y_[n - 1] * u + 0.5 * d_[n - 1] * u * u;
    }
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k];
    const double t = (x - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
    const double i00 = t4 / 2 - t3 + t;
    const double i10 = t4 / 4 - 2 * t3 / 3 + t2 / 2;
    const double i01 = -t4 / 2 + t3;
    const double i11 = t4 / 4 - t3 / 3;
    return cum_[k] + h * (i00 * y_[k] + i10 * h * d_[k] + i01 * y_[k + 1] + i11 * h * d_[k + 1]);
  }

  const std::vector<double>& nodes() const { return x_; }
  const std::vector<double>& values() const { return y_; }

 private:
  static double edge_slope(double h0, double h1, double m0, double m1) {
    double d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (d * m0 <= 0.0) {
      d = 0.0;
    } else if (m0 * m1 <= 0.0 && std::abs(d) > std::abs(3 * m0)) {
      d = 3 * m0;
    }
    return d;
  }

  std::size_t segment(double x) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    auto k = static_cast<std::size_t>(it - x_.begin());
    return std::min(k - 1, x_.size() - 2);
  }

  std::vector<double> x_, y_, d_, cum_;
};

namespace detail {
// Keys cubic convolution kernel, a = -1/2.
inline void keys_weights(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}
}  // namespace detail

/// Cubic convolution interpolation of grid samples at an arbitrary point.
/// Points outside the box evaluate to zero; the stencil wraps periodically.
template <class T>
T cubic_interpolate(const Grid& grid, std::span<const T> f, const Vec& x) {
  if (!grid.contains(x)) return T{};
  const int D = grid.dim();
  long base[3] = {0, 0, 0};
  double w[3][4];
  for (int d = 0; d < D; ++d) {
    const auto& ax = grid.axis(d);
    const double u = (x(d) - ax.min) / ax.spacing();
    const double fl = std::floor(u);
    base[d] = static_cast<long>(fl);
    detail::keys_weights(u - fl, w[d]);
  }
  auto wrap = [&](int d, long j) {
    const auto n = static_cast<long>(grid.axis(d).n);
    j %= n;
    if (j < 0) j += n;
    return static_cast<std::size_t>(j);
  };
  T acc{};
  if (D == 1) {
    for (int a = 0; a < 4; ++a) acc += w[0][a] * f[wrap(0, base[0] - 1 + a)];
  } else if (D == 2) {
    const std::size_t n1 = grid.axis(1).n;
    for (int a = 0; a < 4; ++a) {
      const std::size_t row = wrap(0, base[0] - 1 + a) * n1;
      T r{};
      for (int b = 0; b < 4; ++b) r += w[1][b] * f[row + wrap(1, base[1] - 1 + b)];
      acc += w[0][a] * r;
    }
  } else {
    const std::size_t n1 = grid.axis(1).n, n2 = grid.axis(2).n;
    for (int a = 0; a < 4; ++a) {
      const std::size_t ia = wrap(0, base[0] - 1 + a);
      for (int b = 0; b < 4; ++b) {
        const std::size_t ib = (ia * n1 + wrap(1, base[1] - 1 + b)) * n2;
        T r{};
        for (int c = 0; c < 4; ++c) r += w[2][c] * f[ib + wrap(2, base[2] - 1 + c)];
        acc += w[0][a] * w[1][b] * r;
      }
    }
  }
  return acc;
}

/// Band-limited (trigonometric) interpolant of periodic 1D samples. Exact for
/// band-limited data; O(N) per evaluation.
class FourierInterpolant1D {
 public:
  FourierInterpolant1D(const Grid& grid, std::span<const Complex> f) : axis_(grid.axis(0)) {
    if (grid.dim() != 1) throw InvalidArgument("FourierInterpolant1D is 1D only");
    FftPlan plan(grid);
    std::copy(f.begin(), f.end(), plan.data().begin());
    plan.forward();
    c_.assign(plan.data().begin(), plan.data().end());
    const double inv = 1.0 / static_cast<double>(c_.size());
    for (auto& v : c_) v *= inv;
  }

  Complex operator()(double x) const {
    const std::size_t n = c_.size();
    const double dk = 2.0 * kPi / axis_.length();
    const double u = x - axis_.min;
    const Complex w = std::polar(1.0, dk * u);
    const Complex wc = std::conj(w);
    Complex pos{1.0, 0.0}, neg{1.0, 0.0};
    Complex acc = c_[0];
    for (std::size_t j = 1; j < n / 2; ++j) {
      pos *= w;
      neg *= wc;
      acc += c_[j] * pos + c_[n - j] * neg;
    }
    acc += c_[n / 2] * std::cos(dk * static_cast<double>(n / 2) * u);
    return acc;
  }

 private:
  Axis axis_;
  std::vector<Complex> c_;
};

/// Linear interpolation on sorted nodes, clamped to the end values.
inline double clamped_linear(std::span<const double> x, std::span<const double> y, double q) {
  if (q <= x.front()) return y.front();
  if (q >= x.back()) return y.back();
  auto it = std::upper_bound(x.begin(), x.end(), q);
  const auto k = static_cast<std::size_t>(it - x.begin()) - 1;
  const double t = (q - x[k]) / (x[k + 1] - x[k]);
  return (1.0 - t) * y[k] + t * y[k + 1];
}

}  // namespace qimpulse
