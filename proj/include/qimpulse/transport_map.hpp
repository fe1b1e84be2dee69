#pragma once

// Invertible maps mu: x_i -> x_f, their Jacobians and (when mu is the
// gradient of a convex function) the potential phi with mu = grad phi.

#include "qimpulse/geometry.hpp"
#include "qimpulse/interp.hpp"
#include "qimpulse/newton.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace qimpulse {

enum class MapKind { identity, translation, scaling, cleave, tanh_cleave, reflection, linear_matrix, custom };

inline std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::identity: return "identity";
    case MapKind::translation: return "translation";
    case MapKind::scaling: return "scaling";
    case MapKind::cleave: return "cleave";
    case MapKind::tanh_cleave: return "tanh_cleave";
    case MapKind::reflection: return "reflection";
    case MapKind::linear_matrix: return "linear_matrix";
    case MapKind::custom: return "custom";
  }
  return "?";
}

inline MapKind map_kind_from_string(const std::string& s) {
  for (auto k : {MapKind::identity, MapKind::translation, MapKind::scaling, MapKind::cleave, MapKind::tanh_cleave,
                 MapKind::reflection, MapKind::linear_matrix, MapKind::custom}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown map kind '" + s + "'");
}

struct MapSpec {
  int dim = 1;
  MapKind kind = MapKind::custom;
  std::function<Vec(const Vec&)> forward;
  /// Empty when there is no closed form; invert() then solves numerically.
  std::function<Vec(const Vec&)> inverse;
  std::function<Mat(const Vec&)> jacobian;
  /// Convex potential with forward = grad phi. Empty if there is none.
  std::function<double(const Vec&)> phi;
  /// Jacobian has jump discontinuities (cleave). Interpolation of deformed
  /// states then avoids spectral methods.
  bool piecewise = false;
  /// forward(x) = A x + d, when the map is affine.
  std::optional<std::pair<Mat, Vec>> affine;

  Vec operator()(const Vec& x) const { return forward(x); }
  bool has_phi() const { return static_cast<bool>(phi); }

  Vec invert(const Vec& y) const {
    if (inverse) return inverse(y);
    const double tol = 1e-13 * std::max(1.0, y.norm());
    auto res = damped_newton(forward, jacobian, y, y, tol);
    if (!res.converged) {
      throw NumericalGuard("map inversion did not converge at y=" + describe_vec(y) +
                           " (residual " + std::to_string(res.residual) + ")");
    }
    return res.x;
  }

  double jacobian_det(const Vec& x) const { return jacobian(x).determinant(); }
};

struct MapParams {
  int dim = 1;
  Vec offset;         // translation
  double factor = 1;  // scaling
  double a = 0.5;     // cleave / tanh_cleave
  double b = 3.0;
  Mat matrix;         // linear_matrix
};

inline MapSpec builtin_map(MapKind kind, const MapParams& p) {
  const int D = p.dim;
  if (D < 1 || D > 3) throw InvalidArgument("map dimension must be 1, 2 or 3");
  MapSpec m;
  m.dim = D;
  m.kind = kind;
  const Mat I = Mat::Identity(D, D);
  switch (kind) {
    case MapKind::identity:
      m.forward = [](const Vec& x) { return x; };
      m.inverse = [](const Vec& y) { return y; };
      m.jacobian = [I](const Vec&) { return I; };
      m.phi = [](const Vec& x) { return 0.5 * x.squaredNorm(); };
      m.affine = {{I, Vec::Zero(D)}};
      break;
    case MapKind::translation: {
      if (p.offset.size() != D) throw InvalidArgument("translation offset must have dimension D");
      const Vec d = p.offset;
      m.forward = [d](const Vec& x) { return Vec(x + d); };
      m.inverse = [d](const Vec& y) { return Vec(y - d); };
      m.jacobian = [I](const Vec&) { return I; };
      m.phi = [d](const Vec& x) { return 0.5 * x.squaredNorm() + d.dot(x); };
      m.affine = {{I, d}};
      break;
    }
    case MapKind::scaling: {
      const double c = p.factor;
      if (!(c > 0.0)) throw InvalidArgument("scaling factor must be positive");
      m.forward = [c](const Vec& x) { return Vec(c * x); };
      m.inverse = [c](const Vec& y) { return Vec(y / c); };
      m.jacobian = [c, I](const Vec&) { return Mat(c * I); };
      m.phi = [c](const Vec& x) { return 0.5 * c * x.squaredNorm(); };
      m.affine = {{Mat(c * I), Vec::Zero(D)}};
      break;
    }
    case MapKind::cleave: {
      if (D != 1) throw InvalidArgument("cleave map is one-dimensional");
      const double a = p.a, b = p.b;
      if (!(a > 0.0 && b > a)) throw InvalidArgument("cleave map needs b > a > 0");
      m.piecewise = true;
      m.forward = [a, b](const Vec& x) {
        const double xi = x(0);
        if (xi < -a) return vec1(xi - b + a);
        if (xi > a) return vec1(xi - a + b);
        return vec1(b / a * xi);
      };
      m.inverse = [a, b](const Vec& y) {
        const double yf = y(0);
        if (yf < -b) return vec1(yf + b - a);
        if (yf > b) return vec1(yf + a - b);
        return vec1(a / b * yf);
      };
      m.jacobian = [a, b](const Vec& x) {
        Mat J(1, 1);
        J(0, 0) = std::abs(x(0)) > a ? 1.0 : b / a;
        return J;
      };
      m.phi = [a, b](const Vec& x) {
        const double xi = x(0);
        if (std::abs(xi) <= a) return 0.5 * b / a * xi * xi;
        return 0.5 * xi * xi + (b - a) * std::abs(xi) + 0.5 * a * (a - b);
      };
      break;
    }
    case MapKind::tanh_cleave: {
      if (D != 1) throw InvalidArgument("tanh_cleave map is one-dimensional");
      const double a = p.a, b = p.b;
      if (!(a > 0.0 && b > a)) throw InvalidArgument("tanh_cleave map needs b > a > 0");
      m.forward = [a, b](const Vec& x) { return vec1(x(0) + (b - a) * std::tanh(x(0) / a)); };
      m.jacobian = [a, b](const Vec& x) {
        const double s = 1.0 / std::cosh(x(0) / a);
        Mat J(1, 1);
        J(0, 0) = 1.0 + (b - a) / a * s * s;
        return J;
      };
      m.phi = [a, b](const Vec& x) {
        // log cosh(u) computed without overflow.
        const double u = std::abs(x(0) / a);
        const double lc = u + std::log1p(std::exp(-2.0 * u)) - std::log(2.0);
        return 0.5 * x(0) * x(0) + (b - a) * a * lc;
      };
      break;
    }
    case MapKind::reflection:
      m.forward = [](const Vec& x) { return Vec(-x); };
      m.inverse = [](const Vec& y) { return Vec(-y); };
      m.jacobian = [I](const Vec&) { return Mat(-I); };
      m.affine = {{Mat(-I), Vec::Zero(D)}};
      break;
    case MapKind::linear_matrix: {
      const Mat M = p.matrix;
      if (M.rows() != D || M.cols() != D) throw InvalidArgument("linear map matrix must be D x D");
      if (std::abs(M.determinant()) < 1e-12) throw InvalidArgument("linear map matrix must be invertible");
      const Mat Minv = M.inverse();
      m.forward = [M](const Vec& x) { return Vec(M * x); };
      m.inverse = [Minv](const Vec& y) { return Vec(Minv * y); };
      m.jacobian = [M](const Vec&) { return M; };
      m.affine = {{M, Vec::Zero(D)}};
      const bool symmetric = (M - M.transpose()).norm() <= 1e-14 * std::max(1.0, M.norm());
      if (symmetric) {
        Eigen::SelfAdjointEigenSolver<Mat> es(M);
        if (es.eigenvalues().minCoeff() > 0.0) {
          m.phi = [M](const Vec& x) { return 0.5 * x.dot(M * x); };
        }
      }
      break;
    }
    case MapKind::custom:
      throw InvalidArgument("custom maps are built from tables");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Tabulated maps

namespace detail {
/// Inverse of an increasing 1D function: bracket, then Newton with bisection
/// fallback.
template <class F, class DF>
double invert_increasing(const F& f, const DF& df, double y, double guess) {
  double lo = guess, hi = guess;
  double step = 1e-3 * std::max(1.0, std::abs(guess));
  while (f(lo) > y) {
    lo -= step;
    step *= 2;
  }
  step = 1e-3 * std::max(1.0, std::abs(guess));
  while (f(hi) < y) {
    hi += step;
    step *= 2;
  }
  double x = std::clamp(guess, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double fx = f(x) - y;
    if (fx == 0.0) return x;
    if (fx < 0) lo = x; else hi = x;
    const double d = df(x);
    double xn = d > 0 ? x - fx / d : 0.5 * (lo + hi);
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::abs(xn - x) <= 1e-15 * std::max(1.0, std::abs(x)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(x))) {
      return xn;
    }
    x = xn;
  }
  return x;
}
}  // namespace detail

/// Increasing 1D map given at nodes (x_i, x_f), interpolated by monotone
/// cubic Hermite splines and continued affinely outside the table. Carries
/// phi (the spline's antiderivative), which is convex because the map
/// increases.
inline MapSpec tabulated_map_1d(std::vector<double> xi, std::vector<double> xf) {
  for (std::size_t i = 1; i < xf.size(); ++i) {
    if (!(xf[i] > xf[i - 1])) throw InvalidArgument("tabulated 1D map must be strictly increasing");
  }
  auto fwd = std::make_shared<Pchip1D>(xi, xf);
  auto inv_guess = std::make_shared<Pchip1D>(xf, xi);
  MapSpec m;
  m.dim = 1;
  m.kind = MapKind::custom;
  m.forward = [fwd](const Vec& x) { return vec1(fwd->eval(x(0))); };
  m.jacobian = [fwd](const Vec& x) {
    Mat J(1, 1);
    J(0, 0) = fwd->derivative(x(0));
    return J;
  };
  m.inverse = [fwd, inv_guess](const Vec& y) {
    auto f = [&](double x) { return fwd->eval(x); };
    auto df = [&](double x) { return fwd->derivative(x); };
    return vec1(detail::invert_increasing(f, df, y(0), inv_guess->eval(y(0))));
  };
  m.phi = [fwd](const Vec& x) { return fwd->antiderivative(x(0)); };
  return m;
}

/// Map sampled on a D > 1 grid (one x_f vector per node), evaluated by
/// cubic convolution per component. Inverse is numerical; no phi.
inline MapSpec tabulated_map_grid(const Grid& grid, std::vector<Vec> xf) {
  if (xf.size() != grid.size()) throw InvalidArgument("tabulated map needs one value per grid node");
  const int D = grid.dim();
  auto comps = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) {
    auto& c = (*comps)[static_cast<std::size_t>(d)];
    c.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) c[i] = xf[i](d);
  }
  MapSpec m;
  m.dim = D;
  m.kind = MapKind::custom;
  m.forward = [grid, comps, D](const Vec& x) {
    Vec y(D);
    for (int d = 0; d < D; ++d) {
      y(d) = cubic_interpolate<double>(grid, (*comps)[static_cast<std::size_t>(d)], x);
    }
    return y;
  };
  auto fwd = m.forward;
  double hmin = grid.axis(0).spacing();
  for (int d = 1; d < D; ++d) hmin = std::min(hmin, grid.axis(d).spacing());
  const double h = 1e-4 * hmin;
  m.jacobian = [fwd, D, h](const Vec& x) {
    Mat J(D, D);
    for (int c = 0; c < D; ++c) {
      Vec e = Vec::Zero(D);
      e(c) = h;
      J.col(c) = (fwd(x + e) - fwd(x - e)) / (2 * h);
    }
    return J;
  };
  return m;
}

/// Writes (x_i, x_f) for every node of `grid`. 1D files are two columns;
/// D > 1 files are flattened grid tables with a metadata header.
inline void write_map_csv(const MapSpec& map, const Grid& grid, const std::string& path) {
  if (map.dim != grid.dim()) throw InvalidArgument("map/grid dimension mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << detail::grid_header(grid) << "\n";
  const int D = grid.dim();
  if (D == 1) {
    out << "x_i,x_f\n";
  } else {
    for (int d = 0; d < D; ++d) out << "x_i" << d << ",";
    for (int d = 0; d < D; ++d) out << "x_f" << d << (d + 1 < D ? "," : "\n");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec x = grid.point(i);
    const Vec y = map(x);
    for (int d = 0; d < D; ++d) out << x(d) << ",";
    for (int d = 0; d < D; ++d) out << y(d) << (d + 1 < D ? "," : "\n");
  }
}

inline MapSpec read_map_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::vector<Axis> axes;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    std::istringstream ls(line.substr(1));
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || tok.rfind("axis", 0) != 0) continue;
      Axis ax;
      char c1, c2;
      std::istringstream vs(tok.substr(eq + 1));
      vs >> ax.min >> c1 >> ax.max >> c2 >> ax.n;
      axes.push_back(ax);
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> r;
    while (std::getline(ls, cell, ',')) r.push_back(std::stod(cell));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error("empty map table " + path);
  const auto D = rows.front().size() / 2;
  if (D == 1) {
    std::vector<double> xi, xf;
    for (const auto& r : rows) {
      xi.push_back(r[0]);
      xf.push_back(r[1]);
    }
    return tabulated_map_1d(std::move(xi), std::move(xf));
  }
  if (axes.size() != D) throw Error("map table " + path + " lacks grid metadata");
  Grid grid(std::move(axes));
  if (rows.size() != grid.size()) throw Error("map table " + path + " has the wrong number of rows");
  std::vector<Vec> xf;
  for (const auto& r : rows) {
    Vec y(static_cast<int>(D));
    for (std::size_t d = 0; d < D; ++d) y(static_cast<int>(d)) = r[D + d];
    xf.push_back(y);
  }
  return tabulated_map_grid(grid, std::move(xf));
}

// ---------------------------------------------------------------------------
// Gradient-of-convex certificate

/// Axis-aligned box [lower, upper] used for sampling checks.
struct Region {
  Vec lower;
  Vec upper;

  static Region cube(int dim, double half_width) {
    return {Vec::Constant(dim, -half_width), Vec::Constant(dim, half_width)};
  }
};

enum class CertificateViolation { none, asymmetric, non_positive };

struct Certificate {
  bool holds = true;
  CertificateViolation violation = CertificateViolation::none;
  Vec witness;       // first violating point
  double value = 0;  // asymmetry norm or offending eigenvalue
  std::size_t points_checked = 0;
};

/// Samples the Jacobian on a dense grid plus uniform random points and
/// checks it is symmetric with all eigenvalues above 1e-10. This is a
/// sampled certificate over the region, not a proof.
inline Certificate certify_gradient_of_convex(const MapSpec& map, const Region& region, std::size_t n_random = 10000,
                                              unsigned seed = 12345) {
  const int D = map.dim;
  Certificate cert;
  auto check = [&](const Vec& x) {
    ++cert.points_checked;
    const Mat J = map.jacobian(x);
    const double asym = (J - J.transpose()).norm();
    if (asym > 1e-10 * std::max(1.0, J.norm())) {
      cert = {false, CertificateViolation::asymmetric, x, asym, cert.points_checked};
      return false;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (J + J.transpose()));
    const double lmin = es.eigenvalues().minCoeff();
    if (!(lmin > 1e-10)) {
      cert = {false, CertificateViolation::non_positive, x, lmin, cert.points_checked};
      return false;
    }
    return true;
  };
  const std::size_t per_axis = D == 1 ? 2001 : (D == 2 ? 101 : 31);
  std::size_t total = 1;
  for (int d = 0; d < D; ++d) total *= per_axis;
  for (std::size_t flat = 0; flat < total; ++flat) {
    Vec x(D);
    std::size_t rem = flat;
    for (int d = D - 1; d >= 0; --d) {
      const std::size_t j = rem % per_axis;
      rem /= per_axis;
      const double t = static_cast<double>(j) / static_cast<double>(per_axis - 1);
      x(d) = region.lower(d) + t * (region.upper(d) - region.lower(d));
    }
    if (!check(x)) return cert;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n_random; ++i) {
    Vec x(D);
    for (int d = 0; d < D; ++d) x(d) = region.lower(d) + u(rng) * (region.upper(d) - region.lower(d));
    if (!check(x)) return cert;
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Densities under maps

/// rho_f(x) = rho_i(mu^{-1}(x)) / |det J(mu^{-1}(x))| on `out` (defaults to
/// rho_i's grid). Not renormalized. Throws if part of the support of rho_i
/// is mapped outside the output box.
inline DensityField pushforward_density(const DensityField& rho_i, const MapSpec& map,
                                        std::optional<Grid> out = std::nullopt) {
  const Grid& gin = rho_i.grid;
  const Grid gout = out ? *out : gin;
  if (map.dim != gin.dim() || gout.dim() != gin.dim()) throw InvalidArgument("pushforward: dimension mismatch");
  const double cut = 1e-12 * rho_i.max();
  for (std::size_t i = 0; i < gin.size(); ++i) {
    if (rho_i.values[i] > cut && !gout.contains(map(gin.point(i)))) {
      throw NumericalGuard("pushforward: support of rho_i is mapped outside the grid");
    }
  }
  DensityField rho_f{gout, std::vector<double>(gout.size(), 0.0)};
  for (std::size_t i = 0; i < gout.size(); ++i) {
    const Vec xi = map.invert(gout.point(i));
    const double r = cubic_interpolate<double>(gin, rho_i.values, xi);
    // Mean of the one-sided limits, so a Jacobian jump landing on a node
    // is sampled at its midpoint value.
    Vec lo = xi, hi = xi;
    for (int d = 0; d < xi.size(); ++d) {
      lo(d) = std::nextafter(xi(d), -std::numeric_limits<double>::infinity());
      hi(d) = std::nextafter(xi(d), std::numeric_limits<double>::infinity());
    }
    const double inv_det = 0.5 / std::abs(map.jacobian_det(lo)) + 0.5 / std::abs(map.jacobian_det(hi));
    rho_f.values[i] = std::max(0.0, r) * inv_det;
  }
  return rho_f;
}

namespace detail {
/// Mass of each cell [x_{j-1}, x_j] (entry 0 is zero). Interior cells
/// integrate the cubic through four nodes (fourth order); the two edge cells
/// use the trapezoid rule. Clamped at zero so cumulative sums never decrease.
inline std::vector<double> cell_masses(const DensityField& rho) {
  const double dx = rho.grid.axis(0).spacing();
  const auto& f = rho.values;
  const std::size_t n = f.size();
  std::vector<double> m(n, 0.0);
  for (std::size_t j = 1; j < n; ++j) {
    double cell = 0.5 * dx * (f[j - 1] + f[j]);
    if (j >= 2 && j + 1 < n) cell = dx / 24.0 * (13.0 * (f[j - 1] + f[j]) - f[j - 2] - f[j + 1]);
    m[j] = std::max(0.0, cell);
  }
  return m;
}
}  // namespace detail

/// Cumulative distribution on a 1D grid, normalized so the last node is
/// exactly 1. `upper` holds the mass to the right of each node, summed from
/// the right, so both tails keep full relative precision.
struct Cdf1D {
  Grid grid;
  std::vector<double> values;
  std::vector<double> upper;
};

inline Cdf1D make_cdf(const DensityField& rho) {
  if (rho.grid.dim() != 1) throw InvalidArgument("CDFs are 1D only");
  const auto m = detail::cell_masses(rho);
  const std::size_t n = m.size();
  Cdf1D c{rho.grid, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t j = 1; j < n; ++j) c.values[j] = c.values[j - 1] + m[j];
  for (std::size_t j = n - 1; j-- > 0;) c.upper[j] = c.upper[j + 1] + m[j + 1];
  const double total = c.values.back();
  if (!(total > 0.0)) throw DegenerateDensity("density has no mass");
  for (auto& v : c.values) v /= total;
  for (auto& v : c.upper) v /= total;
  c.values.back() = 1.0;
  return c;
}

namespace detail {
inline constexpr double kTailMass = 1e-14;

/// Node range [first, last] with more than 1e-14 of the mass on each side,
/// widened by one node each side. Throws on zero-density nodes inside.
inline std::pair<std::size_t, std::size_t> inversion_range(const DensityField& rho, const Cdf1D& c,
                                                           const char* which) {
  std::size_t first = c.values.size(), last = 0;
  for (std::size_t j = 0; j < c.values.size(); ++j) {
    if (c.values[j] > kTailMass && c.upper[j] > kTailMass) {
      first = std::min(first, j);
      last = std::max(last, j);
    }
  }
  if (first >= last) throw DegenerateDensity(std::string(which) + " density is too concentrated to invert its CDF");
  first = first > 0 ? first - 1 : first;
  last = std::min(last + 1, c.values.size() - 1);
  for (std::size_t j = first + 1; j < last; ++j) {
    if (!(rho.values[j] > 0.0)) {
      throw DegenerateDensity(std::string(which) +
                              " density has a zero-mass region inside its support; the monotone rearrangement "
                              "is not defined there");
    }
  }
  return {first, last};
}

/// Monotone interpolant from log(cumulative) to x. In the log variable the
/// quantile stays smooth deep into exponential tails. Nodes are visited left
/// to right, or right to left for the upper cumulative; repeated values are
/// skipped.
inline std::optional<Pchip1D> quantile_table(const std::vector<double>& cum, const Grid& grid, std::size_t j0,
                                             std::size_t j1, bool from_right) {
  std::vector<double> cn, xn;
  auto push = [&](std::size_t j) {
    if (!(cum[j] > 0.0)) return;
    const double lc = std::log(cum[j]);
    if (!cn.empty() && !(lc > cn.back())) return;
    cn.push_back(lc);
    xn.push_back(grid.axis(0).coord(j));
  };
  if (from_right) {
    for (std::size_t j = j1 + 1; j-- > j0;) push(j);
  } else {
    for (std::size_t j = j0; j <= j1; ++j) push(j);
  }
  if (cn.size() < 2) return std::nullopt;
  return Pchip1D(cn, xn);
}
}  // namespace detail

/// The increasing map c_f^{-1} o c_i transporting rho_i to rho_f (1D). The
/// lower half of the mass is matched through left cumulatives, the upper half
/// through right cumulatives.
inline MapSpec monotone_rearrangement_1d(const DensityField& rho_i, const DensityField& rho_f) {
  if (rho_i.grid.dim() != 1 || rho_f.grid.dim() != 1) throw InvalidArgument("monotone rearrangement is 1D only");
  const Cdf1D ci = make_cdf(rho_i);
  const Cdf1D cf = make_cdf(rho_f);
  const auto [fi0, fi1] = detail::inversion_range(rho_i, ci, "initial");
  const auto [ff0, ff1] = detail::inversion_range(rho_f, cf, "final");

  const auto lower = detail::quantile_table(cf.values, rho_f.grid, ff0, ff1, false);
  const auto upper = detail::quantile_table(cf.upper, rho_f.grid, ff0, ff1, true);
  if (!lower || !upper) throw DegenerateDensity("final density support too narrow");
  const auto& ln = lower->nodes();
  const auto& un = upper->nodes();

  std::vector<double> xi, xf;
  for (std::size_t j = fi0; j <= fi1; ++j) {
    const bool low = ci.values[j] <= 0.5;
    const double c = low ? ci.values[j] : ci.upper[j];
    if (!(c > 0.0)) continue;
    const double lc = std::log(c);
    const auto& nodes = low ? ln : un;
    if (lc < nodes.front() || lc > nodes.back()) continue;
    const double y = low ? (*lower)(lc) : (*upper)(lc);
    if (!xf.empty() && !(y > xf.back())) continue;
    xi.push_back(rho_i.grid.axis(0).coord(j));
    xf.push_back(y);
  }
  if (xi.size() < 2) throw DegenerateDensity("initial density support too narrow");
  // Affine continuation outside the table uses the end secants.
  const std::size_t n = xi.size();
  const double sl = (xf[1] - xf[0]) / (xi[1] - xi[0]);
  const double sr = (xf[n - 1] - xf[n - 2]) / (xi[n - 1] - xi[n - 2]);
  const double span = xi[n - 1] - xi[0];
  xi.insert(xi.begin(), xi[0] - span);
  xf.insert(xf.begin(), xf[0] - sl * span);
  xi.push_back(xi.back() + span);
  xf.push_back(xf.back() + sr * span);
  return tabulated_map_1d(std::move(xi), std::move(xf));
}

/// Squared-displacement cost of the given map: sum rho_i |mu(x) - x|^2 dV.
inline double wasserstein2_cost(const DensityField& rho_i, const MapSpec& map) {
  double s = 0.0;
  for (std::size_t i = 0; i < rho_i.grid.size(); ++i) {
    if (rho_i.values[i] == 0.0) continue;
    const Vec x = rho_i.grid.point(i);
    s += rho_i.values[i] * (map(x) - x).squaredNorm();
  }
  return s * rho_i.grid.cell_volume();
}

}  // namespace qimpulse
