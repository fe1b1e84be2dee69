#pragma once

// Uniform periodic grids, complex wavefunctions on them, and the small set
// of elementary operations everything else is built from.

#include "qimpulse/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qimpulse {

struct Axis {
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;

  double spacing() const { return (max - min) / static_cast<double>(n); }
  double length() const { return max - min; }
  double coord(std::size_t j) const { return min + static_cast<double>(j) * spacing(); }

  bool operator==(const Axis&) const = default;
};

/// Uniform periodic lattice in D = 1, 2 or 3. Point n along an axis is point
/// 0 again. Flat indices are row-major (last axis fastest), matching FFTW.
class Grid {
 public:
  Grid() = default;

  Grid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    if (axes_.empty() || axes_.size() > 3) {
      throw InvalidArgument("grid dimension must be 1, 2 or 3");
    }
    size_ = 1;
    for (const auto& ax : axes_) {
      if (!(ax.max > ax.min)) throw InvalidArgument("grid bounds must satisfy min < max");
      if (ax.n < 16) throw InvalidArgument("grid needs at least 16 points per axis");
      if ((ax.n & (ax.n - 1)) != 0) throw InvalidArgument("grid point count must be a power of two");
      size_ *= ax.n;
    }
  }

  int dim() const { return static_cast<int>(axes_.size()); }
  std::size_t size() const { return size_; }
  const Axis& axis(int d) const { return axes_[static_cast<std::size_t>(d)]; }
  const std::vector<Axis>& axes() const { return axes_; }

  double cell_volume() const {
    double v = 1.0;
    for (const auto& ax : axes_) v *= ax.spacing();
    return v;
  }

  std::array<std::size_t, 3> unflatten(std::size_t flat) const {
    std::array<std::size_t, 3> idx{0, 0, 0};
    for (int d = dim() - 1; d >= 0; --d) {
      const auto n = axes_[static_cast<std::size_t>(d)].n;
      idx[static_cast<std::size_t>(d)] = flat % n;
      flat /= n;
    }
    return idx;
  }

  std::size_t flatten(const std::array<std::size_t, 3>& idx) const {
    std::size_t flat = 0;
    for (int d = 0; d < dim(); ++d) {
      flat = flat * axes_[static_cast<std::size_t>(d)].n + idx[static_cast<std::size_t>(d)];
    }
    return flat;
  }

  Vec point(std::size_t flat) const {
    const auto idx = unflatten(flat);
    Vec x(dim());
    for (int d = 0; d < dim(); ++d) {
      x(d) = axes_[static_cast<std::size_t>(d)].coord(idx[static_cast<std::size_t>(d)]);
    }
    return x;
  }

  bool contains(const Vec& x) const {
    for (int d = 0; d < dim(); ++d) {
      const auto& ax = axis(d);
      if (x(d) < ax.min || x(d) >= ax.max) return false;
    }
    return true;
  }

  /// Largest half-width of the box; used as a length scale for tolerances.
  double scale() const {
    double s = 0.0;
    for (const auto& ax : axes_) s = std::max({s, std::abs(ax.min), std::abs(ax.max)});
    return s;
  }

  bool operator==(const Grid& o) const { return axes_ == o.axes_; }

 private:
  std::vector<Axis> axes_;
  std::size_t size_ = 0;
};

inline Grid make_grid(int dim, const std::vector<std::pair<double, double>>& bounds,
                      const std::vector<std::size_t>& npoints) {
  if (dim < 1 || dim > 3) throw InvalidArgument("grid dimension must be 1, 2 or 3");
  if (bounds.size() != static_cast<std::size_t>(dim) || npoints.size() != static_cast<std::size_t>(dim)) {
    throw InvalidArgument("grid bounds/npoints must have one entry per axis");
  }
  std::vector<Axis> axes;
  for (int d = 0; d < dim; ++d) {
    axes.push_back(Axis{bounds[static_cast<std::size_t>(d)].first, bounds[static_cast<std::size_t>(d)].second,
                        npoints[static_cast<std::size_t>(d)]});
  }
  return Grid(std::move(axes));
}

/// Same bounds and point count on every axis.
inline Grid make_grid(int dim, double min, double max, std::size_t n) {
  return make_grid(dim, std::vector<std::pair<double, double>>(static_cast<std::size_t>(dim), {min, max}),
                   std::vector<std::size_t>(static_cast<std::size_t>(dim), n));
}

inline void require_same_grid(const Grid& a, const Grid& b) {
  if (!(a == b)) throw GridMismatch("fields live on different grids");
}

/// psi on a grid, with the mass and hbar it evolves under.
struct Wavefunction {
  Grid grid;
  std::vector<Complex> values;
  double mass = 1.0;
  double hbar = 1.0;

  Wavefunction() = default;
  Wavefunction(Grid g, double m = 1.0, double h = 1.0)
      : grid(std::move(g)), values(grid.size(), Complex{0.0, 0.0}), mass(m), hbar(h) {}

  double norm_squared() const {
    double s = 0.0;
    for (const auto& v : values) s += std::norm(v);
    return s * grid.cell_volume();
  }

  void normalize() {
    const double n2 = norm_squared();
    if (!(n2 > 0.0) || !std::isfinite(n2)) throw NumericalGuard("cannot normalize a zero or non-finite wavefunction");
    const double f = 1.0 / std::sqrt(n2);
    for (auto& v : values) v *= f;
  }

  bool all_finite() const {
    for (const auto& v : values) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    }
    return true;
  }

  /// <x> along every axis.
  Vec mean_position() const {
    Vec m = Vec::Zero(grid.dim());
    double w = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double r = std::norm(values[i]);
      m += r * grid.point(i);
      w += r;
    }
    return m / w;
  }
};

struct DensityField {
  Grid grid;
  std::vector<double> values;

  double integral() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.cell_volume();
  }

  double max() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, v);
    return m;
  }
};

/// arg(psi), only meaningful where the density is above the support threshold.
struct PhaseField {
  Grid grid;
  std::vector<double> values;
  std::vector<bool> defined;
};

/// Relative support threshold for phases: rho > kSupportThreshold * max(rho).
inline constexpr double kSupportThreshold = 1e-8;

// ---------------------------------------------------------------------------
// Gaussian packets

/// psi(x) = (2 pi sigma^2)^{-D/4} exp(-|x-s|^2 / 4 sigma^2) exp(i k.x),
/// renormalized on the grid. Throws if the tails are clipped by the box.
inline Wavefunction gaussian_packet(const Grid& grid, double sigma, const Vec& k, const Vec& center,
                                   double mass = 1.0, double hbar = 1.0) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_packet: sigma must be positive");
  const int D = grid.dim();
  if (k.size() != D || center.size() != D) throw InvalidArgument("gaussian_packet: k/center dimension mismatch");

  // Edge density (1D marginal at the box face, times the peak of the others).
  const double peak1d = 1.0 / std::sqrt(2.0 * kPi * sigma * sigma);
  for (int d = 0; d < D; ++d) {
    const auto& ax = grid.axis(d);
    const double dist = std::min(center(d) - ax.min, ax.max - center(d));
    const double edge = std::pow(peak1d, D) * std::exp(-dist * dist / (2.0 * sigma * sigma));
    if (dist <= 0.0 || edge >= 1e-12) {
      throw InvalidArgument("gaussian_packet: tails exceed 1e-12 at the domain edge (sigma too large for the box)");
    }
  }

  Wavefunction psi(grid, mass, hbar);
  const double amp = std::pow(2.0 * kPi * sigma * sigma, -0.25 * D);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec x = grid.point(i);
    const double r2 = (x - center).squaredNorm();
    psi.values[i] = amp * std::exp(-r2 / (4.0 * sigma * sigma)) * std::polar(1.0, k.dot(x));
  }
  psi.normalize();
  return psi;
}

inline Wavefunction gaussian_packet(const Grid& grid, double sigma, double k, double center, double mass = 1.0,
                                   double hbar = 1.0) {
  if (grid.dim() != 1) throw InvalidArgument("scalar gaussian_packet overload is 1D only");
  return gaussian_packet(grid, sigma, vec1(k), vec1(center), mass, hbar);
}

/// Anisotropic Gaussian with density proportional to exp(-(x-s)^T A (x-s) / 2)
/// and carrier exp(i k.x). A must be symmetric positive definite.
inline Wavefunction gaussian_state(const Grid& grid, const Mat& precision, const Vec& center, const Vec& k,
                                  double mass = 1.0, double hbar = 1.0) {
  const int D = grid.dim();
  if (precision.rows() != D || precision.cols() != D) throw InvalidArgument("gaussian_state: precision dimension");
  Eigen::SelfAdjointEigenSolver<Mat> es(precision);
  if (es.eigenvalues().minCoeff() <= 0.0) throw InvalidArgument("gaussian_state: precision must be positive definite");
  Wavefunction psi(grid, mass, hbar);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec dx = grid.point(i) - center;
    psi.values[i] = std::exp(-0.25 * dx.dot(precision * dx)) * std::polar(1.0, k.dot(grid.point(i)));
  }
  psi.normalize();
  return psi;
}

// ---------------------------------------------------------------------------

/// rho = |psi|^2; theta = arg(psi) flagged defined only on the support.
inline std::pair<DensityField, PhaseField> density_and_phase(const Wavefunction& psi) {
  DensityField rho{psi.grid, std::vector<double>(psi.values.size())};
  for (std::size_t i = 0; i < psi.values.size(); ++i) rho.values[i] = std::norm(psi.values[i]);
  const double cut = kSupportThreshold * rho.max();
  PhaseField theta{psi.grid, std::vector<double>(psi.values.size(), 0.0), std::vector<bool>(psi.values.size(), false)};
  for (std::size_t i = 0; i < psi.values.size(); ++i) {
    if (rho.values[i] > cut) {
      theta.values[i] = std::arg(psi.values[i]);
      theta.defined[i] = true;
    }
  }
  return {std::move(rho), std::move(theta)};
}

/// Discrete <a|b>. The real and imaginary parts are accumulated explicitly so
/// that inner(a,b) == conj(inner(b,a)) bit for bit.
inline Complex inner_product(const Wavefunction& a, const Wavefunction& b) {
  require_same_grid(a.grid, b.grid);
  double re = 0.0;
  double im = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double ar = a.values[i].real(), ai = a.values[i].imag();
    const double br = b.values[i].real(), bi = b.values[i].imag();
    re += ar * br + ai * bi;
    im += ar * bi - ai * br;
  }
  const double dv = a.grid.cell_volume();
  return {re * dv, im * dv};
}

/// |<a|b>| / (|a| |b|). Insensitive to global phases, symmetric in (a, b).
inline double fidelity(const Wavefunction& a, const Wavefunction& b) {
  const double na = a.norm_squared();
  const double nb = b.norm_squared();
  const double ov = std::abs(inner_product(a, b));
  return std::min(1.0, ov / std::sqrt(na * nb));
}

// ---------------------------------------------------------------------------
// Columnar serialization: CSV with '#' metadata lines, or a little-endian
// binary layout "QIWF" | u32 version | u32 dim | per axis (f64 min, f64 max,
// u64 n) | f64 mass | f64 hbar | n * (f64 re, f64 im).

namespace detail {
inline std::string grid_header(const Grid& g) {
  std::ostringstream os;
  os << std::setprecision(17) << "# dim=" << g.dim();
  for (int d = 0; d < g.dim(); ++d) {
    os << " axis" << d << "=" << g.axis(d).min << ":" << g.axis(d).max << ":" << g.axis(d).n;
  }
  return os.str();
}
}  // namespace detail

inline void write_wavefunction_csv(const Wavefunction& psi, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << detail::grid_header(psi.grid) << "\n";
  out << std::setprecision(17) << "# mass=" << psi.mass << " hbar=" << psi.hbar << "\n";
  static const char* names[3] = {"x", "y", "z"};
  for (int d = 0; d < psi.grid.dim(); ++d) out << names[d] << ",";
  out << "re,im\n";
  for (std::size_t i = 0; i < psi.values.size(); ++i) {
    const Vec x = psi.grid.point(i);
    for (int d = 0; d < psi.grid.dim(); ++d) out << x(d) << ",";
    out << psi.values[i].real() << "," << psi.values[i].imag() << "\n";
  }
}

inline Wavefunction read_wavefunction_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::vector<Axis> axes;
  double mass = 1.0, hbar = 1.0;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    std::istringstream ls(line.substr(1));
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const auto key = tok.substr(0, eq);
      const auto val = tok.substr(eq + 1);
      if (key.rfind("axis", 0) == 0) {
        Axis ax;
        char c1, c2;
        std::istringstream vs(val);
        vs >> ax.min >> c1 >> ax.max >> c2 >> ax.n;
        if (!vs || c1 != ':' || c2 != ':') throw Error("malformed axis header in " + path);
        axes.push_back(ax);
      } else if (key == "mass") {
        mass = std::stod(val);
      } else if (key == "hbar") {
        hbar = std::stod(val);
      }
    }
  }
  Wavefunction psi(Grid(std::move(axes)), mass, hbar);
  // `line` now holds the column header; data follows.
  const int D = psi.grid.dim();
  for (std::size_t i = 0; i < psi.values.size(); ++i) {
    if (!std::getline(in, line)) throw Error("truncated wavefunction file " + path);
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> cols;
    while (std::getline(ls, cell, ',')) cols.push_back(std::stod(cell));
    if (cols.size() != static_cast<std::size_t>(D + 2)) throw Error("bad column count in " + path);
    psi.values[i] = {cols[static_cast<std::size_t>(D)], cols[static_cast<std::size_t>(D + 1)]};
  }
  return psi;
}

inline void write_wavefunction_binary(const Wavefunction& psi, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write("QIWF", 4);
  put(std::uint32_t{1});
  put(static_cast<std::uint32_t>(psi.grid.dim()));
  for (const auto& ax : psi.grid.axes()) {
    put(ax.min);
    put(ax.max);
    put(static_cast<std::uint64_t>(ax.n));
  }
  put(psi.mass);
  put(psi.hbar);
  for (const auto& v : psi.values) {
    put(v.real());
    put(v.imag());
  }
}

inline Wavefunction read_wavefunction_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw Error("truncated wavefunction file " + path);
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "QIWF", 4) != 0) throw Error("not a wavefunction file: " + path);
  std::uint32_t version = 0, dim = 0;
  get(version);
  get(dim);
  if (version != 1 || dim < 1 || dim > 3) throw Error("unsupported wavefunction file " + path);
  std::vector<Axis> axes(dim);
  for (auto& ax : axes) {
    std::uint64_t n = 0;
    get(ax.min);
    get(ax.max);
    get(n);
    ax.n = static_cast<std::size_t>(n);
  }
  double mass = 1.0, hbar = 1.0;
  get(mass);
  get(hbar);
  Wavefunction psi(Grid(std::move(axes)), mass, hbar);
  for (auto& v : psi.values) {
    double re = 0.0, im = 0.0;
    get(re);
    get(im);
    v = {re, im};
  }
  return psi;
}

}  // namespace qimpulse
