#pragma once

// Impulse potentials built from a map and a schedule.
//
// Global design: every x_i moves on the straight line
//   X(x_i, tau) = (1 - g) x_i + g mu(x_i),
// driven by U2 = -m gddot Psi, where Psi(x, tau) has gradient x_f - x_i
// along the trajectory through (x, tau). Ordinary impulses paint a phase
// Delta S through U1 = -Delta S(x) nu(tau).

#include "qimpulse/deformation.hpp"
#include "qimpulse/schedule.hpp"

#include <memory>

namespace qimpulse {

// ---------------------------------------------------------------------------
// Phase paint (ordinary impulses)

enum class NuKind { uniform, sine };

inline std::string to_string(NuKind k) { return k == NuKind::uniform ? "uniform" : "sine"; }

inline NuKind nu_kind_from_string(const std::string& s) {
  if (s == "uniform") return NuKind::uniform;
  if (s == "sine") return NuKind::sine;
  throw InvalidArgument("unknown nu kind '" + s + "'");
}

/// Time profile with unit integral over [0, T].
inline std::function<double(double)> make_nu(NuKind kind, double T) {
  if (!(T > 0.0)) throw InvalidArgument("nu: T must be positive");
  if (kind == NuKind::uniform) return [T](double) { return 1.0 / T; };
  return [T](double tau) { return 0.5 * kPi / T * std::sin(kPi * tau / T); };
}

struct PhasePaint {
  std::function<double(const Vec&)> deltaS;
  std::function<double(double)> nu;
  NuKind nu_kind = NuKind::uniform;
  double T = 1.0;

  double U1(const Vec& x, double tau) const { return -deltaS(x) * nu(tau); }
};

inline PhasePaint design_ordinary(std::function<double(const Vec&)> deltaS, NuKind nu_kind, double T = 1.0) {
  return {std::move(deltaS), make_nu(nu_kind, T), nu_kind, T};
}

/// Delta S tabulated on a 1D grid, linear in between, constant beyond the ends.
inline std::function<double(const Vec&)> tabulated_phase_1d(const Grid& grid, std::vector<double> values) {
  if (grid.dim() != 1 || values.size() != grid.size()) throw InvalidArgument("tabulated phase must match a 1D grid");
  std::vector<double> xs(grid.size());
  for (std::size_t j = 0; j < xs.size(); ++j) xs[j] = grid.axis(0).coord(j);
  auto data = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>(std::move(xs), std::move(values));
  return [data](const Vec& x) { return clamped_linear(data->first, data->second, x(0)); };
}

// ---------------------------------------------------------------------------
// Global super-impulse design

/// Everything the design knows about the point (x, tau).
struct DesignPoint {
  Vec x_i;
  Vec x_f;
  double Psi = 0;
  double S = 0;
  Vec v;
  Vec a;
  double U2 = 0;
};

class ImpulseDesign {
 public:
  ImpulseDesign(MapSpec map, Schedule schedule, double mass)
      : map_(std::move(map)), schedule_(std::move(schedule)), mass_(mass) {
    if (!map_.has_phi()) throw CertificateFailure("global design needs a map with a convex potential");
    if (!(mass_ > 0.0)) throw InvalidArgument("mass must be positive");
  }

  const MapSpec& map() const { return map_; }
  const Schedule& schedule() const { return schedule_; }
  double mass() const { return mass_; }
  int dim() const { return map_.dim; }
  double T() const { return schedule_.T; }

  /// F(x_i, tau) = (1 - g)|x_i|^2 / 2 + g Phi(x_i); X is its gradient.
  double F(const Vec& xi, double tau) const {
    const double g = schedule_.g(tau);
    return 0.5 * (1.0 - g) * xi.squaredNorm() + g * map_.phi(xi);
  }

  Vec X(const Vec& xi, double tau) const { return X_at(xi, schedule_.g(tau)); }

  /// x_i of the trajectory through (x, tau). `guess` warm-starts Newton.
  Vec invert_X(const Vec& x, double tau, const Vec* guess = nullptr) const {
    return origin_at(x, schedule_.g(tau), guess ? *guess : x);
  }

  /// g/2 |x_f - x_i|^2 - |x_i|^2/2 + Phi(x_i), regular at g = 0.
  double Psi(const Vec& x, double tau) const {
    const double g = schedule_.g(tau);
    return psi_from_origin(origin_at(x, g, x), g);
  }

  DesignPoint eval(const Vec& x, double tau) const {
    const double g = schedule_.g(tau), gd = schedule_.gdot(tau), gdd = schedule_.gddot(tau);
    DesignPoint p;
    p.x_i = origin_at(x, g, x);
    p.x_f = map_(p.x_i);
    const Vec disp = p.x_f - p.x_i;
    p.Psi = 0.5 * g * disp.squaredNorm() - 0.5 * p.x_i.squaredNorm() + map_.phi(p.x_i);
    p.S = mass_ * gd * p.Psi;
    p.v = gd * disp;
    p.a = gdd * disp;
    p.U2 = -mass_ * gdd * p.Psi;
    return p;
  }

  double S(const Vec& x, double tau) const { return eval(x, tau).S; }
  Vec v(const Vec& x, double tau) const { return eval(x, tau).v; }
  Vec a(const Vec& x, double tau) const { return eval(x, tau).a; }
  double U2(const Vec& x, double tau) const { return eval(x, tau).U2; }

  /// -grad U2 = m a.
  Vec force(const Vec& x, double tau) const {
    const Vec xi = origin_at(x, schedule_.g(tau), x);
    return mass_ * schedule_.gddot(tau) * (map_(xi) - xi);
  }

  /// Trajectory origins for every grid point at time tau. A correctly sized
  /// `xi` is used as the starting guess (previous time step).
  void origins(const Grid& grid, double tau, std::vector<Vec>& xi) const {
    const double g = schedule_.g(tau);
    const bool warm = xi.size() == grid.size();
    if (!warm) xi.resize(grid.size());
    if (map_.affine) {
      const int D = map_.dim;
      const auto& [A, d] = *map_.affine;
      const Mat Binv = ((1.0 - g) * Mat::Identity(D, D) + g * A).inverse();
      const Vec shift = Binv * (g * d);
      for (std::size_t i = 0; i < grid.size(); ++i) xi[i] = Binv * grid.point(i) - shift;
      return;
    }
    if (map_.dim == 1 && warm) {
      // Plain Newton from the previous origins converges in a step or two;
      // the bracketed solver is the fallback.
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double y = grid.point(i)(0);
        double s = xi[i](0);
        bool done = false;
        for (int it = 0; it < 4 && !done; ++it) {
          const Vec sv = vec1(s);
          const double r = (1.0 - g) * s + g * map_(sv)(0) - y;
          const double d = (1.0 - g) + g * map_.jacobian(sv)(0, 0);
          if (!(d > 0.0)) break;
          const double step = r / d;
          s -= step;
          done = std::abs(step) <= 1e-14 * std::max(1.0, std::abs(s));
        }
        xi[i] = done ? vec1(s) : origin_at(vec1(y), g, xi[i]);
      }
      return;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Vec x = grid.point(i);
      xi[i] = origin_at(x, g, warm ? xi[i] : x);
    }
  }

  /// U2 on the grid given the origins for the same tau.
  void U2_field_from_origins(const Grid& grid, double tau, const std::vector<Vec>& xi, std::span<double> out) const {
    const double g = schedule_.g(tau), gdd = schedule_.gddot(tau);
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = -mass_ * gdd * psi_from_origin(xi[i], g);
  }

  /// U2 on the grid. Affine maps use the closed quadratic form; others solve
  /// for the origins, warm-started from `xi_cache`.
  void U2_field(const Grid& grid, double tau, std::vector<Vec>& xi_cache, std::span<double> out) const {
    if (!map_.affine) {
      origins(grid, tau, xi_cache);
      U2_field_from_origins(grid, tau, xi_cache, out);
      return;
    }
    const auto qf = quadratic_form(schedule_.g(tau));
    const double scale = -mass_ * schedule_.gddot(tau);
    const int D = grid.dim();
    const std::size_t n_last = grid.axis(D - 1).n;
    std::vector<double> last(n_last);
    for (std::size_t j = 0; j < n_last; ++j) last[j] = grid.axis(D - 1).coord(j);
    Vec x(D);
    for (std::size_t row = 0; row < grid.size(); row += n_last) {
      x = grid.point(row);
      // Psi = x'Qx/2 + q.x + c with the last coordinate varying along the row.
      double c0 = qf.c;
      double lin = qf.q(D - 1);
      for (int a = 0; a < D - 1; ++a) {
        c0 += qf.q(a) * x(a);
        lin += qf.Q(D - 1, a) * x(a);
        for (int b = 0; b < D - 1; ++b) c0 += 0.5 * qf.Q(a, b) * x(a) * x(b);
      }
      const double quad = 0.5 * qf.Q(D - 1, D - 1);
      for (std::size_t j = 0; j < n_last; ++j) {
        const double t = last[j];
        out[row + j] = scale * (c0 + lin * t + quad * t * t);
      }
    }
  }

  struct QuadraticForm {
    Mat Q;
    Vec q;
    double c = 0;
  };

  /// For affine maps mu(x) = A x + d, Psi(., g) is exactly quadratic:
  /// Q = (A - I) B^{-1} with B = (1 - g) I + g A.
  QuadraticForm quadratic_form(double g) const {
    if (!map_.affine) throw InvalidArgument("quadratic_form needs an affine map");
    const int D = map_.dim;
    const auto& [A, d] = *map_.affine;
    const Mat I = Mat::Identity(D, D);
    const Mat B = (1.0 - g) * I + g * A;
    QuadraticForm f;
    f.Q = (A - I) * B.inverse();
    f.Q = 0.5 * (f.Q + f.Q.transpose());
    const Vec zero = Vec::Zero(D);
    const Vec xi0 = origin_at(zero, g, zero);
    f.q = map_(xi0) - xi0;
    f.c = psi_from_origin(xi0, g);
    return f;
  }

  Vec X_at(const Vec& xi, double g) const { return (1.0 - g) * xi + g * map_(xi); }

  double psi_from_origin(const Vec& xi, double g) const {
    return 0.5 * g * (map_(xi) - xi).squaredNorm() - 0.5 * xi.squaredNorm() + map_.phi(xi);
  }

  Vec origin_at(const Vec& x, double g, const Vec& guess) const {
    if (g == 0.0) return x;
    const int D = map_.dim;
    if (map_.affine) {
      const auto& [A, d] = *map_.affine;
      const Mat B = (1.0 - g) * Mat::Identity(D, D) + g * A;
      return B.partialPivLu().solve(x - g * d);
    }
    if (D == 1) {
      auto f = [&](double s) { return (1.0 - g) * s + g * map_(vec1(s))(0); };
      auto df = [&](double s) { return (1.0 - g) + g * map_.jacobian(vec1(s))(0, 0); };
      return vec1(detail::invert_increasing(f, df, x(0), guess(0)));
    }
    auto X = [&](const Vec& s) { return X_at(s, g); };
    auto J = [&](const Vec& s) { return Mat((1.0 - g) * Mat::Identity(D, D) + g * map_.jacobian(s)); };
    const double tol = 1e-13 * std::max(1.0, x.norm());
    const auto res = damped_newton(X, J, x, guess, tol, 100);
    if (!res.converged) {
      throw NumericalGuard("invert_X did not converge at x=" + describe_vec(x) + ", g=" + std::to_string(g) +
                           " (residual " + std::to_string(res.residual) + ")");
    }
    return res.x;
  }

 private:
  MapSpec map_;
  Schedule schedule_;
  double mass_;
};

/// Global design for a map certified as the gradient of a convex function
/// on `region`. Throws CertificateFailure otherwise.
inline ImpulseDesign build_global_design(const MapSpec& map, const Schedule& schedule, double mass,
                                         const Region& region) {
  if (!map.has_phi()) {
    throw CertificateFailure("map '" + to_string(map.kind) +
                             "' has no convex potential; a global design does not exist (use a local design)");
  }
  const auto cert = certify_gradient_of_convex(map, region);
  if (!cert.holds) {
    throw CertificateFailure("map '" + to_string(map.kind) + "' is not the gradient of a convex function: " +
                             (cert.violation == CertificateViolation::asymmetric ? "asymmetric" : "non-positive") +
                             " Jacobian at " + describe_vec(cert.witness));
  }
  return ImpulseDesign(map, schedule, mass);
}

inline Vec lagrangian_X(const ImpulseDesign& d, const Vec& xi, double tau) { return d.X(xi, tau); }
inline Vec invert_X(const ImpulseDesign& d, const Vec& x, double tau) { return d.invert_X(x, tau); }
inline DesignPoint eval_S_v_a_U2(const ImpulseDesign& d, const Vec& x, double tau) { return d.eval(x, tau); }

// ---------------------------------------------------------------------------
// Hybrid impulses: U2 deforms, U1 paints Delta S evaluated at the endpoint
// of the trajectory through (x, tau), so the paint lands where the matter
// ends up.

struct HybridDesign {
  ImpulseDesign super;
  PhasePaint paint;

  double U1(const Vec& x, double tau) const {
    const Vec xi = super.invert_X(x, tau);
    return -paint.deltaS(super.map()(xi)) * paint.nu(tau);
  }

  void U1_field(const Grid& grid, double tau, const std::vector<Vec>& xi, std::span<double> out) const {
    const double nu = paint.nu(tau);
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = -paint.deltaS(super.map()(xi[i])) * nu;
  }
};

inline HybridDesign design_hybrid(const MapSpec& map, std::function<double(const Vec&)> deltaS,
                                  const Schedule& schedule, double mass, NuKind nu_kind, const Region& region) {
  return {build_global_design(map, schedule, mass, region), design_ordinary(std::move(deltaS), nu_kind, schedule.T)};
}

// ---------------------------------------------------------------------------
// Local 1D design: replace mu by the monotone rearrangement mu_bar that moves
// rho_i to the same rho_f, then fix the phase with an ordinary impulse.

struct LocalDesign {
  MapSpec mubar;
  ImpulseDesign super;
  PhasePaint paint;
  /// Delta S on the grid (nearest-support extension outside the support).
  std::vector<double> deltaS_table;
  std::vector<bool> on_support;
  Wavefunction predicted;      // psi_i deformed by mu
  Wavefunction predicted_bar;  // psi_i deformed by mu_bar
};

inline LocalDesign design_local_1d(const Wavefunction& psi_i, const MapSpec& map, const Schedule& schedule,
                                   double mass, NuKind nu_kind, std::optional<Vec> carrier = std::nullopt) {
  const Grid& grid = psi_i.grid;
  if (grid.dim() != 1 || map.dim != 1) throw InvalidArgument("local design is one-dimensional");
  auto [rho_i, theta_i] = density_and_phase(psi_i);
  const double mass_i = rho_i.integral();
  for (auto& v : rho_i.values) v /= mass_i;
  const DensityField rho_f = pushforward_density(rho_i, map);
  MapSpec mubar = monotone_rearrangement_1d(rho_i, rho_f);

  const Region region{vec1(grid.axis(0).min), vec1(grid.axis(0).max)};
  ImpulseDesign super = build_global_design(mubar, schedule, mass, region);

  Wavefunction pred = predicted_deformation(psi_i, map, carrier);
  Wavefunction pred_bar = predicted_deformation(psi_i, mubar, carrier);

  // Delta S = hbar * unwrap(arg(psi_f conj(psi_bar_f))) on the support.
  const std::size_t n = grid.size();
  double rmax = 0.0;
  for (const auto& v : pred.values) rmax = std::max(rmax, std::norm(v));
  std::vector<bool> support(n, false);
  std::vector<double> dS(n, 0.0);
  bool have_prev = false;
  double prev = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!(std::norm(pred.values[j]) > kSupportThreshold * rmax)) continue;
    support[j] = true;
    double ph = std::arg(pred.values[j] * std::conj(pred_bar.values[j]));
    if (have_prev) ph = prev + std::remainder(ph - prev, 2.0 * kPi);
    dS[j] = ph;
    prev = ph;
    have_prev = true;
  }
  if (!have_prev) throw DegenerateDensity("final density has empty support");
  // Nearest-support extension.
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < n; ++j) {
    if (support[j]) idx.push_back(j);
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (support[j]) continue;
    auto it = std::lower_bound(idx.begin(), idx.end(), j);
    std::size_t near;
    if (it == idx.end()) near = idx.back();
    else if (it == idx.begin()) near = *it;
    else near = (j - *(it - 1) <= *it - j) ? *(it - 1) : *it;
    dS[j] = dS[near];
  }
  for (auto& v : dS) v *= psi_i.hbar;

  PhasePaint paint = design_ordinary(tabulated_phase_1d(grid, dS), nu_kind, schedule.T);
  return {std::move(mubar), std::move(super), std::move(paint), std::move(dS), std::move(support), std::move(pred),
          std::move(pred_bar)};
}

// ---------------------------------------------------------------------------

/// Sampled U2 and S on grid x taus: columns x.., tau, U2, S.
inline void write_design_table(const ImpulseDesign& d, const Grid& grid, const std::vector<double>& taus,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << std::setprecision(17) << detail::grid_header(grid) << "\n";
  out << "# mass=" << d.mass() << " T=" << d.T() << " map=" << to_string(d.map().kind) << "\n";
  static const char* names[3] = {"x", "y", "z"};
  for (int k = 0; k < grid.dim(); ++k) out << names[k] << ",";
  out << "tau,U2,S\n";
  std::vector<Vec> xi;
  for (double tau : taus) {
    d.origins(grid, tau, xi);
    const double g = d.schedule().g(tau), gd = d.schedule().gdot(tau), gdd = d.schedule().gddot(tau);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Vec x = grid.point(i);
      const double psi = d.psi_from_origin(xi[i], g);
      for (int k = 0; k < grid.dim(); ++k) out << x(k) << ",";
      out << tau << "," << -d.mass() * gdd * psi << "," << d.mass() * gd * psi << "\n";
    }
  }
}

}  // namespace qimpulse
