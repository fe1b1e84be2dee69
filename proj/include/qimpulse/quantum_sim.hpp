#pragma once

// Finite-epsilon propagation through an impulse in fast time tau = t/eps:
//
//   i hbar_eff d_tau psi = [-hbar_eff^2 lap / 2m + eps^2 U0 + eps U1 + U2
//                           + eps^2 g |psi|^2] psi,      hbar_eff = eps hbar,
//
// by Strang splitting (half kick, kinetic step in Fourier space, half kick).

#include "qimpulse/designer.hpp"
#include "qimpulse/fft.hpp"

#include <variant>

namespace qimpulse {

struct OrdinaryImpulse {
  PhasePaint paint;
};

struct SuperImpulse {
  ImpulseDesign design;
};

struct HybridImpulse {
  HybridDesign design;
};

/// Local design executed as two windows of length T: the super impulse of
/// mu_bar, then the corrective ordinary impulse.
struct LocalImpulse {
  ImpulseDesign super;
  PhasePaint paint;
};

/// A super-impulse potential given directly, outside the design pipeline.
/// `discontinuities` lists tau values where it jumps; both one-sided values
/// are used there.
struct PotentialImpulse {
  std::function<double(const Vec&, double)> U2;
  double T = 1.0;
  std::vector<double> discontinuities;
};

using Impulse = std::variant<OrdinaryImpulse, SuperImpulse, HybridImpulse, LocalImpulse, PotentialImpulse>;

struct PropagationSpec {
  double epsilon = 0.1;
  /// 0 picks the step count automatically.
  std::size_t nsteps = 0;
  /// U0(x, t) in lab time t = eps tau. Empty for none.
  std::function<double(const Vec&, double)> background;
  double gpe_g = 0.0;
  Impulse impulse;
  /// Number of observable records per window (plus the endpoints).
  std::size_t records = 64;
  /// Fast times (within the first window) at which to keep copies of psi.
  std::vector<double> snapshot_taus;
};

struct ObservableRow {
  double tau = 0;
  Vec mean_x;
  Vec mean_p;  // lab momentum, hbar <k>
  double norm = 0;
};

struct PropagationResult {
  Wavefunction psi;
  std::vector<ObservableRow> observables;
  std::vector<std::pair<double, Wavefunction>> snapshots;
  std::size_t nsteps = 0;  // summed over windows
  double norm_drift = 0;
  double boundary_mass = 0;
};

inline constexpr double kNormDriftLimit = 1e-7;
inline constexpr double kBoundaryMassLimit = 1e-6;

/// Probability in the outer 1/32 of the box along any axis.
inline double boundary_mass(const Wavefunction& psi) {
  const Grid& g = psi.grid;
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto idx = g.unflatten(i);
    bool edge = false;
    for (int d = 0; d < g.dim(); ++d) {
      const std::size_t n = g.axis(d).n, w = std::max<std::size_t>(1, n / 32);
      const std::size_t j = idx[static_cast<std::size_t>(d)];
      if (j < w || j >= n - w) edge = true;
    }
    if (edge) s += std::norm(psi.values[i]);
  }
  return s * g.cell_volume();
}

inline Wavefunction apply_phase_paint(const Wavefunction& psi, const PhasePaint& paint) {
  Wavefunction out = psi;
  for (std::size_t i = 0; i < psi.values.size(); ++i) {
    out.values[i] *= std::polar(1.0, paint.deltaS(psi.grid.point(i)) / psi.hbar);
  }
  return out;
}

namespace detail {

/// Fills the fast-frame potential eps^2 U0 + eps U1 + U2 on the grid at a
/// given tau, from one side of possible jumps.
class WindowPotential {
 public:
  using Filler = std::function<void(double tau, std::span<double> out)>;

  WindowPotential(Filler fill, double T, std::vector<double> jumps) : fill_(std::move(fill)), T_(T), jumps_(std::move(jumps)) {}

  double T() const { return T_; }

  bool jumps_at(double tau, double tol) const {
    for (double j : jumps_) {
      if (std::abs(j - tau) <= tol) return true;
    }
    return false;
  }

  void left(double tau, std::span<double> out) const { fill_(std::nextafter(tau, -1e300), out); }
  void right(double tau, std::span<double> out) const { fill_(std::nextafter(tau, 1e300), out); }
  void at(double tau, std::span<double> out) const { fill_(tau, out); }

 private:
  Filler fill_;
  double T_;
  std::vector<double> jumps_;
};

/// Step count from the largest potential spread seen at 65 sampled times.
/// An x-independent offset only rotates the global phase, so the spread
/// (half of max - min at each time) sets the resolution, not max |V|.
inline std::size_t auto_steps(const WindowPotential& V, std::size_t npts, double hbar_eff) {
  std::vector<double> buf(npts);
  double vmax = 0.0;
  for (int s = 0; s <= 64; ++s) {
    V.at(V.T() * s / 64.0, buf);
    const auto [lo, hi] = std::minmax_element(buf.begin(), buf.end());
    vmax = std::max(vmax, 0.5 * (*hi - *lo));
  }
  const double n = std::ceil(8.0 * V.T() * vmax / (kPi * hbar_eff));
  std::size_t steps = std::max<std::size_t>(1024, static_cast<std::size_t>(n));
  steps += steps % 2;  // keeps T/2 on a time node
  return steps;
}

inline ObservableRow observe(const Wavefunction& psi, double tau) {
  return {tau, psi.mean_position(), mean_momentum(psi), psi.norm_squared()};
}

/// One window of length T. psi.hbar is the physical hbar.
inline std::size_t run_window(Wavefunction& psi, const WindowPotential& V, const PropagationSpec& spec,
                              std::size_t nsteps, double tau_offset, PropagationResult& res, bool snapshots) {
  const Grid& grid = psi.grid;
  const std::size_t N = grid.size();
  const double eps = spec.epsilon;
  const double hbar_eff = eps * psi.hbar;
  const double T = V.T();
  if (nsteps == 0) nsteps = auto_steps(V, N, hbar_eff);
  const double dt = T / static_cast<double>(nsteps);
  const double nl = eps * eps * spec.gpe_g;

  FftPlan plan(grid);
  auto buf = plan.data();
  std::copy(psi.values.begin(), psi.values.end(), buf.begin());

  const auto k2 = wavenumber_squared(grid);
  std::vector<Complex> kin(N);
  for (std::size_t i = 0; i < N; ++i) kin[i] = std::polar(1.0, -hbar_eff * k2[i] * dt / (2.0 * psi.mass));

  std::vector<double> Vl(N), Vr(N);
  auto kick = [&](const std::vector<double>& a, const std::vector<double>* b, double weight) {
    // exp(-i (a [+ b]) weight dt / hbar_eff - i nl |psi|^2 (weight [x2]) dt / hbar_eff)
    const double f = weight * dt / hbar_eff;
    const double fnl = (b ? 2.0 : 1.0) * weight * dt * nl / hbar_eff;
    for (std::size_t i = 0; i < N; ++i) {
      double ph = a[i] + (b ? (*b)[i] : 0.0);
      ph *= f;
      if (nl != 0.0) ph += fnl * std::norm(buf[i]);
      buf[i] *= std::polar(1.0, -ph);
    }
  };
  auto snapshot = [&]() {
    Wavefunction w(grid, psi.mass, psi.hbar);
    std::copy(buf.begin(), buf.end(), w.values.begin());
    return w;
  };

  const std::size_t every = std::max<std::size_t>(1, nsteps / std::max<std::size_t>(1, spec.records));
  std::vector<double> snaps = snapshots ? spec.snapshot_taus : std::vector<double>{};
  std::vector<std::size_t> snap_steps;
  for (double s : snaps) snap_steps.push_back(static_cast<std::size_t>(std::llround(s / dt)));

  const double jtol = 0.25 * dt;
  if (V.jumps_at(0.0, jtol)) V.right(0.0, Vr); else V.at(0.0, Vr);
  if (tau_offset == 0.0) res.observables.push_back(observe(snapshot(), 0.0));
  kick(Vr, nullptr, 0.5);
  for (std::size_t n = 0; n < nsteps; ++n) {
    plan.forward();
    for (std::size_t i = 0; i < N; ++i) buf[i] *= kin[i];
    plan.backward();
    const std::size_t m = n + 1;
    const double tau = T * static_cast<double>(m) / static_cast<double>(nsteps);
    const bool jump = V.jumps_at(tau, jtol);
    if (jump) V.left(tau, Vl); else V.at(tau, Vl);
    const bool record = (m % every == 0) || m == nsteps;
    bool snap = false;
    for (std::size_t s : snap_steps) snap = snap || s == m;
    if (m == nsteps) {
      kick(Vl, nullptr, 0.5);
      break;
    }
    if (record || snap || jump) {
      kick(Vl, nullptr, 0.5);
      if (record || snap) {
        Wavefunction w = snapshot();
        if (!w.all_finite()) throw NumericalGuard("propagation produced non-finite values");
        // Checked along the way too: on the periodic box a packet can cross
        // the edge and be back in the interior by the end.
        if (const double b = boundary_mass(w); b > kBoundaryMassLimit) {
          throw NumericalGuard("mass " + std::to_string(b) + " reached the boundary layer at tau=" +
                               std::to_string(tau_offset + tau) + "; enlarge the domain");
        }
        if (record) res.observables.push_back(observe(w, tau_offset + tau));
        if (snap) res.snapshots.emplace_back(tau_offset + tau, std::move(w));
      }
      if (jump) V.right(tau, Vr); else Vr = Vl;
      kick(Vr, nullptr, 0.5);
    } else {
      kick(Vl, &Vl, 0.5);
    }
  }
  std::copy(buf.begin(), buf.end(), psi.values.begin());
  res.observables.push_back(observe(psi, tau_offset + T));
  return nsteps;
}

inline void add_background(const PropagationSpec& spec, const Grid& grid, double tau, std::span<double> out) {
  if (!spec.background) return;
  const double eps = spec.epsilon;
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] += eps * eps * spec.background(grid.point(i), eps * tau);
}

}  // namespace detail

/// Propagates psi_i through the impulse. psi_i.hbar is the physical hbar;
/// the solver uses hbar_eff = eps hbar internally. Throws NumericalGuard on
/// norm drift above 1e-7, boundary mass above 1e-6 or non-finite values.
inline PropagationResult propagate_impulse(const Wavefunction& psi_i, const PropagationSpec& spec) {
  const double eps = spec.epsilon;
  if (!(eps > 0.0 && eps <= 1.0)) throw InvalidArgument("epsilon must lie in (0, 1]");
  if (!psi_i.all_finite()) throw InvalidArgument("initial wavefunction has non-finite values");
  const Grid& grid = psi_i.grid;
  PropagationResult res;
  res.psi = psi_i;
  const double n0 = psi_i.norm_squared();
  const double b0 = boundary_mass(psi_i);
  if (b0 > kBoundaryMassLimit) throw NumericalGuard("initial state already touches the boundary layer");

  auto paint_filler = [&](const PhasePaint& p) {
    return [&grid, &spec, p, eps](double tau, std::span<double> out) {
      const double nu = p.nu(tau);
      for (std::size_t i = 0; i < grid.size(); ++i) out[i] = -eps * p.deltaS(grid.point(i)) * nu;
      detail::add_background(spec, grid, tau, out);
    };
  };
  auto super_filler = [&](const ImpulseDesign& d) {
    auto cache = std::make_shared<std::vector<Vec>>();
    return [&grid, &spec, &d, cache](double tau, std::span<double> out) {
      d.U2_field(grid, tau, *cache, out);
      detail::add_background(spec, grid, tau, out);
    };
  };

  std::vector<std::pair<detail::WindowPotential, bool>> windows;
  std::visit(
      [&](const auto& imp) {
        using I = std::decay_t<decltype(imp)>;
        if constexpr (std::is_same_v<I, OrdinaryImpulse>) {
          windows.push_back({detail::WindowPotential(paint_filler(imp.paint), imp.paint.T, {}), true});
        } else if constexpr (std::is_same_v<I, SuperImpulse>) {
          if (imp.design.dim() != grid.dim()) throw InvalidArgument("design/grid dimension mismatch");
          windows.push_back({detail::WindowPotential(super_filler(imp.design), imp.design.T(), {}), true});
        } else if constexpr (std::is_same_v<I, HybridImpulse>) {
          const HybridDesign& h = imp.design;
          if (h.super.dim() != grid.dim()) throw InvalidArgument("design/grid dimension mismatch");
          auto cache = std::make_shared<std::vector<Vec>>();
          auto u1 = std::make_shared<std::vector<double>>(grid.size());
          windows.push_back({detail::WindowPotential(
                                 [&grid, &spec, &h, cache, u1, eps](double tau, std::span<double> out) {
                                   h.super.origins(grid, tau, *cache);
                                   h.super.U2_field_from_origins(grid, tau, *cache, out);
                                   h.U1_field(grid, tau, *cache, *u1);
                                   for (std::size_t i = 0; i < grid.size(); ++i) out[i] += eps * (*u1)[i];
                                   detail::add_background(spec, grid, tau, out);
                                 },
                                 h.super.T(), {}),
                             true});
        } else if constexpr (std::is_same_v<I, LocalImpulse>) {
          if (imp.super.dim() != grid.dim()) throw InvalidArgument("design/grid dimension mismatch");
          windows.push_back({detail::WindowPotential(super_filler(imp.super), imp.super.T(), {}), true});
          windows.push_back({detail::WindowPotential(paint_filler(imp.paint), imp.paint.T, {}), false});
        } else {
          windows.push_back({detail::WindowPotential(
                                 [&grid, &spec, &imp](double tau, std::span<double> out) {
                                   for (std::size_t i = 0; i < grid.size(); ++i) out[i] = imp.U2(grid.point(i), tau);
                                   detail::add_background(spec, grid, tau, out);
                                 },
                                 imp.T, imp.discontinuities),
                             true});
        }
      },
      spec.impulse);

  double offset = 0.0;
  for (const auto& [V, snaps] : windows) {
    res.nsteps += detail::run_window(res.psi, V, spec, spec.nsteps, offset, res, snaps);
    offset += V.T();
  }
  if (!res.psi.all_finite()) throw NumericalGuard("propagation produced non-finite values");
  res.norm_drift = std::abs(res.psi.norm_squared() - n0);
  res.boundary_mass = boundary_mass(res.psi);
  if (res.norm_drift > kNormDriftLimit) {
    throw NumericalGuard("norm drift " + std::to_string(res.norm_drift) + " exceeds 1e-7");
  }
  if (res.boundary_mass > kBoundaryMassLimit) {
    throw NumericalGuard("mass " + std::to_string(res.boundary_mass) +
                         " reached the boundary layer; enlarge the domain");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Comparison

inline double l1_density_error(const DensityField& a, const DensityField& b) {
  require_same_grid(a.grid, b.grid);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s * a.grid.cell_volume();
}

inline DensityField density_of(const Wavefunction& psi) {
  DensityField rho{psi.grid, std::vector<double>(psi.values.size())};
  for (std::size_t i = 0; i < psi.values.size(); ++i) rho.values[i] = std::norm(psi.values[i]);
  return rho;
}

struct DeviationReport {
  double fidelity = 0;
  double l1_density = 0;
  double phase_rms = 0;
};

/// Phase RMS: density-weighted (by rho_pred) RMS of the wrapped phase
/// difference after removing the best-fit global phase, over the support
/// rho_pred > 1e-8 max.
inline double phase_rms(const Wavefunction& sim, const Wavefunction& pred) {
  require_same_grid(sim.grid, pred.grid);
  const Complex ov = inner_product(pred, sim);
  const double alpha = std::abs(ov) > 0 ? std::arg(ov) : 0.0;
  double rmax = 0.0;
  for (const auto& v : pred.values) rmax = std::max(rmax, std::norm(v));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double r = std::norm(pred.values[i]);
    if (!(r > kSupportThreshold * rmax)) continue;
    const double d = std::remainder(std::arg(sim.values[i] * std::conj(pred.values[i])) - alpha, 2.0 * kPi);
    num += r * d * d;
    den += r;
  }
  return den > 0 ? std::sqrt(num / den) : 0.0;
}

inline DeviationReport compare(const Wavefunction& sim, const Wavefunction& pred) {
  require_same_grid(sim.grid, pred.grid);
  DensityField a = density_of(sim), b = density_of(pred);
  const double na = a.integral(), nb = b.integral();
  for (auto& v : a.values) v /= na;
  for (auto& v : b.values) v /= nb;
  return {fidelity(sim, pred), l1_density_error(a, b), phase_rms(sim, pred)};
}

}  // namespace qimpulse
