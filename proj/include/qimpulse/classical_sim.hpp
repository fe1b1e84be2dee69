#pragma once

// Classical trajectories in the rescaled frame (x, p~ = eps p):
//   dx/dtau = p~/m,   dp~/dtau = -grad(U2 + eps U1 + eps^2 U0),
// integrated with velocity Verlet. The eps = 0 system is the one whose
// rest trajectories realize the map.

#include "qimpulse/designer.hpp"

#include <random>

namespace qimpulse {

struct PhasePoint {
  Vec x;
  Vec p;
};

struct ForceModel {
  int dim = 1;
  double T = 1.0;
  double mass = 1.0;
  std::function<Vec(const Vec&, double)> force;
  /// Trajectories leaving this box are an error. Empty means unbounded.
  std::optional<Region> domain;
};

/// Analytic force m a = m gddot (x_f - x_i) of a design. With eps > 0 the
/// background U0 (lab time eps tau) and a paint may be added.
inline ForceModel force_from_design(const ImpulseDesign& d, double eps = 0.0,
                                    std::function<Vec(const Vec&, double)> background_grad = {},
                                    const PhasePaint* paint = nullptr) {
  ForceModel f;
  f.dim = d.dim();
  f.T = d.T();
  f.mass = d.mass();
  auto design = std::make_shared<ImpulseDesign>(d);
  std::optional<PhasePaint> pp;
  if (paint) pp = *paint;
  const double h = 1e-6;
  f.force = [design, eps, background_grad, pp, h](const Vec& x, double tau) {
    Vec F = design->force(x, tau);
    if (eps > 0.0 && background_grad) F -= eps * eps * background_grad(x, eps * tau);
    if (eps > 0.0 && pp) {
      const int D = static_cast<int>(x.size());
      for (int c = 0; c < D; ++c) {
        Vec e = Vec::Zero(D);
        e(c) = h;
        F(c) -= eps * (pp->U1(x + e, tau) - pp->U1(x - e, tau)) / (2 * h);
      }
    }
    return F;
  };
  return f;
}

/// Force by central differences of a potential given directly.
inline ForceModel force_from_potential(std::function<double(const Vec&, double)> U2, int dim, double T,
                                       double mass, double h = 1e-6) {
  ForceModel f;
  f.dim = dim;
  f.T = T;
  f.mass = mass;
  f.force = [U2 = std::move(U2), h](const Vec& x, double tau) {
    const int D = static_cast<int>(x.size());
    Vec F(D);
    for (int c = 0; c < D; ++c) {
      Vec e = Vec::Zero(D);
      e(c) = h;
      F(c) = -(U2(x + e, tau) - U2(x - e, tau)) / (2 * h);
    }
    return F;
  };
  return f;
}

struct TrajectorySample {
  double tau;
  Vec x;
  Vec p;
};

/// Fixed-step velocity Verlet over [0, T]. The force is taken from the right
/// at the start of a step and from the left at its end, so forces that jump
/// at a step boundary are integrated exactly. `trace`, if given, receives
/// every `trace_every`-th state.
inline PhasePoint integrate_rescaled(const PhasePoint& start, const ForceModel& model, std::size_t nsteps,
                                     std::vector<TrajectorySample>* trace = nullptr, std::size_t trace_every = 1) {
  if (nsteps < 1) throw InvalidArgument("integrate_rescaled: nsteps must be positive");
  if (start.x.size() != model.dim || start.p.size() != model.dim) {
    throw InvalidArgument("integrate_rescaled: phase point dimension mismatch");
  }
  const double dt = model.T / static_cast<double>(nsteps);
  Vec x = start.x, p = start.p;
  if (trace) trace->push_back({0.0, x, p});
  for (std::size_t n = 0; n < nsteps; ++n) {
    const double t0 = model.T * static_cast<double>(n) / static_cast<double>(nsteps);
    const double t1 = model.T * static_cast<double>(n + 1) / static_cast<double>(nsteps);
    p += 0.5 * dt * model.force(x, std::nextafter(t0, 1e300));
    x += dt * p / model.mass;
    if (model.domain) {
      for (int d = 0; d < model.dim; ++d) {
        if (x(d) < model.domain->lower(d) || x(d) > model.domain->upper(d)) {
          throw NumericalGuard("trajectory left the sampling domain at tau=" + std::to_string(t1));
        }
      }
    }
    p += 0.5 * dt * model.force(x, std::nextafter(t1, -1e300));
    if (!x.allFinite() || !p.allFinite()) throw NumericalGuard("trajectory became non-finite");
    if (trace && ((n + 1) % trace_every == 0 || n + 1 == nsteps)) trace->push_back({t1, x, p});
  }
  return {x, p};
}

struct ConvergedEndpoint {
  PhasePoint end;
  std::size_t nsteps = 0;
  double change = 0;
};

/// Doubles the step count from `n0` until the endpoint moves by less than
/// `tol` (position and T/m-scaled momentum).
inline ConvergedEndpoint integrate_converged(const PhasePoint& start, const ForceModel& model, std::size_t n0 = 1024,
                                             double tol = 1e-8, std::size_t nmax = 1u << 22) {
  if (n0 < 1024) throw InvalidArgument("integrate_converged: at least 1024 steps");
  PhasePoint prev = integrate_rescaled(start, model, n0);
  for (std::size_t n = 2 * n0; n <= nmax; n *= 2) {
    PhasePoint cur = integrate_rescaled(start, model, n);
    const double change =
        std::max((cur.x - prev.x).norm(), (cur.p - prev.p).norm() * model.T / model.mass);
    if (change < tol) return {cur, n, change};
    prev = cur;
  }
  throw NumericalGuard("classical integration did not converge under step doubling");
}

struct FlowReport {
  Vec x_f;
  Vec p_f;
  Mat J;  // d x_f / d x_i at p_i = 0
  Mat L;  // d p_f / d p_i at p_i = 0
  Vec balance_residual;  // time integral of the force along the rest trajectory
  double rest_residual = 0;  // |p_f| of the rest trajectory
  std::size_t nsteps = 0;
};

/// Endpoint of (x_i, p_i) plus J and L by central differences around
/// (x_i, 0), with steps h = 1e-5 * scale in x and 1e-5 * m scale / T in p.
/// All trajectories use the same step count, so J and L are derivatives of
/// one symplectic map.
inline FlowReport phase_space_map(const Vec& x_i, const Vec& p_i, const ForceModel& model, double scale = 1.0,
                                  std::size_t nsteps = 0) {
  const int D = model.dim;
  const Vec zero = Vec::Zero(D);
  FlowReport r;
  std::size_t n = nsteps;
  PhasePoint rest;
  if (n == 0) {
    const auto c = integrate_converged({x_i, zero}, model);
    n = c.nsteps;
    rest = c.end;
  } else {
    rest = integrate_rescaled({x_i, zero}, model, n);
  }
  r.nsteps = n;
  r.balance_residual = rest.p;  // Verlet: sum of half kicks = p_f - p_i exactly
  r.rest_residual = rest.p.norm();
  if (p_i.isZero(0.0)) {
    r.x_f = rest.x;
    r.p_f = rest.p;
  } else {
    const PhasePoint e = integrate_rescaled({x_i, p_i}, model, n);
    r.x_f = e.x;
    r.p_f = e.p;
  }
  const double hx = 1e-5 * scale;
  const double hp = 1e-5 * model.mass * scale / model.T;
  r.J = Mat(D, D);
  r.L = Mat(D, D);
  for (int c = 0; c < D; ++c) {
    Vec e = Vec::Zero(D);
    e(c) = hx;
    const PhasePoint a = integrate_rescaled({x_i + e, zero}, model, n);
    const PhasePoint b = integrate_rescaled({x_i - e, zero}, model, n);
    r.J.col(c) = (a.x - b.x) / (2 * hx);
    e(c) = hp;
    const PhasePoint ap = integrate_rescaled({x_i, e}, model, n);
    const PhasePoint bp = integrate_rescaled({x_i, Vec(-e)}, model, n);
    r.L.col(c) = (ap.p - bp.p) / (2 * hp);
  }
  return r;
}

// ---------------------------------------------------------------------------

/// Draws positions from a density on its grid: a cell by its weight, then
/// uniformly within the cell.
inline std::vector<Vec> sample_positions(const DensityField& rho, std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(rho.values.begin(), rho.values.end());
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    Vec x = rho.grid.point(pick(rng));
    for (int d = 0; d < rho.grid.dim(); ++d) x(d) += u(rng) * rho.grid.axis(d).spacing();
    out.push_back(x);
  }
  return out;
}

struct LiouvilleReport {
  double max_det_error = 0;   // max |det J det L - 1|
  double max_symplectic_error = 0;  // max ||J^T L - I||_2
  double marginal_l1 = 0;     // mapped ensemble histogram vs pushforward
  double marginal_noise = 0;  // expected L1 from sampling alone
  std::size_t points = 0;
};

/// Checks det J det L = 1 and J^T L = I on `flow_points` ensemble members and
/// compares the coordinate marginal of the whole mapped ensemble (rest
/// starts) with `rho_f` on a coarse histogram.
inline LiouvilleReport liouville_check(const std::vector<Vec>& ensemble, const ForceModel& model,
                                       const DensityField& rho_f, double scale, std::size_t flow_points = 100,
                                       std::size_t nsteps = 2048) {
  LiouvilleReport rep;
  const int D = model.dim;
  const Vec zero = Vec::Zero(D);
  for (std::size_t s = 0; s < std::min(flow_points, ensemble.size()); ++s) {
    const auto fr = phase_space_map(ensemble[s], zero, model, scale, nsteps);
    rep.max_det_error = std::max(rep.max_det_error, std::abs(fr.J.determinant() * fr.L.determinant() - 1.0));
    const Mat E = fr.J.transpose() * fr.L - Mat::Identity(D, D);
    rep.max_symplectic_error = std::max(rep.max_symplectic_error, E.jacobiSvd().singularValues()(0));
    ++rep.points;
  }
  // Histogram on a coarsened copy of rho_f's grid (8 cells per bin per axis).
  // Bin edges sit on cell edges, half a spacing below the nodes, so each
  // node's cell lies inside one bin.
  const Grid& g = rho_f.grid;
  const std::size_t coarsen = 8;
  std::vector<std::size_t> nb(static_cast<std::size_t>(D));
  std::size_t nbins = 1;
  for (int d = 0; d < D; ++d) {
    nb[static_cast<std::size_t>(d)] = g.axis(d).n / coarsen;
    nbins *= nb[static_cast<std::size_t>(d)];
  }
  auto bin_of = [&](const Vec& x) -> std::optional<std::size_t> {
    std::size_t flat = 0;
    for (int d = 0; d < D; ++d) {
      const auto& ax = g.axis(d);
      const double u = (x(d) - ax.min + 0.5 * ax.spacing()) / (ax.spacing() * static_cast<double>(coarsen));
      if (u < 0 || u >= static_cast<double>(nb[static_cast<std::size_t>(d)])) return std::nullopt;
      flat = flat * nb[static_cast<std::size_t>(d)] + static_cast<std::size_t>(u);
    }
    return flat;
  };
  std::vector<double> hist(nbins, 0.0), ref(nbins, 0.0);
  for (const auto& x0 : ensemble) {
    const PhasePoint e = integrate_rescaled({x0, zero}, model, nsteps);
    if (auto b = bin_of(e.x)) hist[*b] += 1.0 / static_cast<double>(ensemble.size());
  }
  const double total = rho_f.integral();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (auto b = bin_of(g.point(i))) ref[*b] += rho_f.values[i] * g.cell_volume() / total;
  }
  double l1 = 0.0, noise = 0.0;
  for (std::size_t b = 0; b < nbins; ++b) {
    l1 += std::abs(hist[b] - ref[b]);
    noise += std::sqrt(ref[b] * (1.0 - ref[b]) / static_cast<double>(ensemble.size()));
  }
  rep.marginal_l1 = l1;
  rep.marginal_noise = noise * std::sqrt(2.0 / kPi);
  return rep;
}

// ---------------------------------------------------------------------------

struct WkbReport {
  double k_measured = 0;
  double k_expected = 0;
  double resolution = 0;  // 2 pi / window length
  bool within_resolution = false;
};

/// Dominant local wavevector of `psi_f` (1D) in a Hann window of half width
/// `half_width` around `center_f`, from a zero-padded FFT with a parabolic
/// fit to the log-magnitude peak.
inline double local_wavevector(const Wavefunction& psi_f, double center_f, double half_width) {
  const Grid& g = psi_f.grid;
  if (g.dim() != 1) throw InvalidArgument("local_wavevector is 1D");
  const auto& ax = g.axis(0);
  const double dx = ax.spacing();
  std::vector<Complex> seg;
  for (std::size_t j = 0; j < ax.n; ++j) {
    const double x = ax.coord(j);
    const double u = (x - center_f) / half_width;
    if (std::abs(u) >= 1.0) continue;
    const double w = 0.5 * (1.0 + std::cos(kPi * u));
    seg.push_back(w * psi_f.values[j]);
  }
  if (seg.size() < 16) throw InvalidArgument("wkb window holds fewer than 16 grid points");
  std::size_t npad = 1;
  while (npad < 16 * seg.size()) npad *= 2;
  std::vector<Complex> buf(npad, {0.0, 0.0});
  std::copy(seg.begin(), seg.end(), buf.begin());
  const Grid pg({Axis{0.0, dx * static_cast<double>(npad), npad}});
  FftPlan plan(pg);
  std::copy(buf.begin(), buf.end(), plan.data().begin());
  // FFTW's forward sign is e^{-ikx}, so a carrier e^{ikx} peaks at +k.
  plan.forward();
  const auto spec = plan.data();
  const auto ks = wavenumbers(pg.axis(0));
  std::size_t best = 0;
  for (std::size_t j = 1; j < npad; ++j) {
    if (std::abs(spec[j]) > std::abs(spec[best])) best = j;
  }
  const double lm = std::log(std::abs(spec[(best + npad - 1) % npad]) + 1e-300);
  const double l0 = std::log(std::abs(spec[best]) + 1e-300);
  const double lp = std::log(std::abs(spec[(best + 1) % npad]) + 1e-300);
  const double den = lm - 2 * l0 + lp;
  const double shift = den != 0.0 ? 0.5 * (lm - lp) / den : 0.0;
  return ks[best] + shift * (ks[1] - ks[0]);
}

/// Predicted psi_f of a packet with carrier k: near mu(center) its local
/// wavevector should be k / gamma with gamma = mu'(center).
inline WkbReport wkb_wavevector_check(const Wavefunction& psi_f_pred, double k, const MapSpec& map, double center,
                                      double half_width) {
  const Grid& g = psi_f_pred.grid;
  if (g.dim() != 1 || map.dim != 1) throw InvalidArgument("wkb_wavevector_check is 1D");
  const double dx = g.axis(0).spacing();
  if (std::abs(k) * dx > 2.0 * kPi / 8.0) {
    throw InvalidArgument("carrier is not resolved (fewer than 8 points per wavelength)");
  }
  const double gamma = map.jacobian(vec1(center))(0, 0);
  WkbReport r;
  r.k_expected = k / gamma;
  r.k_measured = local_wavevector(psi_f_pred, map(vec1(center))(0), half_width);
  r.resolution = 2.0 * kPi / (2.0 * half_width);
  r.within_resolution = std::abs(r.k_measured - r.k_expected) <= r.resolution;
  return r;
}

}  // namespace qimpulse
