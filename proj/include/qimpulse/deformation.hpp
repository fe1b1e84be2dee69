#pragma once

// The ideal outcome of a super impulse: psi_f(x) = psi_i(y) |det J(y)|^{-1/2}
// with y = mu^{-1}(x).

#include "qimpulse/interp.hpp"
#include "qimpulse/transport_map.hpp"

namespace qimpulse {

enum class Interpolation { automatic, fourier, cubic };

/// Off-grid evaluation of psi_i, with a declared plane-wave carrier
/// e^{ik.x} factored out so the interpolated envelope is slowly varying.
class WavefunctionSampler {
 public:
  WavefunctionSampler(const Wavefunction& psi, const Vec& carrier, Interpolation how)
      : grid_(psi.grid), k_(carrier) {
    if (k_.size() != grid_.dim()) throw InvalidArgument("carrier wavevector dimension mismatch");
    envelope_.resize(psi.values.size());
    for (std::size_t i = 0; i < psi.values.size(); ++i) {
      envelope_[i] = psi.values[i] * std::polar(1.0, -k_.dot(grid_.point(i)));
    }
    if (how == Interpolation::fourier) {
      if (grid_.dim() != 1) throw InvalidArgument("Fourier interpolation is only available in 1D");
      fourier_.emplace(grid_, envelope_);
    }
  }

  Complex operator()(const Vec& y) const {
    if (!grid_.contains(y)) return {0.0, 0.0};
    const Complex a = fourier_ ? (*fourier_)(y(0)) : cubic_interpolate<Complex>(grid_, envelope_, y);
    return a * std::polar(1.0, k_.dot(y));
  }

 private:
  Grid grid_;
  Vec k_;
  std::vector<Complex> envelope_;
  std::optional<FourierInterpolant1D> fourier_;
};

/// Deformation of psi_i under `map`, normalized. `automatic` picks Fourier
/// interpolation for smooth 1D maps and cubic convolution otherwise.
inline Wavefunction predicted_deformation(const Wavefunction& psi_i, const MapSpec& map,
                                          std::optional<Vec> carrier = std::nullopt,
                                          Interpolation how = Interpolation::automatic) {
  const Grid& grid = psi_i.grid;
  if (map.dim != grid.dim()) throw InvalidArgument("predicted_deformation: map/grid dimension mismatch");
  if (how == Interpolation::automatic) {
    how = (grid.dim() == 1 && !map.piecewise) ? Interpolation::fourier : Interpolation::cubic;
  }
  const Vec k = carrier ? *carrier : Vec::Zero(grid.dim());

  // Support must land inside the box.
  double rmax = 0.0;
  for (const auto& v : psi_i.values) rmax = std::max(rmax, std::norm(v));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (std::norm(psi_i.values[i]) > 1e-12 * rmax && !grid.contains(map(grid.point(i)))) {
      throw NumericalGuard("predicted_deformation: support is mapped outside the grid");
    }
  }

  const WavefunctionSampler sample(psi_i, k, how);
  Wavefunction out(grid, psi_i.mass, psi_i.hbar);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec y = map.invert(grid.point(i));
    const double det = std::abs(map.jacobian_det(y));
    out.values[i] = sample(y) / std::sqrt(det);
  }
  out.normalize();
  return out;
}

}  // namespace qimpulse
