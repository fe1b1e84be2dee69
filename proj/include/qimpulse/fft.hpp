#pragma once

#include "qimpulse/geometry.hpp"

#include <fftw3.h>

#include <memory>
#include <mutex>
#include <span>

namespace qimpulse {

namespace detail {
// FFTW's planner is not thread-safe; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// In-place complex DFT over a whole grid, owning an FFTW-aligned buffer.
/// backward() includes the 1/N so forward+backward is the identity.
class FftPlan {
 public:
  explicit FftPlan(const Grid& grid) : grid_(grid), n_(grid.size()) {
    buf_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_));
    if (buf_ == nullptr) throw Error("fftw_malloc failed");
    int dims[3];
    for (int d = 0; d < grid.dim(); ++d) dims[d] = static_cast<int>(grid.axis(d).n);
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fwd_ = fftw_plan_dft(grid.dim(), dims, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft(grid.dim(), dims, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  ~FftPlan() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_);
  }

  std::span<Complex> data() { return {reinterpret_cast<Complex*>(buf_), n_}; }
  std::span<const Complex> data() const { return {reinterpret_cast<const Complex*>(buf_), n_}; }

  void forward() { fftw_execute(fwd_); }

  void backward() {
    fftw_execute(bwd_);
    const double s = 1.0 / static_cast<double>(n_);
    for (auto& v : data()) v *= s;
  }

  const Grid& grid() const { return grid_; }

 private:
  Grid grid_;
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// Angular wavenumbers of the DFT bins along one axis, FFTW ordering.
inline std::vector<double> wavenumbers(const Axis& ax) {
  std::vector<double> k(ax.n);
  const double dk = 2.0 * kPi / ax.length();
  const auto n = static_cast<long>(ax.n);
  for (long j = 0; j < n; ++j) k[static_cast<std::size_t>(j)] = dk * static_cast<double>(j < n / 2 ? j : j - n);
  return k;
}

/// |k|^2 for every flat index of the grid.
inline std::vector<double> wavenumber_squared(const Grid& grid) {
  std::vector<std::vector<double>> ks;
  for (int d = 0; d < grid.dim(); ++d) ks.push_back(wavenumbers(grid.axis(d)));
  std::vector<double> k2(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto idx = grid.unflatten(i);
    double s = 0.0;
    for (int d = 0; d < grid.dim(); ++d) {
      const double kk = ks[static_cast<std::size_t>(d)][idx[static_cast<std::size_t>(d)]];
      s += kk * kk;
    }
    k2[i] = s;
  }
  return k2;
}

/// <p> = hbar <k>, from the spectrum.
inline Vec mean_momentum(const Wavefunction& psi) {
  FftPlan plan(psi.grid);
  std::copy(psi.values.begin(), psi.values.end(), plan.data().begin());
  plan.forward();
  std::vector<std::vector<double>> ks;
  for (int d = 0; d < psi.grid.dim(); ++d) ks.push_back(wavenumbers(psi.grid.axis(d)));
  Vec m = Vec::Zero(psi.grid.dim());
  double w = 0.0;
  auto spec = plan.data();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double p = std::norm(spec[i]);
    const auto idx = psi.grid.unflatten(i);
    for (int d = 0; d < psi.grid.dim(); ++d) m(d) += p * ks[static_cast<std::size_t>(d)][idx[static_cast<std::size_t>(d)]];
    w += p;
  }
  return psi.hbar * m / w;
}

}  // namespace qimpulse
