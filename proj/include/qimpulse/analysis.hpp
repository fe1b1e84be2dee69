#pragma once

// Epsilon scans: run a scenario at each epsilon, compare with the ideal
// deformation, fit the scaling exponent.

#include "qimpulse/quantum_sim.hpp"

#include <json.hpp>

#include <chrono>

namespace qimpulse {

struct ConvergenceRow {
  double epsilon = 0;
  double one_minus_fidelity = 0;
  double l1_density = 0;
  double phase_rms = 0;
  double runtime_s = 0;
  std::size_t nsteps = 0;
};

struct ConvergenceTable {
  std::string scenario;
  std::vector<ConvergenceRow> rows;  // decreasing epsilon
  /// Least-squares slope of log(1 - fidelity) against log(epsilon) over the
  /// three smallest epsilon values. NaN if fewer than two usable points.
  double slope = std::numeric_limits<double>::quiet_NaN();

  bool monotone_decreasing() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!(rows[i].one_minus_fidelity < rows[i - 1].one_minus_fidelity)) return false;
    }
    return true;
  }
};

/// Least-squares slope of log y against log x over points with y > 0.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !(x[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double fit_slope(const std::vector<ConvergenceRow>& rows) {
  std::vector<double> x, y;
  const std::size_t start = rows.size() > 3 ? rows.size() - 3 : 0;
  for (std::size_t i = start; i < rows.size(); ++i) {
    x.push_back(rows[i].epsilon);
    y.push_back(rows[i].one_minus_fidelity);
  }
  return loglog_slope(x, y);
}

/// What a scan needs from a scenario: the grid, a step-count projection for
/// the resource guard, and a runner returning (simulated, predicted) states.
struct ScanTarget {
  std::string id;
  Grid grid;
  std::function<std::size_t(double eps)> projected_steps;
  std::function<std::pair<PropagationResult, Wavefunction>(double eps)> run;
};

struct ResourceBudget {
  double max_point_steps = 2e11;    // sum over the ladder of grid points x steps
  double max_bytes = 4.0 * (1u << 30);
};

inline ConvergenceTable run_epsilon_scan(const ScanTarget& target, std::vector<double> ladder,
                                         const ResourceBudget& budget = {}) {
  if (ladder.empty()) throw InvalidArgument("empty epsilon ladder");
  std::sort(ladder.begin(), ladder.end(), std::greater<>());
  const double npts = static_cast<double>(target.grid.size());
  // About a dozen complex/real work arrays per propagation.
  if (npts * 16.0 * 12.0 > budget.max_bytes) throw NumericalGuard("resource guard: grid too large for memory budget");
  if (target.projected_steps) {
    double work = 0.0;
    for (double e : ladder) work += npts * static_cast<double>(target.projected_steps(e));
    if (work > budget.max_point_steps) {
      throw NumericalGuard("resource guard: projected work " + std::to_string(work) + " point-steps exceeds budget");
    }
  }
  ConvergenceTable t;
  t.scenario = target.id;
  for (double eps : ladder) {
    const auto t0 = std::chrono::steady_clock::now();
    auto [res, pred] = target.run(eps);
    const auto rep = compare(res.psi, pred);
    ConvergenceRow row;
    row.epsilon = eps;
    row.one_minus_fidelity = std::max(0.0, 1.0 - rep.fidelity);
    row.l1_density = rep.l1_density;
    row.phase_rms = rep.phase_rms;
    row.nsteps = res.nsteps;
    row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    t.rows.push_back(row);
  }
  t.slope = fit_slope(t.rows);
  return t;
}

inline void write_convergence_csv(const ConvergenceTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << "# scenario=" << t.scenario << " slope=" << t.slope << "\n";
  out << "epsilon,one_minus_fidelity,l1_density,phase_rms,nsteps,runtime_s\n";
  for (const auto& r : t.rows) {
    out << r.epsilon << "," << r.one_minus_fidelity << "," << r.l1_density << "," << r.phase_rms << "," << r.nsteps
        << "," << r.runtime_s << "\n";
  }
}

/// JSON form. Runtimes are left out when `with_runtime` is false so that
/// repeated runs produce identical files.
inline nlohmann::json to_json(const ConvergenceTable& t, bool with_runtime = true) {
  nlohmann::json j;
  j["scenario"] = t.scenario;
  j["slope"] = std::isfinite(t.slope) ? nlohmann::json(t.slope) : nlohmann::json(nullptr);
  j["monotone"] = t.monotone_decreasing();
  j["rows"] = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json row = {{"epsilon", r.epsilon},
                          {"one_minus_fidelity", r.one_minus_fidelity},
                          {"l1_density", r.l1_density},
                          {"phase_rms", r.phase_rms},
                          {"nsteps", r.nsteps}};
    if (with_runtime) row["runtime_s"] = r.runtime_s;
    j["rows"].push_back(row);
  }
  return j;
}

}  // namespace qimpulse
