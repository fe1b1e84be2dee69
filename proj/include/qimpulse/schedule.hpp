#pragma once

#include "qimpulse/types.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace qimpulse {

enum class ScheduleKind { sine_sq, quintic, custom };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::sine_sq: return "sine_sq";
    case ScheduleKind::quintic: return "quintic";
    case ScheduleKind::custom: return "custom";
  }
  return "?";
}

/// Interpolation g(tau) on [0, T] with g(0)=0, g(T)=1, g in (0,1) inside,
/// and gdot(0)=gdot(T)=0.
struct Schedule {
  ScheduleKind kind = ScheduleKind::sine_sq;
  double T = 1.0;
  std::function<double(double)> g;
  std::function<double(double)> gdot;
  std::function<double(double)> gddot;
};

/// Composite Simpson on [a, b] with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 4096) {
  if (panels % 2) ++panels;
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

namespace detail {
inline void check_schedule(const Schedule& s) {
  const double T = s.T;
  auto fail = [](const std::string& what) { throw InvalidArgument("schedule violates endpoint conditions: " + what); };
  if (std::abs(s.g(0.0)) > 1e-10) fail("g(0) != 0");
  if (std::abs(s.g(T) - 1.0) > 1e-10) fail("g(T) != 1");
  if (std::abs(s.gdot(0.0)) * T > 1e-10) fail("gdot(0) != 0");
  if (std::abs(s.gdot(T)) * T > 1e-10) fail("gdot(T) != 0");
  for (int i = 1; i < 1000; ++i) {
    const double tau = T * i / 1000.0;
    const double g = s.g(tau);
    if (!(g > 0.0 && g < 1.0)) fail("g leaves (0,1) on the open interval");
  }
  // Derivative consistency, central differences.
  const double h = 1e-5 * T;
  for (int i = 1; i < 50; ++i) {
    const double tau = T * i / 50.0;
    const double fd1 = (s.g(tau + h) - s.g(tau - h)) / (2 * h);
    const double fd2 = (s.gdot(tau + h) - s.gdot(tau - h)) / (2 * h);
    const double sc1 = std::max(1.0 / T, std::abs(s.gdot(tau)));
    const double sc2 = std::max(1.0 / (T * T), std::abs(s.gddot(tau)));
    if (std::abs(fd1 - s.gdot(tau)) > 1e-6 * sc1) fail("gdot inconsistent with g");
    if (std::abs(fd2 - s.gddot(tau)) > 1e-6 * sc2) fail("gddot inconsistent with gdot");
  }
}
}  // namespace detail

inline Schedule make_schedule(ScheduleKind kind, double T = 1.0) {
  if (!(T > 0.0)) throw InvalidArgument("schedule duration T must be positive");
  Schedule s;
  s.kind = kind;
  s.T = T;
  switch (kind) {
    case ScheduleKind::sine_sq: {
      const double w = kPi / T;
      s.g = [w](double t) {
        const double v = std::sin(0.5 * w * t);
        return v * v;
      };
      s.gdot = [w](double t) { return 0.5 * w * std::sin(w * t); };
      s.gddot = [w](double t) { return 0.5 * w * w * std::cos(w * t); };
      break;
    }
    case ScheduleKind::quintic: {
      s.g = [T](double t) {
        const double u = t / T;
        return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
      };
      s.gdot = [T](double t) {
        const double u = t / T;
        return 30.0 * u * u * (1.0 - u) * (1.0 - u) / T;
      };
      s.gddot = [T](double t) {
        const double u = t / T;
        return (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (T * T);
      };
      break;
    }
    case ScheduleKind::custom:
      throw InvalidArgument("custom schedules are built with make_custom_schedule");
  }
  return s;
}

/// User-supplied g with analytic derivatives; rejected unless it satisfies
/// the endpoint conditions. Non-monotone g is fine.
inline Schedule make_custom_schedule(double T, std::function<double(double)> g, std::function<double(double)> gdot,
                                     std::function<double(double)> gddot) {
  if (!(T > 0.0)) throw InvalidArgument("schedule duration T must be positive");
  Schedule s{ScheduleKind::custom, T, std::move(g), std::move(gdot), std::move(gddot)};
  detail::check_schedule(s);
  return s;
}

/// g(u) = 2u^2 - u^3: starts at rest but ends moving (gdot(T) = 1/T).
/// Skips validation on purpose; it exists to build unbalanced impulses.
inline Schedule make_unbalanced_schedule(double T = 1.0) {
  if (!(T > 0.0)) throw InvalidArgument("schedule duration T must be positive");
  Schedule s;
  s.kind = ScheduleKind::custom;
  s.T = T;
  s.g = [T](double t) {
    const double u = t / T;
    return u * u * (2.0 - u);
  };
  s.gdot = [T](double t) {
    const double u = t / T;
    return (4.0 * u - 3.0 * u * u) / T;
  };
  s.gddot = [T](double t) { return (4.0 - 6.0 * t / T) / (T * T); };
  return s;
}

/// Integral of gddot over [0, T]; zero for every valid schedule.
inline double integral_gddot(const Schedule& s) { return simpson(s.gddot, 0.0, s.T, 4096); }

}  // namespace qimpulse
