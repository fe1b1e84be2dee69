#include "qimpulse/qimpulse.hpp"

#include <catch_amalgamated.hpp>

using namespace qimpulse;

namespace {

constexpr double kA = 0.5, kB = 3.0;

MapSpec cleave_map() {
  MapParams p;
  p.a = kA;
  p.b = kB;
  return builtin_map(MapKind::cleave, p);
}

Mat stretch_matrix() {
  Mat M(2, 2);
  M << 1.4, 0.2, 0.2, 0.8;
  return M;
}

MapSpec stretch_map() {
  MapParams p;
  p.dim = 2;
  p.matrix = stretch_matrix();
  return builtin_map(MapKind::linear_matrix, p);
}

// Inverted-V potential of the cleave design, written out by hand.
double cleave_U2_oracle(double x, double g, double gdd, double m) {
  const double c = (1 - g) * kA + g * kB;
  const double shape = std::abs(x) > c ? std::abs(x) - 0.5 * c : x * x / (2 * c);
  return -m * gdd * (kB - kA) * shape;
}

struct Case {
  std::string name;
  ImpulseDesign design;
  double half_width;
};

std::vector<Case> designs() {
  std::vector<Case> out;
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  const Schedule q = make_schedule(ScheduleKind::quintic, 2.0);
  MapParams p;
  out.push_back({"cleave", build_global_design(cleave_map(), s, 1.0, Region::cube(1, 12)), 8});
  out.push_back({"tanh_cleave", build_global_design(builtin_map(MapKind::tanh_cleave, p), q, 2.0, Region::cube(1, 12)), 8});
  p.offset = vec1(-1.3);
  out.push_back({"translation", build_global_design(builtin_map(MapKind::translation, p), s, 1.0, Region::cube(1, 12)), 8});
  p.factor = 0.6;
  out.push_back({"scaling", build_global_design(builtin_map(MapKind::scaling, p), q, 1.0, Region::cube(1, 12)), 8});
  out.push_back({"linear_2d", build_global_design(stretch_map(), s, 1.5, Region::cube(2, 6)), 4});
  return out;
}

Vec random_point(std::mt19937_64& rng, int D, double w) {
  std::uniform_real_distribution<double> u(-w, w);
  Vec x(D);
  for (int d = 0; d < D; ++d) x(d) = u(rng);
  return x;
}

}  // namespace

TEST_CASE("cleave design reproduces the inverted-V potential", "[designer]") {
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  const auto d = build_global_design(cleave_map(), s, 1.0, Region::cube(1, 12));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(-8, 8), ut(0, 1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double x = ux(rng), t = ut(rng);
    const double ref = cleave_U2_oracle(x, s.g(t), s.gddot(t), 1.0);
    worst = std::max(worst, std::abs(d.U2(vec1(x), t) - ref));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("linear design reproduces the quadratic potential", "[designer]") {
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  const double m = 1.3;
  const auto d = build_global_design(stretch_map(), s, m, Region::cube(2, 6));
  const Mat M = stretch_matrix(), I = Mat::Identity(2, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ut(0, 1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec x = random_point(rng, 2, 5);
    const double t = ut(rng), g = s.g(t);
    const Mat B = (1 - g) * I + g * M;
    const double ref = -0.5 * m * s.gddot(t) * x.dot((M - I) * B.inverse() * x);
    worst = std::max(worst, std::abs(d.U2(x, t) - ref));
  }
  CHECK(worst <= 1e-10);
  // The row-wise field evaluation agrees with the pointwise one.
  const Grid g = make_grid(2, -4, 4, 32);
  std::vector<double> field(g.size());
  std::vector<Vec> cache;
  d.U2_field(g, 0.37, cache, field);
  double ferr = 0;
  for (std::size_t i = 0; i < g.size(); ++i) ferr = std::max(ferr, std::abs(field[i] - d.U2(g.point(i), 0.37)));
  CHECK(ferr <= 1e-10);
}

TEST_CASE("Lagrangian trajectories start at x_i and end at mu(x_i)", "[designer]") {
  std::mt19937_64 rng(3);
  for (const auto& c : designs()) {
    const int D = c.design.dim();
    const double T = c.design.T();
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec xi = random_point(rng, D, c.half_width);
      worst = std::max(worst, (c.design.X(xi, 0.0) - xi).norm());
      worst = std::max(worst, (c.design.X(xi, T) - c.design.map()(xi)).norm());
    }
    INFO(c.name);
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("inversion of X agrees with closed forms", "[designer]") {
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  const auto cl = build_global_design(cleave_map(), s, 1.0, Region::cube(1, 12));
  const auto lin = build_global_design(stretch_map(), s, 1.0, Region::cube(2, 6));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ut(0, 1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = ut(rng), g = s.g(t);
    const double x = random_point(rng, 1, 8)(0);
    const double c = (1 - g) * kA + g * kB;
    const double ref = std::abs(x) <= c ? x * kA / c : x - g * (kB - kA) * (x > 0 ? 1 : -1);
    worst = std::max(worst, std::abs(cl.invert_X(vec1(x), t)(0) - ref));
    const Vec y = random_point(rng, 2, 4);
    const Mat B = (1 - g) * Mat::Identity(2, 2) + g * stretch_matrix();
    worst = std::max(worst, (lin.invert_X(y, t) - B.inverse() * y).norm());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("grad Psi is the displacement and grad S is m v", "[designer]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ut(0.02, 0.98);
  for (const auto& c : designs()) {
    const int D = c.design.dim();
    const double T = c.design.T();
    int bad_psi = 0, bad_s = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec x = random_point(rng, D, c.half_width);
      const double t = ut(rng) * T;
      const auto p = c.design.eval(x, t);
      const double h = 1e-6;
      Vec gpsi(D), gs(D);
      for (int k = 0; k < D; ++k) {
        Vec e = Vec::Zero(D);
        e(k) = h;
        gpsi(k) = (c.design.Psi(x + e, t) - c.design.Psi(x - e, t)) / (2 * h);
        gs(k) = (c.design.S(x + e, t) - c.design.S(x - e, t)) / (2 * h);
      }
      const Vec disp = p.x_f - p.x_i;
      // The cleave potential has a kink in its second derivative only, so
      // central differences stay accurate up to the branch points.
      if ((gpsi - disp).norm() > 1e-6 * std::max(1.0, disp.norm())) ++bad_psi;
      if ((gs - c.design.mass() * p.v).norm() > 1e-6 * std::max(1.0, c.design.mass() * p.v.norm())) ++bad_s;
    }
    INFO(c.name);
    CHECK(bad_psi == 0);
    CHECK(bad_s == 0);
  }
}

TEST_CASE("S solves the Hamilton-Jacobi equation with U2", "[designer]") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ut(0.02, 0.98);
  for (const auto& c : designs()) {
    const int D = c.design.dim();
    const double T = c.design.T(), m = c.design.mass();
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec x = random_point(rng, D, c.half_width);
      const double t = ut(rng) * T;
      const double h = 1e-5 * T;
      const auto p = c.design.eval(x, t);
      const double dSdt = (c.design.S(x, t + h) - c.design.S(x, t - h)) / (2 * h);
      const double resid = dSdt + m * p.v.squaredNorm() / 2 + p.U2;
      const double scale = std::abs(p.U2) + std::abs(p.S) / T + m * p.v.squaredNorm() / 2;
      worst = std::max(worst, std::abs(resid) / std::max(scale, 1e-12));
    }
    INFO(c.name);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("phase S vanishes at both ends of the window", "[designer]") {
  std::mt19937_64 rng(7);
  for (const auto& c : designs()) {
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec x = random_point(rng, c.design.dim(), c.half_width);
      worst = std::max({worst, std::abs(c.design.S(x, 0.0)), std::abs(c.design.S(x, c.design.T()))});
    }
    INFO(c.name);
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("force integrates to zero along every trajectory", "[designer]") {
  std::mt19937_64 rng(8);
  for (const auto& c : designs()) {
    const int D = c.design.dim();
    const double T = c.design.T();
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Vec xi = random_point(rng, D, c.half_width);
      Vec imp = Vec::Zero(D);
      const int n = 2000;
      for (int k = 0; k <= n; ++k) {
        const double t = T * k / n;
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        imp += w * c.design.force(c.design.X(xi, t), t);
      }
      imp *= T / (3.0 * n);
      worst = std::max(worst, imp.norm() / (c.design.mass() * std::max(1.0, (c.design.map()(xi) - xi).norm())));
    }
    INFO(c.name);
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("global design refuses maps without a convex potential", "[designer]") {
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  MapParams p;
  CHECK_THROWS_AS(build_global_design(builtin_map(MapKind::reflection, p), s, 1.0, Region::cube(1, 8)),
                  CertificateFailure);
  p.dim = 2;
  p.matrix = Mat(2, 2);
  p.matrix << 0.0, -1.0, 1.0, 0.0;
  CHECK_THROWS_AS(build_global_design(builtin_map(MapKind::linear_matrix, p), s, 1.0, Region::cube(2, 8)),
                  CertificateFailure);
}

TEST_CASE("ordinary paint potential integrates to -Delta S", "[designer]") {
  for (auto kind : {NuKind::uniform, NuKind::sine}) {
    const auto paint = design_ordinary([](const Vec& x) { return std::sin(x(0)) + 0.2 * x(0) * x(0); }, kind, 1.5);
    for (double x : {-2.0, 0.3, 1.7}) {
      const double integral = simpson([&](double t) { return paint.U1(vec1(x), t); }, 0.0, 1.5, 4096);
      CHECK(std::abs(integral + paint.deltaS(vec1(x))) <= 1e-10);
    }
  }
}

TEST_CASE("hybrid paint is carried along the trajectories", "[designer]") {
  const Schedule s = make_schedule(ScheduleKind::sine_sq, 1.0);
  MapParams p;
  p.factor = 1.5;
  const auto h = design_hybrid(builtin_map(MapKind::scaling, p), [](const Vec& x) { return std::cos(x(0)); }, s, 1.0,
                               NuKind::sine, Region::cube(1, 10));
  // U1 at X(x_i, tau) depends on x_i only through Delta S(mu(x_i)).
  for (double xi : {-1.0, 0.2, 2.0}) {
    for (double t : {0.1, 0.5, 0.9}) {
      const Vec x = h.super.X(vec1(xi), t);
      CHECK(std::abs(h.U1(x, t) + std::cos(1.5 * xi) * h.paint.nu(t)) <= 1e-12);
    }
  }
}

TEST_CASE("local design of a reflected packet", "[designer]") {
  const Grid g = make_grid(1, -16, 16, 4096);
  const double s = 2.0, k = 4.0;
  const auto psi = gaussian_packet(g, 1.0, k, s);
  const Schedule sch = make_schedule(ScheduleKind::sine_sq, 1.0);
  MapParams p;
  const auto ld = design_local_1d(psi, builtin_map(MapKind::reflection, p), sch, 1.0, NuKind::sine, vec1(k));
  double mu_err = 0;
  for (double x = s - 5; x <= s + 5; x += 0.01) mu_err = std::max(mu_err, std::abs(ld.mubar(vec1(x))(0) - (x - 2 * s)));
  CHECK(mu_err <= 1e-8);
  // The rearrangement is a translation, so U2 is linear in x up to a constant.
  double u_err = 0;
  for (double t : {0.2, 0.5, 0.8}) {
    const double u0 = ld.super.U2(vec1(0.0), t);
    for (double x = -6; x <= 6; x += 0.05) {
      u_err = std::max(u_err, std::abs(ld.super.U2(vec1(x), t) - u0 - 2 * s * x * sch.gddot(t)));
    }
  }
  CHECK(u_err <= 1e-8);
  // Corrective paint undoes the carrier reversal: Delta S = -2 hbar k x + const.
  double ref = std::nan(""), p_err = 0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (!ld.on_support[j]) continue;
    const double x = g.point(j)(0);
    if (std::isnan(ref)) ref = ld.deltaS_table[j] + 2 * k * x;
    p_err = std::max(p_err, std::abs(ld.deltaS_table[j] + 2 * k * x - ref));
  }
  CHECK(p_err <= 1e-6);
  CHECK(fidelity(apply_phase_paint(ld.predicted_bar, ld.paint), ld.predicted) >= 1 - 1e-8);
}
