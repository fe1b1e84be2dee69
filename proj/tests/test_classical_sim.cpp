#include "qimpulse/qimpulse.hpp"

#include <catch_amalgamated.hpp>

using namespace qimpulse;

namespace {

ImpulseDesign cleave_design() {
  MapParams p;
  return build_global_design(builtin_map(MapKind::cleave, p), make_schedule(ScheduleKind::sine_sq), 1.0,
                             Region::cube(1, 16));
}

ImpulseDesign stretch_design() {
  MapParams p;
  p.dim = 2;
  p.matrix = Mat(2, 2);
  p.matrix << 1.4, 0.2, 0.2, 0.8;
  return build_global_design(builtin_map(MapKind::linear_matrix, p), make_schedule(ScheduleKind::sine_sq), 1.0,
                             Region::cube(2, 6));
}

}  // namespace

TEST_CASE("toy super impulse displaces without a kick", "[classical_sim]") {
  for (double F0 : {1.0, 2.5}) {
    auto U2 = [F0](const Vec& x, double t) { return t < 0.5 ? -F0 * x(0) : F0 * x(0); };
    const auto end = integrate_converged({vec1(0.3), vec1(0.0)}, force_from_potential(U2, 1, 1.0, 1.0)).end;
    const double dx = F0 / 4.0;
    CHECK(std::abs(end.x(0) - 0.3 - dx) <= 1e-6 * dx);
    CHECK(std::abs(end.p(0)) <= 1e-6 * dx);
  }
}

TEST_CASE("rest trajectories follow the Lagrangian flow and land on mu", "[classical_sim]") {
  const auto d = cleave_design();
  const auto model = force_from_design(d);
  for (double xi : {-2.0, -0.3, 0.1, 0.45, 1.7}) {
    std::vector<TrajectorySample> trace;
    integrate_rescaled({vec1(xi), vec1(0.0)}, model, 8192, &trace, 64);
    double dev = 0;
    for (const auto& s : trace) dev = std::max(dev, std::abs(s.x(0) - d.X(vec1(xi), s.tau)(0)));
    CHECK(dev <= 1e-6);
    const auto end = integrate_converged({vec1(xi), vec1(0.0)}, model).end;
    CHECK(std::abs(end.x(0) - d.map()(vec1(xi))(0)) <= 1e-6 * std::max(1.0, std::abs(end.x(0))));
    CHECK(std::abs(end.p(0)) <= 1e-6);
  }
}

TEST_CASE("phase-space flow is symplectic", "[classical_sim]") {
  for (const auto& d : {cleave_design(), stretch_design()}) {
    const auto model = force_from_design(d);
    const int D = d.dim();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int s = 0; s < 10; ++s) {
      Vec x(D);
      for (int k = 0; k < D; ++k) x(k) = u(rng);
      if (D == 1 && std::abs(std::abs(x(0)) - 0.5) < 0.02) continue;
      const auto fr = phase_space_map(x, Vec::Zero(D), model, 16.0);
      const Mat E = fr.J.transpose() * fr.L - Mat::Identity(D, D);
      CHECK(E.jacobiSvd().singularValues()(0) <= 1e-5);
      CHECK(std::abs(fr.J.determinant() * fr.L.determinant() - 1) <= 1e-5);
      // At rest the endpoint Jacobian is the map's Jacobian.
      CHECK((fr.J - d.map().jacobian(x)).norm() <= 1e-5 * fr.J.norm());
      CHECK(fr.balance_residual.norm() <= 1e-6);
    }
  }
}

TEST_CASE("volume-preserving map gives unit Jacobian determinants", "[classical_sim]") {
  const double b = 1.0 / std::sqrt(14.0);
  MapParams p;
  p.dim = 2;
  p.matrix = Mat(2, 2);
  p.matrix << 5 * b, -b, -b, 3 * b;
  const auto d = build_global_design(builtin_map(MapKind::linear_matrix, p), make_schedule(ScheduleKind::sine_sq), 1.0,
                                     Region::cube(2, 8));
  const auto fr = phase_space_map(vec2(0.4, -0.9), Vec::Zero(2), force_from_design(d), 16.0);
  CHECK(std::abs(fr.J.determinant() - 1) <= 1e-5);
  CHECK(std::abs(fr.L.determinant() - 1) <= 1e-5);
}

TEST_CASE("mapped ensemble marginal matches the pushforward", "[classical_sim]") {
  const Grid g = make_grid(2, -8, 8, 128);
  const auto psi = gaussian_packet(g, 0.6, Vec::Zero(2), Vec::Zero(2));
  const auto d = stretch_design();
  const auto rho = density_of(psi);
  const auto ens = sample_positions(rho, 20000, 11);
  const auto rep = liouville_check(ens, force_from_design(d), pushforward_density(rho, d.map()), 16.0, 20, 2048);
  CHECK(rep.max_det_error <= 1e-5);
  CHECK(rep.max_symplectic_error <= 1e-5);
  CHECK(rep.marginal_l1 <= 3.0 * rep.marginal_noise);
}

TEST_CASE("sampling is reproducible from its seed", "[classical_sim]") {
  const Grid g = make_grid(1, -8, 8, 256);
  const auto rho = density_of(gaussian_packet(g, 1.0, 0.0, 0.0));
  const auto a = sample_positions(rho, 50, 5), b = sample_positions(rho, 50, 5), c = sample_positions(rho, 50, 6);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i](0) == b[i](0));
  CHECK(a[0](0) != c[0](0));
}

TEST_CASE("unbalanced schedule leaves rest trajectories moving", "[classical_sim]") {
  MapParams p;
  p.offset = vec1(1.0);
  const auto d = ImpulseDesign(builtin_map(MapKind::translation, p), make_unbalanced_schedule(1.0), 1.0);
  const auto end = integrate_converged({vec1(0.0), vec1(0.0)}, force_from_design(d)).end;
  // p_f = m d integral of gddot = m d gdot(T).
  CHECK(std::abs(end.p(0) - 1.0) <= 1e-6);
}

TEST_CASE("local wavevector follows the map's stretch", "[classical_sim]") {
  const Grid g = make_grid(1, -16, 16, 4096);
  MapParams p;
  const auto map = builtin_map(MapKind::cleave, p);
  const double k = 12;
  const auto pred = predicted_deformation(gaussian_packet(g, 1.0, k, 0.0), map, vec1(k));
  const auto rep = wkb_wavevector_check(pred, k, map, 0.0, 1.5);
  CHECK(std::abs(rep.k_expected - 2.0) <= 1e-12);
  CHECK(rep.within_resolution);
  CHECK_THROWS_AS(wkb_wavevector_check(pred, 200.0, map, 0.0, 1.5), InvalidArgument);
}
