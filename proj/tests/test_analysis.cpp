#include "qimpulse/qimpulse.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>

using namespace qimpulse;

TEST_CASE("log-log slope recovers power laws", "[analysis]") {
  const std::vector<double> x = {0.2, 0.1, 0.05, 0.025};
  for (double p : {0.5, 1.0, 2.0}) {
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 * std::pow(v, p));
    CHECK(std::abs(loglog_slope(x, y) - p) <= 1e-12);
  }
  CHECK(std::isnan(loglog_slope({1.0}, {1.0})));
  std::vector<ConvergenceRow> rows;
  for (double v : {0.4, 0.2, 0.1, 0.05}) rows.push_back({v, v * v, 0, 0, 0, 0});
  rows[0].one_minus_fidelity = 1.0;  // ignored: only the three smallest count
  CHECK(std::abs(fit_slope(rows) - 2.0) <= 1e-12);
}

TEST_CASE("epsilon scan of the harmonic half period is flat", "[analysis]") {
  const Grid g = make_grid(1, -8, 8, 2048);
  const auto psi = gaussian_packet(g, 0.6, 0.0, 1.0);
  Wavefunction pred(g);
  for (std::size_t j = 0; j < g.size(); ++j) pred.values[j] = psi.values[(g.size() - j) % g.size()];
  ScanTarget t;
  t.id = "harmonic";
  t.grid = g;
  t.run = [&](double eps) {
    PropagationSpec s;
    s.epsilon = eps;
    s.impulse = PotentialImpulse{[](const Vec& x, double) { return 0.5 * kPi * kPi * x(0) * x(0); }, 1.0, {}};
    return std::make_pair(propagate_impulse(psi, s), pred);
  };
  const auto table = run_epsilon_scan(t, {0.1, 0.4, 0.2});
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].epsilon == 0.4);  // sorted descending
  for (const auto& r : table.rows) CHECK(r.one_minus_fidelity <= 1e-6);
}

TEST_CASE("resource guard refuses oversized scans", "[analysis]") {
  ScanTarget t;
  t.id = "big";
  t.grid = make_grid(3, -1, 1, 512);
  t.projected_steps = [](double eps) { return static_cast<std::size_t>(1e5 / eps); };
  t.run = [](double) -> std::pair<PropagationResult, Wavefunction> { throw Error("must not run"); };
  CHECK_THROWS_AS(run_epsilon_scan(t, {0.1}), NumericalGuard);
  CHECK_THROWS_AS(run_epsilon_scan(t, {}), InvalidArgument);
}

TEST_CASE("convergence tables serialize", "[analysis]") {
  ConvergenceTable t;
  t.scenario = "demo";
  t.rows = {{0.2, 1e-2, 0.1, 0.05, 1.5, 1024}, {0.1, 5e-3, 0.05, 0.02, 2.5, 2048}};
  t.slope = fit_slope(t.rows);
  CHECK(t.monotone_decreasing());
  const auto j = to_json(t, false);
  CHECK(j["rows"].size() == 2);
  CHECK_FALSE(j["rows"][0].contains("runtime_s"));
  CHECK(to_json(t)["rows"][1]["runtime_s"] == 2.5);
  const auto path = (std::filesystem::temp_directory_path() / "qimpulse_conv.csv").string();
  write_convergence_csv(t, path);
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 4);
  t.rows[1].one_minus_fidelity = 2e-2;
  CHECK_FALSE(t.monotone_decreasing());
}
