// impulse: run, list and validate scenario configurations.
//
// Exit codes: 0 success, 2 unreadable or malformed config, 3 invalid config,
// 4 numerical guard, 1 anything else.
// IMPULSE_OUTPUT_ROOT sets the artifact root (default ./impulse_runs),
// IMPULSE_THREADS the number of epsilon values run concurrently.

#include "qimpulse/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int fail(int code, const std::string& kind, const std::string& msg) {
  std::cerr << "impulse: " << kind << ": " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace qimpulse;
  CLI::App app{"Quantum super-impulse design and simulation"};
  app.require_subcommand(1);
  std::string config_path;
  auto* run = app.add_subcommand("run", "run a scenario and write its artifacts");
  run->add_option("config", config_path, "JSON configuration")->required();
  auto* validate = app.add_subcommand("validate", "check a configuration without running it");
  validate->add_option("config", config_path, "JSON configuration")->required();
  auto* list = app.add_subcommand("list", "list the scenario catalog");
  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const auto& e : catalog()) std::cout << e.name << "\t" << e.summary << "\n";
      return 0;
    }
    const ScenarioConfig cfg = load_config(config_path);
    const RunContext ctx = context_from_env();
    if (validate->parsed()) {
      build_setup(cfg);
      std::cout << "valid: " << cfg.scenario << "\n";
      return 0;
    }
    const auto dir = output_dir_for(cfg);
    std::cout << "running " << cfg.scenario << " -> " << dir.string() << "\n";
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = run_scenario(cfg, ctx, dir);
    if (result.table) {
      for (const auto& r : result.table->rows) {
        std::cout << "  eps=" << r.epsilon << "  1-F=" << r.one_minus_fidelity << "  L1=" << r.l1_density
                  << "  phase_rms=" << r.phase_rms << "  steps=" << r.nsteps << "  " << r.runtime_s << " s\n";
      }
      std::cout << "  slope=" << result.table->slope << "\n";
    }
    std::cout << "done in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
              << " s\n";
    return 0;
  } catch (const ConfigParseError& e) {
    return fail(2, "parse error", e.what());
  } catch (const NumericalGuard& e) {
    return fail(4, "numerical guard", e.what());
  } catch (const DegenerateDensity& e) {
    return fail(4, "numerical guard", e.what());
  } catch (const InvalidArgument& e) {
    return fail(3, "validation error", e.what());
  } catch (const std::exception& e) {
    return fail(1, "error", e.what());
  }
}
