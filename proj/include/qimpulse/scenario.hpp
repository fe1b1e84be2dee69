#pragma once

// Scenario catalog, JSON configuration and artifact emission for the CLI.

#include "qimpulse/analysis.hpp"
#include "qimpulse/classical_sim.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <future>
#include <map>

namespace qimpulse {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Malformed configuration text (exit 2).
class ConfigParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed configuration with invalid content (exit 3).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// ---------------------------------------------------------------------------
// Catalog

struct CatalogEntry {
  std::string name;
  std::string summary;
  json defaults;
};

inline const json& base_defaults() {
  static const json j = R"({
    "schema_version": 1,
    "map": {"kind": "identity"},
    "schedule": {"kind": "sine_sq", "T": 1.0},
    "state": {"sigma": 1.0, "k": [0.0], "center": [0.0]},
    "grid": {"bounds": [[-16.0, 16.0]], "npoints": [4096]},
    "epsilons": [0.2, 0.1, 0.05, 0.025],
    "mass": 1.0,
    "hbar": 1.0,
    "gpe_g": 0.0,
    "background": {"kind": "none", "omega": 1.0},
    "nu_kind": "sine",
    "force": 1.0,
    "paint": {"amplitude": 0.0, "wavenumber": 1.0},
    "seed": 12345,
    "classical_samples": 100,
    "output_dir": ""
  })"_json;
  return j;
}

inline const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = {
      {"toy_ordinary", "uniform force F0/eps over eps T: momentum kick F0 T, no displacement",
       R"({"state": {"sigma": 1.0, "k": [10.0], "center": [0.0]}, "nu_kind": "uniform"})"_json},
      {"toy_super", "force +F0 then -F0 (scaled 1/eps^2): displacement F0 T^2 / 4m, no kick",
       R"({"state": {"sigma": 1.0, "k": [10.0], "center": [0.0]}})"_json},
      {"cleave", "piecewise-linear cleave map (a=0.5, b=3): global design, eps scan, classical flow",
       R"({"map": {"kind": "cleave", "a": 0.5, "b": 3.0}})"_json},
      {"tanh_cleave", "smoothed cleave x + (b-a) tanh(x/a): numerically inverted trajectories",
       R"({"map": {"kind": "tanh_cleave", "a": 0.5, "b": 3.0}})"_json},
      {"reflect_local", "reflection of a shifted packet via monotone rearrangement plus corrective phase",
       R"({"map": {"kind": "reflection"}, "state": {"sigma": 1.0, "k": [4.0], "center": [2.0]},
           "grid": {"bounds": [[-12.0, 12.0]], "npoints": [4096]}})"_json},
      {"harmonic_reflect", "half period of U2 = m omega^2 x^2 / 2 with omega = pi/T: exact reflection at any eps",
       R"({"state": {"sigma": 0.5, "k": [4.0], "center": [1.5]},
           "grid": {"bounds": [[-8.0, 8.0]], "npoints": [8192]}})"_json},
      {"linear_stretch", "symmetric positive-definite linear map in two dimensions",
       R"({"map": {"kind": "linear_matrix", "matrix": [[1.4, 0.2], [0.2, 0.8]]},
           "state": {"sigma": 0.5, "k": [0.0, 0.0], "center": [0.0, 0.0]},
           "grid": {"bounds": [[-6.0, 6.0], [-6.0, 6.0]], "npoints": [512, 512]}})"_json},
      {"rotation_local", "pi/4 rotation of an anisotropic Gaussian realized by the symmetric map M_bar",
       R"({"map": {"kind": "linear_matrix",
                   "matrix": [[1.3363062095621219, -0.2672612419124244], [-0.2672612419124244, 0.8017837257372732]]},
           "state": {"precision": [[3.0, 0.0], [0.0, 1.0]], "k": [0.0, 0.0], "center": [0.0, 0.0]},
           "grid": {"bounds": [[-7.0, 7.0], [-7.0, 7.0]], "npoints": [512, 512]},
           "epsilons": [0.05, 0.025]})"_json},
      {"hybrid_demo", "simultaneous deformation and phase paint, against the two-step pipeline",
       R"({"map": {"kind": "scaling", "factor": 1.5},
           "state": {"sigma": 1.0, "k": [0.0], "center": [0.5]},
           "paint": {"amplitude": 1.5, "wavenumber": 1.0}})"_json},
      {"gpe_demo", "the same deformation under the Gross-Pitaevskii equation",
       R"({"map": {"kind": "scaling", "factor": 1.5}, "gpe_g": 1.25})"_json},
      {"unbalanced_demo", "translation driven by an unbalanced schedule, with its balanced counterpart",
       R"({"map": {"kind": "translation", "offset": [1.0]},
           "schedule": {"kind": "unbalanced", "T": 1.0},
           "state": {"sigma": 3.0, "k": [0.0], "center": [0.0]},
           "grid": {"bounds": [[-32.0, 32.0]], "npoints": [4096]}})"_json},
  };
  return entries;
}

inline const CatalogEntry& find_scenario(const std::string& name) {
  for (const auto& e : catalog()) {
    if (e.name == name) return e;
  }
  throw ConfigError("unknown scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// Configuration

struct ScenarioConfig {
  std::string scenario;
  json map;
  std::string schedule_kind;
  double T = 1;
  double sigma = 1;
  std::vector<double> k, center;
  std::optional<Mat> precision;
  std::vector<std::pair<double, double>> bounds;
  std::vector<std::size_t> npoints;
  std::vector<double> epsilons;
  double mass = 1, hbar = 1, gpe_g = 0;
  std::string background;
  double background_omega = 1;
  NuKind nu_kind = NuKind::sine;
  double force = 1;
  double paint_amplitude = 0, paint_wavenumber = 1;
  unsigned seed = 12345;
  std::size_t classical_samples = 100;
  std::string output_dir;
  json merged;  // defaults + user overrides, echoed into the artifacts

  int dim() const { return static_cast<int>(npoints.size()); }
};

namespace detail {

inline void check_keys(const json& j, const json& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.contains(it.key())) throw ConfigError("unknown key '" + where + it.key() + "'");
  }
}

template <class T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + where + key + "' is missing or has the wrong type");
  }
}

inline Mat matrix_from(const json& j, int D, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != D) throw ConfigError(what + " must be a " + std::to_string(D) + "x" + std::to_string(D) + " matrix");
  Mat M(D, D);
  for (int r = 0; r < D; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != D) throw ConfigError(what + " has a malformed row");
    for (int c = 0; c < D; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw ConfigError(what + " entries must be numbers");
      M(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return M;
}

inline Vec vec_from(const std::vector<double>& v) {
  Vec out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
  return out;
}

}  // namespace detail

/// Parses JSON text (ConfigParseError on malformed text), merges it onto the
/// scenario's defaults and validates it (ConfigError).
inline ScenarioConfig parse_config(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigParseError("configuration must be a JSON object");
  if (!user.contains("scenario") || !user["scenario"].is_string()) throw ConfigError("missing string key 'scenario'");
  if (!user.contains("schema_version")) throw ConfigError("missing key 'schema_version'");
  if (!user["schema_version"].is_number_integer() || user["schema_version"].get<int>() != kSchemaVersion) {
    throw ConfigError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  const auto& entry = find_scenario(user["scenario"].get<std::string>());

  json allowed = base_defaults();
  allowed["scenario"] = "";
  detail::check_keys(user, allowed, "");
  for (const char* sub : {"schedule", "state", "grid", "background", "paint"}) {
    if (user.contains(sub)) {
      if (!user[sub].is_object()) throw ConfigError(std::string("'") + sub + "' must be an object");
      json sub_allowed = base_defaults()[sub];
      if (std::string(sub) == "state") sub_allowed["precision"] = nullptr;
      detail::check_keys(user[sub], sub_allowed, std::string(sub) + ".");
    }
  }
  if (user.contains("map")) {
    if (!user["map"].is_object()) throw ConfigError("'map' must be an object");
    detail::check_keys(user["map"], R"({"kind":0,"a":0,"b":0,"offset":0,"factor":0,"matrix":0})"_json, "map.");
  }

  json merged = base_defaults();
  merged.merge_patch(entry.defaults);
  // A user-supplied map replaces the default map wholesale.
  if (user.contains("map")) merged["map"] = json::object();
  merged.merge_patch(user);
  merged["scenario"] = entry.name;

  ScenarioConfig c;
  c.merged = merged;
  c.scenario = entry.name;
  c.map = merged["map"];
  const auto& sch = merged["schedule"];
  c.schedule_kind = detail::get_as<std::string>(sch, "kind", "schedule.");
  c.T = detail::get_as<double>(sch, "T", "schedule.");
  const auto& st = merged["state"];
  c.k = detail::get_as<std::vector<double>>(st, "k", "state.");
  c.center = detail::get_as<std::vector<double>>(st, "center", "state.");
  const auto& gr = merged["grid"];
  const auto bounds = detail::get_as<std::vector<std::vector<double>>>(gr, "bounds", "grid.");
  for (const auto& b : bounds) {
    if (b.size() != 2) throw ConfigError("grid.bounds entries must be [min, max]");
    c.bounds.emplace_back(b[0], b[1]);
  }
  c.npoints = detail::get_as<std::vector<std::size_t>>(gr, "npoints", "grid.");
  c.epsilons = detail::get_as<std::vector<double>>(merged, "epsilons", "");
  c.mass = detail::get_as<double>(merged, "mass", "");
  c.hbar = detail::get_as<double>(merged, "hbar", "");
  c.gpe_g = detail::get_as<double>(merged, "gpe_g", "");
  c.background = detail::get_as<std::string>(merged["background"], "kind", "background.");
  c.background_omega = detail::get_as<double>(merged["background"], "omega", "background.");
  c.force = detail::get_as<double>(merged, "force", "");
  c.paint_amplitude = detail::get_as<double>(merged["paint"], "amplitude", "paint.");
  c.paint_wavenumber = detail::get_as<double>(merged["paint"], "wavenumber", "paint.");
  c.seed = detail::get_as<unsigned>(merged, "seed", "");
  c.classical_samples = detail::get_as<std::size_t>(merged, "classical_samples", "");
  c.output_dir = detail::get_as<std::string>(merged, "output_dir", "");
  try {
    c.nu_kind = nu_kind_from_string(detail::get_as<std::string>(merged, "nu_kind", ""));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  const int D = c.dim();
  if (c.bounds.size() != c.npoints.size()) throw ConfigError("grid.bounds and grid.npoints differ in length");
  if (D < 1 || D > 3) throw ConfigError("grid must have 1, 2 or 3 axes");
  if (static_cast<int>(c.k.size()) != D || static_cast<int>(c.center.size()) != D) {
    throw ConfigError("state.k and state.center must have one entry per grid axis");
  }
  if (st.contains("precision") && !st["precision"].is_null()) c.precision = detail::matrix_from(st["precision"], D, "state.precision");
  c.sigma = detail::get_as<double>(st, "sigma", "state.");
  if (!(c.sigma > 0.0)) throw ConfigError("state.sigma must be positive");
  if (c.epsilons.empty()) throw ConfigError("epsilons must not be empty");
  for (double e : c.epsilons) {
    if (!(e > 0.0 && e <= 1.0)) throw ConfigError("every epsilon must lie in (0, 1]");
  }
  if (!(c.mass > 0.0) || !(c.hbar > 0.0)) throw ConfigError("mass and hbar must be positive");
  if (!(c.T > 0.0)) throw ConfigError("schedule.T must be positive");
  if (c.schedule_kind != "sine_sq" && c.schedule_kind != "quintic" && c.schedule_kind != "unbalanced") {
    throw ConfigError("unknown schedule kind '" + c.schedule_kind + "'");
  }
  if (c.background != "none" && c.background != "harmonic") throw ConfigError("background.kind must be none or harmonic");
  if (c.gpe_g < 0.0) throw ConfigError("gpe_g must be non-negative");
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError("cannot read configuration file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Objects the configuration describes. Throws ConfigError for bad values.
struct ScenarioSetup {
  Grid grid;
  Wavefunction psi_i;
  Vec carrier;
  std::optional<MapSpec> map;
  Schedule schedule;
  Region region;
};

inline MapSpec map_from_config(const json& m, int D) {
  const std::string kind = detail::get_as<std::string>(m, "kind", "map.");
  MapParams p;
  p.dim = D;
  p.a = m.value("a", 0.5);
  p.b = m.value("b", 3.0);
  p.factor = m.value("factor", 1.0);
  if (m.contains("offset")) p.offset = detail::vec_from(detail::get_as<std::vector<double>>(m, "offset", "map."));
  if (m.contains("matrix")) p.matrix = detail::matrix_from(m["matrix"], D, "map.matrix");
  try {
    const MapKind k = map_kind_from_string(kind);
    if (k == MapKind::translation && !m.contains("offset")) throw ConfigError("translation map needs 'offset'");
    if (k == MapKind::linear_matrix && !m.contains("matrix")) throw ConfigError("linear_matrix map needs 'matrix'");
    return builtin_map(k, p);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("map: ") + e.what());
  }
}

inline ScenarioSetup build_setup(const ScenarioConfig& c) {
  ScenarioSetup s;
  try {
    s.grid = make_grid(c.dim(), c.bounds, c.npoints);
    s.carrier = detail::vec_from(c.k);
    const Vec center = detail::vec_from(c.center);
    s.psi_i = c.precision ? gaussian_state(s.grid, *c.precision, center, s.carrier, c.mass, c.hbar)
                          : gaussian_packet(s.grid, c.sigma, s.carrier, center, c.mass, c.hbar);
    s.schedule = c.schedule_kind == "unbalanced" ? make_unbalanced_schedule(c.T)
                                                 : make_schedule(c.schedule_kind == "quintic" ? ScheduleKind::quintic
                                                                                              : ScheduleKind::sine_sq,
                                                                 c.T);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  s.map = map_from_config(c.map, c.dim());
  Vec lo(c.dim()), hi(c.dim());
  for (int d = 0; d < c.dim(); ++d) {
    lo(d) = s.grid.axis(d).min;
    hi(d) = s.grid.axis(d).max;
  }
  s.region = {lo, hi};
  return s;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  const std::filesystem::path& dir() const { return dir_; }

  /// Absolute path for a relative artifact name, registering it for the
  /// manifest and creating parent directories.
  std::string path(const std::string& rel) {
    const auto p = dir_ / rel;
    std::filesystem::create_directories(p.parent_path());
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
    return p.string();
  }

  void write_json(const std::string& rel, const json& j) {
    std::ofstream out(path(rel));
    out << j.dump(2) << "\n";
  }

  void write_manifest() {
    json m;
    m["schema_version"] = kSchemaVersion;
    m["files"] = json::array();
    auto sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& rel : sorted) {
      const auto p = (dir_ / rel).string();
      m["files"].push_back({{"path", rel}, {"bytes", std::filesystem::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    std::ofstream out(dir_ / "manifest.json");
    out << m.dump(2) << "\n";
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

struct RunContext {
  std::size_t threads = 1;
  bool write_artifacts = true;
};

inline RunContext context_from_env() {
  RunContext ctx;
  if (const char* t = std::getenv("IMPULSE_THREADS")) {
    try {
      ctx.threads = std::max<std::size_t>(1, static_cast<std::size_t>(std::stoul(t)));
    } catch (...) {
      throw ConfigError("IMPULSE_THREADS must be a positive integer");
    }
  }
  return ctx;
}

inline std::filesystem::path output_dir_for(const ScenarioConfig& c) {
  std::filesystem::path root = "impulse_runs";
  if (const char* r = std::getenv("IMPULSE_OUTPUT_ROOT")) root = r;
  if (!c.output_dir.empty()) {
    std::filesystem::path o = c.output_dir;
    return o.is_absolute() ? o : root / o;
  }
  return root / c.scenario;
}

namespace detail {

inline std::string eps_tag(double eps) {
  std::ostringstream os;
  os << "eps_" << eps;
  return os.str();
}

inline void write_observables(const PropagationResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  const int D = r.psi.grid.dim();
  out << "tau";
  for (int d = 0; d < D; ++d) out << ",mean_x" << d;
  for (int d = 0; d < D; ++d) out << ",mean_p" << d;
  out << ",norm\n";
  for (const auto& row : r.observables) {
    out << row.tau;
    for (int d = 0; d < D; ++d) out << "," << row.mean_x(d);
    for (int d = 0; d < D; ++d) out << "," << row.mean_p(d);
    out << "," << row.norm << "\n";
  }
}

inline void write_psi(ArtifactWriter& w, const std::string& stem, const Wavefunction& psi) {
  if (psi.grid.dim() == 1) write_wavefunction_csv(psi, w.path(stem + ".csv"));
  else write_wavefunction_binary(psi, w.path(stem + ".qiwf"));
}

/// Runs `job(eps)` for every epsilon, `threads` at a time, keeping order.
template <class R>
std::vector<R> fan_out(const std::vector<double>& eps, std::size_t threads, const std::function<R(double)>& job) {
  std::vector<R> out;
  out.reserve(eps.size());
  if (threads <= 1) {
    for (double e : eps) out.push_back(job(e));
    return out;
  }
  for (std::size_t start = 0; start < eps.size(); start += threads) {
    std::vector<std::future<R>> fs;
    for (std::size_t i = start; i < std::min(eps.size(), start + threads); ++i) {
      fs.push_back(std::async(std::launch::async, job, eps[i]));
    }
    for (auto& f : fs) out.push_back(f.get());
  }
  return out;
}

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json mat_json(const Mat& m) {
  json a = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

inline json row_json(const ConvergenceRow& r) {
  return {{"epsilon", r.epsilon},
          {"one_minus_fidelity", r.one_minus_fidelity},
          {"l1_density", r.l1_density},
          {"phase_rms", r.phase_rms},
          {"nsteps", r.nsteps}};
}

/// A coarse copy of the grid (at most `n` points per axis) for design tables.
inline Grid coarse_grid(const Grid& g, std::size_t n) {
  std::vector<Axis> axes;
  for (const auto& a : g.axes()) axes.push_back({a.min, a.max, std::min(a.n, n)});
  return Grid(axes);
}

}  // namespace detail

/// Outcome of one scenario run: metrics (deterministic, no runtimes) plus
/// the convergence table when the scenario has one.
struct ScenarioResult {
  json metrics;
  std::optional<ConvergenceTable> table;
};

// ---------------------------------------------------------------------------
// Shared pieces of the runners

namespace detail {

struct EpsRun {
  PropagationResult result;
  ConvergenceRow row;
};

/// Scan of one impulse against one prediction, artifacts per epsilon.
inline ConvergenceTable scan_against(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                     ArtifactWriter* w, const std::function<PropagationSpec(double)>& spec_for,
                                     const Wavefunction& pred, std::vector<PropagationResult>* keep = nullptr) {
  ScanTarget target;
  target.id = c.scenario;
  target.grid = s.grid;
  auto eps = c.epsilons;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  std::function<EpsRun(double)> job = [&](double e) {
    const auto t0 = std::chrono::steady_clock::now();
    PropagationResult r = propagate_impulse(s.psi_i, spec_for(e));
    const auto rep = compare(r.psi, pred);
    ConvergenceRow row{e, std::max(0.0, 1.0 - rep.fidelity), rep.l1_density, rep.phase_rms,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), r.nsteps};
    return EpsRun{std::move(r), row};
  };
  auto runs = fan_out<EpsRun>(eps, ctx.threads, job);
  ConvergenceTable t;
  t.scenario = c.scenario;
  for (auto& run : runs) {
    t.rows.push_back(run.row);
    if (w) {
      const auto tag = eps_tag(run.row.epsilon);
      write_observables(run.result, w->path(tag + "/observables.csv"));
      write_psi(*w, tag + "/psi_final", run.result.psi);
    }
    if (keep) keep->push_back(std::move(run.result));
  }
  t.slope = fit_slope(t.rows);
  if (w) {
    write_convergence_csv(t, w->path("convergence.csv"));
    w->write_json("convergence.json", to_json(t, false));
  }
  return t;
}

/// Classical checks on `n` sample origins drawn from rho_i.
inline json classical_checks(const ImpulseDesign& d, const ScenarioSetup& s, const ScenarioConfig& c,
                             ArtifactWriter* w, const std::function<bool(const Vec&)>& admissible = {}) {
  const DensityField rho = density_of(s.psi_i);
  auto candidates = sample_positions(rho, 4 * c.classical_samples, c.seed);
  std::vector<Vec> pts;
  for (const auto& x : candidates) {
    if (pts.size() >= c.classical_samples) break;
    if (!admissible || admissible(x)) pts.push_back(x);
  }
  ForceModel model = force_from_design(d);
  const double scale = s.grid.scale();
  const int D = s.grid.dim();
  double max_sym = 0, max_det = 0, max_end = 0, max_rest = 0, max_balance = 0;
  json flows = json::array();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto fr = phase_space_map(pts[i], Vec::Zero(D), model, scale);
    const Vec target = d.map()(pts[i]);
    max_end = std::max(max_end, (fr.x_f - target).norm() / std::max(1.0, target.norm()));
    max_rest = std::max(max_rest, fr.rest_residual);
    max_balance = std::max(max_balance, fr.balance_residual.norm());
    const Mat E = fr.J.transpose() * fr.L - Mat::Identity(D, D);
    max_sym = std::max(max_sym, E.jacobiSvd().singularValues()(0));
    max_det = std::max(max_det, std::abs(fr.J.determinant() * fr.L.determinant() - 1.0));
    if (i < 10) {
      flows.push_back({{"x_i", vec_json(pts[i])},
                       {"x_f", vec_json(fr.x_f)},
                       {"p_f", vec_json(fr.p_f)},
                       {"J", mat_json(fr.J)},
                       {"L", mat_json(fr.L)},
                       {"balance_residual", vec_json(fr.balance_residual)},
                       {"rest_residual", fr.rest_residual},
                       {"nsteps", fr.nsteps}});
    }
  }
  if (w && !pts.empty()) {
    w->write_json("flow.json", flows);
    std::vector<TrajectorySample> trace;
    integrate_rescaled({pts[0], Vec::Zero(D)}, model, 2048, &trace, 16);
    std::ofstream out(w->path("trajectory.csv"));
    out << std::setprecision(17) << "tau";
    for (int k = 0; k < D; ++k) out << ",x" << k;
    for (int k = 0; k < D; ++k) out << ",p" << k;
    out << ",X_design" << "\n";
    for (const auto& t : trace) {
      out << t.tau;
      for (int k = 0; k < D; ++k) out << "," << t.x(k);
      for (int k = 0; k < D; ++k) out << "," << t.p(k);
      out << "," << (t.x - d.X(pts[0], t.tau)).norm() << "\n";
    }
  }
  return {{"samples", pts.size()},
          {"max_symplectic_error", max_sym},
          {"max_det_error", max_det},
          {"max_endpoint_error", max_end},
          {"max_rest_residual", max_rest},
          {"max_balance_residual", max_balance}};
}

inline void write_design(const ImpulseDesign& d, const Grid& g, ArtifactWriter* w) {
  if (!w) return;
  const double T = d.T();
  write_design_table(d, coarse_grid(g, g.dim() == 1 ? 256 : 64), {0.0, 0.25 * T, 0.5 * T, 0.75 * T, T},
                     w->path("design_table.csv"));
}

inline std::function<double(const Vec&, double)> background_of(const ScenarioConfig& c) {
  if (c.background != "harmonic") return {};
  const double m = c.mass, w = c.background_omega;
  return [m, w](const Vec& x, double) { return 0.5 * m * w * w * x.squaredNorm(); };
}

inline json table_json(const ConvergenceTable& t) { return to_json(t, false); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Runners

inline ScenarioResult run_toy(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                              ArtifactWriter* w, bool super) {
  if (s.grid.dim() != 1) throw ConfigError("toy scenarios are one-dimensional");
  const double F0 = c.force, T = c.T, m = c.mass;
  ScenarioResult out;
  json& M = out.metrics;
  const Vec x0 = s.psi_i.mean_position();
  const Vec p0 = mean_momentum(s.psi_i);
  std::function<PropagationSpec(double)> spec_for;
  Wavefunction pred;
  if (!super) {
    const PhasePaint paint = design_ordinary([F0, T](const Vec& x) { return F0 * T * x(0); }, NuKind::uniform, T);
    pred = apply_phase_paint(s.psi_i, paint);
    spec_for = [paint, &c](double e) {
      PropagationSpec sp;
      sp.epsilon = e;
      sp.impulse = OrdinaryImpulse{paint};
      sp.background = detail::background_of(c);
      return sp;
    };
    M["expected_dp"] = F0 * T;
  } else {
    auto U2 = [F0, T](const Vec& x, double tau) { return tau < 0.5 * T ? -x(0) * F0 : x(0) * F0; };
    const double dx = F0 * T * T / (4.0 * m);
    MapParams tp;
    tp.dim = 1;
    tp.offset = vec1(dx);
    pred = predicted_deformation(s.psi_i, builtin_map(MapKind::translation, tp), s.carrier);
    spec_for = [U2, T, &c](double e) {
      PropagationSpec sp;
      sp.epsilon = e;
      sp.impulse = PotentialImpulse{U2, T, {0.5 * T}};
      sp.background = detail::background_of(c);
      return sp;
    };
    // Classical rest trajectory in the rescaled frame.
    const ForceModel fm = force_from_potential(U2, 1, T, m);
    const auto ce = integrate_converged({vec1(0.0), vec1(0.0)}, fm);
    M["classical"] = {{"dx", ce.end.x(0)}, {"dp", ce.end.p(0)}, {"nsteps", ce.nsteps}};
    M["expected_dx"] = dx;
  }
  std::vector<PropagationResult> runs;
  const auto table = detail::scan_against(c, s, ctx, w, spec_for, pred, &runs);
  json per = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double e = table.rows[i].epsilon;
    const Vec xf = runs[i].psi.mean_position();
    const Vec pf = mean_momentum(runs[i].psi);
    json r = {{"epsilon", e}, {"dx_raw", xf(0) - x0(0)}, {"dp", pf(0) - p0(0)}};
    // Free drift during the window: the fast-frame momentum eps <p> moves the
    // packet by eps <p> T / m whatever the impulse does.
    r["dx_drift_corrected"] = xf(0) - x0(0) - e * p0(0) * T / m;
    per.push_back(r);
  }
  M["per_epsilon"] = per;
  M["convergence"] = detail::table_json(table);
  out.table = table;
  return out;
}

inline ScenarioResult run_global(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                 ArtifactWriter* w) {
  ScenarioResult out;
  json& M = out.metrics;
  const MapSpec& map = *s.map;
  const ImpulseDesign design = build_global_design(map, s.schedule, c.mass, s.region);
  detail::write_design(design, s.grid, w);
  const Wavefunction pred = predicted_deformation(s.psi_i, map, s.carrier);
  if (w) detail::write_psi(*w, "psi_predicted", pred);

  const double gpe = c.gpe_g;
  auto spec_for = [&design, gpe, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = SuperImpulse{design};
    sp.gpe_g = gpe;
    sp.background = detail::background_of(c);
    return sp;
  };
  const auto table = detail::scan_against(c, s, ctx, w, spec_for, pred);
  M["convergence"] = detail::table_json(table);
  out.table = table;

  std::function<bool(const Vec&)> admissible;
  if (map.kind == MapKind::cleave) {
    const double a = c.map.value("a", 0.5);
    const double h = 1e-5 * s.grid.scale();
    admissible = [a, h](const Vec& x) { return std::abs(std::abs(x(0)) - a) > 100.0 * h; };
  }
  M["classical"] = detail::classical_checks(design, s, c, w, admissible);

  if (s.grid.dim() == 1) {
    // Local wavevector of a carrier-bearing packet after the deformation.
    const double kw = 12.0, center = 0.0;
    const Wavefunction probe = gaussian_packet(s.grid, 1.0, kw, center, c.mass, c.hbar);
    const Wavefunction probe_f = predicted_deformation(probe, map, vec1(kw));
    const double half = 0.25 * map.jacobian(vec1(center))(0, 0);
    const auto wk = wkb_wavevector_check(probe_f, kw, map, center, std::max(half, 0.5));
    M["wkb"] = {{"k", kw},
                {"center", center},
                {"k_expected", wk.k_expected},
                {"k_measured", wk.k_measured},
                {"resolution", wk.resolution},
                {"within_resolution", wk.within_resolution}};
  }
  if (gpe > 0.0) {
    // Same scan without the nonlinearity, for reference.
    auto spec0 = [&design, &c](double e) {
      PropagationSpec sp;
      sp.epsilon = e;
      sp.impulse = SuperImpulse{design};
      sp.background = detail::background_of(c);
      return sp;
    };
    const auto t0 = detail::scan_against(c, s, ctx, nullptr, spec0, pred);
    M["linear_reference"] = detail::table_json(t0);
    double rmax = 0.0;
    for (const auto& v : s.psi_i.values) rmax = std::max(rmax, std::norm(v));
    const double kin = c.hbar * c.hbar / (2.0 * c.mass * c.sigma * c.sigma);
    M["nonlinear_energy_scale"] = gpe * rmax;
    M["kinetic_energy_scale"] = kin;
  }
  return out;
}

inline ScenarioResult run_harmonic(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                   ArtifactWriter* w) {
  ScenarioResult out;
  const double m = c.mass, T = c.T, om = kPi / T;
  MapParams rp;
  rp.dim = s.grid.dim();
  Wavefunction pred = predicted_deformation(s.psi_i, builtin_map(MapKind::reflection, rp), s.carrier);
  for (auto& v : pred.values) v *= Complex(0.0, -1.0);
  auto U2 = [m, om](const Vec& x, double) { return 0.5 * m * om * om * x.squaredNorm(); };
  auto spec_for = [U2, T, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = PotentialImpulse{U2, T, {}};
    sp.background = detail::background_of(c);
    return sp;
  };
  std::vector<PropagationResult> runs;
  const auto table = detail::scan_against(c, s, ctx, w, spec_for, pred, &runs);
  json per = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    // Phase of <pred|sim>: zero when the -i prefactor is reproduced.
    const Complex ov = inner_product(pred, runs[i].psi);
    per.push_back({{"epsilon", table.rows[i].epsilon}, {"overlap_phase", std::arg(ov)}});
  }
  out.metrics["per_epsilon"] = per;
  out.metrics["convergence"] = detail::table_json(table);
  out.table = table;
  return out;
}

inline ScenarioResult run_reflect_local(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                        ArtifactWriter* w) {
  if (s.grid.dim() != 1) throw ConfigError("reflect_local is one-dimensional");
  ScenarioResult out;
  json& M = out.metrics;
  const LocalDesign ld = design_local_1d(s.psi_i, *s.map, s.schedule, c.mass, c.nu_kind, s.carrier);
  detail::write_design(ld.super, s.grid, w);
  const double sh = c.center[0], kk = c.k[0];

  // Checks on the support of rho_i (monotone map) and rho_f (paint).
  const DensityField rho_i = density_of(s.psi_i);
  const double rmax = rho_i.max();
  double mubar_err = 0, u2_err = 0, paint_err = 0;
  const double tau_probe[] = {0.1, 0.3, 0.5, 0.8};
  double ds_ref = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < s.grid.size(); ++j) {
    const Vec x = s.grid.point(j);
    if (rho_i.values[j] > kSupportThreshold * rmax) {
      mubar_err = std::max(mubar_err, std::abs(ld.mubar(x)(0) - (x(0) - 2.0 * sh)));
    }
    if (ld.on_support[j]) {
      // x-independent offsets are global phases; compare relative to x = 0.
      if (std::isnan(ds_ref)) ds_ref = ld.deltaS_table[j] + 2.0 * c.hbar * kk * x(0);
      paint_err = std::max(paint_err, std::abs(ld.deltaS_table[j] + 2.0 * c.hbar * kk * x(0) - ds_ref));
    }
  }
  // The rearrangement only defines mu_bar on the support of rho_i, so U2 is
  // checked along the trajectories that start there.
  for (double frac : tau_probe) {
    const double tau = frac * c.T;
    const double gdd = s.schedule.gddot(tau);
    const double u0 = ld.super.U2(vec1(0.0), tau);
    for (std::size_t j = 0; j < s.grid.size(); j += 8) {
      if (!(rho_i.values[j] > kSupportThreshold * rmax)) continue;
      const Vec x = ld.super.X(s.grid.point(j), tau);
      u2_err = std::max(u2_err, std::abs(ld.super.U2(x, tau) - u0 - 2.0 * c.mass * sh * x(0) * gdd));
    }
  }
  M["mubar_max_error"] = mubar_err;
  M["u2_max_error"] = u2_err;
  M["paint_linear_max_error"] = paint_err;
  M["super_only_fidelity"] = fidelity(ld.predicted_bar, ld.predicted);

  const Wavefunction pred = ld.predicted;
  auto spec_for = [&ld, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = LocalImpulse{ld.super, ld.paint};
    sp.background = detail::background_of(c);
    return sp;
  };
  const auto table = detail::scan_against(c, s, ctx, w, spec_for, pred);
  if (w) {
    std::ofstream o(w->path("paint_table.csv"));
    o << std::setprecision(17) << "x,deltaS,on_support\n";
    for (std::size_t j = 0; j < s.grid.size(); ++j) {
      o << s.grid.point(j)(0) << "," << ld.deltaS_table[j] << "," << (ld.on_support[j] ? 1 : 0) << "\n";
    }
  }
  M["convergence"] = detail::table_json(table);
  out.table = table;
  return out;
}

/// Inverse covariance of a density on a grid, from its second moments.
inline Mat fitted_precision(const DensityField& rho) {
  const int D = rho.grid.dim();
  Vec mean = Vec::Zero(D);
  double w = 0;
  for (std::size_t i = 0; i < rho.grid.size(); ++i) {
    mean += rho.values[i] * rho.grid.point(i);
    w += rho.values[i];
  }
  mean /= w;
  Mat cov = Mat::Zero(D, D);
  for (std::size_t i = 0; i < rho.grid.size(); ++i) {
    const Vec d = rho.grid.point(i) - mean;
    cov += rho.values[i] * d * d.transpose();
  }
  cov /= w;
  return cov.inverse();
}

inline ScenarioResult run_rotation(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                   ArtifactWriter* w) {
  if (s.grid.dim() != 2) throw ConfigError("rotation_local runs in two dimensions");
  ScenarioResult out;
  json& M = out.metrics;
  const MapSpec& mubar = *s.map;
  const ImpulseDesign design = build_global_design(mubar, s.schedule, c.mass, s.region);
  detail::write_design(design, s.grid, w);
  // The target: rotation by pi/4 about z (xy block).
  const double r = std::sqrt(0.5);
  MapParams rp;
  rp.dim = 2;
  rp.matrix = Mat(2, 2);
  rp.matrix << r, -r, r, r;
  const MapSpec rot = builtin_map(MapKind::linear_matrix, rp);
  const Wavefunction pred = predicted_deformation(s.psi_i, rot, s.carrier);

  const DensityField rho_i = density_of(s.psi_i);
  const Mat E_bar = fitted_precision(pushforward_density(rho_i, mubar));
  const Mat E_rot = fitted_precision(pushforward_density(rho_i, rot));
  M["E_bar_fitted"] = detail::mat_json(E_bar);
  M["E_rotation_fitted"] = detail::mat_json(E_rot);
  M["det_mubar"] = mubar.jacobian(Vec::Zero(2)).determinant();
  M["certificate_holds_for_rotation"] = certify_gradient_of_convex(rot, s.region, 1000).holds;

  auto spec_for = [&design, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = SuperImpulse{design};
    sp.background = detail::background_of(c);
    return sp;
  };
  std::vector<PropagationResult> runs;
  const auto table = detail::scan_against(c, s, ctx, w, spec_for, pred, &runs);
  if (!runs.empty()) M["E_simulated_smallest_eps"] = detail::mat_json(fitted_precision(density_of(runs.back().psi)));
  M["convergence"] = detail::table_json(table);
  out.table = table;

  // Liouville: det J det L = 1 for the volume-preserving M_bar.
  ForceModel model = force_from_design(design);
  const auto ens = sample_positions(rho_i, 2000, c.seed);
  const auto lv = liouville_check(ens, model, pushforward_density(rho_i, mubar), s.grid.scale(),
                                  std::min<std::size_t>(c.classical_samples, 100));
  M["liouville"] = {{"max_det_error", lv.max_det_error},
                    {"max_symplectic_error", lv.max_symplectic_error},
                    {"marginal_l1", lv.marginal_l1},
                    {"marginal_noise", lv.marginal_noise},
                    {"points", lv.points}};
  return out;
}

inline ScenarioResult run_hybrid(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                 ArtifactWriter* w) {
  if (s.grid.dim() != 1) throw ConfigError("hybrid_demo is one-dimensional");
  ScenarioResult out;
  json& M = out.metrics;
  const double A = c.paint_amplitude, kap = c.paint_wavenumber, hb = c.hbar;
  auto dS = [A, kap, hb](const Vec& x) { return hb * A * std::sin(kap * x(0)); };
  const HybridDesign hd = design_hybrid(*s.map, dS, s.schedule, c.mass, c.nu_kind, s.region);
  detail::write_design(hd.super, s.grid, w);
  const Wavefunction pred = apply_phase_paint(predicted_deformation(s.psi_i, *s.map, s.carrier), hd.paint);

  auto spec_h = [&hd, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = HybridImpulse{hd};
    sp.background = detail::background_of(c);
    return sp;
  };
  auto spec_2 = [&hd, &c](double e) {
    PropagationSpec sp;
    sp.epsilon = e;
    sp.impulse = LocalImpulse{hd.super, hd.paint};
    sp.background = detail::background_of(c);
    return sp;
  };
  std::vector<PropagationResult> hr, tr;
  const auto table = detail::scan_against(c, s, ctx, w, spec_h, pred, &hr);
  const auto table2 = detail::scan_against(c, s, ctx, nullptr, spec_2, pred, &tr);
  json per = json::array();
  for (std::size_t i = 0; i < hr.size(); ++i) {
    per.push_back({{"epsilon", table.rows[i].epsilon},
                   {"fidelity_hybrid", 1.0 - table.rows[i].one_minus_fidelity},
                   {"fidelity_two_step", 1.0 - table2.rows[i].one_minus_fidelity},
                   {"fidelity_hybrid_vs_two_step", fidelity(hr[i].psi, tr[i].psi)}});
  }
  M["per_epsilon"] = per;
  M["convergence"] = detail::table_json(table);
  M["two_step_convergence"] = detail::table_json(table2);
  out.table = table;
  return out;
}

inline ScenarioResult run_unbalanced(const ScenarioConfig& c, const ScenarioSetup& s, const RunContext& ctx,
                                     ArtifactWriter* w) {
  ScenarioResult out;
  json& M = out.metrics;
  const MapSpec& map = *s.map;
  const DensityField rho_i = density_of(s.psi_i);
  const DensityField rho_push = pushforward_density(rho_i, map);
  const Wavefunction pred = predicted_deformation(s.psi_i, map, s.carrier);

  auto study = [&](const Schedule& sched, ArtifactWriter* aw) {
    const ImpulseDesign d = build_global_design(map, sched, c.mass, s.region);
    auto spec_for = [&d, &c](double e) {
      PropagationSpec sp;
      sp.epsilon = e;
      sp.impulse = SuperImpulse{d};
      sp.background = detail::background_of(c);
      return sp;
    };
    std::vector<PropagationResult> runs;
    const auto table = detail::scan_against(c, s, ctx, aw, spec_for, pred, &runs);
    json r;
    json l1 = json::array(), succ = json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      DensityField rho = density_of(runs[i].psi);
      l1.push_back({{"epsilon", table.rows[i].epsilon}, {"l1_to_pushforward", l1_density_error(rho, rho_push)}});
      if (i > 0) {
        succ.push_back({{"epsilon_pair", {table.rows[i - 1].epsilon, table.rows[i].epsilon}},
                        {"phase_rms", phase_rms(runs[i].psi, runs[i - 1].psi)}});
      }
    }
    r["l1_density"] = l1;
    r["successive_phase_rms"] = succ;
    r["integral_gddot"] = integral_gddot(sched);
    ForceModel model = force_from_design(d);
    const auto pts = sample_positions(rho_i, 20, c.seed);
    double rest = 0.0;
    for (const auto& x : pts) rest = std::max(rest, integrate_converged({x, Vec::Zero(x.size())}, model).end.p.norm());
    r["max_rest_residual"] = rest;
    r["convergence"] = detail::table_json(table);
    return r;
  };
  M["unbalanced"] = study(s.schedule, w);
  M["balanced"] = study(make_schedule(ScheduleKind::sine_sq, c.T), nullptr);
  return out;
}

/// Runs the configured scenario. Artifacts go to `dir` when given.
inline ScenarioResult run_scenario(const ScenarioConfig& c, const RunContext& ctx,
                                   std::optional<std::filesystem::path> dir) {
  const ScenarioSetup s = build_setup(c);
  std::optional<ArtifactWriter> writer;
  if (dir) {
    writer.emplace(*dir);
    writer->write_json("config.json", c.merged);
  }
  ArtifactWriter* w = writer ? &*writer : nullptr;
  ScenarioResult r;
  const auto& n = c.scenario;
  if (n == "toy_ordinary") r = run_toy(c, s, ctx, w, false);
  else if (n == "toy_super") r = run_toy(c, s, ctx, w, true);
  else if (n == "harmonic_reflect") r = run_harmonic(c, s, ctx, w);
  else if (n == "reflect_local") r = run_reflect_local(c, s, ctx, w);
  else if (n == "rotation_local") r = run_rotation(c, s, ctx, w);
  else if (n == "hybrid_demo") r = run_hybrid(c, s, ctx, w);
  else if (n == "unbalanced_demo") r = run_unbalanced(c, s, ctx, w);
  else r = run_global(c, s, ctx, w);  // cleave, tanh_cleave, linear_stretch, gpe_demo
  r.metrics["scenario"] = n;
  if (w) {
    w->write_json("metrics.json", r.metrics);
    w->write_manifest();
  }
  return r;
}

}  // namespace qimpulse
