#pragma once

// Declarative experiments: JSON configs, a content-addressed slab cache,
// the runner that writes artifacts and a manifest of check verdicts, and
// the human-readable report.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rwre/core.hpp"
#include "rwre/ctime.hpp"
#include "rwre/environment.hpp"
#include "rwre/lattice.hpp"
#include "rwre/passage.hpp"
#include "rwre/rate.hpp"

namespace rwre {

using json = nlohmann::json;

inline const std::map<std::string, std::string>& module_versions() {
  static const std::map<std::string, std::string> v = {
      {"lattice", "1.0.0"},      {"environment", "1.0.0"},   {"quenched-dp", "1.0.0"},
      {"ctime-solver", "1.0.0"}, {"rate-analysis", "1.0.0"}, {"cli", "1.0.0"},
  };
  return v;
}

/// All validation problems of a config, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> errors) : Error(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid config:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k = {"geometry", "rate", "shape", "mc-check", "ldp", "quench", "even-time", "dump-env"};
  return k;
}

/// Checks each kind can run and the tolerances they read, with defaults.
struct CheckInfo {
  std::string name;
  std::string anchor;
  std::string tolerance;  // key into the tolerance map; empty for exact checks
};

inline const std::map<std::string, std::vector<CheckInfo>>& kind_checks() {
  static const std::map<std::string, std::vector<CheckInfo>> m = {
      {"geometry",
       {{"reach-hull-identity", "reach sets equal nU on the lattice", ""},
        {"gauge-sandwich", "gauge <= minimal steps <= gauge + 1", ""},
        {"bridge-bounds", "bridge times within the linear bound", ""}}},
      {"rate",
       {{"ellipticity", "I_n <= |log kappa|", ""},
        {"extrapolation-residual", "1/n extrapolation residual", "residual"},
        {"convexity", "midpoint convexity of the limit", "convex"},
        {"lipschitz", "Lipschitz bound C(z) b ||x - z||", "lipschitz"},
        {"cramer-finite-n", "fair-walk rate at the largest n", "cramer"},
        {"cramer-limit", "fair-walk rate of the extrapolated limit", "cramer_limit"}}},
      {"shape",
       {{"shape-monotone", "s(t) nonincreasing up to noise", "shape_noise"},
        {"shape-final", "s(t_max) small", "shape"},
        {"equicontinuity", "fitted modulus stable in t", "equicontinuity"},
        {"conservation", "mass + deficit + truncation = 1", ""}}},
      {"mc-check",
       {{"fk-agreement", "Feynman-Kac estimate vs uniformization", "fk_sigma"},
        {"positivity-floor", "kernel above the positivity floor", ""}}},
      {"ldp",
       {{"ldp-bounds", "open lower / closed upper bounds", "ldp_slack"},
        {"ldp-reference", "reference infimum vs fair-walk rate", "cramer"}}},
      {"quench", {{"quench", "seed-to-seed deviation of I_n", "quench"}}},
      {"even-time",
       {{"even-direct", "even-time rate vs direct rate", "even"},
        {"even-offset", "offset insensitivity over H", "even"}}},
      {"dump-env", {}},
  };
  return m;
}

inline const std::map<std::string, double>& default_tolerances() {
  static const std::map<std::string, double> t = {
      {"residual", 0.01},   {"convex", 0.02}, {"lipschitz", 0.01}, {"cramer", 0.02},   {"cramer_limit", 5e-3},
      {"shape_noise", 0.02}, {"shape", 0.05}, {"equicontinuity", 0.2}, {"fk_sigma", 3.0}, {"ldp_slack", 0.05},
      {"quench", 0.05},     {"even", 0.02},
  };
  return t;
}

struct LdpSetSpec {
  std::vector<double> lo, hi;
  SetKind kind = SetKind::closed;
  friend bool operator==(const LdpSetSpec&, const LdpSetSpec&) = default;
};

struct ExperimentConfig {
  std::string kind;
  std::string range = "nn:d=1";
  std::string model = "homogeneous";
  double kappa = 0.5;  // 1/|R| when the config leaves it out
  std::vector<double> weights;
  double density = 0.5;
  double flip = 0.1;
  std::vector<double> occupied, vacant;
  bool continuous = false;
  double kappa1 = 0.5, kappa2 = 0.5, piece = 1.0;
  std::vector<std::int64_t> horizons;
  std::vector<double> times;
  std::vector<double> reference_times;
  double grid_spacing = 1.0 / 64.0;
  std::vector<std::vector<double>> directions;
  std::vector<std::vector<double>> window;  // [lo, hi] per axis
  double epsilon = 0.1;
  std::vector<LdpSetSpec> sets;
  double target_time = 1.0;
  std::vector<std::vector<std::int64_t>> targets;
  std::uint64_t samples = 10000;
  std::int64_t radius = 3;
  std::vector<std::uint64_t> seeds = {0};
  std::map<std::string, double> tolerances;
  std::vector<std::string> checks;
  std::string output = "out";
  std::uint64_t budget_mb = 2048;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  DiscreteEnvSpec discrete_spec(std::size_t seed_index = 0) const {
    DiscreteEnvSpec s;
    s.model = parse_env_model(model);
    s.range = JumpRange::parse(range);
    s.kappa = kappa;
    s.weights = weights;
    s.density = density;
    s.flip = flip;
    s.occupied = occupied;
    s.vacant = vacant;
    s.seed = seeds.at(seed_index);
    return s;
  }

  ContinuousEnvSpec continuous_spec(std::size_t seed_index = 0) const {
    ContinuousEnvSpec c;
    c.base = discrete_spec(seed_index);
    c.kappa1 = kappa1;
    c.kappa2 = kappa2;
    c.piece = piece;
    return c;
  }

  double tolerance(const std::string& key) const {
    auto it = tolerances.find(key);
    return it != tolerances.end() ? it->second : default_tolerances().at(key);
  }

  std::vector<Vec> direction_vecs() const {
    std::vector<Vec> out;
    for (const auto& d : directions) out.push_back(Vec::from(d));
    return out;
  }
};

// ---------------------------------------------------------------------------
// parsing and serialization

inline json serialize_json(const ExperimentConfig& c) {
  json j;
  j["kind"] = c.kind;
  j["range"] = c.range;
  json env = {{"model", c.model}, {"kappa", c.kappa}};
  if (!c.weights.empty()) env["weights"] = c.weights;
  if (c.model == "spin-flip") {
    env["density"] = c.density;
    env["flip"] = c.flip;
    env["occupied"] = c.occupied;
    env["vacant"] = c.vacant;
  }
  j["environment"] = env;
  if (c.continuous) j["continuous"] = {{"kappa1", c.kappa1}, {"kappa2", c.kappa2}, {"piece", c.piece}};
  j["horizons"] = c.horizons;
  j["times"] = c.times;
  j["reference_times"] = c.reference_times;
  j["grid_spacing"] = c.grid_spacing;
  j["directions"] = c.directions;
  j["window"] = c.window;
  j["epsilon"] = c.epsilon;
  json sets = json::array();
  for (const auto& s : c.sets) sets.push_back({{"lo", s.lo}, {"hi", s.hi}, {"kind", s.kind == SetKind::open ? "open" : "closed"}});
  j["sets"] = sets;
  j["target_time"] = c.target_time;
  j["targets"] = c.targets;
  j["samples"] = c.samples;
  j["radius"] = c.radius;
  j["seeds"] = c.seeds;
  json tol = json::object();
  for (const auto& [k, v] : c.tolerances) tol[k] = v;
  j["tolerances"] = tol;
  j["checks"] = c.checks;
  j["output"] = c.output;
  j["budget_mb"] = c.budget_mb;
  return j;
}

inline std::string serialize_config(const ExperimentConfig& c) { return serialize_json(c).dump(2) + "\n"; }

/// Hash of everything that determines artifact contents (output location
/// and memory budget excluded), as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = serialize_json(c);
  j.erase("output");
  j.erase("budget_mb");
  return hex64(fnv1a64(j.dump()));
}

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) {
      errors.push_back(where + " must be an object");
      return;
    }
    for (const auto& [k, v] : obj.items())
      if (!allowed.count(k)) errors.push_back("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }

  template <class T>
  void get(const json& obj, const std::string& key, T& out, bool required = false) {
    if (!obj.is_object() || !obj.contains(key)) {
      if (required) errors.push_back("missing required field '" + key + "'");
      return;
    }
    try {
      out = obj.at(key).get<T>();
    } catch (const std::exception&) {
      errors.push_back("field '" + key + "' has the wrong type");
    }
  }
};

}  // namespace detail

/// Parses and validates a JSON config; every problem found is reported in
/// one ConfigError.
inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  detail::ConfigReader rd;
  ExperimentConfig c;
  rd.check_keys(j, "", {"kind", "range", "environment", "continuous", "horizons", "times", "reference_times",
                        "grid_spacing", "directions", "window", "epsilon", "sets", "target_time", "targets", "samples",
                        "radius", "seeds", "tolerances", "checks", "output", "budget_mb"});
  if (!j.is_object()) throw ConfigError(rd.errors);
  rd.get(j, "kind", c.kind, true);
  rd.get(j, "range", c.range);
  if (j.contains("environment")) {
    const json& env = j["environment"];
    rd.check_keys(env, "environment", {"model", "kappa", "weights", "density", "flip", "occupied", "vacant"});
    rd.get(env, "model", c.model, true);
    rd.get(env, "kappa", c.kappa);
    rd.get(env, "weights", c.weights);
    rd.get(env, "density", c.density);
    rd.get(env, "flip", c.flip);
    rd.get(env, "occupied", c.occupied);
    rd.get(env, "vacant", c.vacant);
  }
  if (j.contains("continuous")) {
    c.continuous = true;
    const json& ct = j["continuous"];
    rd.check_keys(ct, "continuous", {"kappa1", "kappa2", "piece"});
    rd.get(ct, "kappa1", c.kappa1, true);
    rd.get(ct, "kappa2", c.kappa2, true);
    rd.get(ct, "piece", c.piece);
  }
  rd.get(j, "horizons", c.horizons);
  rd.get(j, "times", c.times);
  rd.get(j, "reference_times", c.reference_times);
  rd.get(j, "grid_spacing", c.grid_spacing);
  rd.get(j, "directions", c.directions);
  rd.get(j, "window", c.window);
  rd.get(j, "epsilon", c.epsilon);
  if (j.contains("sets")) {
    if (!j["sets"].is_array()) rd.errors.push_back("sets must be a list");
    else
      for (const auto& s : j["sets"]) {
        rd.check_keys(s, "sets[]", {"lo", "hi", "kind"});
        LdpSetSpec spec;
        std::string kind = "closed";
        rd.get(s, "lo", spec.lo, true);
        rd.get(s, "hi", spec.hi, true);
        rd.get(s, "kind", kind);
        if (kind != "open" && kind != "closed") rd.errors.push_back("set kind must be 'open' or 'closed'");
        spec.kind = kind == "open" ? SetKind::open : SetKind::closed;
        c.sets.push_back(spec);
      }
  }
  rd.get(j, "target_time", c.target_time);
  rd.get(j, "targets", c.targets);
  rd.get(j, "samples", c.samples);
  rd.get(j, "radius", c.radius);
  rd.get(j, "seeds", c.seeds);
  if (j.contains("tolerances")) {
    if (!j["tolerances"].is_object()) rd.errors.push_back("tolerances must be an object");
    else
      for (const auto& [k, v] : j["tolerances"].items()) {
        if (!default_tolerances().count(k)) {
          rd.errors.push_back("unknown tolerance '" + k + "'");
          continue;
        }
        if (!v.is_number()) {
          rd.errors.push_back("tolerance '" + k + "' must be a number");
          continue;
        }
        c.tolerances[k] = v.get<double>();
      }
  }
  rd.get(j, "checks", c.checks);
  rd.get(j, "output", c.output);
  rd.get(j, "budget_mb", c.budget_mb);

  auto& e = rd.errors;
  const auto& kinds = experiment_kinds();
  if (!c.kind.empty() && std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end())
    e.push_back("unknown experiment kind '" + c.kind + "'");
  for (std::size_t i = 1; i < c.horizons.size(); ++i)
    if (c.horizons[i] <= c.horizons[i - 1]) {
      e.push_back("horizons are non-increasing at position " + std::to_string(i));
      break;
    }
  for (auto h : c.horizons)
    if (h < 1) e.push_back("horizons must be positive");
  for (std::size_t i = 1; i < c.times.size(); ++i)
    if (c.times[i] <= c.times[i - 1]) {
      e.push_back("times are non-increasing at position " + std::to_string(i));
      break;
    }
  for (std::size_t i = 1; i < c.reference_times.size(); ++i)
    if (c.reference_times[i] <= c.reference_times[i - 1]) {
      e.push_back("reference_times are non-increasing at position " + std::to_string(i));
      break;
    }
  if (c.seeds.empty()) e.push_back("seed list is empty");
  for (const auto& [k, v] : c.tolerances)
    if (!(v > 0.0)) e.push_back("tolerance '" + k + "' must be positive");
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) e.push_back("epsilon must lie in (0, 1)");
  if (!(c.grid_spacing > 0.0)) e.push_back("grid_spacing must be positive");
  if (c.budget_mb < 1) e.push_back("budget_mb must be positive");
  if (c.output.empty()) e.push_back("output directory is empty");

  int dim = 0;
  try {
    const JumpRange r = JumpRange::parse(c.range);
    dim = r.dim();
    if (!j.contains("environment") || !j["environment"].contains("kappa")) c.kappa = 1.0 / static_cast<double>(r.size());
  } catch (const std::exception& ex) {
    e.push_back(std::string("range: ") + ex.what());
  }
  if (dim > 0) {
    for (const auto& d : c.directions)
      if (static_cast<int>(d.size()) != dim) {
        e.push_back("direction has the wrong dimension");
        break;
      }
    for (const auto& t : c.targets)
      if (static_cast<int>(t.size()) != dim) {
        e.push_back("target has the wrong dimension");
        break;
      }
    if (!c.window.empty() && static_cast<int>(c.window.size()) != dim) e.push_back("window needs one [lo, hi] per axis");
    for (const auto& s : c.sets)
      if (static_cast<int>(s.lo.size()) != dim || static_cast<int>(s.hi.size()) != dim)
        e.push_back("set bounds have the wrong dimension");
  }
  for (const auto& w : c.window)
    if (w.size() != 2 || !(w[0] <= w[1])) e.push_back("window axes must be [lo, hi] with lo <= hi");
  try {
    parse_env_model(c.model);
    if (dim > 0 && !c.seeds.empty()) {
      if (c.continuous) ContinuousEnvSpec(c.continuous_spec()).validate();
      else c.discrete_spec().validate();
    }
  } catch (const std::exception& ex) {
    e.push_back(std::string("environment: ") + ex.what());
  }

  if (kind_checks().count(c.kind)) {
    const auto& known = kind_checks().at(c.kind);
    std::set<std::string> seen;
    for (const auto& name : c.checks) {
      if (!seen.insert(name).second) e.push_back("check '" + name + "' listed twice");
      if (std::none_of(known.begin(), known.end(), [&](const CheckInfo& k) { return k.name == name; }))
        e.push_back("check '" + name + "' does not exist for kind " + c.kind);
    }
    auto need = [&](bool ok, const std::string& what) {
      if (!ok) e.push_back(c.kind + " experiments need " + what);
    };
    if (c.kind == "rate" || c.kind == "ldp") {
      need(c.horizons.size() >= 4, "at least four horizons");
      need(!c.directions.empty(), "directions");
    }
    if (c.kind == "ldp") need(!c.sets.empty(), "sets");
    if (c.kind == "quench") {
      need(c.seeds.size() >= 2, "at least two seeds");
      need(!c.horizons.empty(), "horizons");
      need(!c.directions.empty(), "directions");
    }
    if (c.kind == "even-time") {
      need(!c.horizons.empty() && c.horizons.back() % 2 == 0, "an even final horizon");
      need(!c.directions.empty(), "directions");
    }
    if (c.kind == "shape") {
      need(c.continuous, "a continuous block");
      need(c.times.size() >= 2, "at least two times");
      need(!c.window.empty(), "a window");
    }
    if (c.kind == "mc-check") {
      need(c.continuous, "a continuous block");
      need(!c.targets.empty(), "targets");
      need(c.target_time > 0.0, "a positive target_time");
      need(c.samples >= 1, "samples >= 1");
    }
    if (c.kind == "geometry") need(!c.horizons.empty(), "horizons");
    if (c.kind == "dump-env") need(!c.horizons.empty(), "horizons");
  }
  if (!e.empty()) throw ConfigError(e);
  if (c.checks.empty())
    for (const auto& k : kind_checks().at(c.kind)) c.checks.push_back(k.name);
  for (const auto& k : kind_checks().at(c.kind))
    if (!k.tolerance.empty() && !c.tolerances.count(k.tolerance)) c.tolerances[k.tolerance] = default_tolerances().at(k.tolerance);
  return c;
}

// ---------------------------------------------------------------------------
// slab cache

/// Content-addressed store of serialized passage tables. Entries carry
/// their own checksum; a corrupted entry is recomputed with a warning.
class SlabCache {
 public:
  explicit SlabCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  /// Directory from RWRE_CACHE_DIR, if set.
  static std::optional<SlabCache> from_env() {
    const char* d = std::getenv("RWRE_CACHE_DIR");
    if (!d || !*d) return std::nullopt;
    return SlabCache(d);
  }

  static std::string key(const std::string& spec, std::int64_t horizon, std::span<const std::int64_t> keep,
                         const std::string& version = module_versions().at("quenched-dp")) {
    std::string s = spec + "|horizon=" + std::to_string(horizon) + "|version=" + version + "|keep=";
    for (auto k : keep) s += std::to_string(k) + ",";
    return hex64(fnv1a64(s));
  }

  PassageTable get(const std::string& key, const std::function<PassageTable()>& producer) {
    const auto path = dir_ / (key + ".tbl");
    if (std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      try {
        auto t = deserialize_table(data);
        ++hits_;
        return t;
      } catch (const Error& e) {
        ++corrupt_;
        std::cerr << "warning: cache entry " << path.string() << " is unreadable (" << e.what() << "), recomputing\n";
      }
    }
    ++misses_;
    PassageTable t = producer();
    std::filesystem::create_directories(dir_);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      const auto data = serialize_table(t);
      out.write(data.data(), static_cast<std::streamsize>(data.size()));
    }
    std::filesystem::rename(tmp, path);
    return t;
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }
  std::size_t corrupt() const noexcept { return corrupt_; }

 private:
  std::filesystem::path dir_;
  std::size_t hits_ = 0, misses_ = 0, corrupt_ = 0;
};

// ---------------------------------------------------------------------------
// manifest and report

enum class Verdict { pass, fail, skipped };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::skipped: return "skipped";
  }
  return "?";
}

struct CheckResult {
  std::string name;
  std::string anchor;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string comparison = "<=";
  Verdict verdict = Verdict::skipped;
  std::string detail;
};

struct RunManifest {
  std::string config_hash;
  std::string kind;
  std::map<std::string, std::string> versions;
  std::vector<std::pair<std::string, double>> stages;  // wall-clock seconds
  std::vector<std::string> artifacts;
  std::vector<CheckResult> checks;
  std::vector<std::string> resource_hints;

  bool passed() const {
    return std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.verdict == Verdict::fail; });
  }
  int exit_code() const { return passed() ? 0 : 1; }
};

inline json to_json(const RunManifest& m) {
  json j;
  j["config_hash"] = m.config_hash;
  j["kind"] = m.kind;
  j["module_versions"] = m.versions;
  json st = json::array();
  for (const auto& [n, s] : m.stages) st.push_back({{"stage", n}, {"seconds", s}});
  j["stages"] = st;
  j["artifacts"] = m.artifacts;
  json cs = json::array();
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(v > 0 ? "inf" : v < 0 ? "-inf" : "nan"); };
  for (const auto& c : m.checks)
    cs.push_back({{"name", c.name},
                  {"anchor", c.anchor},
                  {"measured", num(c.measured)},
                  {"tolerance", num(c.tolerance)},
                  {"comparison", c.comparison},
                  {"verdict", to_string(c.verdict)},
                  {"detail", c.detail}});
  j["checks"] = cs;
  j["resource_hints"] = m.resource_hints;
  j["passed"] = m.passed();
  return j;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// One line per check: name, anchor, measured, tolerance, verdict.
inline std::string report(const RunManifest& m) {
  std::ostringstream os;
  os << "experiment " << m.kind << " (config " << m.config_hash << ")\n";
  for (const auto& c : m.checks) {
    os << "  " << std::left << std::setw(24) << c.name << " " << std::setw(44) << c.anchor << " measured "
       << std::setw(12) << format_number(c.measured) << " " << c.comparison << " " << std::setw(10)
       << format_number(c.tolerance) << " " << to_string(c.verdict);
    if (!c.detail.empty()) os << "  (" << c.detail << ")";
    os << "\n";
  }
  std::size_t pass = 0, fail = 0, skip = 0;
  for (const auto& c : m.checks) (c.verdict == Verdict::pass ? pass : c.verdict == Verdict::fail ? fail : skip)++;
  os << "summary: " << pass << " pass, " << fail << " fail, " << skip << " skipped -> " << (m.passed() ? "PASS" : "FAIL")
     << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// runner

struct RunOptions {
  int threads = 1;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> budget_mb;
  std::optional<std::filesystem::path> cache_dir;  // falls back to RWRE_CACHE_DIR
  bool quiet = true;
};

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool fair_walk_case(const ExperimentConfig& c) {
  if (c.model != "homogeneous" || c.range != "nn:d=1") return false;
  return c.weights.empty() || (c.weights.size() == 2 && c.weights[0] == c.weights[1]);
}

class Runner {
 public:
  Runner(ExperimentConfig cfg, const RunOptions& opt) : cfg_(std::move(cfg)), opt_(opt) {
    if (opt.seed) cfg_.seeds = {*opt.seed, *opt.seed + 1};
    if (opt.seed && cfg_.kind != "quench") cfg_.seeds.resize(1);
    if (opt.budget_mb) cfg_.budget_mb = *opt.budget_mb;
    out_ = opt.out_dir ? std::filesystem::path(*opt.out_dir) : std::filesystem::path(cfg_.output);
    if (opt.cache_dir) cache_.emplace(*opt.cache_dir);
    else cache_ = SlabCache::from_env();
    m_.config_hash = config_hash(cfg_);
    m_.kind = cfg_.kind;
    m_.versions = module_versions();
    solve_.threads = opt.threads;
    solve_.budget_bytes = static_cast<std::size_t>(cfg_.budget_mb) << 20;
  }

  RunManifest run() {
    try {
      if (cfg_.kind == "geometry") geometry();
      else if (cfg_.kind == "rate") rate();
      else if (cfg_.kind == "shape") shape();
      else if (cfg_.kind == "mc-check") mc_check();
      else if (cfg_.kind == "ldp") ldp();
      else if (cfg_.kind == "quench") quench();
      else if (cfg_.kind == "even-time") even_time();
      else if (cfg_.kind == "dump-env") dump_env();
    } catch (const ResourceError& e) {
      m_.resource_hints.push_back(e.hint());
      detail_all_ = std::string("resource limit: ") + e.what();
    }
    finish();
    write_artifact("manifest.json", to_json(m_).dump(2) + "\n", false);
    return m_;
  }

  const std::optional<SlabCache>& cache() const { return cache_; }

 private:
  bool wanted(const std::string& name) const {
    return std::find(cfg_.checks.begin(), cfg_.checks.end(), name) != cfg_.checks.end();
  }

  void record(const std::string& name, double measured, double tol, const std::string& cmp = "<=",
              std::string detail = {}) {
    if (!wanted(name)) return;
    CheckResult r = base(name);
    r.measured = measured;
    r.tolerance = tol;
    r.comparison = cmp;
    const bool ok = cmp == "<=" ? measured <= tol : measured >= tol;
    r.verdict = ok ? Verdict::pass : Verdict::fail;
    r.detail = std::move(detail);
    results_[name] = r;
  }

  void skip(const std::string& name, std::string why) {
    if (!wanted(name)) return;
    CheckResult r = base(name);
    r.detail = std::move(why);
    results_[name] = r;
  }

  CheckResult base(const std::string& name) const {
    CheckResult r;
    r.name = name;
    for (const auto& k : kind_checks().at(cfg_.kind))
      if (k.name == name) r.anchor = k.anchor;
    return r;
  }

  double tol(const std::string& name) const { return cfg_.tolerance(name); }

  void finish() {
    for (const auto& name : cfg_.checks) {
      auto it = results_.find(name);
      if (it != results_.end()) {
        m_.checks.push_back(it->second);
      } else {
        CheckResult r = base(name);
        r.detail = detail_all_.empty() ? "not evaluated" : detail_all_;
        m_.checks.push_back(r);
      }
    }
  }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      m_.stages.emplace_back(name, seconds_since(t0));
    } else {
      auto v = f();
      m_.stages.emplace_back(name, seconds_since(t0));
      return v;
    }
  }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void write_artifact(const std::string& name, const std::string& data, bool track = true) {
    const auto path = out_ / name;
    write_atomic(path, data);
    if (track) m_.artifacts.push_back(path.string());
  }

  PassageTable solve(const EnvironmentField& field, std::int64_t horizon, std::vector<std::int64_t> keep) {
    auto produce = [&] {
      SolveOptions o = solve_;
      o.keep = keep;
      return forward_solve(field, horizon, o);
    };
    if (!cache_) return produce();
    return cache_->get(SlabCache::key(field.spec().canonical(), horizon, keep), produce);
  }

  // -- kinds ---------------------------------------------------------------

  void geometry() {
    const JumpRange range = JumpRange::parse(cfg_.range);
    const std::int64_t nmax = cfg_.horizons.back();
    stage("reach-sets", [&] {
      std::ostringstream os;
      write_reach_csv(os, range, nmax, m_.config_hash);
      write_artifact("reach.csv", os.str());
    });
    stage("checks", [&] {
      std::size_t mismatch = 0;
      for (std::int64_t n = 0; n <= nmax; ++n) {
        const ReachSet r = reach_set(range, n);
        detail::for_each_in_cube(range.dim(), n * range.reach(), [&](const Point& p) {
          if (r.contains(p) != range.reachable(p, n)) ++mismatch;
        });
      }
      record("reach-hull-identity", static_cast<double>(mismatch), 0.0, "<=", "n <= " + std::to_string(nmax));

      const Polytope& u = range.hull();
      std::size_t bad = 0;
      detail::for_each_in_cube(range.dim(), 20, [&](const Point& x) {
        const double g = boost::rational_cast<double>(u.gauge(x));
        const auto s = static_cast<double>(*min_steps(range, x));
        if (s < g - 1e-12 || s > g + 1.0 + 1e-12) ++bad;
      });
      record("gauge-sandwich", static_cast<double>(bad), 0.0, "<=", "|x|_inf <= 20");

      if (range.kind() != RangeKind::convex_symmetric) {
        skip("bridge-bounds", "bridge times are defined for convex ranges");
        return;
      }
      std::mt19937_64 rng(cfg_.seeds.front());
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      std::size_t viol = 0;
      auto sample = [&](double max_gauge) {
        for (;;) {
          Vec v(range.dim());
          for (int i = 0; i < range.dim(); ++i) v[i] = unit(rng);
          if (u.gauge(v) <= max_gauge) return v;
        }
      };
      for (int trial = 0; trial < 200; ++trial) {
        const auto n = std::uniform_int_distribution<std::int64_t>(1, 200)(rng);
        const Vec z = sample(1.0), x = sample(0.95);
        const auto up = bridge_time_up(range, n, z, x);
        const auto down = bridge_time_down(range, n, z, x);
        if (static_cast<double>(up) > bridge_bound(n, z, x, u) + 1e-9 || up < n) ++viol;
        if (static_cast<double>(down) < bridge_bound_down(n, z, x, u) - 1e-9 || down > n) ++viol;
      }
      record("bridge-bounds", static_cast<double>(viol), 0.0, "<=", "200 random triples");
    });
  }

  void rate() {
    const EnvironmentField field(cfg_.discrete_spec());
    const auto table = stage("solve", [&] { return solve(field, cfg_.horizons.back(), cfg_.horizons); });
    const auto dirs = cfg_.direction_vecs();
    RateCurve curve = stage("rates", [&] { return build_rate_curve(table, dirs, cfg_.horizons, tol("residual")); });
    std::ostringstream os;
    write_rate_curve_csv(os, curve, m_.config_hash);
    write_artifact("rate_curve.csv", os.str());

    const double cap = std::abs(std::log(field.kappa()));
    double worst = -kInf, resid = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      if (curve.gauges[i] > 1.0) continue;
      for (double v : curve.rates[i])
        if (std::isfinite(v)) worst = std::max(worst, v - cap);
      if (curve.gauges[i] < 1.0) resid = std::max(resid, curve.residual[i]);
    }
    record("ellipticity", worst, 1e-12, "<=", "max of I_n - |log kappa| over directions in U");
    record("extrapolation-residual", resid, tol("residual"));
    auto conv = convexity_check(curve);
    if (conv.triples) record("convexity", conv.max_violation, tol("convex"), "<=", std::to_string(conv.triples) + " triples");
    else skip("convexity", "no collinear midpoint triples in the direction grid");

    std::vector<std::size_t> zs;
    for (std::size_t i = 0; i < curve.size(); ++i)
      if (curve.gauges[i] <= 0.5) zs.push_back(i);
    auto lip = lipschitz_check(curve, table.range().hull(), zs, 0.3);
    if (lip.pairs) record("lipschitz", lip.max_excess, tol("lipschitz"), "<=", std::to_string(lip.pairs) + " pairs");
    else skip("lipschitz", "no interior pairs within distance 0.3");

    if (!fair_walk_case(cfg_)) {
      skip("cramer-finite-n", "closed form applies to the homogeneous fair walk only");
      skip("cramer-limit", "closed form applies to the homogeneous fair walk only");
      return;
    }
    double fin = 0.0, lim = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      const double x = curve.directions[i][0];
      if (std::abs(x) >= 1.0) continue;
      fin = std::max(fin, std::abs(curve.rates[i].back() - fair_walk_rate(x)));
      lim = std::max(lim, std::abs(curve.i_hat[i] - fair_walk_rate(x)));
    }
    record("cramer-finite-n", fin, tol("cramer"), "<=", "n = " + std::to_string(cfg_.horizons.back()));
    record("cramer-limit", lim, tol("cramer_limit"));
  }

  void shape() {
    const RateField field(cfg_.continuous_spec());
    UniformizeOptions uo;
    uo.threads = opt_.threads;
    const auto slabs = stage("uniformize", [&] { return uniformize_times(field, 0.0, cfg_.times, Point(field.dim()), uo); });
    std::ostringstream os;
    write_ct_slab_csv(os, slabs, true, m_.config_hash);
    write_artifact("ct_kernel.csv", os.str());

    std::vector<Interval> k;
    for (const auto& w : cfg_.window) k.push_back(Interval{w[0], w[1], false, false});

    std::function<double(const Vec&)> i_hat;
    std::vector<double> probe(field.range().size());
    field.discrete().probs(0, Point(field.dim()), probe);
    const bool srw = field.discrete().homogeneous() &&
                     std::all_of(probe.begin(), probe.end(), [&](double p) { return p == probe.front(); });
    if (srw) {
      const double r = field.rates_at(0.0, Point(field.dim())).front();
      const SrwOracle o{field.dim(), 2.0 * field.dim() * r};
      i_hat = [o](const Vec& v) { return srw_rate_J(o, v); };
    } else {
      if (field.dim() != 1) throw Error("rate profiles beyond the closed form need d = 1");
      if (cfg_.reference_times.size() < 2) throw Error("shape experiments without a closed form need reference_times");
      auto prof = stage("profile", [&] {
        return ct_rate_profile(field, k[0].lo, k[0].hi, cfg_.grid_spacing, cfg_.reference_times, uo);
      });
      i_hat = [prof](const Vec& v) { return prof(v[0]); };
    }
    const auto sr = shape_check(slabs, k, i_hat);
    std::ostringstream ss;
    ss << "t,s,config_hash\n";
    for (std::size_t i = 0; i < sr.times.size(); ++i)
      ss << num17(sr.times[i]) << "," << num17(sr.deviation[i]) << "," << m_.config_hash << "\n";
    write_artifact("shape.csv", ss.str());
    record("shape-monotone", sr.max_increase, tol("shape_noise"), "<=", "largest increase of s(t)");
    record("shape-final", sr.deviation.back(), tol("shape"), "<=", "s(" + format_number(sr.times.back()) + ")");
    const auto eq = equicontinuity_check(slabs, k, cfg_.epsilon);
    if (eq.compared)
      record("equicontinuity", eq.max_relative_change, tol("equicontinuity"), "<=",
             "largest relative change of the fitted constant, " + std::to_string(eq.compared) + " doublings");
    else
      skip("equicontinuity", "no two times with eps*t >= 2");
    double cons = 0.0;
    for (const auto& s : slabs) cons = std::max(cons, std::abs(s.mass() + s.deficit + s.truncation - 1.0));
    record("conservation", cons, 1e-12);
  }

  void mc_check() {
    const RateField field(cfg_.continuous_spec());
    UniformizeOptions uo;
    uo.threads = opt_.threads;
    const double t = cfg_.target_time;
    const auto slab = stage("uniformize", [&] { return uniformize(field, t, uo); });
    FkOptions fo;
    fo.threads = opt_.threads;
    std::vector<FkEstimate> est;
    stage("feynman-kac", [&] {
      for (const auto& y : cfg_.targets) est.push_back(fk_estimate(field, t, Point::from(y), cfg_.samples, cfg_.seeds.front(), fo));
    });
    json rep = json::array();
    std::ostringstream os;
    os << "t";
    for (int i = 1; i <= field.dim(); ++i) os << ",y_" << i;
    os << ",samples,mean,stderr,uniformized,config_hash\n";
    double worst_sigma = 0.0, worst_floor = -kInf;
    for (const auto& e : est) {
      const double exact = slab.value(e.y);
      rep.push_back({{"t", e.t},
                     {"y", std::vector<std::int64_t>(e.y.begin(), e.y.end())},
                     {"samples", e.samples},
                     {"mean", e.mean},
                     {"stderr", e.stderr_},
                     {"seed", e.seed},
                     {"mean_jumps", e.mean_jumps},
                     {"hits", e.hits}});
      os << num17(e.t);
      for (auto c : e.y) os << "," << c;
      os << "," << e.samples << "," << num17(e.mean) << "," << num17(e.stderr_) << "," << num17(exact) << ","
         << m_.config_hash << "\n";
      const double gap = std::abs(e.mean - exact);
      worst_sigma = std::max(worst_sigma, e.stderr_ > 0.0 ? gap / e.stderr_ : (gap == 0.0 ? 0.0 : kInf));
      worst_floor = std::max(worst_floor, log_positivity_floor(field, 0.0, t, Point(field.dim()), e.y) - slab.log_value(e.y));
    }
    write_artifact("fk.csv", os.str());
    write_artifact("fk.json", rep.dump(2) + "\n");
    record("fk-agreement", worst_sigma, tol("fk_sigma"), "<=", "largest |FK - uniformized| in standard errors");
    record("positivity-floor", worst_floor, 0.0, "<=", "largest log(floor / e)");
  }

  void ldp() {
    const EnvironmentField field(cfg_.discrete_spec());
    const auto table = stage("solve", [&] { return solve(field, cfg_.horizons.back(), cfg_.horizons); });
    const auto dirs = cfg_.direction_vecs();
    const RateCurve curve = build_rate_curve(table, dirs, cfg_.horizons, tol("residual"));
    const int d = table.range().dim();
    json reports = json::array();
    std::ostringstream os;
    os << "set_index,kind,n,rate,reference_inf,config_hash\n";
    double worst = -kInf, worst_ref = 0.0;
    bool ref_checked = false;
    for (std::size_t i = 0; i < cfg_.sets.size(); ++i) {
      const auto& s = cfg_.sets[i];
      Region reg(d);
      std::vector<Interval> axes;
      const bool open = s.kind == SetKind::open;
      for (int a = 0; a < d; ++a) axes.push_back(Interval{s.lo[a], s.hi[a], open, open});
      reg.add_box(axes);
      const auto r = ldp_check(table, reg, s.kind, curve, tol("ldp_slack"));
      for (std::size_t h = 0; h < r.horizons.size(); ++h)
        os << i << "," << (open ? "open" : "closed") << "," << r.horizons[h] << "," << num17(r.sequence[h]) << ","
           << num17(r.reference_inf) << "," << m_.config_hash << "\n";
      // Signed distance past the allowed side; <= slack when the bound holds.
      const double excess = open ? r.measured - r.reference_inf : r.reference_inf - r.measured;
      worst = std::max(worst, std::isnan(excess) ? 0.0 : excess);
      reports.push_back({{"set", i},
                         {"kind", open ? "open" : "closed"},
                         {"statement", r.statement},
                         {"horizons", r.horizons},
                         {"sequence", r.sequence},
                         {"reference_inf", r.reference_inf},
                         {"measured", r.measured},
                         {"slack", r.slack},
                         {"holds", r.holds}});
      if (fair_walk_case(cfg_) && !open) {
        double inf_c = kInf;
        for (const auto& x : dirs) {
          bool in = reg.contains(x);
          for (const auto& c : reg.extreme_points()) in = in || std::abs(c[0] - x[0]) <= 1e-12;
          if (in) inf_c = std::min(inf_c, fair_walk_rate(x[0]));
        }
        worst_ref = std::max(worst_ref, std::abs(inf_c - r.reference_inf));
        ref_checked = true;
      }
    }
    write_artifact("ldp.csv", os.str());
    write_artifact("ldp.json", reports.dump(2) + "\n");
    record("ldp-bounds", worst, tol("ldp_slack"), "<=", "largest excess over the infimum, all sets");
    if (ref_checked) record("ldp-reference", worst_ref, tol("cramer"), "<=", "closed sets, fair walk");
    else skip("ldp-reference", "closed form applies to closed sets of the homogeneous fair walk only");
  }

  void quench() {
    const auto grid = cfg_.direction_vecs();
    const std::int64_t n = cfg_.horizons.back();
    ConcentrationReport rep;
    stage("solve", [&] {
      for (std::size_t s = 0; s < cfg_.seeds.size(); ++s) {
        const EnvironmentField field(cfg_.discrete_spec(s));
        const auto t = solve(field, n, {n});
        std::vector<double> row;
        for (const auto& x : grid) row.push_back(rate_point(t, x, n));
        rep.seeds.push_back(cfg_.seeds[s]);
        rep.rates.push_back(std::move(row));
      }
    });
    for (std::size_t a = 0; a < rep.rates.size(); ++a)
      for (std::size_t b = a + 1; b < rep.rates.size(); ++b)
        for (std::size_t i = 0; i < grid.size(); ++i)
          if (rep.rates[a][i] != rep.rates[b][i])
            rep.max_deviation = std::max(rep.max_deviation, std::abs(rep.rates[a][i] - rep.rates[b][i]));
    std::ostringstream os;
    os << "seed,direction_index";
    for (int i = 1; i <= grid.front().dim(); ++i) os << ",x_" << i;
    os << ",n,I_n,config_hash\n";
    for (std::size_t s = 0; s < rep.seeds.size(); ++s)
      for (std::size_t i = 0; i < grid.size(); ++i) {
        os << rep.seeds[s] << "," << i;
        for (double v : grid[i]) os << "," << num17(v);
        os << "," << n << "," << num17(rep.rates[s][i]) << "," << m_.config_hash << "\n";
      }
    write_artifact("quench.csv", os.str());
    record("quench", rep.max_deviation, tol("quench"), "<=", "n = " + std::to_string(n));
  }

  void even_time() {
    const EnvironmentField field(cfg_.discrete_spec());
    const std::int64_t two_n = cfg_.horizons.back();
    const TwoStepLaw law(field);
    SolveOptions o = solve_;
    const auto ty = stage("solve-transformed", [&] { return forward_solve(law, two_n / 2, o); });
    const auto tx = stage("solve-direct", [&] { return solve(field, two_n, {two_n}); });
    std::ostringstream os;
    const int d = field.range().dim();
    os << "direction_index";
    for (int i = 1; i <= d; ++i) os << ",x_" << i;
    os << ",two_n,I_even,I_direct,max_offset_difference,config_hash\n";
    double worst_direct = 0.0, worst_offset = 0.0;
    const auto dirs = cfg_.direction_vecs();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const auto r = even_time_rate(field, dirs[i], two_n / 2, &tx, &ty);
      worst_direct = std::max(worst_direct, r.direct_difference);
      worst_offset = std::max(worst_offset, r.max_offset_difference);
      os << i;
      for (double v : dirs[i]) os << "," << num17(v);
      os << "," << two_n << "," << num17(r.i_even) << "," << num17(r.i_direct) << "," << num17(r.max_offset_difference)
         << "," << m_.config_hash << "\n";
    }
    write_artifact("even_time.csv", os.str());
    record("even-direct", worst_direct, tol("even"), "<=", "2n = " + std::to_string(two_n));
    record("even-offset", worst_offset, tol("even"), "<=", "offsets h(g), g in H");
  }

  void dump_env() {
    const EnvironmentField field(cfg_.discrete_spec());
    std::ostringstream os;
    write_env_csv(os, field, 0, cfg_.horizons.back(), cfg_.radius, m_.config_hash);
    write_artifact("env.csv", os.str());
  }

  ExperimentConfig cfg_;
  RunOptions opt_;
  std::filesystem::path out_;
  std::optional<SlabCache> cache_;
  SolveOptions solve_;
  RunManifest m_;
  std::map<std::string, CheckResult> results_;
  std::string detail_all_;
};

}  // namespace detail

/// Runs an experiment, writing its artifacts and manifest.json under the
/// output directory.
inline RunManifest run(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  return detail::Runner(cfg, opt).run();
}

}  // namespace rwre
