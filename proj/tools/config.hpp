// Experiment configuration: a JSON document validated in full before any computation.
// Every object rejects keys it does not know; errors name the offending path.
#pragma once

#include <usmooth/experiment.hpp>

#include <json.hpp>

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace usmooth::cli {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Typed, path-aware view of one JSON object.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object, got " + type_name(j_));
  }

  ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  [[nodiscard]] bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  [[nodiscard]] std::string child_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[nodiscard]] const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(child_path(key), "required key is missing");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(child_path(key), "expected a number, got " + type_name(v));
    return v.get<double>();
  }

  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  int integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(child_path(key), "expected an integer, got " + type_name(v));
    return v.get<int>();
  }

  int integer(const std::string& key, int fallback) { return has(key) ? integer(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) fail(child_path(key), "expected true/false, got " + type_name(v));
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(child_path(key), "expected a string, got " + type_name(v));
    return v.get<std::string>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  /// A number or a list of numbers.
  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) fail(child_path(key), "expected a number or a list of numbers, got " + type_name(v));
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        fail(child_path(key) + "[" + std::to_string(i) + "]", "expected a number, got " + type_name(v[i]));
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<int> integers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(child_path(key), "expected a list of integers, got " + type_name(v));
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer())
        fail(child_path(key) + "[" + std::to_string(i) + "]", "expected an integer, got " + type_name(v[i]));
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(child_path(k), "unknown key");
  }

  [[nodiscard]] const std::string& path() const { return path_; }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError((path.empty() ? std::string("<root>") : path) + ": " + what);
  }

  static std::string type_name(const json& v) {
    if (v.is_string()) return "string \"" + v.get<std::string>() + "\"";
    return v.type_name();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct NamedEstimator {
  std::string name;
  EstimatorSpec spec;
};

struct TuneConfig {
  std::string estimator;  // name; empty = first
  std::vector<GridSearchSpec> grid;
};

struct SweepConfig {
  std::string estimator;
  std::vector<int> windows;
  std::vector<GridSearchSpec> retune;  // empty = fixed hyperparameters
};

struct ExperimentConfig {
  ScenarioSpec scenario;
  std::string input_label = "force";  // column prefix for inputs
  std::vector<std::string> input_names;
  std::vector<NamedEstimator> estimators;
  TuneConfig tune;
  SweepConfig sweep;
  std::string out_dir = "out";

  [[nodiscard]] const NamedEstimator& estimator(const std::string& name) const {
    if (estimators.empty()) throw ConfigError("estimators: at least one estimator is required");
    if (name.empty()) return estimators.front();
    for (const auto& e : estimators)
      if (e.name == name) return e;
    throw ConfigError("estimators: no estimator named '" + name + "'");
  }
};

inline std::vector<std::string> split_fields(const std::string& line) {
  std::string s = line;
  for (char& c : s)
    if (c == ',' || c == ';' || c == '\t') c = ' ';
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

/// Plain text series: one row per sample, time then one value per input column.
/// Blank lines and lines starting with '#' are skipped; a non-numeric first line is
/// taken as a header.
inline ExcitationSignal read_series_file(const std::string& file, const std::string& path) {
  std::ifstream in(file);
  if (!in) Node::fail(path, "cannot open excitation file '" + file + "'");
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    std::vector<double> vals;
    bool numeric = true;
    for (const auto& f : fields) {
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0') {
        numeric = false;
        break;
      }
      vals.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && times.empty()) continue;  // header
      Node::fail(path, file + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (vals.size() < 2) Node::fail(path, file + ":" + std::to_string(lineno) + ": need time and at least one value");
    if (!rows.empty() && vals.size() - 1 != rows.front().size())
      Node::fail(path, file + ":" + std::to_string(lineno) + ": inconsistent column count");
    times.push_back(vals[0]);
    rows.emplace_back(vals.begin() + 1, vals.end());
  }
  if (rows.size() < 2) Node::fail(path, "excitation file '" + file + "' needs at least two samples");
  const double dt = times[1] - times[0];
  for (std::size_t i = 1; i < times.size(); ++i)
    if (std::abs(times[i] - times[i - 1] - dt) > 1e-6 * std::abs(dt))
      Node::fail(path, "excitation file '" + file + "' is not uniformly sampled");
  ExcitationSignal e{ExcitationKind::sampled_series, Matrix(rows.size(), rows.front().size()), dt};
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) e.samples(i, j) = rows[i][j];
  return e;
}

inline std::vector<GridSearchSpec> parse_grid(const json& arr, const std::string& path) {
  if (!arr.is_array() || arr.empty() || arr.size() > 2) Node::fail(path, "expected a list of 1 or 2 grid specs");
  std::vector<GridSearchSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Node g(arr[i], path + "[" + std::to_string(i) + "]");
    GridSearchSpec s;
    s.parameter = g.string("parameter");
    if (s.parameter != "Qx" && s.parameter != "Qp" && s.parameter != "pinv_tolerance")
      Node::fail(g.child_path("parameter"), "must be one of Qx, Qp, pinv_tolerance");
    s.log10_lo = g.number("log10_lo");
    s.log10_hi = g.number("log10_hi");
    s.log10_step = g.number("log10_step", 0.1);
    g.finish();
    try {
      s.validate();
    } catch (const InvalidArgument& e) {
      Node::fail(g.path(), e.what());
    }
    out.push_back(s);
  }
  return out;
}

inline NamedEstimator parse_estimator(const json& j, const std::string& path, std::size_t index) {
  Node e(j, path);
  NamedEstimator out;
  const std::string method = e.string("method");
  if (method == "us") out.spec.method = Method::us;
  else if (method == "akf") out.spec.method = Method::akf;
  else Node::fail(e.child_path("method"), "must be \"us\" or \"akf\"");
  out.name = e.string("name", index == 0 ? method : method + std::to_string(index + 1));
  out.spec.Qx = e.number("Qx", 0.0);
  if (out.spec.Qx < 0.0) Node::fail(e.child_path("Qx"), "must be >= 0");
  if (out.spec.method == Method::us) {
    out.spec.smoother.window = e.integer("window", 0);
    if (out.spec.smoother.window < 0) Node::fail(e.child_path("window"), "must be >= 0");
    if (e.has("pinv")) {
      Node p(e.raw("pinv"), e.child_path("pinv"));
      out.spec.smoother.pinv_enabled = p.boolean("enabled", true);
      out.spec.smoother.pinv_tolerance = p.number("tolerance", out.spec.smoother.pinv_tolerance);
      out.spec.smoother.weight_pinv_tolerance = p.number("weight_tolerance", out.spec.smoother.weight_pinv_tolerance);
      p.finish();
    }
    out.spec.smoother.gain_truncation_tolerance = e.number("gain_tolerance", out.spec.smoother.gain_truncation_tolerance);
    try {
      out.spec.smoother.validate();
    } catch (const InvalidArgument& ex) {
      Node::fail(path, ex.what());
    }
  } else {
    out.spec.Qp = e.number("Qp", 0.0);
    if (out.spec.Qp < 0.0) Node::fail(e.child_path("Qp"), "must be >= 0");
  }
  e.finish();
  return out;
}

inline std::vector<double> expand(const std::vector<double>& v, int floors, const std::string& path) {
  if (v.size() == 1) return std::vector<double>(floors, v[0]);
  if (static_cast<int>(v.size()) != floors)
    Node::fail(path, "expected 1 or " + std::to_string(floors) + " values, got " + std::to_string(v.size()));
  return v;
}

/// `base_dir` resolves relative file names (excitation files).
inline ExperimentConfig parse_config(const json& root, const std::string& base_dir) {
  ExperimentConfig cfg;
  Node top(root, "");

  // model
  {
    Node m(top.raw("model"), "model");
    const int floors = m.integer("floors");
    if (floors < 1) Node::fail(m.child_path("floors"), "must be >= 1");
    auto& f = cfg.scenario.frame;
    f.floor_masses = expand(m.numbers("mass"), floors, m.child_path("mass"));
    f.storey_stiffnesses = expand(m.numbers("stiffness"), floors, m.child_path("stiffness"));
    f.rayleigh_alpha = m.number("rayleigh_alpha", 0.0);
    f.rayleigh_beta = m.number("rayleigh_beta", 0.0);
    cfg.scenario.ground_motion = m.boolean("ground_motion", false);
    if (cfg.scenario.ground_motion) {
      f.input_floors = {1};  // replaced by the ground-motion influence vector
    } else {
      f.input_floors = m.integers("input_floors");
      if (f.input_floors.empty()) Node::fail(m.child_path("input_floors"), "at least one loaded floor is required");
    }
    m.finish();
    try {
      build_shear_frame(f);
    } catch (const InvalidArgument& e) {
      Node::fail("model", e.what());
    }
    if (cfg.scenario.ground_motion) {
      cfg.input_label = "ground_acc";
      cfg.input_names = {"ground_acc"};
    } else {
      for (int fl : f.input_floors) cfg.input_names.push_back("force_F" + std::to_string(fl));
    }
  }

  // excitation
  {
    Node x(top.raw("excitation"), "excitation");
    const std::string kind = x.string("kind");
    const int m = cfg.scenario.ground_motion ? 1 : static_cast<int>(cfg.scenario.frame.input_floors.size());
    if (kind == "sinusoid") {
      const double dt = x.number("dt");
      const int steps = x.integer("steps");
      if (!(dt > 0.0)) Node::fail(x.child_path("dt"), "must be > 0");
      if (steps < 1) Node::fail(x.child_path("steps"), "must be >= 1");
      const auto amp = expand(x.numbers("amplitude"), m, x.child_path("amplitude"));
      const auto omega = expand(x.numbers("omega"), m, x.child_path("omega"));
      ExcitationSignal e{ExcitationKind::sinusoid, Matrix(steps, m), dt};
      for (int j = 0; j < m; ++j) e.samples.col(j) = sinusoid_excitation(amp[j], omega[j], dt, steps).samples.col(0);
      cfg.scenario.excitation = e;
    } else if (kind == "synthetic-ground-motion") {
      if (m != 1) Node::fail(x.path(), "synthetic ground motion needs a single input (set model.ground_motion)");
      GroundMotionParams g;
      g.duration = x.number("duration", g.duration);
      g.dt = x.number("dt", g.dt);
      g.peak = x.number("peak", g.peak);
      g.ground_frequency = x.number("ground_frequency", g.ground_frequency);
      g.ground_damping = x.number("ground_damping", g.ground_damping);
      g.highpass_frequency = x.number("highpass_frequency", g.highpass_frequency);
      g.highpass_damping = x.number("highpass_damping", g.highpass_damping);
      g.ramp_up = x.number("ramp_up", g.ramp_up);
      g.strong_end = x.number("strong_end", g.strong_end);
      const int seed = x.integer("seed", static_cast<int>(g.seed));
      if (seed < 0) Node::fail(x.child_path("seed"), "must be >= 0");
      g.seed = static_cast<std::uint64_t>(seed);
      try {
        cfg.scenario.excitation = synthetic_ground_motion(g);
      } catch (const InvalidArgument& e) {
        Node::fail(x.path(), e.what());
      }
    } else if (kind == "sampled-series") {
      std::string file = x.string("file");
      if (!file.empty() && file[0] != '/' && !base_dir.empty()) file = base_dir + "/" + file;
      cfg.scenario.excitation = read_series_file(file, x.child_path("file"));
      if (cfg.scenario.excitation.samples.cols() != m)
        Node::fail(x.child_path("file"), "file has " + std::to_string(cfg.scenario.excitation.samples.cols()) +
                                             " value columns but the model has " + std::to_string(m) + " inputs");
    } else {
      Node::fail(x.child_path("kind"), "must be sinusoid, synthetic-ground-motion or sampled-series");
    }
    x.finish();
  }

  // sensors: a named layout or an explicit list
  {
    const json& s = top.raw("sensors");
    if (s.is_string()) {
      try {
        cfg.scenario.sensors = sensor_configuration(s.get<std::string>());
      } catch (const InvalidArgument& e) {
        Node::fail("sensors", e.what());
      }
    } else if (s.is_array()) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        Node e(s[i], "sensors[" + std::to_string(i) + "]");
        Sensor sn;
        try {
          sn.quantity = quantity_from_string(e.string("quantity"));
        } catch (const InvalidArgument& ex) {
          Node::fail(e.child_path("quantity"), ex.what());
        }
        sn.dof = e.integer("floor");
        if (sn.dof < 1 || sn.dof > static_cast<int>(cfg.scenario.frame.floor_masses.size()))
          Node::fail(e.child_path("floor"), "out of range");
        e.finish();
        cfg.scenario.sensors.entries.push_back(sn);
      }
      if (s.empty()) Node::fail("sensors", "at least one sensor is required");
    } else {
      Node::fail("sensors", "expected a layout name or a list of sensors, got " + Node::type_name(s));
    }
  }

  // noise
  if (top.has("noise")) {
    Node n(top.raw("noise"), "noise");
    cfg.scenario.noise.level = n.number("level", 0.0);
    if (cfg.scenario.noise.level < 0.0) Node::fail(n.child_path("level"), "must be >= 0");
    const int seed = n.integer("seed", 0);
    if (seed < 0) Node::fail(n.child_path("seed"), "must be >= 0");
    cfg.scenario.noise.seed = static_cast<std::uint64_t>(seed);
    n.finish();
  }

  // reduction
  if (top.has("reduction")) {
    Node r(top.raw("reduction"), "reduction");
    const int f = static_cast<int>(cfg.scenario.frame.floor_masses.size());
    cfg.scenario.truth_modes = r.integer("truth_modes", 0);
    cfg.scenario.estimator_modes = r.integer("estimator_modes", 0);
    for (const char* k : {"truth_modes", "estimator_modes"}) {
      const int v = std::string(k) == "truth_modes" ? cfg.scenario.truth_modes : cfg.scenario.estimator_modes;
      if (v < 0 || v > f) Node::fail(r.child_path(k), "must be between 0 (all modes) and " + std::to_string(f));
    }
    r.finish();
  }

  // estimators
  if (top.has("estimators")) {
    const json& arr = top.raw("estimators");
    if (!arr.is_array() || arr.empty()) Node::fail("estimators", "expected a non-empty list");
    std::set<std::string> names;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      auto e = parse_estimator(arr[i], "estimators[" + std::to_string(i) + "]", i);
      if (!names.insert(e.name).second)
        Node::fail("estimators[" + std::to_string(i) + "].name", "duplicate name '" + e.name + "'");
      cfg.estimators.push_back(std::move(e));
    }
  }

  if (top.has("tune")) {
    Node t(top.raw("tune"), "tune");
    cfg.tune.estimator = t.string("estimator", "");
    cfg.tune.grid = parse_grid(t.raw("grid"), t.child_path("grid"));
    t.finish();
  }

  if (top.has("sweep")) {
    Node s(top.raw("sweep"), "sweep");
    cfg.sweep.estimator = s.string("estimator", "");
    cfg.sweep.windows = s.integers("windows");
    if (cfg.sweep.windows.empty()) Node::fail(s.child_path("windows"), "expected at least one window");
    for (int n : cfg.sweep.windows)
      if (n < 0 || n >= cfg.scenario.excitation.steps())
        Node::fail(s.child_path("windows"), "every N must satisfy 0 <= N < steps");
    if (s.has("retune")) cfg.sweep.retune = parse_grid(s.raw("retune"), s.child_path("retune"));
    s.finish();
  }

  if (top.has("output")) {
    Node o(top.raw("output"), "output");
    cfg.out_dir = o.string("dir", cfg.out_dir);
    o.finish();
  }
  top.finish();

  // Cross-references are checked up front as well.
  for (const auto* name : {&cfg.tune.estimator, &cfg.sweep.estimator})
    if (!name->empty()) (void)cfg.estimator(*name);
  for (const auto& e : cfg.estimators)
    if (e.spec.method == Method::us && e.spec.smoother.window >= cfg.scenario.excitation.steps())
      Node::fail("estimators", "window of '" + e.name + "' leaves no estimates (need N < steps)");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file '" + file + "'");
  json root;
  try {
    root = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(file + ": invalid JSON: " + e.what());
  }
  const auto slash = file.find_last_of('/');
  return parse_config(root, slash == std::string::npos ? "" : file.substr(0, slash));
}

}  // namespace usmooth::cli
