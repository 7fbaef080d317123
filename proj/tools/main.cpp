// usmooth: simulations, estimations, comparisons, tuning and window sweeps from a JSON config.
//
// Exit status: 0 success, 2 invalid config or arguments, 3 estimator failure, 4 I/O failure.

#include "config.hpp"
#include "output.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace usmooth;
using namespace usmooth::cli;

namespace {

constexpr int kConfigError = 2;
constexpr int kEstimatorError = 3;
constexpr int kIoError = 4;

/// Numerical failure of a named estimator; the message carries the step index.
struct EstimatorFailure : std::runtime_error {
  EstimatorFailure(std::string estimator, const std::string& what)
      : std::runtime_error(what), name(std::move(estimator)) {}
  std::string name;
};

struct Globals {
  std::optional<int> seed;
  std::string out_dir;
  std::string format = "csv";
  std::size_t workers = default_workers();
};

struct Loaded {
  ExperimentConfig cfg;
  OutputSet out;
};

Loaded load(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = load_config(path);
  if (g.seed) {
    if (*g.seed < 0) throw ConfigError("--seed: must be >= 0");
    cfg.scenario.noise.seed = static_cast<std::uint64_t>(*g.seed);
  }
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  const Format f = g.format == "json" ? Format::json : Format::csv;
  OutputSet out(cfg.out_dir, f);
  return {std::move(cfg), std::move(out)};
}

std::vector<std::string> floor_names(const std::string& prefix, int floors) {
  std::vector<std::string> n;
  for (int i = 1; i <= floors; ++i) n.push_back(prefix + "_F" + std::to_string(i));
  return n;
}

PreparedScenario prepare(const ExperimentConfig& cfg) {
  try {
    return prepare_scenario(cfg.scenario);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

Table truth_table(const ExperimentConfig& cfg, const PreparedScenario& s) {
  Table t;
  t.dt = s.dt;
  const int T = s.steps();
  const int f = static_cast<int>(s.truth_physical.displacement.cols());
  t.add_block(floor_names("disp", f), s.truth_physical.displacement, T);
  t.add_block(floor_names("vel", f), s.truth_physical.velocity, T);
  t.add_block(cfg.input_names, s.truth_physical.input, T);
  return t;
}

std::vector<std::string> sensor_names(const SensorConfig& sensors) {
  std::vector<std::string> n;
  for (int i = 0; i < sensors.size(); ++i) n.push_back(sensors.channel_name(i));
  return n;
}

Table observation_table(const PreparedScenario& s) {
  Table t;
  t.dt = s.dt;
  t.add_block(sensor_names(s.sensors), s.observed.observations, s.steps());
  return t;
}

Table estimate_table(const ExperimentConfig& cfg, const EstimationResult& r) {
  Table t;
  t.dt = r.trace.dt;
  const int rows = r.trace.emitted;
  const int f = static_cast<int>(r.physical.displacement.cols());
  t.add_block(floor_names("disp", f), r.physical.displacement, rows);
  t.add_block(floor_names("vel", f), r.physical.velocity, rows);
  t.add_block(cfg.input_names, r.physical.input, rows);
  std::vector<std::string> var_names;
  for (const auto& n : cfg.input_names) var_names.push_back("var_" + n);
  t.add_block(var_names, r.trace.input_var, rows);
  t.add("input_var_trace", r.trace.input_var_trace.head(rows));
  return t;
}

/// Replaces the simulated observations by a file written by `simulate`.
void load_observations(PreparedScenario& s, const std::string& file) {
  CsvData d;
  try {
    d = read_csv(file);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("--observations: ") + e.what());
  }
  const auto names = sensor_names(s.sensors);
  if (d.header.size() != names.size() + 2 || d.header[0] != "step" || d.header[1] != "time")
    throw ConfigError("--observations: expected columns step,time and one per sensor");
  for (std::size_t j = 0; j < names.size(); ++j)
    if (d.header[j + 2] != names[j])
      throw ConfigError("--observations: column " + std::to_string(j + 3) + " is '" + d.header[j + 2] +
                        "' but the config's sensor is '" + names[j] + "'");
  if (d.values.rows() != s.steps())
    throw ConfigError("--observations: " + std::to_string(d.values.rows()) + " rows but the excitation has " +
                      std::to_string(s.steps()) + " steps");
  s.observed.observations = d.values.rightCols(static_cast<Eigen::Index>(names.size()));
}

EstimationResult run_named(const PreparedScenario& s, const NamedEstimator& e, int compare_rows = 0) {
  try {
    return run_estimator(s, e.spec, compare_rows);
  } catch (const NumericalError& ex) {
    throw EstimatorFailure(e.name, ex.what());
  }
}

std::string summary_line(const std::string& name, const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s sigma_delta=%.6g  (disp %.6g, vel %.6g, input %.6g; %d steps)",
                name.c_str(), m.overall, m.displacement, m.velocity, m.input, m.compared_steps);
  return buf;
}

nlohmann::json estimator_json(const NamedEstimator& e) {
  nlohmann::json j{{"name", e.name}, {"method", to_string(e.spec.method)}, {"Qx", e.spec.Qx}};
  if (e.spec.method == Method::us) {
    j["window"] = e.spec.smoother.window;
    j["pinv"] = {{"enabled", e.spec.smoother.pinv_enabled}, {"tolerance", e.spec.smoother.pinv_tolerance}};
  } else {
    j["Qp"] = e.spec.Qp;
  }
  return j;
}

std::string stem_for(const std::string& name) { return "estimate_" + name; }

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(const std::string& path, const Globals& g) {
  auto [cfg, out] = load(path, g);
  const PreparedScenario s = prepare(cfg);
  out.table("truth", truth_table(cfg, s));
  out.table("observations", observation_table(s));
  const Vector freq = s.truth_model.basis.frequencies;
  out.document("scenario.json", {{"steps", s.steps()},
                                 {"dt", s.dt},
                                 {"noise_seed", cfg.scenario.noise.seed},
                                 {"noise_std", vector_json(s.observed.noise_std)},
                                 {"natural_frequencies", vector_json(freq)}});
  out.write_all();
  std::cout << "simulated " << s.steps() << " steps, " << s.sensors.size() << " sensors -> " << cfg.out_dir << "\n";
  return 0;
}

/// Runs every listed estimator on shared observations and scores them over the steps
/// where all of them emit estimates.
int run_many(ExperimentConfig& cfg, OutputSet& out, const std::vector<const NamedEstimator*>& list,
             bool write_inputs) {
  const PreparedScenario s = prepare(cfg);
  std::vector<EstimationResult> results;
  int common = s.steps();
  for (const auto* e : list) {
    results.push_back(run_named(s, *e));
    common = std::min(common, results.back().trace.emitted);
  }
  nlohmann::json metrics = nlohmann::json::array();
  for (std::size_t i = 0; i < list.size(); ++i) {
    results[i].metrics = dimensionless_error(results[i].physical, s.truth_physical, common);
    nlohmann::json m = estimator_json(*list[i]);
    m["emitted_steps"] = results[i].trace.emitted;
    m["metrics"] = metrics_json(results[i].metrics);
    metrics.push_back(m);
    out.table(stem_for(list[i]->name), estimate_table(cfg, results[i]));
  }
  if (write_inputs) {
    out.table("truth", truth_table(cfg, s));
    out.table("observations", observation_table(s));
  }
  out.document("metrics.json", {{"noise_seed", cfg.scenario.noise.seed}, {"estimators", metrics}});
  out.write_all();
  for (std::size_t i = 0; i < list.size(); ++i) std::cout << summary_line(list[i]->name, results[i].metrics) << "\n";
  return 0;
}

int cmd_run(const std::string& path, const Globals& g) {
  auto [cfg, out] = load(path, g);
  std::vector<const NamedEstimator*> list;
  for (const auto& e : cfg.estimators) list.push_back(&e);
  if (list.empty()) throw ConfigError("estimators: at least one estimator is required");
  return run_many(cfg, out, list, true);
}

int cmd_compare(const std::string& path, const Globals& g) {
  auto [cfg, out] = load(path, g);
  std::vector<const NamedEstimator*> list;
  bool us = false, akf = false;
  for (const auto& e : cfg.estimators) {
    list.push_back(&e);
    (e.spec.method == Method::us ? us : akf) = true;
  }
  if (!us || !akf) throw ConfigError("estimators: compare needs at least one \"us\" and one \"akf\" estimator");
  return run_many(cfg, out, list, true);
}

int cmd_estimate(const std::string& path, const std::string& name, const std::string& observations,
                 const Globals& g) {
  auto [cfg, out] = load(path, g);
  const NamedEstimator& e = cfg.estimator(name);
  PreparedScenario s = prepare(cfg);
  if (!observations.empty()) load_observations(s, observations);
  const EstimationResult r = run_named(s, e);
  nlohmann::json m = estimator_json(e);
  m["emitted_steps"] = r.trace.emitted;
  m["metrics"] = metrics_json(r.metrics);
  out.table(stem_for(e.name), estimate_table(cfg, r));
  out.document("metrics.json", {{"noise_seed", cfg.scenario.noise.seed}, {"estimators", {m}}});
  out.write_all();
  std::cout << summary_line(e.name, r.metrics) << "\n";
  return 0;
}

/// Applies grid values (natural units) to an estimator.
EstimatorSpec with_params(EstimatorSpec spec, const std::vector<GridSearchSpec>& grid, const std::vector<double>& v) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].parameter == "Qx") spec.Qx = v[i];
    else if (grid[i].parameter == "Qp") spec.Qp = v[i];
    else {
      spec.smoother.pinv_enabled = true;
      spec.smoother.pinv_tolerance = v[i];
    }
  }
  return spec;
}

void check_grid(const NamedEstimator& e, const std::vector<GridSearchSpec>& grid, const std::string& where) {
  for (const auto& p : grid) {
    if (p.parameter == "Qp" && e.spec.method != Method::akf)
      throw ConfigError(where + ": Qp only applies to akf estimators");
    if (p.parameter == "pinv_tolerance" && e.spec.method != Method::us)
      throw ConfigError(where + ": pinv_tolerance only applies to us estimators");
  }
}

int cmd_tune(const std::string& path, const Globals& g) {
  auto [cfg, out] = load(path, g);
  if (cfg.tune.grid.empty()) throw ConfigError("tune: block is required for the tune command");
  const NamedEstimator& e = cfg.estimator(cfg.tune.estimator);
  check_grid(e, cfg.tune.grid, "tune.grid");
  const PreparedScenario s = prepare(cfg);
  const auto& grid = cfg.tune.grid;
  GridSearchResult r;
  try {
    r = grid_search([&](const std::vector<double>& v) { return score_or_nan(s, with_params(e.spec, grid, v)); },
                    grid, g.workers);
  } catch (const NumericalError& ex) {
    throw EstimatorFailure(e.name, std::string("every grid point failed: ") + ex.what());
  }

  Table t;
  t.with_time = false;
  const auto n = static_cast<Eigen::Index>(r.surface.size());
  for (std::size_t p = 0; p < grid.size(); ++p) {
    Vector col(n);
    for (Eigen::Index i = 0; i < n; ++i) col(i) = r.surface[i].log10_params[p];
    t.add("log10_" + grid[p].parameter, col);
  }
  Vector obj(n);
  for (Eigen::Index i = 0; i < n; ++i)
    obj(i) = r.surface[i].objective.value_or(std::numeric_limits<double>::quiet_NaN());
  t.add("sigma_delta", obj);
  out.table("tune_surface", t);

  nlohmann::json best;
  const auto best_values = r.best_params();
  for (std::size_t p = 0; p < grid.size(); ++p) best[grid[p].parameter] = best_values[p];
  out.document("tune.json", {{"estimator", e.name},
                             {"noise_seed", cfg.scenario.noise.seed},
                             {"best", best},
                             {"best_sigma_delta", r.best_objective},
                             {"points", r.surface.size()}});
  out.write_all();
  std::string desc;
  for (std::size_t p = 0; p < grid.size(); ++p) desc += " " + grid[p].parameter + "=" + format_double(best_values[p]);
  std::cout << summary_line(e.name, [&] {
    return run_estimator(s, with_params(e.spec, grid, best_values)).metrics;
  }()) << "  best:" << desc << "\n";
  return 0;
}

int cmd_sweep(const std::string& path, const Globals& g) {
  auto [cfg, out] = load(path, g);
  if (cfg.sweep.windows.empty()) throw ConfigError("sweep: block is required for the sweep command");
  const NamedEstimator& e = cfg.estimator(cfg.sweep.estimator);
  if (e.spec.method != Method::us) throw ConfigError("sweep.estimator: window sweeps need a \"us\" estimator");
  check_grid(e, cfg.sweep.retune, "sweep.retune");
  const PreparedScenario s = prepare(cfg);
  // Every window is scored over the same steps.
  const int rows = s.steps() - *std::max_element(cfg.sweep.windows.begin(), cfg.sweep.windows.end());
  const bool retune = !cfg.sweep.retune.empty();
  std::vector<std::vector<double>> chosen(cfg.sweep.windows.size());

  auto objective = [&](int N) {
    EstimatorSpec spec = e.spec;
    spec.smoother.window = N;
    if (!retune) {
      const double v = score_or_nan(s, spec, rows);
      if (std::isnan(v)) throw NumericalError("estimator failed");
      return v;
    }
    const auto r = grid_search(
        [&](const std::vector<double>& v) { return score_or_nan(s, with_params(spec, cfg.sweep.retune, v), rows); },
        cfg.sweep.retune, 1);
    const auto idx = std::find(cfg.sweep.windows.begin(), cfg.sweep.windows.end(), N) - cfg.sweep.windows.begin();
    chosen[idx] = r.best_params();
    return r.best_objective;
  };
  const auto sweep = window_sweep(objective, cfg.sweep.windows, retune, g.workers);

  Table t;
  t.with_time = false;
  const auto n = static_cast<Eigen::Index>(sweep.size());
  Vector win(n), obj(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    win(i) = sweep[i].window;
    obj(i) = sweep[i].objective.value_or(std::numeric_limits<double>::quiet_NaN());
  }
  t.add("window", win);
  t.add("sigma_delta", obj);
  for (std::size_t p = 0; p < cfg.sweep.retune.size(); ++p) {
    Vector col = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < n; ++i)
      if (!chosen[i].empty()) col(i) = chosen[i][p];
    t.add(cfg.sweep.retune[p].parameter, col);
  }
  out.table("sweep", t);
  nlohmann::json rows_json = nlohmann::json::array();
  for (Eigen::Index i = 0; i < n; ++i) {
    nlohmann::json r{{"window", sweep[i].window}, {"tuned", sweep[i].tuned}};
    if (sweep[i].objective) r["sigma_delta"] = *sweep[i].objective;
    else r["sigma_delta"] = nullptr;
    for (std::size_t p = 0; p < cfg.sweep.retune.size() && !chosen[i].empty(); ++p)
      r[cfg.sweep.retune[p].parameter] = chosen[i][p];
    rows_json.push_back(r);
  }
  out.document("sweep.json", {{"estimator", e.name},
                              {"noise_seed", cfg.scenario.noise.seed},
                              {"compared_steps", rows},
                              {"rows", rows_json}});
  out.write_all();
  for (const auto& r : sweep) {
    std::cout << "N=" << r.window << "  sigma_delta=";
    if (r.objective) std::cout << format_double(*r.objective) << "\n";
    else std::cout << "failed\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint input and state estimation for linear shear-frame models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override noise.seed");
  app.add_option("--out-dir", g.out_dir, "Override output.dir");
  app.add_option("--format", g.format, "Trace file format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--workers", g.workers, "Threads for tune and sweep")->check(CLI::PositiveNumber);

  std::string config, estimator, observations;
  auto add = [&](const char* name, const char* help) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("config", config, "Experiment config (JSON)")->required();
    return sc;
  };
  auto* simulate = add("simulate", "Simulate the truth and write noisy observations");
  auto* estimate = add("estimate", "Run one estimator");
  estimate->add_option("--estimator", estimator, "Estimator name (default: first in the config)");
  estimate->add_option("--observations", observations, "Observation CSV written by simulate");
  auto* compare = add("compare", "Run us and akf estimators on shared observations");
  auto* run = add("run", "Simulate and run every configured estimator");
  auto* tune = add("tune", "Grid-search estimator hyperparameters");
  auto* sweep = add("sweep", "Sweep the smoothing window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(config, g);
    if (estimate->parsed()) return cmd_estimate(config, estimator, observations, g);
    if (compare->parsed()) return cmd_compare(config, g);
    if (run->parsed()) return cmd_run(config, g);
    if (tune->parsed()) return cmd_tune(config, g);
    if (sweep->parsed()) return cmd_sweep(config, g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const EstimatorFailure& e) {
    std::cerr << "estimator '" << e.name << "' failed: " << e.what() << "\n";
    return kEstimatorError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  }
  return 0;
}
