// Experiment assembly: truth simulation on one model, estimation on another (possibly
// reduced) model, scoring, grid searches and window sweeps.
#pragma once

#include <usmooth/akf.hpp>
#include <usmooth/harness.hpp>
#include <usmooth/smoother.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace usmooth {

struct ScenarioSpec {
  ShearFrameSpec frame;
  bool ground_motion = false;  // input is ground acceleration instead of floor forces
  ExcitationSignal excitation;
  SensorConfig sensors;
  NoiseSpec noise;
  int truth_modes = 0;      // 0 = all modes
  int estimator_modes = 0;  // 0 = all modes
};

/// Simulated truth and noisy observations, plus the estimator-side model pieces.
struct PreparedScenario {
  SecondOrderModel model;
  ReducedModel truth_model;
  ReducedModel estimator_model;
  SensorConfig sensors;
  DiscreteStateSpace truth_system;
  TrueTrace truth;
  PhysicalSeries truth_physical;
  NoisyObservations observed;
  double dt = 0.0;

  [[nodiscard]] int steps() const { return static_cast<int>(observed.observations.rows()); }

  /// Estimator model with Q = Qx I and R = diag(noise variances).
  [[nodiscard]] DiscreteStateSpace estimator_system(double Qx) const {
    const int n = 2 * estimator_model.mode_count();
    Matrix R = observed.noise_std.array().square().matrix().asDiagonal();
    return make_discrete_model(estimator_model, sensors, dt, Qx * Matrix::Identity(n, n), R);
  }
};

inline PreparedScenario prepare_scenario(const ScenarioSpec& spec) {
  spec.excitation.validate();
  PreparedScenario s;
  s.model = build_shear_frame(spec.frame);
  if (spec.ground_motion) s.model = ground_motion_model(s.model);
  const int f = s.model.dof_count();
  const int tm = spec.truth_modes > 0 ? spec.truth_modes : f;
  const int em = spec.estimator_modes > 0 ? spec.estimator_modes : f;
  require(spec.excitation.samples.cols() == s.model.input_count(),
          "scenario: excitation has " + std::to_string(spec.excitation.samples.cols()) +
              " columns but the model has " + std::to_string(s.model.input_count()) + " inputs");
  s.truth_model = modal_reduce(s.model, tm);
  s.estimator_model = modal_reduce(s.model, em);
  s.sensors = spec.sensors;
  s.dt = spec.excitation.dt;
  const int d = spec.sensors.size();
  s.truth_system = make_discrete_model(s.truth_model, s.sensors, s.dt, Matrix::Zero(2 * tm, 2 * tm),
                                       Matrix::Zero(d, d));
  s.truth = simulate_response(s.truth_system, spec.excitation, Vector::Zero(2 * tm));
  s.truth_physical = to_physical(s.truth.states, s.truth.inputs, s.truth_model.basis.mode_shapes);
  s.observed = add_noise(s.truth.outputs, spec.noise);
  return s;
}

enum class Method { us, akf };

inline std::string to_string(Method m) { return m == Method::us ? "us" : "akf"; }

struct EstimatorSpec {
  Method method = Method::us;
  SmootherConfig smoother;
  double Qx = 0.0;
  double Qp = 0.0;  // AKF only
};

struct EstimationResult {
  EstimateTrace trace;
  PhysicalSeries physical;
  MetricsReport metrics;
};

/// Runs one estimator from zero initial conditions and scores it over the first
/// `compare_rows` steps (default: every emitted step).
inline EstimationResult run_estimator(const PreparedScenario& s, const EstimatorSpec& est,
                                      int compare_rows = 0) {
  const DiscreteStateSpace sys = s.estimator_system(est.Qx);
  const int n = sys.state_dim();
  const Vector x0 = Vector::Zero(n);
  const Matrix P0 = Matrix::Zero(n, n);
  EstimationResult r;
  if (est.method == Method::us) {
    r.trace = UniversalSmoother(sys, est.smoother).run(s.observed.observations, x0, P0);
  } else {
    r.trace = akf_run(augment(sys, est.Qx, est.Qp), s.observed.observations, x0, P0);
  }
  r.physical = to_physical(r.trace.states, r.trace.inputs, s.estimator_model.basis.mode_shapes);
  const int rows = compare_rows > 0 ? std::min(compare_rows, r.trace.emitted) : r.trace.emitted;
  r.metrics = dimensionless_error(r.physical, s.truth_physical, rows);
  return r;
}

/// Overall error or NaN when the estimator fails numerically.
inline double score_or_nan(const PreparedScenario& s, const EstimatorSpec& est, int compare_rows = 0) {
  try {
    const double v = run_estimator(s, est, compare_rows).metrics.overall;
    return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSearchSpec {
  std::string parameter;
  double log10_lo = 0.0;
  double log10_hi = 0.0;
  double log10_step = 0.1;

  void validate() const {
    require(log10_lo < log10_hi, "grid spec '" + parameter + "': lo must be < hi");
    require(log10_step > 0.0, "grid spec '" + parameter + "': step must be > 0");
  }

  /// Log10 grid values lo, lo+step, ..., <= hi.
  [[nodiscard]] std::vector<double> log10_values() const {
    validate();
    const auto count = static_cast<int>(std::floor((log10_hi - log10_lo) / log10_step + 1e-9)) + 1;
    std::vector<double> v(count);
    for (int i = 0; i < count; ++i) v[i] = std::round((log10_lo + i * log10_step) * 1e10) / 1e10;
    return v;
  }
};

struct GridPoint {
  std::vector<double> log10_params;
  std::optional<double> objective;  // absent when the run failed
};

struct GridSearchResult {
  std::vector<GridPoint> surface;  // ordered by grid index, last parameter fastest
  std::vector<double> best_log10;
  double best_objective = 0.0;

  [[nodiscard]] std::vector<double> best_params() const {
    std::vector<double> out;
    for (double v : best_log10) out.push_back(std::pow(10.0, v));
    return out;
  }
};

/// Objective receives linear-scale parameter values; a NaN/inf return or a thrown
/// NumericalError marks the point as failed.
using GridObjective = std::function<double(const std::vector<double>&)>;

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Exhaustive search over 1 or 2 log-spaced parameters. Points are evaluated in
/// parallel and reduced in grid order; ties go to the smaller parameter values.
inline GridSearchResult grid_search(const GridObjective& objective, const std::vector<GridSearchSpec>& specs,
                                    std::size_t workers = 0) {
  require(!specs.empty() && specs.size() <= 2, "grid search: 1 or 2 parameters supported");
  std::vector<std::vector<double>> axes;
  for (const auto& s : specs) axes.push_back(s.log10_values());
  std::vector<std::vector<double>> points;
  if (axes.size() == 1) {
    for (double a : axes[0]) points.push_back({a});
  } else {
    for (double a : axes[0])
      for (double b : axes[1]) points.push_back({a, b});
  }

  GridSearchResult result;
  result.surface.resize(points.size());
  auto eval = [&](std::size_t i) {
    std::vector<double> lin;
    for (double v : points[i]) lin.push_back(std::pow(10.0, v));
    GridPoint gp{points[i], std::nullopt};
    try {
      const double v = objective(lin);
      if (std::isfinite(v)) gp.objective = v;
    } catch (const NumericalError&) {
    }
    result.surface[i] = std::move(gp);
  };
  if (workers == 0) workers = default_workers();
  if (workers <= 1) {
    for (std::size_t i = 0; i < points.size(); ++i) eval(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < points.size(); i += workers) eval(i);
      }));
    for (auto& j : jobs) j.get();
  }

  bool found = false;
  for (const auto& gp : result.surface) {
    if (!gp.objective) continue;
    // Strict improvement only: grid order is ascending, so ties keep the smaller values.
    if (!found || *gp.objective < result.best_objective) {
      result.best_objective = *gp.objective;
      result.best_log10 = gp.log10_params;
      found = true;
    }
  }
  if (!found) throw NumericalError("grid search: every grid point failed");
  return result;
}

// ---------------------------------------------------------------------------
// Window sweep

struct WindowSweepRow {
  int window = 0;
  std::optional<double> objective;
  bool tuned = false;  // hyperparameters re-tuned for this N
};

/// Evaluates `objective(N)` for each window; rows keep the input order.
inline std::vector<WindowSweepRow> window_sweep(const std::function<double(int)>& objective,
                                                const std::vector<int>& windows, bool tuned = false,
                                                std::size_t workers = 0) {
  for (int n : windows) require(n >= 0, "window sweep: N must be >= 0");
  std::vector<WindowSweepRow> rows(windows.size());
  auto eval = [&](std::size_t i) {
    WindowSweepRow r{windows[i], std::nullopt, tuned};
    try {
      const double v = objective(windows[i]);
      if (std::isfinite(v)) r.objective = v;
    } catch (const NumericalError&) {
    }
    rows[i] = r;
  };
  if (workers == 0) workers = default_workers();
  if (workers <= 1) {
    for (std::size_t i = 0; i < windows.size(); ++i) eval(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < windows.size(); i += workers) eval(i);
      }));
    for (auto& j : jobs) j.get();
  }
  return rows;
}

}  // namespace usmooth
