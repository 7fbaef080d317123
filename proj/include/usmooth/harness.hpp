// Simulation, observation noise, excitations, sensor layouts and the dimensionless
// error metric used to score estimators.
#pragma once

#include <usmooth/discretization.hpp>
#include <usmooth/linalg.hpp>
#include <usmooth/structural_model.hpp>
#include <usmooth/trace.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace usmooth {

// ---------------------------------------------------------------------------
// Excitations

enum class ExcitationKind { sinusoid, synthetic_ground_motion, sampled_series };

/// Row k-1 is the input sample p_k acting over (t_{k-1}, t_k], t_k = k*dt.
struct ExcitationSignal {
  ExcitationKind kind = ExcitationKind::sampled_series;
  Matrix samples;  // T x m (N for forces, m/s^2 for ground acceleration)
  double dt = 0.0;

  [[nodiscard]] int steps() const { return static_cast<int>(samples.rows()); }

  void validate() const {
    require(dt > 0.0, "excitation: dt must be positive");
    require(samples.rows() > 0 && samples.cols() > 0, "excitation: empty sample matrix");
    require(samples.allFinite(), "excitation: non-finite samples");
  }
};

/// amplitude * sin(omega * t_k), k = 1..T, on every column.
inline ExcitationSignal sinusoid_excitation(double amplitude, double omega, double dt, int steps,
                                            int inputs = 1) {
  require(dt > 0.0 && steps > 0 && inputs > 0, "sinusoid: invalid dt/steps/inputs");
  ExcitationSignal e{ExcitationKind::sinusoid, Matrix(steps, inputs), dt};
  for (int k = 1; k <= steps; ++k) e.samples.row(k - 1).setConstant(amplitude * std::sin(omega * k * dt));
  return e;
}

struct GroundMotionParams {
  double duration = 45.0;      // s
  double dt = 0.01;            // s
  double peak = 1.0;           // m/s^2, peak ground acceleration after scaling
  double ground_frequency = 15.0;  // rad/s, soil filter
  double ground_damping = 0.6;
  double highpass_frequency = 1.5;  // rad/s, removes the low-frequency drift
  double highpass_damping = 0.6;
  double ramp_up = 3.0;        // s, envelope rise
  double strong_end = 25.0;    // s, end of the constant part; decays linearly afterwards
  std::uint64_t seed = 1999;
};

/// Synthetic earthquake record: Gaussian white noise through a soil filter and a
/// high-pass filter (Clough-Penzien form), shaped by a trapezoidal envelope and
/// scaled to the requested peak.
inline ExcitationSignal synthetic_ground_motion(const GroundMotionParams& gm) {
  require(gm.dt > 0.0 && gm.duration > gm.dt, "ground motion: invalid duration/dt");
  require(gm.ground_frequency > 0.0 && gm.highpass_frequency > 0.0, "ground motion: filter frequencies must be > 0");
  require(gm.ramp_up >= 0.0 && gm.strong_end >= gm.ramp_up && gm.strong_end <= gm.duration,
          "ground motion: envelope breakpoints out of order");
  const int steps = static_cast<int>(std::lround(gm.duration / gm.dt));
  const double wg = gm.ground_frequency, zg = gm.ground_damping;
  const double wf = gm.highpass_frequency, zf = gm.highpass_damping;

  // States (xg, vg, xf, vf): soil oscillator driven by white noise w, high-pass stage
  // driven by the soil output a_g = -(2 zg wg vg + wg^2 xg).
  Matrix psi = Matrix::Zero(4, 4);
  psi(0, 1) = 1.0;
  psi(1, 0) = -wg * wg;
  psi(1, 1) = -2.0 * zg * wg;
  psi(2, 3) = 1.0;
  psi(3, 0) = wg * wg;
  psi(3, 1) = 2.0 * zg * wg;
  psi(3, 2) = -wf * wf;
  psi(3, 3) = -2.0 * zf * wf;
  Matrix xi = Matrix::Zero(4, 1);
  xi(1, 0) = -1.0;
  const DiscretePair ag = discretize_zoh(ContinuousStateSpace{psi, xi}, gm.dt);

  std::mt19937_64 rng(gm.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x = Vector::Zero(4);
  Vector out(steps);
  for (int k = 0; k < steps; ++k) {
    x = ag.A * x + ag.G * normal(rng);
    // High-pass of the soil acceleration a_g: s^2 / (s^2 + 2 zf wf s + wf^2).
    const double soil = -(2.0 * zg * wg * x(1) + wg * wg * x(0));
    out(k) = soil + 2.0 * zf * wf * x(3) + wf * wf * x(2);
  }
  for (int k = 0; k < steps; ++k) {
    const double t = (k + 1) * gm.dt;
    double env = 1.0;
    if (t < gm.ramp_up) env = t / gm.ramp_up;
    else if (t > gm.strong_end) env = std::max(0.0, (gm.duration - t) / (gm.duration - gm.strong_end));
    out(k) *= env;
  }
  const double peak = out.cwiseAbs().maxCoeff();
  if (peak > 0.0) out *= gm.peak / peak;
  ExcitationSignal e{ExcitationKind::synthetic_ground_motion, Matrix(steps, 1), gm.dt};
  e.samples.col(0) = out;
  return e;
}

// ---------------------------------------------------------------------------
// Simulation

/// Noise-free trajectory: row k-1 holds x_k, y_k and p_k.
struct TrueTrace {
  Matrix states;   // T x n
  Matrix outputs;  // T x d
  Matrix inputs;   // T x m
};

/// x_k = A x_{k-1} + G p_k, y_k = C x_k + H p_k for k = 1..T.
inline TrueTrace simulate_response(const DiscreteStateSpace& system, const ExcitationSignal& excitation,
                                   const Vector& x0) {
  excitation.validate();
  require(excitation.samples.cols() == system.input_dim(), "simulate: excitation width must equal m");
  require(std::abs(excitation.dt - system.dt) <= 1e-12 * system.dt, "simulate: excitation dt differs from model dt");
  require(x0.size() == system.state_dim(), "simulate: x0 dimension mismatch");
  const int T = excitation.steps();
  TrueTrace tr{Matrix(T, system.state_dim()), Matrix(T, system.output_dim()), excitation.samples};
  Vector x = x0;
  for (int k = 1; k <= T; ++k) {
    const Vector p = excitation.samples.row(k - 1).transpose();
    x = system.A * x + system.G * p;
    if (!x.allFinite()) throw NumericalError("simulate: non-finite response at step " + std::to_string(k));
    tr.states.row(k - 1) = x.transpose();
    tr.outputs.row(k - 1) = (system.C * x + system.H * p).transpose();
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Observation noise

struct NoiseSpec {
  double level = 0.0;  // fraction of each channel's RMS
  std::uint64_t seed = 0;
};

struct NoisyObservations {
  Matrix observations;  // T x d
  Vector noise_std;     // d, level * RMS_i
};

inline Vector column_rms(const Matrix& x) {
  Vector out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out(j) = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
  return out;
}

/// Adds N(0, (level * RMS_i)^2) per channel; deterministic for a given seed.
inline NoisyObservations add_noise(const Matrix& clean, const NoiseSpec& spec) {
  require(spec.level >= 0.0 && std::isfinite(spec.level), "add_noise: level must be >= 0");
  require(clean.rows() > 0, "add_noise: empty series");
  NoisyObservations out{clean, spec.level * column_rms(clean)};
  if (spec.level == 0.0) return out;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Column-major draw order: channel by channel.
  for (Eigen::Index j = 0; j < clean.cols(); ++j)
    for (Eigen::Index i = 0; i < clean.rows(); ++i) out.observations(i, j) += out.noise_std(j) * normal(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Sensor layouts of the eight-storey frame studies

inline SensorConfig make_sensors(std::initializer_list<std::pair<Quantity, int>> list) {
  SensorConfig c;
  for (const auto& [q, dof] : list) c.entries.push_back({q, dof});
  return c;
}

inline std::vector<std::string> sensor_configuration_names() {
  return {"1.1", "1.2", "2.1", "2.2", "2.3", "2.4", "rank-deficient-demo"};
}

/// Named layouts. "rank-deficient-demo" reuses the 1.2 layout; paired with a model
/// loaded on floors 2 and 5 it gives rank(H) = 1 < m = 2.
inline SensorConfig sensor_configuration(const std::string& name) {
  using enum Quantity;
  if (name == "1.1")
    return make_sensors({{displacement, 1}, {displacement, 3}, {displacement, 5}, {displacement, 7}, {velocity, 1}});
  if (name == "1.2" || name == "rank-deficient-demo")
    return make_sensors({{displacement, 1}, {displacement, 3}, {displacement, 5}, {displacement, 7}, {acceleration, 1}});
  if (name == "2.1")
    return make_sensors({{displacement, 3}, {displacement, 5}, {displacement, 7}, {velocity, 1}});
  if (name == "2.2")
    return make_sensors({{displacement, 1}, {displacement, 3}, {displacement, 5}, {displacement, 7}});
  if (name == "2.3")
    return make_sensors({{displacement, 3}, {displacement, 5}, {displacement, 7}, {acceleration, 1}});
  if (name == "2.4") return make_sensors({{velocity, 4}, {acceleration, 1}});
  throw InvalidArgument("unknown sensor configuration '" + name + "'");
}

// ---------------------------------------------------------------------------
// Dimensionless error

/// Physical-coordinate series: displacement and velocity per DOF plus inputs.
struct PhysicalSeries {
  Matrix displacement;  // T x f
  Matrix velocity;      // T x f
  Matrix input;         // T x m
};

/// Maps modal states [q; q'] to physical u = Z q, u' = Z q'.
inline PhysicalSeries to_physical(const Matrix& states, const Matrix& inputs, const Matrix& mode_shapes) {
  const auto r = mode_shapes.cols();
  require(states.cols() == 2 * r, "to_physical: state width must be 2r");
  return {states.leftCols(r) * mode_shapes.transpose(), states.rightCols(r) * mode_shapes.transpose(), inputs};
}

struct MetricsReport {
  double displacement = 0.0;  // sum over DOFs of rms(error)/max|truth|
  double velocity = 0.0;
  double input = 0.0;
  double overall = 0.0;
  Vector displacement_channels;
  Vector velocity_channels;
  Vector input_channels;
  int compared_steps = 0;
};

/// rms(estimate - truth) / max|truth| per channel over rows [0, rows).
inline Vector normalized_rms_error(const Matrix& estimate, const Matrix& truth, int rows,
                                   const std::string& label) {
  require(estimate.cols() == truth.cols(), "metrics: " + label + " channel count mismatch");
  require(rows > 0 && rows <= estimate.rows() && rows <= truth.rows(), "metrics: invalid comparison range");
  Vector out(truth.cols());
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    const double peak = truth.col(j).head(rows).cwiseAbs().maxCoeff();
    if (!(peak > 0.0))
      throw InvalidArgument("metrics: channel " + label + "[" + std::to_string(j + 1) + "] has zero peak");
    const Vector diff = estimate.col(j).head(rows) - truth.col(j).head(rows);
    out(j) = std::sqrt(diff.squaredNorm() / rows) / peak;
  }
  return out;
}

/// Sum of normalized RMS errors over displacements, velocities and inputs, restricted
/// to the first `rows` steps (all steps when rows <= 0).
inline MetricsReport dimensionless_error(const PhysicalSeries& estimate, const PhysicalSeries& truth,
                                         int rows = 0) {
  if (rows <= 0) rows = static_cast<int>(truth.displacement.rows());
  MetricsReport r;
  r.compared_steps = rows;
  r.displacement_channels = normalized_rms_error(estimate.displacement, truth.displacement, rows, "displacement");
  r.velocity_channels = normalized_rms_error(estimate.velocity, truth.velocity, rows, "velocity");
  r.input_channels = normalized_rms_error(estimate.input, truth.input, rows, "input");
  r.displacement = r.displacement_channels.sum();
  r.velocity = r.velocity_channels.sum();
  r.input = r.input_channels.sum();
  r.overall = r.displacement + r.velocity + r.input;
  return r;
}

}  // namespace usmooth
