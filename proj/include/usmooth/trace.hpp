// Time-indexed estimator output shared by the smoother and the AKF baseline.
#pragma once

#include <usmooth/linalg.hpp>

#include <vector>

namespace usmooth {

/// Row k-1 holds the estimate for time step k (t = k*dt), k = 1..T.
/// Only the first `emitted` rows carry estimates; the rest are NaN.
struct EstimateTrace {
  double dt = 0.0;
  int emitted = 0;
  Matrix inputs;       // T x m
  Matrix states;       // T x n
  Matrix input_var;    // T x m, diagonal of the input error covariance
  Matrix state_var;    // T x n, diagonal of the state error covariance
  Vector input_var_trace;     // T, trace of the input error covariance
  Vector weight_condition;    // T, condition estimate of the input weighting matrix (NaN for AKF)
  std::vector<int> retained_input_directions;  // per step
  std::vector<int> retained_gain_directions;   // per step

  [[nodiscard]] int steps() const { return static_cast<int>(inputs.rows()); }

  static EstimateTrace allocate(int steps, int n, int m, double dt) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EstimateTrace t;
    t.dt = dt;
    t.inputs = Matrix::Constant(steps, m, nan);
    t.states = Matrix::Constant(steps, n, nan);
    t.input_var = Matrix::Constant(steps, m, nan);
    t.state_var = Matrix::Constant(steps, n, nan);
    t.input_var_trace = Vector::Constant(steps, nan);
    t.weight_condition = Vector::Constant(steps, nan);
    t.retained_input_directions.assign(steps, 0);
    t.retained_gain_directions.assign(steps, 0);
    return t;
  }
};

}  // namespace usmooth
