// First-order and discrete-time state-space forms of a (reduced) structural model.
//
// State ordering is [modal displacement; modal velocity]. The discrete recursion is
//   x_k = A x_{k-1} + G p_k,   y_k = C x_k + H p_k,
// i.e. the input sample p_k is held constant over (t_{k-1}, t_k].
#pragma once

#include <usmooth/linalg.hpp>
#include <usmooth/structural_model.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include <string>
#include <vector>

namespace usmooth {

/// x' = Psi x + Xi p.
struct ContinuousStateSpace {
  Matrix system_matrix;  // Psi, n x n
  Matrix input_matrix;   // Xi, n x m
};

enum class Quantity { displacement, velocity, acceleration };

inline std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::displacement: return "displacement";
    case Quantity::velocity: return "velocity";
    case Quantity::acceleration: return "acceleration";
  }
  return "unknown";
}

inline Quantity quantity_from_string(const std::string& s) {
  if (s == "displacement" || s == "disp") return Quantity::displacement;
  if (s == "velocity" || s == "vel") return Quantity::velocity;
  if (s == "acceleration" || s == "acc") return Quantity::acceleration;
  throw InvalidArgument("unknown sensor quantity '" + s + "'");
}

struct Sensor {
  Quantity quantity = Quantity::displacement;
  int dof = 1;  // 1-based index in full-model coordinates

  friend bool operator==(const Sensor&, const Sensor&) = default;
};

struct SensorConfig {
  std::vector<Sensor> entries;

  [[nodiscard]] int size() const { return static_cast<int>(entries.size()); }
  [[nodiscard]] int count(Quantity q) const {
    int c = 0;
    for (const auto& e : entries) c += (e.quantity == q);
    return c;
  }
  [[nodiscard]] std::string channel_name(int i) const {
    const auto& e = entries.at(i);
    const char* prefix = e.quantity == Quantity::displacement ? "disp"
                         : e.quantity == Quantity::velocity   ? "vel"
                                                              : "acc";
    return std::string(prefix) + "_F" + std::to_string(e.dof);
  }
};

/// Time-invariant discrete model with its noise covariances.
struct DiscreteStateSpace {
  Matrix A;  // n x n
  Matrix G;  // n x m
  Matrix C;  // d x n
  Matrix H;  // d x m
  double dt = 0.0;
  Matrix Q;  // n x n, modelling-error covariance
  Matrix R;  // d x d, observation-noise covariance

  [[nodiscard]] int state_dim() const { return static_cast<int>(A.rows()); }
  [[nodiscard]] int input_dim() const { return static_cast<int>(G.cols()); }
  [[nodiscard]] int output_dim() const { return static_cast<int>(C.rows()); }

  void validate() const {
    const auto n = A.rows();
    require(n > 0 && A.cols() == n, "state space: A must be square and non-empty");
    require(G.rows() == n && G.cols() > 0, "state space: G must be n x m");
    require(C.cols() == n && C.rows() > 0, "state space: C must be d x n");
    require(H.rows() == C.rows() && H.cols() == G.cols(), "state space: H must be d x m");
    require(dt > 0.0, "state space: dt must be positive");
    require(Q.rows() == n && Q.cols() == n, "state space: Q must be n x n");
    require(R.rows() == C.rows() && R.cols() == C.rows(), "state space: R must be d x d");
    require(A.allFinite() && G.allFinite() && C.allFinite() && H.allFinite(),
            "state space: non-finite entries");
  }
};

/// Psi = [[0, I], [-M^-1 K, -M^-1 C]],  Xi = [[0], [M^-1 B]].
inline ContinuousStateSpace to_continuous(const ReducedModel& reduced) {
  const int r = reduced.mode_count();
  const int m = reduced.input_count();
  Eigen::FullPivLU<Matrix> lu(reduced.mass);
  if (!lu.isInvertible()) throw NumericalError("to_continuous: reduced mass matrix is singular");
  ContinuousStateSpace out;
  out.system_matrix = Matrix::Zero(2 * r, 2 * r);
  out.system_matrix.topRightCorner(r, r).setIdentity();
  out.system_matrix.bottomLeftCorner(r, r) = -lu.solve(reduced.stiffness);
  out.system_matrix.bottomRightCorner(r, r) = -lu.solve(reduced.damping);
  out.input_matrix = Matrix::Zero(2 * r, m);
  out.input_matrix.bottomRows(r) = lu.solve(reduced.input_distribution);
  return out;
}

struct DiscretePair {
  Matrix A;
  Matrix G;
};

/// Upper-right block of exp([[Psi, Xi], [0, 0]] dt); valid for singular Psi.
inline DiscretePair discretize_zoh_augmented(const ContinuousStateSpace& cont, double dt) {
  require(dt > 0.0, "discretize: dt must be positive");
  const auto n = cont.system_matrix.rows();
  const auto m = cont.input_matrix.cols();
  Matrix aug = Matrix::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = cont.system_matrix * dt;
  aug.topRightCorner(n, m) = cont.input_matrix * dt;
  const Matrix e = aug.exp();
  if (!e.allFinite()) throw NumericalError("discretize: non-finite matrix exponential");
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

/// A = exp(Psi dt), G = (A - I) Psi^-1 Xi, falling back to the augmented exponential
/// when Psi is singular or badly conditioned.
inline DiscretePair discretize_zoh(const ContinuousStateSpace& cont, double dt) {
  require(dt > 0.0, "discretize: dt must be positive");
  const Matrix& psi = cont.system_matrix;
  const auto n = psi.rows();
  require(psi.cols() == n && cont.input_matrix.rows() == n, "discretize: dimension mismatch");
  require(psi.allFinite() && cont.input_matrix.allFinite(), "discretize: non-finite entries");
  const Matrix a = (psi * dt).exp();
  if (!a.allFinite()) throw NumericalError("discretize: non-finite matrix exponential");
  Eigen::PartialPivLU<Matrix> lu(psi);
  if (n == 0 || !(lu.rcond() > 1e-12)) return discretize_zoh_augmented(cont, dt);
  // (A - I) Psi^-1 Xi == Psi^-1 (A - I) Xi since A commutes with Psi.
  const Matrix g = lu.solve((a - Matrix::Identity(n, n)) * cont.input_matrix);
  return {a, g};
}

struct OutputPair {
  Matrix C;
  Matrix H;
};

/// Sensor rows in modal coordinates: displacement -> z_j q, velocity -> z_j q',
/// acceleration -> z_j (-M^-1 K q - M^-1 C q' + M^-1 B p).
inline OutputPair build_output_matrices(const ReducedModel& reduced, const SensorConfig& sensors) {
  require(!sensors.entries.empty(), "sensor config must not be empty");
  const int r = reduced.mode_count();
  const int m = reduced.input_count();
  const int f = reduced.dof_count();
  const int d = sensors.size();
  Eigen::FullPivLU<Matrix> lu(reduced.mass);
  if (!lu.isInvertible()) throw NumericalError("output matrices: reduced mass matrix is singular");
  const Matrix minv_k = lu.solve(reduced.stiffness);
  const Matrix minv_c = lu.solve(reduced.damping);
  const Matrix minv_b = lu.solve(reduced.input_distribution);
  OutputPair out{Matrix::Zero(d, 2 * r), Matrix::Zero(d, m)};
  for (int i = 0; i < d; ++i) {
    const auto& s = sensors.entries[i];
    require(s.dof >= 1 && s.dof <= f,
            "sensor " + std::to_string(i) + ": dof " + std::to_string(s.dof) + " out of range");
    const Eigen::RowVectorXd z = reduced.basis.mode_shapes.row(s.dof - 1);
    switch (s.quantity) {
      case Quantity::displacement: out.C.block(i, 0, 1, r) = z; break;
      case Quantity::velocity: out.C.block(i, r, 1, r) = z; break;
      case Quantity::acceleration:
        out.C.block(i, 0, 1, r) = -z * minv_k;
        out.C.block(i, r, 1, r) = -z * minv_c;
        out.H.row(i) = z * minv_b;
        break;
    }
  }
  return out;
}

/// Full pipeline: reduced model + sensors -> discrete model with the given noise.
inline DiscreteStateSpace make_discrete_model(const ReducedModel& reduced, const SensorConfig& sensors,
                                              double dt, const Matrix& Q, const Matrix& R) {
  const ContinuousStateSpace cont = to_continuous(reduced);
  const DiscretePair ag = discretize_zoh(cont, dt);
  const OutputPair ch = build_output_matrices(reduced, sensors);
  DiscreteStateSpace sys{ag.A, ag.G, ch.C, ch.H, dt, Q, R};
  sys.validate();
  return sys;
}

}  // namespace usmooth
