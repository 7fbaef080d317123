// Universal Smoothing: joint minimum-variance unbiased input and state estimation
// over an extended observation window of N future samples.
//
// Per step k the smoother
//   1. weights the extended innovation Y_k - Cx A x_{k-1} by the covariance of its
//      error term and solves a weighted least-squares problem for the extended input,
//   2. propagates the state with the first input block and corrects it with a
//      trace-minimizing gain,
//   3. carries the cross-covariances between the state error and the next window's
//      stacked noises, which are nonzero because windows overlap.
// Works with and without direct feedthrough and with rank-deficient feedforward.
#pragma once

#include <usmooth/extended_observation.hpp>
#include <usmooth/linalg.hpp>
#include <usmooth/trace.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace usmooth {

/// Numerical failure inside the smoothing loop, tagged with the step index.
class EstimationError : public NumericalError {
 public:
  EstimationError(int step, const std::string& what)
      : NumericalError("step " + std::to_string(step) + ": " + what), step_(step) {}
  [[nodiscard]] int step() const { return step_; }

 private:
  int step_;
};

struct SmootherConfig {
  int window = 0;
  /// Replace both inverses of the input step by truncated pseudo-inverses.
  bool pinv_enabled = false;
  /// Relative cutoff (to sigma_max) on the input information matrix.
  double pinv_tolerance = 1e-10;
  /// Relative cutoff on the innovation weighting matrix in the pseudo-inverse path.
  double weight_pinv_tolerance = 1e-15;
  /// Relative cutoff for the directions kept by the state gain.
  double gain_truncation_tolerance = 1e-12;
  /// Reciprocal condition below which the plain inverses are declared singular.
  double singular_rcond = 1e-15;
  /// Always build the state gain from an eigen-decomposition of Phi instead of its
  /// known null space.
  bool exact_gain_svd = false;

  void validate() const {
    require(window >= 0, "smoother config: window must be >= 0");
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    require(in_unit(pinv_tolerance), "smoother config: pinv_tolerance must be in (0, 1)");
    require(in_unit(weight_pinv_tolerance), "smoother config: weight_pinv_tolerance must be in (0, 1)");
    require(in_unit(gain_truncation_tolerance),
            "smoother config: gain_truncation_tolerance must be in (0, 1)");
    require(in_unit(singular_rcond), "smoother config: singular_rcond must be in (0, 1)");
  }
};

/// Quantities carried from step k-1 to step k.
struct SmootherState {
  Vector x_hat;  // x^_{k-1}
  Matrix P;      // E[x~ x~']
  Matrix P_xw;   // E[x~_{k-1} W_k']
  Matrix P_xv;   // E[x~_{k-1} V_k']
  int k = 1;     // index of the next step to run
};

/// Time-dependent-but-precomputable operators for one step k.
struct StepOperators {
  ExtendedSystem ext;
  Matrix A_prev;    // A_{k-1}
  Matrix G_prev;    // G_{k-1}
  Matrix Gamma;     // Cx A_{k-1}
  Matrix H_breve;   // Hx + Cx G_{k-1} [I 0]
  Matrix D_breve;   // Dx + [Cx 0]
};

inline StepOperators make_step_operators(const ExtendedSystem& ext, const Matrix& A_prev,
                                         const Matrix& G_prev) {
  const auto n = ext.ext_output.cols();
  const auto nb = ext.window + 1;
  const auto m = ext.ext_feedforward.cols() / nb;
  require(A_prev.rows() == n && A_prev.cols() == n, "step operators: A_{k-1} must be n x n");
  require(G_prev.rows() == n && G_prev.cols() == m, "step operators: G_{k-1} must be n x m");
  StepOperators op;
  op.ext = ext;
  op.A_prev = A_prev;
  op.G_prev = G_prev;
  op.Gamma = ext.ext_output * A_prev;
  op.H_breve = ext.ext_feedforward;
  op.H_breve.leftCols(m) += ext.ext_output * G_prev;
  op.D_breve = ext.ext_model_error_map;
  op.D_breve.leftCols(n) += ext.ext_output;
  return op;
}

/// Joint covariance of (x~_{k-1}, W_k, V_k):
///   [[P,      P_xw,  P_xv ],
///    [P_xw',  Q_kk,  P_wv ],
///    [P_xv',  P_wv', R_kk ]].
/// Products X Lambda Y' are formed block-wise; the W blocks are skipped entirely when
/// model error, its state cross-covariance and P_wv are all zero.
class LambdaBlock {
 public:
  LambdaBlock(const SmootherState& state, const StackedNoise& noise)
      : state_(state), noise_(noise) {
    w_active_ = !(noise.model_error_is_zero() && state.P_xw.isZero(0.0) && noise.cross_is_zero());
  }

  [[nodiscard]] bool w_active() const { return w_active_; }

  /// [X1 X2 X3] Lambda [Y1 Y2 Y3]'. X2/Y2 may be empty when !w_active().
  [[nodiscard]] Matrix sandwich(const Matrix& x1, const Matrix& x2, const Matrix& x3,
                                const Matrix& y1, const Matrix& y2, const Matrix& y3) const {
    const Matrix& P = state_.P;
    const Matrix& Pxv = state_.P_xv;
    Matrix out = x1 * (P * y1.transpose() + Pxv * y3.transpose());
    out.noalias() += x3 * (Pxv.transpose() * y1.transpose() + noise_.R_same * y3.transpose());
    if (w_active_) {
      const Matrix& Pxw = state_.P_xw;
      const Matrix& Pwv = noise_.cross_wv;
      out.noalias() += x1 * (Pxw * y2.transpose());
      out.noalias() += x2 * (Pxw.transpose() * y1.transpose() + noise_.Q_same * y2.transpose() +
                             Pwv * y3.transpose());
      out.noalias() += x3 * (Pwv.transpose() * y2.transpose());
    }
    return out;
  }

  /// Dense assembly, for inspection and tests.
  [[nodiscard]] Matrix dense() const {
    const auto n = state_.P.rows();
    const auto wn = noise_.Q_same.rows();
    const auto vd = noise_.R_same.rows();
    Matrix L = Matrix::Zero(n + wn + vd, n + wn + vd);
    L.block(0, 0, n, n) = state_.P;
    L.block(0, n, n, wn) = state_.P_xw;
    L.block(0, n + wn, n, vd) = state_.P_xv;
    L.block(n, 0, wn, n) = state_.P_xw.transpose();
    L.block(n, n, wn, wn) = noise_.Q_same;
    L.block(n, n + wn, wn, vd) = noise_.cross_wv;
    L.block(n + wn, 0, vd, n) = state_.P_xv.transpose();
    L.block(n + wn, n, vd, wn) = noise_.cross_wv.transpose();
    L.block(n + wn, n + wn, vd, vd) = noise_.R_same;
    return L;
  }

 private:
  const SmootherState& state_;
  const StackedNoise& noise_;
  bool w_active_ = true;
};

/// Everything produced by the input-estimation half of a step.
struct InputStepResult {
  Vector p_hat;        // m
  Vector ext_input;    // (N+1)m
  Matrix M;            // (N+1)m x (N+1)d input gain
  Matrix P_ext;        // (N+1)m square, extended input error covariance
  Matrix P_p;          // m x m
  Vector chi;          // A_{k-1} x^_{k-1}
  Matrix R_tilde;      // (N+1)d square, innovation error covariance
  double weight_condition = 0.0;  // condition estimate of R_tilde
  int retained_input_directions = 0;
};

struct StepEstimate {
  Vector p_hat;
  Matrix p_cov;
  Vector x_hat;
  Matrix x_cov;
  Vector ext_input;
  Matrix ext_input_cov;
  double weight_condition = 0.0;
  int retained_input_directions = 0;
  int retained_gain_directions = 0;
};

/// Builds the initial carrier: P_xw = 0, P_xv = 0, k = 1.
inline SmootherState smoother_init(const Vector& x0, const Matrix& P0, const StackedNoise& noise) {
  const auto n = x0.size();
  require(n > 0, "init: empty initial state");
  require(P0.rows() == n && P0.cols() == n, "init: P0 must be n x n with n = len(x0)");
  require(x0.allFinite(), "init: non-finite initial state");
  SmootherState s;
  s.x_hat = x0;
  s.P = checked_covariance(P0, "P0");
  require(noise.Q_same.rows() % n == 0 && noise.Q_same.rows() == (noise.window + 1) * n,
          "init: stacked Q does not match state dimension");
  s.P_xw = Matrix::Zero(n, noise.Q_same.rows());
  s.P_xv = Matrix::Zero(n, noise.R_same.rows());
  s.k = 1;
  return s;
}

/// Input estimation for step k from the stacked observation Y_k = (y_k..y_{k+N}).
inline InputStepResult input_step(const SmootherState& state, const Vector& ext_obs,
                                  const StepOperators& op, const StackedNoise& noise,
                                  const SmootherConfig& cfg) {
  const auto& ext = op.ext;
  const auto rows = ext.ext_output.rows();
  const auto nb = ext.window + 1;
  const auto m = ext.ext_feedforward.cols() / nb;
  require(ext_obs.size() == rows, "input step: stacked observation has wrong length");
  require(state.x_hat.size() == ext.ext_output.cols(), "input step: state dimension mismatch");

  const LambdaBlock lambda(state, noise);
  const Matrix eye_rows = Matrix::Identity(rows, rows);
  const Matrix empty;
  InputStepResult out;
  out.R_tilde = symmetrize(lambda.w_active()
                               ? lambda.sandwich(op.Gamma, op.D_breve, eye_rows, op.Gamma, op.D_breve, eye_rows)
                               : lambda.sandwich(op.Gamma, empty, eye_rows, op.Gamma, empty, eye_rows));
  if (!out.R_tilde.allFinite()) throw NumericalError("innovation covariance has non-finite entries");

  const Matrix& Hb = op.H_breve;
  const auto p_rows = Hb.cols();
  Matrix weighted_h;  // R~^-1 H (or R~^+ H)
  if (!cfg.pinv_enabled) {
    Eigen::LLT<Matrix> llt(out.R_tilde);
    const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    out.weight_condition = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (!(rc > cfg.singular_rcond))
      throw NumericalError(
          "innovation covariance R~ is numerically singular (reciprocal condition " +
          std::to_string(rc) + "); enable the pseudo-inverse option");
    weighted_h = llt.solve(Hb);
    const Matrix info = symmetrize(Hb.transpose() * weighted_h);
    Eigen::LLT<Matrix> info_llt(info);
    const double irc = info_llt.info() == Eigen::Success ? info_llt.rcond() : 0.0;
    if (!(irc > cfg.singular_rcond))
      throw NumericalError(
          "input information matrix H'R~^-1 H is singular (reciprocal condition " +
          std::to_string(irc) +
          "): the input is not identifiable from this window; enable the pseudo-inverse option");
    out.P_ext = symmetrize(info_llt.solve(Matrix::Identity(p_rows, p_rows)));
    out.retained_input_directions = static_cast<int>(p_rows);
  } else {
    // When the Cholesky reciprocal condition clears the cutoff with margin no singular
    // value would be truncated and the pseudo-inverse is the inverse.
    Eigen::LLT<Matrix> llt(out.R_tilde);
    const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (rc > 1e3 * cfg.weight_pinv_tolerance) {
      out.weight_condition = 1.0 / rc;
      weighted_h = llt.solve(Hb);
    } else {
      const PinvResult r_pinv = truncated_pinv_detail(out.R_tilde, cfg.weight_pinv_tolerance);
      const Vector& sv = r_pinv.singular_values;
      out.weight_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                                     : std::numeric_limits<double>::infinity();
      weighted_h = symmetrize(r_pinv.inverse) * Hb;
    }
    const Matrix info = symmetrize(Hb.transpose() * weighted_h);
    const PinvResult i_pinv = truncated_pinv_detail(info, cfg.pinv_tolerance);
    out.P_ext = symmetrize(i_pinv.inverse);
    out.retained_input_directions = i_pinv.retained;
  }
  out.M = out.P_ext * weighted_h.transpose();
  out.P_p = out.P_ext.topLeftCorner(m, m);
  out.chi = op.A_prev * state.x_hat;
  out.ext_input = out.M * (ext_obs - ext.ext_output * out.chi);
  out.p_hat = out.ext_input.head(m);
  if (!out.ext_input.allFinite()) throw NumericalError("input estimate is not finite");
  return out;
}

struct GainResult {
  Matrix K;
  int retained = 0;
  bool used_svd = false;
};

/// K = -Upsilon' U' (U Phi U')^-1 U with U spanning the singular directions of the
/// symmetric PSD Phi that satisfy sigma >= tol * max(sigma_max, reference). The
/// reference is the magnitude of the innovation covariance Phi is built from, so a
/// Phi made of rounding residue is recognised as zero.
inline GainResult gain_by_svd(const Matrix& Phi, const Matrix& Upsilon, const SmootherConfig& cfg,
                              double reference = 0.0) {
  const auto rows = Phi.rows();
  GainResult g{Matrix::Zero(Upsilon.cols(), rows), 0, true};
  // For a symmetric PSD matrix the eigenvectors are its singular vectors.
  Eigen::SelfAdjointEigenSolver<Matrix> es(Phi);
  if (es.info() != Eigen::Success) throw NumericalError("eigen-decomposition of Phi failed");
  const Vector& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0;
  if (!(lam_max > cfg.gain_truncation_tolerance * reference)) return g;
  const double floor = cfg.gain_truncation_tolerance * std::max(lam_max, reference);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam(i) >= floor) keep.push_back(i);
  g.retained = static_cast<int>(keep.size());
  Matrix U(g.retained, rows);
  for (int i = 0; i < g.retained; ++i) U.row(i) = es.eigenvectors().col(keep[i]).transpose();
  const Matrix UPhiU = symmetrize(U * Phi * U.transpose());
  Eigen::LLT<Matrix> llt(UPhiU);
  if (llt.info() != Eigen::Success || !(llt.rcond() > cfg.singular_rcond))
    throw NumericalError("truncated U Phi U' is not invertible; gain truncation tolerance too small");
  g.K = -(Upsilon.transpose() * U.transpose()) * llt.solve(U);
  return g;
}

/// Same gain, using the structure Phi = (I - Hb M) R~ (I - Hb M)': Hb M is a
/// projector, so the row space of M' is Phi's null space. U is its orthogonal
/// complement. Falls back to the SVD when the null space or the conditioning of
/// U Phi U' does not check out.
inline GainResult optimal_gain(const Matrix& Phi, const Matrix& Upsilon, const Matrix& M,
                               const SmootherConfig& cfg, double reference = 0.0) {
  auto fallback = [&] { return gain_by_svd(Phi, Upsilon, cfg, reference); };
  if (cfg.exact_gain_svd) return fallback();
  const auto rows = Phi.rows();
  const double scale = Phi.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > cfg.gain_truncation_tolerance * reference)) return fallback();
  Eigen::ColPivHouseholderQR<Matrix> qr(M.transpose());
  qr.setThreshold(1e-10);
  const auto null_dim = qr.rank();
  if (null_dim >= rows) return fallback();
  const Matrix Q = qr.householderQ();
  const Matrix null_basis = Q.leftCols(null_dim);
  if (null_dim > 0 && (Phi * null_basis).cwiseAbs().maxCoeff() > cfg.gain_truncation_tolerance * scale)
    return fallback();
  const Matrix U = Q.rightCols(rows - null_dim).transpose();
  const Matrix UPhiU = symmetrize(U * Phi * U.transpose());
  Eigen::LLT<Matrix> llt(UPhiU);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 10.0 * cfg.gain_truncation_tolerance))
    return fallback();
  return {-(Upsilon.transpose() * U.transpose()) * llt.solve(U), static_cast<int>(rows - null_dim), false};
}

/// State estimation and covariance recursion for the same step.
inline std::pair<StepEstimate, SmootherState> state_step(const SmootherState& state,
                                                         const Vector& ext_obs,
                                                         const InputStepResult& in,
                                                         const StepOperators& op,
                                                         const StackedNoise& noise,
                                                         const SmootherConfig& cfg) {
  const auto& ext = op.ext;
  const Matrix& Cx = ext.ext_output;
  const Matrix& Hx = ext.ext_feedforward;
  const Matrix& Dx = ext.ext_model_error_map;
  const auto n = Cx.cols();
  const auto rows = Cx.rows();
  const auto nb = ext.window + 1;
  const auto m = Hx.cols() / nb;
  const auto d = rows / nb;

  const LambdaBlock lambda(state, noise);
  const bool w = lambda.w_active();
  const Matrix empty;

  const Vector x_prior = in.chi + op.G_prev * in.p_hat;
  const Matrix V = op.G_prev * in.M.topRows(m);  // n x (N+1)d
  Matrix W;                                      // n x (N+1)n
  if (w) {
    W = -V * op.D_breve;
    W.leftCols(n) += Matrix::Identity(n, n);
  }
  const Matrix A_breve = op.A_prev - V * op.Gamma;
  const Matrix minus_V = -V;
  const Matrix P_prior = symmetrize(lambda.sandwich(A_breve, W, minus_V, A_breve, W, minus_V));

  const Matrix Theta = Hx * in.M;  // (N+1)d square
  const Matrix omega1 = Cx * A_breve - Theta * op.Gamma;
  Matrix omega2;
  if (w) omega2 = Cx * W - Theta * op.D_breve + Dx;
  Matrix omega3 = -Cx * V - Theta;
  omega3.diagonal().array() += 1.0;

  const Matrix Upsilon = -lambda.sandwich(omega1, omega2, omega3, A_breve, W, minus_V);  // rows x n
  const Matrix Phi = symmetrize(lambda.sandwich(omega1, omega2, omega3, omega1, omega2, omega3));

  const GainResult gain = optimal_gain(Phi, Upsilon, in.M, cfg, in.R_tilde.diagonal().cwiseAbs().maxCoeff());
  const Matrix& K = gain.K;
  const int kept = gain.retained;

  const Vector residual = ext_obs - Cx * x_prior - Hx * in.ext_input;
  StepEstimate est;
  est.x_hat = x_prior + K * residual;
  const Matrix KU = K * Upsilon;
  est.x_cov = symmetrize(P_prior + KU + KU.transpose() + K * Phi * K.transpose());
  est.p_hat = in.p_hat;
  est.p_cov = in.P_p;
  est.ext_input = in.ext_input;
  est.ext_input_cov = in.P_ext;
  est.weight_condition = in.weight_condition;
  est.retained_input_directions = in.retained_input_directions;
  est.retained_gain_directions = kept;
  if (!est.x_hat.allFinite() || !est.x_cov.allFinite())
    throw NumericalError("state estimate is not finite");

  // Error recursion x~_k = Ax x~_{k-1} + Wx W_k + Vx V_k.
  Matrix T = -K * Cx;
  T.diagonal().array() += 1.0;
  const Matrix KTheta = K * Theta;
  const Matrix Ax = T * A_breve + KTheta * op.Gamma;
  Matrix Vx = -T * V + KTheta - K;

  SmootherState next;
  next.x_hat = est.x_hat;
  next.P = est.x_cov;
  next.k = state.k + 1;

  // X * shift' moves column blocks one to the left and zero-fills the last block.
  auto shift_cols = [](const Matrix& x, Eigen::Index block) {
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    const auto keep = x.cols() - block;
    if (keep > 0) out.leftCols(keep) = x.rightCols(keep);
    return out;
  };
  next.P_xv = Ax * shift_cols(state.P_xv, d) + Vx * noise.R_shift;
  if (w) {
    const Matrix Wx = T * W + KTheta * op.D_breve - K * Dx;
    next.P_xw = Ax * shift_cols(state.P_xw, n) + Wx * noise.Q_shift;
  } else {
    next.P_xw = Matrix::Zero(n, state.P_xw.cols());
  }
  return {std::move(est), std::move(next)};
}

/// Time-invariant smoother: operators built once, Lambda-dependent terms per step.
class UniversalSmoother {
 public:
  UniversalSmoother(const DiscreteStateSpace& system, const SmootherConfig& cfg,
                    std::optional<Matrix> cross_wv = std::nullopt)
      : system_(system), cfg_(cfg) {
    system_.validate();
    cfg_.validate();
    noise_ = stack_noise_covariances(system_.Q, system_.R, cfg_.window, cross_wv);
    ops_ = make_step_operators(build_extended_system(system_, cfg_.window), system_.A, system_.G);
  }

  [[nodiscard]] const StepOperators& operators() const { return ops_; }
  [[nodiscard]] const StackedNoise& noise() const { return noise_; }
  [[nodiscard]] const SmootherConfig& config() const { return cfg_; }
  [[nodiscard]] const DiscreteStateSpace& system() const { return system_; }

  [[nodiscard]] SmootherState init(const Vector& x0, const Matrix& P0) const {
    require(x0.size() == system_.state_dim(), "init: x0 length must equal state dimension");
    return smoother_init(x0, P0, noise_);
  }

  /// One full step; `observations` rows are y_1..y_T.
  [[nodiscard]] std::pair<StepEstimate, SmootherState> step(const SmootherState& state,
                                                            const Matrix& observations) const {
    const Vector y = stack_window(observations, state.k - 1, cfg_.window);
    const InputStepResult in = input_step(state, y, ops_, noise_, cfg_);
    return state_step(state, y, in, ops_, noise_, cfg_);
  }

  /// Runs k = 1..T-N. Rows past T-N stay NaN.
  [[nodiscard]] EstimateTrace run(const Matrix& observations, const Vector& x0, const Matrix& P0) const {
    const int T = static_cast<int>(observations.rows());
    const int N = cfg_.window;
    require(observations.cols() == system_.output_dim(), "run: observation width must equal d");
    require(T > N, "run: insufficient observations (need T > N, got T = " + std::to_string(T) +
                       ", N = " + std::to_string(N) + ")");
    require(observations.allFinite(), "run: observation series has non-finite entries");
    EstimateTrace trace = EstimateTrace::allocate(T, system_.state_dim(), system_.input_dim(), system_.dt);
    SmootherState state = init(x0, P0);
    for (int k = 1; k <= T - N; ++k) {
      try {
        auto [est, next] = step(state, observations);
        const int row = k - 1;
        trace.inputs.row(row) = est.p_hat.transpose();
        trace.states.row(row) = est.x_hat.transpose();
        trace.input_var.row(row) = est.p_cov.diagonal().transpose();
        trace.state_var.row(row) = est.x_cov.diagonal().transpose();
        trace.input_var_trace(row) = est.p_cov.trace();
        trace.weight_condition(row) = est.weight_condition;
        trace.retained_input_directions[row] = est.retained_input_directions;
        trace.retained_gain_directions[row] = est.retained_gain_directions;
        trace.emitted = k;
        state = std::move(next);
      } catch (const NumericalError& e) {
        throw EstimationError(k, e.what());
      }
    }
    return trace;
  }

 private:
  DiscreteStateSpace system_;
  SmootherConfig cfg_;
  StackedNoise noise_;
  StepOperators ops_;
};

/// Convenience wrapper matching the one-call form.
inline EstimateTrace run_smoother(const DiscreteStateSpace& system, const Matrix& observations,
                                  const SmootherConfig& cfg, const Vector& x0, const Matrix& P0) {
  return UniversalSmoother(system, cfg).run(observations, x0, P0);
}

}  // namespace usmooth
