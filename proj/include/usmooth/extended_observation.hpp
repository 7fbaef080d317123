// Window-N extended observation operators and stacked noise covariances.
//
// For a window of N future samples the stacked observation obeys
//   Y_k = Cx x_k + Hx P_k + Dx W_k + V_k
// with Y_k = (y_k..y_{k+N}), P_k = (p_k..p_{k+N}), W_k = (w_{k-1}..w_{k+N-1}) and
// V_k = (v_k..v_{k+N}). Storage is dense; Hx and Dx are block lower-triangular.
#pragma once

#include <usmooth/discretization.hpp>
#include <usmooth/linalg.hpp>

#include <optional>
#include <span>
#include <vector>

namespace usmooth {

/// Matrices of one time step: x_{j+1} = A x_j + G p_{j+1} + w_j, y_j = C x_j + H p_j + v_j.
struct StepMatrices {
  Matrix A;
  Matrix G;
  Matrix C;
  Matrix H;
};

struct ExtendedSystem {
  int window = 0;
  Matrix ext_output;           // (N+1)d x n
  Matrix ext_feedforward;      // (N+1)d x (N+1)m
  Matrix ext_model_error_map;  // (N+1)d x (N+1)n
};

/// Builds the operators from the matrices of steps k..k+N (entry j is step k+j).
inline ExtendedSystem build_extended_system(std::span<const StepMatrices> steps, int window) {
  require(window >= 0, "extended system: window must be >= 0");
  require(static_cast<int>(steps.size()) >= window + 1,
          "extended system: need matrices for steps k..k+N");
  const auto n = steps[0].A.rows();
  const auto m = steps[0].G.cols();
  const auto d = steps[0].C.rows();
  for (int j = 0; j <= window; ++j) {
    const auto& s = steps[j];
    require(s.A.rows() == n && s.A.cols() == n && s.G.rows() == n && s.G.cols() == m &&
                s.C.rows() == d && s.C.cols() == n && s.H.rows() == d && s.H.cols() == m,
            "extended system: dimension mismatch at step offset " + std::to_string(j));
  }
  const int nb = window + 1;
  ExtendedSystem ext;
  ext.window = window;
  ext.ext_output = Matrix::Zero(nb * d, n);
  ext.ext_feedforward = Matrix::Zero(nb * d, nb * m);
  ext.ext_model_error_map = Matrix::Zero(nb * d, nb * n);

  // transition[j] holds A_{k+i-1} ... A_{k+j} for the current row i (identity when i == j).
  std::vector<Matrix> transition(nb);
  for (int i = 0; i < nb; ++i) {
    for (int j = 0; j < i; ++j) transition[j] = steps[i - 1].A * transition[j];
    transition[i] = Matrix::Identity(n, n);
    const Matrix& ci = steps[i].C;
    ext.ext_output.block(i * d, 0, d, n) = ci * transition[0];
    ext.ext_feedforward.block(i * d, i * m, d, m) = steps[i].H;
    for (int j = 1; j <= i; ++j) {
      const Matrix cphi = ci * transition[j];
      ext.ext_feedforward.block(i * d, j * m, d, m) += cphi * steps[j - 1].G;
      ext.ext_model_error_map.block(i * d, j * n, d, n) = cphi;
    }
  }
  return ext;
}

/// Time-invariant overload.
inline ExtendedSystem build_extended_system(const DiscreteStateSpace& sys, int window) {
  require(window >= 0, "extended system: window must be >= 0");
  const std::vector<StepMatrices> steps(window + 1, StepMatrices{sys.A, sys.G, sys.C, sys.H});
  return build_extended_system(std::span<const StepMatrices>(steps), window);
}

/// Covariances of the stacked noises for white, stationary w and v.
struct StackedNoise {
  int window = 0;
  Matrix Q_same;    // E[W_k W_k']
  Matrix Q_shift;   // E[W_k W_{k+1}']
  Matrix R_same;    // E[V_k V_k']
  Matrix R_shift;   // E[V_k V_{k+1}']
  Matrix cross_wv;  // E[W_k V_k'], zero unless supplied

  [[nodiscard]] bool model_error_is_zero() const { return Q_same.isZero(0.0) && Q_shift.isZero(0.0); }
  [[nodiscard]] bool cross_is_zero() const { return cross_wv.isZero(0.0); }
};

/// Stacks Q and R for window N. Q_shift and R_shift carry the per-sample covariance on
/// their block sub-diagonal: windows k and k+1 share every sample but the first of k.
inline StackedNoise stack_noise_covariances(const Matrix& Q, const Matrix& R, int window,
                                            const std::optional<Matrix>& cross_wv = std::nullopt) {
  require(window >= 0, "stack noise: window must be >= 0");
  const Matrix q = checked_covariance(Q, "Q");
  const Matrix r = checked_covariance(R, "R");
  const auto n = q.rows();
  const auto d = r.rows();
  const int nb = window + 1;
  StackedNoise out;
  out.window = window;
  out.Q_same = Matrix::Zero(nb * n, nb * n);
  out.Q_shift = Matrix::Zero(nb * n, nb * n);
  out.R_same = Matrix::Zero(nb * d, nb * d);
  out.R_shift = Matrix::Zero(nb * d, nb * d);
  for (int i = 0; i < nb; ++i) {
    out.Q_same.block(i * n, i * n, n, n) = q;
    out.R_same.block(i * d, i * d, d, d) = r;
    if (i + 1 < nb) {
      out.Q_shift.block((i + 1) * n, i * n, n, n) = q;
      out.R_shift.block((i + 1) * d, i * d, d, d) = r;
    }
  }
  if (cross_wv) {
    require(cross_wv->rows() == nb * n && cross_wv->cols() == nb * d,
            "stack noise: cross covariance must be (N+1)n x (N+1)d");
    require(cross_wv->allFinite(), "stack noise: non-finite cross covariance");
    out.cross_wv = *cross_wv;
  } else {
    out.cross_wv = Matrix::Zero(nb * n, nb * d);
  }
  return out;
}

/// Boolean extraction and window-shift operators.
struct SelectionOperators {
  Matrix eps_m;    // m x (N+1)m, first block
  Matrix eps_n;    // n x (N+1)n, first block
  Matrix shift_n;  // drops the first block, shifts up, zero-fills the last
  Matrix shift_d;
  Matrix tail_n;   // selects the last block in place
  Matrix tail_d;
};

inline Matrix first_block_selector(int block, int window) {
  Matrix e = Matrix::Zero(block, (window + 1) * block);
  e.leftCols(block).setIdentity();
  return e;
}

inline Matrix window_shift(int block, int window) {
  const int size = (window + 1) * block;
  Matrix s = Matrix::Zero(size, size);
  if (window > 0) s.block(0, block, window * block, window * block).setIdentity();
  return s;
}

inline Matrix window_tail(int block, int window) {
  const int size = (window + 1) * block;
  Matrix s = Matrix::Zero(size, size);
  s.bottomRightCorner(block, block).setIdentity();
  return s;
}

inline SelectionOperators selection_operators(int n, int m, int d, int window) {
  require(n > 0 && m > 0 && d > 0 && window >= 0, "selection operators: invalid dimensions");
  return {first_block_selector(m, window), first_block_selector(n, window),
          window_shift(n, window),         window_shift(d, window),
          window_tail(n, window),          window_tail(d, window)};
}

/// Stacks rows start..start+window of a T x c series into one vector.
inline Vector stack_window(const Matrix& series, int start, int window) {
  require(start >= 0 && start + window < series.rows(), "stack_window: range outside series");
  const auto c = series.cols();
  Vector out((window + 1) * c);
  for (int j = 0; j <= window; ++j) out.segment(j * c, c) = series.row(start + j).transpose();
  return out;
}

}  // namespace usmooth
