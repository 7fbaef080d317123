// Augmented Kalman filter baseline: the unknown input is appended to the state and
// evolves as a random walk, p_k = p_{k-1} + eta_k with eta ~ N(0, Qp I).
#pragma once

#include <usmooth/discretization.hpp>
#include <usmooth/linalg.hpp>
#include <usmooth/trace.hpp>

#include <Eigen/Cholesky>

namespace usmooth {

struct AugmentedModel {
  Matrix Aa;  // [[A, G], [0, I]]
  Matrix Ca;  // [C, H]
  Matrix Qa;  // blkdiag(Qx I_n, Qp I_m)
  Matrix R;
  int state_dim = 0;
  int input_dim = 0;
  double dt = 0.0;
};

/// With z_k = (x_k, p_k):  z_k = Aa z_{k-1} + noise, y_k = Ca z_k + v_k.
/// The G block couples p_{k-1} into x_k; the random-walk model makes that the
/// one-step prediction of p_k.
inline AugmentedModel augment(const DiscreteStateSpace& system, double Qx, double Qp) {
  system.validate();
  require(Qx >= 0.0 && Qp >= 0.0 && std::isfinite(Qx) && std::isfinite(Qp),
          "augment: Qx and Qp must be finite and >= 0");
  const int n = system.state_dim();
  const int m = system.input_dim();
  AugmentedModel aug;
  aug.state_dim = n;
  aug.input_dim = m;
  aug.dt = system.dt;
  aug.Aa = Matrix::Zero(n + m, n + m);
  aug.Aa.topLeftCorner(n, n) = system.A;
  aug.Aa.topRightCorner(n, m) = system.G;
  aug.Aa.bottomRightCorner(m, m).setIdentity();
  aug.Ca.resize(system.output_dim(), n + m);
  aug.Ca << system.C, system.H;
  aug.Qa = Matrix::Zero(n + m, n + m);
  aug.Qa.topLeftCorner(n, n).diagonal().setConstant(Qx);
  aug.Qa.bottomRightCorner(m, m).diagonal().setConstant(Qp);
  aug.R = checked_covariance(system.R, "R");
  return aug;
}

/// Standard predict/update over all T steps. x0/P0 are for the state part; the input
/// part starts at zero with zero covariance unless p0/Pp0 are given.
inline EstimateTrace akf_run(const AugmentedModel& aug, const Matrix& observations, const Vector& x0,
                             const Matrix& P0, const Vector& p0 = Vector(),
                             const Matrix& Pp0 = Matrix()) {
  const int n = aug.state_dim;
  const int m = aug.input_dim;
  const int d = static_cast<int>(aug.Ca.rows());
  require(observations.cols() == d, "akf: observation width must equal d");
  require(x0.size() == n && P0.rows() == n && P0.cols() == n, "akf: x0/P0 dimension mismatch");
  require(p0.size() == 0 || p0.size() == m, "akf: p0 dimension mismatch");
  require(Pp0.size() == 0 || (Pp0.rows() == m && Pp0.cols() == m), "akf: Pp0 dimension mismatch");
  require(observations.allFinite(), "akf: observation series has non-finite entries");
  const int T = static_cast<int>(observations.rows());

  Vector z = Vector::Zero(n + m);
  z.head(n) = x0;
  if (p0.size()) z.tail(m) = p0;
  Matrix P = Matrix::Zero(n + m, n + m);
  P.topLeftCorner(n, n) = checked_covariance(P0, "P0");
  if (Pp0.size()) P.bottomRightCorner(m, m) = checked_covariance(Pp0, "Pp0");

  EstimateTrace trace = EstimateTrace::allocate(T, n, m, aug.dt);
  const Matrix I = Matrix::Identity(n + m, n + m);
  for (int k = 1; k <= T; ++k) {
    z = aug.Aa * z;
    P = symmetrize(aug.Aa * P * aug.Aa.transpose() + aug.Qa);
    const Vector innov = observations.row(k - 1).transpose() - aug.Ca * z;
    const Matrix S = symmetrize(aug.Ca * P * aug.Ca.transpose() + aug.R);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15))
      throw NumericalError("akf step " + std::to_string(k) + ": innovation covariance is singular");
    const Matrix K = llt.solve(aug.Ca * P).transpose();  // P Ca' S^-1
    z += K * innov;
    // Joseph form keeps P symmetric PSD.
    const Matrix IKC = I - K * aug.Ca;
    P = symmetrize(IKC * P * IKC.transpose() + K * aug.R * K.transpose());
    if (!z.allFinite() || !P.allFinite())
      throw NumericalError("akf step " + std::to_string(k) + ": estimate is not finite");
    const int row = k - 1;
    trace.states.row(row) = z.head(n).transpose();
    trace.inputs.row(row) = z.tail(m).transpose();
    trace.state_var.row(row) = P.diagonal().head(n).transpose();
    trace.input_var.row(row) = P.diagonal().tail(m).transpose();
    trace.input_var_trace(row) = P.bottomRightCorner(m, m).trace();
    trace.retained_input_directions[row] = m;
    trace.retained_gain_directions[row] = d;
    trace.emitted = k;
  }
  return trace;
}

}  // namespace usmooth
