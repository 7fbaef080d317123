// Second-order MDOF structural models: shear frames, ground-motion loading,
// Rayleigh damping and modal order reduction. SI units throughout
// (kg, N/m, N*s/m, s, rad/s).
#pragma once

#include <usmooth/linalg.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace usmooth {

/// M u'' + C u' + K u = B p on f degrees of freedom with m inputs.
struct SecondOrderModel {
  Matrix mass;                // f x f, kg
  Matrix damping;             // f x f, N*s/m
  Matrix stiffness;           // f x f, N/m
  Matrix input_distribution;  // f x m

  [[nodiscard]] int dof_count() const { return static_cast<int>(mass.rows()); }
  [[nodiscard]] int input_count() const { return static_cast<int>(input_distribution.cols()); }

  /// Checks shapes, symmetry and definiteness; throws InvalidArgument.
  void validate() const {
    const auto f = mass.rows();
    require(f > 0, "model: dof_count must be positive");
    require(mass.cols() == f && damping.rows() == f && damping.cols() == f &&
                stiffness.rows() == f && stiffness.cols() == f,
            "model: M, C, K must be f x f");
    require(input_distribution.rows() == f && input_distribution.cols() > 0,
            "model: input distribution must be f x m with m > 0");
    require(mass.allFinite() && damping.allFinite() && stiffness.allFinite() &&
                input_distribution.allFinite(),
            "model: non-finite entries");
    const double tol = 1e-12;
    require(asymmetry(mass) <= tol * mass.cwiseAbs().maxCoeff(), "model: M not symmetric");
    require(asymmetry(stiffness) <= tol * std::max(stiffness.cwiseAbs().maxCoeff(), 1.0),
            "model: K not symmetric");
    require(asymmetry(damping) <= tol * std::max(damping.cwiseAbs().maxCoeff(), 1.0),
            "model: C not symmetric");
    Eigen::LLT<Matrix> llt(mass);
    require(llt.info() == Eigen::Success, "model: M not positive definite");
    require(is_psd(stiffness, 1e-10), "model: K not positive semi-definite");
  }
};

/// Mass-normalized mode shapes (columns) with ascending circular frequencies.
struct ModalBasis {
  Matrix mode_shapes;  // f x r
  Vector frequencies;  // r, rad/s
};

/// Model projected on a modal basis: M_R = Z'MZ, C_R = Z'CZ, K_R = Z'KZ, B_R = Z'B.
struct ReducedModel {
  Matrix mass;
  Matrix damping;
  Matrix stiffness;
  Matrix input_distribution;
  ModalBasis basis;

  [[nodiscard]] int mode_count() const { return static_cast<int>(mass.rows()); }
  [[nodiscard]] int input_count() const { return static_cast<int>(input_distribution.cols()); }
  [[nodiscard]] int dof_count() const { return static_cast<int>(basis.mode_shapes.rows()); }
};

struct ShearFrameSpec {
  std::vector<double> floor_masses;        // kg, floor 1 = lowest
  std::vector<double> storey_stiffnesses;  // N/m, storey i connects floor i-1 (or ground) to i
  double rayleigh_alpha = 0.0;             // 1/s
  double rayleigh_beta = 0.0;              // s
  std::vector<int> input_floors;           // 1-based
};

/// Lumped-mass shear building: diagonal M, tridiagonal K, C = alpha*M + beta*K and a
/// Boolean input selection (one column per loaded floor).
inline SecondOrderModel build_shear_frame(const ShearFrameSpec& spec) {
  const auto f = static_cast<int>(spec.floor_masses.size());
  require(f > 0, "shear frame: floor_count must be positive");
  require(static_cast<int>(spec.storey_stiffnesses.size()) == f,
          "shear frame: storey_stiffnesses length must equal floor_count");
  require(!spec.input_floors.empty(), "shear frame: at least one input floor required");
  for (double m : spec.floor_masses) require(m > 0.0 && std::isfinite(m), "shear frame: masses must be > 0");
  for (double k : spec.storey_stiffnesses)
    require(k > 0.0 && std::isfinite(k), "shear frame: stiffnesses must be > 0");
  require(std::isfinite(spec.rayleigh_alpha) && std::isfinite(spec.rayleigh_beta),
          "shear frame: Rayleigh factors must be finite");
  std::set<int> seen;
  for (int fl : spec.input_floors) {
    require(fl >= 1 && fl <= f, "shear frame: input floor " + std::to_string(fl) + " out of range");
    require(seen.insert(fl).second, "shear frame: duplicate input floor " + std::to_string(fl));
  }

  SecondOrderModel model;
  model.mass = Matrix::Zero(f, f);
  model.stiffness = Matrix::Zero(f, f);
  for (int i = 0; i < f; ++i) {
    model.mass(i, i) = spec.floor_masses[i];
    const double k = spec.storey_stiffnesses[i];
    model.stiffness(i, i) += k;
    if (i > 0) {
      model.stiffness(i - 1, i - 1) += k;
      model.stiffness(i - 1, i) -= k;
      model.stiffness(i, i - 1) -= k;
    }
  }
  model.damping = spec.rayleigh_alpha * model.mass + spec.rayleigh_beta * model.stiffness;
  const auto m = static_cast<int>(spec.input_floors.size());
  model.input_distribution = Matrix::Zero(f, m);
  for (int j = 0; j < m; ++j) model.input_distribution(spec.input_floors[j] - 1, j) = 1.0;
  return model;
}

/// Uniform frame convenience overload.
inline SecondOrderModel build_shear_frame(int floor_count, double mass, double stiffness,
                                          double alpha, double beta,
                                          std::vector<int> input_floors) {
  require(floor_count > 0, "shear frame: floor_count must be positive");
  ShearFrameSpec spec;
  spec.floor_masses.assign(floor_count, mass);
  spec.storey_stiffnesses.assign(floor_count, stiffness);
  spec.rayleigh_alpha = alpha;
  spec.rayleigh_beta = beta;
  spec.input_floors = std::move(input_floors);
  return build_shear_frame(spec);
}

/// Replaces B p(t) by -M i u_g''(t): one input, the ground acceleration in m/s^2.
inline SecondOrderModel ground_motion_model(const SecondOrderModel& model) {
  model.validate();
  SecondOrderModel out = model;
  out.input_distribution = -model.mass * Vector::Ones(model.dof_count());
  return out;
}

/// All modes of K z = w^2 M z, mass-normalized, ascending in frequency.
inline ModalBasis modal_analysis(const SecondOrderModel& model) {
  model.validate();
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(model.stiffness, model.mass,
                                                          Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success)
    throw NumericalError("modal analysis: generalized eigen-solve failed");
  const Vector& lambda = solver.eigenvalues();
  const Matrix& vecs = solver.eigenvectors();
  const auto f = lambda.size();

  // Solver output is already ascending; the stable sort keeps ties in solver order.
  std::vector<Eigen::Index> order(f);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lambda(a) < lambda(b); });

  ModalBasis basis;
  basis.mode_shapes.resize(f, f);
  basis.frequencies.resize(f);
  for (Eigen::Index j = 0; j < f; ++j) {
    Vector z = vecs.col(order[j]);
    const double modal_mass = z.dot(model.mass * z);
    if (!(modal_mass > 0.0)) throw NumericalError("modal analysis: non-positive modal mass");
    z /= std::sqrt(modal_mass);
    // Sign convention: largest-magnitude component positive.
    Eigen::Index imax = 0;
    z.cwiseAbs().maxCoeff(&imax);
    if (z(imax) < 0.0) z = -z;
    basis.mode_shapes.col(j) = z;
    basis.frequencies(j) = std::sqrt(std::max(lambda(order[j]), 0.0));
  }
  return basis;
}

/// Projects the model onto its r lowest-frequency modes.
inline ReducedModel modal_reduce(const SecondOrderModel& model, int mode_count) {
  require(mode_count >= 1 && mode_count <= model.dof_count(),
          "modal_reduce: mode_count must be in [1, dof_count]");
  const ModalBasis full = modal_analysis(model);
  ReducedModel out;
  out.basis.mode_shapes = full.mode_shapes.leftCols(mode_count);
  out.basis.frequencies = full.frequencies.head(mode_count);
  const Matrix& z = out.basis.mode_shapes;
  out.mass = symmetrize(z.transpose() * model.mass * z);
  out.damping = symmetrize(z.transpose() * model.damping * z);
  out.stiffness = symmetrize(z.transpose() * model.stiffness * z);
  out.input_distribution = z.transpose() * model.input_distribution;
  return out;
}

}  // namespace usmooth
