// Dense linear-algebra helpers shared by the estimators.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace usmooth {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown on bad arguments (dimension mismatch, out-of-range values).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical procedure cannot produce a meaningful result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline Matrix symmetrize(const Matrix& x) { return 0.5 * (x + x.transpose()); }

inline bool all_finite(const Matrix& x) { return x.allFinite(); }

/// Largest absolute asymmetry |x_ij - x_ji|.
inline double asymmetry(const Matrix& x) {
  if (x.size() == 0) return 0.0;
  return (x - x.transpose()).cwiseAbs().maxCoeff();
}

/// Smallest eigenvalue of the symmetric part.
inline double min_eigenvalue(const Matrix& x) {
  if (x.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(x), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// PSD test: symmetric part has no eigenvalue below -rel_tol * max(|x|, 1e-300).
inline bool is_psd(const Matrix& x, double rel_tol = 1e-8) {
  if (x.rows() != x.cols()) return false;
  if (x.size() == 0) return true;
  const double scale = std::max(x.cwiseAbs().maxCoeff(), 1e-300);
  return min_eigenvalue(x) >= -rel_tol * scale;
}

/// Accepts a covariance that is symmetric up to `asym_tol` (absolute, scaled by the
/// largest entry) and PSD; returns its symmetrized copy.
inline Matrix checked_covariance(const Matrix& x, const std::string& name,
                                 double asym_tol = 1e-12) {
  require(x.rows() == x.cols(), name + " must be square");
  require(x.allFinite(), name + " has non-finite entries");
  const double scale = x.size() ? std::max(x.cwiseAbs().maxCoeff(), 1.0) : 1.0;
  require(asymmetry(x) <= asym_tol * scale, name + " is not symmetric");
  Matrix s = symmetrize(x);
  require(is_psd(s, 1e-10), name + " is not positive semi-definite");
  return s;
}

/// Singular values of `x` (descending).
inline Vector singular_values(const Matrix& x) {
  if (x.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(x);
  return svd.singularValues();
}

/// Ratio of extreme singular values; +inf for rank-deficient input.
inline double condition_number(const Matrix& x) {
  const Vector s = singular_values(x);
  if (s.size() == 0) return 1.0;
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

struct PinvResult {
  Matrix inverse;
  int retained = 0;  // singular values kept
  Vector singular_values;
};

/// Moore-Penrose pseudo-inverse that drops singular values below rel_tol * sigma_max.
inline PinvResult truncated_pinv_detail(const Matrix& x, double rel_tol) {
  require(x.allFinite(), "truncated_pinv: non-finite entries");
  PinvResult out;
  out.inverse = Matrix::Zero(x.cols(), x.rows());
  if (x.size() == 0) return out;
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  out.singular_values = s;
  if (s.size() == 0 || s(0) == 0.0) return out;
  const double cutoff = rel_tol * s(0);
  Vector inv_s = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) >= cutoff && s(i) > 0.0) {
      inv_s(i) = 1.0 / s(i);
      ++out.retained;
    }
  }
  out.inverse = svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose();
  return out;
}

inline Matrix truncated_pinv(const Matrix& x, double rel_tol) {
  return truncated_pinv_detail(x, rel_tol).inverse;
}

/// Row-stack of block matrices of equal column count.
inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  require(top.cols() == bottom.cols(), "vstack: column mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace usmooth
