#pragma once

// Tolerance-aware dense linear algebra shared by every certificate in the
// library. All rank, definiteness and pseudoinverse cut-offs use the same
// threshold tau(M) = max(abs_floor, rel_tol * max(1, ||M||_F)).

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "sphs/errors.hpp"

namespace sphs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class TolerancePolicy {
 public:
  TolerancePolicy() = default;
  TolerancePolicy(double rel_tol, double abs_floor) : rel_tol_(rel_tol), abs_floor_(abs_floor) {
    if (!(rel_tol > 0.0) || !(abs_floor > 0.0) || !std::isfinite(rel_tol) || !std::isfinite(abs_floor)) {
      throw InvalidArgument("tolerance policy requires rel_tol > 0 and abs_floor > 0");
    }
  }

  [[nodiscard]] double rel_tol() const { return rel_tol_; }
  [[nodiscard]] double abs_floor() const { return abs_floor_; }

  /// Effective threshold tau(M).
  [[nodiscard]] double threshold(const Eigen::Ref<const Matrix>& m) const {
    const double norm = m.size() == 0 ? 0.0 : m.norm();
    return std::max(abs_floor_, rel_tol_ * std::max(1.0, norm));
  }

  friend bool operator==(const TolerancePolicy&, const TolerancePolicy&) = default;

 private:
  double rel_tol_ = 1e-9;
  double abs_floor_ = 1e-12;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.size() == 0 || m.allFinite(); }

inline void require_finite(const Eigen::Ref<const Matrix>& m, const std::string& what) {
  if (!all_finite(m)) throw NonFiniteError(what + " has non-finite entries");
}

/// Symmetric matrix stored as (M + M^T) / 2, so entries(i,j) == entries(j,i)
/// holds exactly.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Eigen::Ref<const Matrix>& m) {
    if (m.rows() != m.cols()) {
      throw ShapeError("symmetric matrix must be square, got " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    }
    require_finite(m, "symmetric matrix");
    // Elementwise averaging keeps the result exactly symmetric.
    m_ = Matrix(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m_(i, i) = m(i, i);
      for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
        const double v = 0.5 * (m(i, j) + m(j, i));
        m_(i, j) = v;
        m_(j, i) = v;
      }
    }
  }

  static SymMatrix identity(Eigen::Index dim) { return SymMatrix(Matrix::Identity(dim, dim)); }
  static SymMatrix zero(Eigen::Index dim) { return SymMatrix(Matrix::Zero(dim, dim)); }

  [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
  [[nodiscard]] const Matrix& matrix() const { return m_; }
  [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
    return a.m_.rows() == b.m_.rows() && a.m_.cols() == b.m_.cols() && a.m_ == b.m_;
  }

 private:
  Matrix m_;
};

namespace detail {

inline Vector symmetric_eigenvalues(const Matrix& m, const char* what) {
  if (m.rows() == 0) return Vector();
  require_finite(m, what);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NonFiniteError(std::string("eigen-decomposition failed for ") + what);
  }
  return es.eigenvalues();  // ascending
}

inline Eigen::JacobiSVD<Matrix> svd(const Eigen::Ref<const Matrix>& m, unsigned options) {
  require_finite(m, "matrix");
  return Eigen::JacobiSVD<Matrix>(m, options);
}

}  // namespace detail

struct SemidefiniteCheck {
  bool holds = true;
  /// Largest eigenvalue of the tested matrix (0 for an empty matrix).
  double max_eigenvalue = 0.0;
  double threshold = 0.0;
};

/// M <= 0 within tau(M). The largest eigenvalue is always reported as evidence.
inline SemidefiniteCheck is_neg_semidefinite(const SymMatrix& m, const TolerancePolicy& tol = {}) {
  SemidefiniteCheck out;
  out.threshold = tol.threshold(m.matrix());
  if (m.dim() == 0) return out;
  const Vector ev = detail::symmetric_eigenvalues(m.matrix(), "semidefiniteness test");
  out.max_eigenvalue = ev(ev.size() - 1);
  out.holds = out.max_eigenvalue <= out.threshold;
  return out;
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
inline double min_eigenvalue(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  return detail::symmetric_eigenvalues(m.matrix(), "eigenvalue query")(0);
}

inline double max_eigenvalue(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  const Vector ev = detail::symmetric_eigenvalues(m.matrix(), "eigenvalue query");
  return ev(ev.size() - 1);
}

struct RankInfo {
  Eigen::Index rank = 0;
  /// Smallest singular value above the threshold (0 when rank == 0).
  double smallest_retained = 0.0;
  /// Largest singular value at or below the threshold (0 when full rank).
  double largest_dropped = 0.0;
  double threshold = 0.0;
};

inline RankInfo rank_info(const Eigen::Ref<const Matrix>& m, const TolerancePolicy& tol = {}) {
  RankInfo out;
  out.threshold = tol.threshold(m);
  if (m.size() == 0) return out;
  const auto svd = detail::svd(m, 0);
  const Vector& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > out.threshold) {
      ++out.rank;
      out.smallest_retained = s(i);
    } else {
      out.largest_dropped = std::max(out.largest_dropped, s(i));
    }
  }
  return out;
}

/// Number of singular values above tau(M).
inline Eigen::Index rank_svd(const Eigen::Ref<const Matrix>& m, const TolerancePolicy& tol = {}) {
  return rank_info(m, tol).rank;
}

/// Orthonormal basis of the right null space, one vector per column. The
/// result has m.cols() - rank_svd(m) columns.
inline Matrix kernel_basis(const Eigen::Ref<const Matrix>& m, const TolerancePolicy& tol = {}) {
  const Eigen::Index cols = m.cols();
  if (cols == 0) return Matrix(0, 0);
  if (m.rows() == 0) return Matrix::Identity(cols, cols);
  const double tau = tol.threshold(m);
  const auto svd = detail::svd(m, Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tau) ++rank;
  }
  // Singular values are sorted decreasingly; trailing columns of V span the kernel.
  return svd.matrixV().rightCols(cols - rank);
}

/// PSD square root. Eigenvalues in [-tau, 0) are clamped to zero.
inline SymMatrix sqrt_psd(const SymMatrix& m, const TolerancePolicy& tol = {}) {
  if (m.dim() == 0) return m;
  require_finite(m.matrix(), "sqrt_psd input");
  const double tau = tol.threshold(m.matrix());
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  if (es.info() != Eigen::Success) throw NonFiniteError("eigen-decomposition failed in sqrt_psd");
  const Vector& ev = es.eigenvalues();
  if (ev(0) < -tau) {
    throw NotPsdError("matrix is not positive semidefinite: min eigenvalue " + std::to_string(ev(0)) +
                      " < -" + std::to_string(tau));
  }
  const Vector root = ev.cwiseMax(0.0).cwiseSqrt();
  const Matrix& v = es.eigenvectors();
  return SymMatrix(v * root.asDiagonal() * v.transpose());
}

/// Moore-Penrose pseudoinverse with singular values at or below tau(M) zeroed.
inline Matrix pinv_svd(const Eigen::Ref<const Matrix>& m, const TolerancePolicy& tol = {}) {
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  const double tau = tol.threshold(m);
  const auto svd = detail::svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tau) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Largest absolute entry; 0 for empty matrices.
inline double max_abs(const Eigen::Ref<const Matrix>& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Frobenius norm; 0 for empty matrices.
inline double frobenius(const Eigen::Ref<const Matrix>& m) { return m.size() == 0 ? 0.0 : m.norm(); }

inline Matrix block_diagonal(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

}  // namespace sphs
