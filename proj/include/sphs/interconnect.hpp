#pragma once

// Composition of two systems through u^c = K Y^c, where the first n_hat input
// and output channels of each system form the coupled ports (c) and the
// remaining ones stay external (e).

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sphs/matrix_kernel.hpp"
#include "sphs/passivity.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

struct InterconnectSpec {
  Eigen::Index n_hat = 1;
  /// 2 n_hat x 2 n_hat coupling matrix.
  Matrix K;
};

namespace detail {

/// Noise channel j of `sys`, or zeros when the system has fewer channels.
inline Matrix channel_or_zero(const std::vector<Matrix>& list, std::size_t j, Eigen::Index rows, Eigen::Index cols) {
  return j < list.size() ? list[j] : Matrix::Zero(rows, cols);
}

}  // namespace detail

/// Permutation that moves the inputs listed in `coupled` to the front (in the
/// given order), keeping the remaining inputs in their original order.
/// Applying it before interconnection selects arbitrary coupled channels.
inline SLTIS permute_inputs(const SLTIS& sys, const std::vector<Eigen::Index>& coupled) {
  const Eigen::Index n = sys.input_dim();
  std::vector<Eigen::Index> order(coupled);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (Eigen::Index c : coupled) {
    if (c < 0 || c >= n || used[static_cast<std::size_t>(c)]) throw ShapeError("invalid channel selection");
    used[static_cast<std::size_t>(c)] = true;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!used[static_cast<std::size_t>(i)]) order.push_back(i);
  }
  Matrix p = Matrix::Zero(n, n);  // new input i is old input order[i]
  for (Eigen::Index i = 0; i < n; ++i) p(order[static_cast<std::size_t>(i)], i) = 1.0;
  std::vector<Matrix> noise_input;
  for (const auto& bn : sys.noise_input()) noise_input.push_back(bn * p);
  return SLTIS(sys.A(), sys.B() * p, sys.noise_state(), std::move(noise_input), p.transpose() * sys.C(),
               p.transpose() * sys.D() * p);
}

inline SLTIS interconnect(const SLTIS& s1, const SLTIS& s2, const InterconnectSpec& spec,
                          const TolerancePolicy& tol = {}) {
  const Eigen::Index nh = spec.n_hat;
  const Eigen::Index n1 = s1.input_dim();
  const Eigen::Index n2 = s2.input_dim();
  if (nh < 0 || nh > std::min(n1, n2)) {
    throw ShapeError("n_hat = " + std::to_string(nh) + " exceeds the input dimension of a subsystem");
  }
  if (spec.K.rows() != 2 * nh || spec.K.cols() != 2 * nh) {
    throw ShapeError("K must be " + detail::shape_string(2 * nh, 2 * nh));
  }
  require_finite(spec.K, "K");
  const Eigen::Index d1 = s1.state_dim();
  const Eigen::Index d2 = s2.state_dim();
  const Eigen::Index e1 = n1 - nh;
  const Eigen::Index e2 = n2 - nh;

  // Coupled (c) and external (e) blocks, stacked block-diagonally.
  const Matrix bc = block_diagonal(s1.B().leftCols(nh), s2.B().leftCols(nh));
  const Matrix be = block_diagonal(s1.B().rightCols(e1), s2.B().rightCols(e2));
  const Matrix cc = block_diagonal(s1.C().topRows(nh), s2.C().topRows(nh));
  const Matrix ce = block_diagonal(s1.C().bottomRows(e1), s2.C().bottomRows(e2));
  const Matrix dcc = block_diagonal(s1.D().topLeftCorner(nh, nh), s2.D().topLeftCorner(nh, nh));
  const Matrix dce = block_diagonal(s1.D().topRightCorner(nh, e1), s2.D().topRightCorner(nh, e2));
  const Matrix dec = block_diagonal(s1.D().bottomLeftCorner(e1, nh), s2.D().bottomLeftCorner(e2, nh));
  const Matrix dee = block_diagonal(s1.D().bottomRightCorner(e1, e1), s2.D().bottomRightCorner(e2, e2));

  Matrix kdk = Matrix::Zero(0, 0);  // (I - K D^c)^{-1} K
  if (nh > 0) {
    const Matrix coupling = Matrix::Identity(2 * nh, 2 * nh) - spec.K * dcc;
    const Eigen::JacobiSVD<Matrix> svd(coupling);
    const Vector& sv = svd.singularValues();
    const double smallest = sv(sv.size() - 1);
    const double cond = smallest == 0.0 ? std::numeric_limits<double>::infinity() : sv(0) / smallest;
    const double tau = tol.threshold(coupling);
    if (!(cond < 1.0 / tau)) {
      throw SingularCoupling("I - K diag(D^c) is singular (condition number " + std::to_string(cond) + ")");
    }
    kdk = coupling.partialPivLu().solve(spec.K);
  }

  const Matrix a = block_diagonal(s1.A(), s2.A()) + bc * kdk * cc;
  const Matrix b = bc * kdk * dce + be;
  const Matrix c = ce + dec * kdk * cc;
  const Matrix dd = dec * kdk * dce + dee;

  // Noise channels are shared by index; a system with fewer channels
  // contributes zeros to the extra ones.
  const std::size_t k = std::max(s1.noise_dim(), s2.noise_dim());
  std::vector<Matrix> noise_state;
  std::vector<Matrix> noise_input;
  for (std::size_t j = 0; j < k; ++j) {
    const Matrix a1 = detail::channel_or_zero(s1.noise_state(), j, d1, d1);
    const Matrix a2 = detail::channel_or_zero(s2.noise_state(), j, d2, d2);
    const Matrix b1 = detail::channel_or_zero(s1.noise_input(), j, d1, n1);
    const Matrix b2 = detail::channel_or_zero(s2.noise_input(), j, d2, n2);
    const Matrix bnc = block_diagonal(b1.leftCols(nh), b2.leftCols(nh));
    const Matrix bne = block_diagonal(b1.rightCols(e1), b2.rightCols(e2));
    noise_state.push_back(block_diagonal(a1, a2) + bnc * kdk * cc);
    noise_input.push_back(bnc * kdk * dce + bne);
  }
  return SLTIS(a, b, std::move(noise_state), std::move(noise_input), c, dd);
}

/// Interconnection of two port-Hamiltonian systems with skew K. The result is
/// again port-Hamiltonian with storage blockdiag(Q1, Q2).
inline PHSForm interconnect_phs(const PHSForm& p1, const PHSForm& p2, const InterconnectSpec& spec,
                                const TolerancePolicy& tol = {}) {
  if (spec.K.rows() != spec.K.cols()) throw ShapeError("K must be square");
  const double skew = max_abs(spec.K + spec.K.transpose());
  if (skew > tol.threshold(spec.K)) {
    throw PreconditionFailed("K must be skew-symmetric (max |K + K^T| = " + std::to_string(skew) + ")");
  }
  if (max_abs(p1.N()) > tol.threshold(p1.N()) || max_abs(p2.N()) > tol.threshold(p2.N())) {
    throw PreconditionFailed("interconnection of port-Hamiltonian systems requires N = 0 in both subsystems");
  }
  const SLTIS composed = interconnect(compile_phs(p1), compile_phs(p2), spec, tol);
  const Matrix q = block_diagonal(p1.Q(), p2.Q());
  return extract_phs(composed, QuadraticStorage{SymMatrix(q), tol});
}

}  // namespace sphs
