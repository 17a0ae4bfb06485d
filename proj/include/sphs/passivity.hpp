#pragma once

// Passivity certificates for linear systems with quadratic storage, and the
// port-Hamiltonian (PHS) parameterization of such systems.

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "sphs/generator.hpp"
#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

enum class Notion { Passive, LocalSupermartingale, Supermartingale, StochasticallyPassive };

inline constexpr std::array<Notion, 4> kAllNotions = {Notion::Passive, Notion::LocalSupermartingale,
                                                      Notion::Supermartingale, Notion::StochasticallyPassive};

inline const char* notion_name(Notion n) {
  switch (n) {
    case Notion::Passive:
      return "passive";
    case Notion::LocalSupermartingale:
      return "local_supermartingale";
    case Notion::Supermartingale:
      return "supermartingale";
    case Notion::StochasticallyPassive:
      return "stochastically_passive";
  }
  return "unknown";
}

enum class Verdict { Certified, Refuted };

inline const char* verdict_name(Verdict v) { return v == Verdict::Certified ? "certified" : "refuted"; }

struct PassivityReport {
  bool lmi_ok = false;
  double lmi_max_eig = 0.0;
  double lmi_threshold = 0.0;
  bool diffusion_ok = false;
  double diffusion_max_violation = 0.0;
  double diffusion_threshold = 0.0;
  bool pathwise_lmi_ok = false;
  double pathwise_max_eig = 0.0;

  [[nodiscard]] Verdict verdict(Notion n) const {
    if (n == Notion::Passive) return diffusion_ok && pathwise_lmi_ok ? Verdict::Certified : Verdict::Refuted;
    return lmi_ok ? Verdict::Certified : Verdict::Refuted;
  }
};

/// Matrix of the pathwise criterion:
///   [[QA + A^T Q - Q sum_j An_j^2, QB - C^T], [B^T Q - C, -D - D^T]].
inline SymMatrix pathwise_matrix(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const Matrix& q = storage.Q.matrix();
  Matrix squares = Matrix::Zero(d, d);
  for (const auto& an : sys.noise_state()) squares += an * an;
  Matrix m(d + n, d + n);
  m.topLeftCorner(d, d) = q * sys.A() + sys.A().transpose() * q - q * squares;
  m.topRightCorner(d, n) = q * sys.B() - sys.C().transpose();
  m.bottomLeftCorner(n, d) = m.topRightCorner(d, n).transpose();
  m.bottomRightCorner(n, n) = -(sys.D() + sys.D().transpose());
  return SymMatrix(m);
}

inline PassivityReport certify(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  PassivityReport report;
  const auto lmi = is_neg_semidefinite(build_MQ(sys, storage), storage.tol);
  report.lmi_ok = lmi.holds;
  report.lmi_max_eig = lmi.max_eigenvalue;
  report.lmi_threshold = lmi.threshold;

  const Matrix& q = storage.Q.matrix();
  double violation = 0.0;
  double scale = 0.0;
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    const Matrix q_an = q * sys.noise_state(j);
    const Matrix q_bn = q * sys.noise_input(j);
    violation = std::max({violation, frobenius(q_an + q_an.transpose()), frobenius(q_bn)});
    scale = std::max({scale, frobenius(q_an), frobenius(q_bn)});
  }
  report.diffusion_max_violation = violation;
  report.diffusion_threshold = std::max(storage.tol.abs_floor(), storage.tol.rel_tol() * std::max(1.0, scale));
  report.diffusion_ok = violation <= report.diffusion_threshold;

  const auto pathwise = is_neg_semidefinite(pathwise_matrix(sys, storage), storage.tol);
  report.pathwise_lmi_ok = pathwise.holds;
  report.pathwise_max_eig = pathwise.max_eigenvalue;
  return report;
}

struct KernelCondition {
  bool holds = true;
  double worst_violation = 0.0;
};

/// ker(Q) must lie in ker(A), ker(C) and every ker(An_j).
inline KernelCondition check_kernel_condition(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  KernelCondition out;
  const Matrix basis = kernel_basis(storage.Q.matrix(), storage.tol);
  for (Eigen::Index i = 0; i < basis.cols(); ++i) {
    const Vector u = basis.col(i);
    double v = std::max((sys.A() * u).norm(), (sys.C() * u).norm());
    for (const auto& an : sys.noise_state()) v = std::max(v, (an * u).norm());
    out.worst_violation = std::max(out.worst_violation, v);
  }
  double scale = std::max(frobenius(sys.A()), frobenius(sys.C()));
  for (const auto& an : sys.noise_state()) scale = std::max(scale, frobenius(an));
  out.holds = out.worst_violation <= std::max(storage.tol.abs_floor(), storage.tol.rel_tol() * std::max(1.0, scale));
  return out;
}

inline SLTIS compile_phs(const PHSForm& phs) {
  const Eigen::Index d = phs.state_dim();
  const Eigen::Index n = phs.input_dim();
  const Matrix& q = phs.Q();
  Matrix correction = Matrix::Zero(d, d);
  Matrix cross = Matrix::Zero(d, n);
  Matrix input_correction = Matrix::Zero(n, n);
  std::vector<Matrix> noise_state;
  std::vector<Matrix> noise_input;
  for (std::size_t j = 0; j < phs.noise_dim(); ++j) {
    const Matrix& fac = phs.noise_state_factor(j);
    const Matrix& bn = phs.noise_input(j);
    correction += fac.transpose() * q * fac;
    cross += fac.transpose() * q * bn;
    input_correction += bn.transpose() * q * bn;
    noise_state.push_back(fac * q);
    noise_input.push_back(bn);
  }
  return SLTIS((phs.J() - phs.R() - 0.5 * correction) * q, phs.F() - phs.P(), std::move(noise_state),
               std::move(noise_input), (phs.F() + phs.P() + cross).transpose() * q,
               phs.S() + phs.N() + 0.5 * input_correction);
}

/// PHS parameters of a system that satisfies the LMI with a PSD storage whose
/// kernel is annihilated by A, C and every An_j. The decomposition is not
/// unique; compile_phs of the result reproduces the system matrices.
inline PHSForm extract_phs(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  const Matrix& q = storage.Q.matrix();
  const double q_min = min_eigenvalue(storage.Q);
  if (q_min < -storage.tol.threshold(q)) {
    throw PreconditionFailed("Q positive semidefiniteness failed (min eigenvalue " + std::to_string(q_min) + ")");
  }
  const auto kernel = check_kernel_condition(sys, storage);
  if (!kernel.holds) {
    throw PreconditionFailed("kernel condition failed: ker(Q) is not annihilated by A, C and the noise matrices "
                             "(violation " + std::to_string(kernel.worst_violation) + ")");
  }
  const auto report = certify(sys, storage);
  if (!report.lmi_ok) {
    throw PreconditionFailed("LMI condition failed: M_Q has eigenvalue " + std::to_string(report.lmi_max_eig));
  }

  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const Matrix q_pinv = pinv_svd(q, storage.tol);
  const Matrix range = q * q_pinv;
  const Matrix complement = Matrix::Identity(d, d) - range;

  const Matrix a_bar = sys.A() * q_pinv;
  const Matrix c_bar = sys.C() * q_pinv;
  std::vector<Matrix> noise_bar;
  Matrix g1_correction = Matrix::Zero(d, d);
  Matrix g3_correction = Matrix::Zero(n, d);
  Matrix g4_correction = Matrix::Zero(n, n);
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    const Matrix fac = sys.noise_state(j) * q_pinv;
    const Matrix& bn = sys.noise_input(j);
    g1_correction += fac.transpose() * q * fac;
    g3_correction += bn.transpose() * q * fac;
    g4_correction += bn.transpose() * q * bn;
    noise_bar.push_back(fac);
  }
  // On ker(Q) the map is completed skew-symmetrically, so R vanishes there
  // and has no cross terms with the range of Q.
  const Matrix g1_range = (a_bar + 0.5 * g1_correction) * range;
  const Matrix g1 = g1_range - g1_range.transpose() * complement;
  const Matrix& g2 = sys.B();
  const Matrix g3 = (-c_bar + g3_correction) * range - sys.B().transpose() * complement;
  const Matrix g4 = -sys.D() + 0.5 * g4_correction;

  return PHSForm(0.5 * (g1 - g1.transpose()), -0.5 * (g1 + g1.transpose()), q, std::move(noise_bar),
                 0.5 * (g2 - g3.transpose()), -0.5 * (g2 + g3.transpose()), sys.noise_input(),
                 -0.5 * (g4 + g4.transpose()), -0.5 * (g4 - g4.transpose()), storage.tol);
}

/// Change of state X~ = Q^{1/2} X, after which the storage matrix is the identity.
inline PHSForm normalize_q(const PHSForm& phs, const TolerancePolicy& tol = {}) {
  const Matrix sq = sqrt_psd(SymMatrix(phs.Q()), tol).matrix();
  const Eigen::Index d = phs.state_dim();
  std::vector<Matrix> noise_state;
  std::vector<Matrix> noise_input;
  for (std::size_t j = 0; j < phs.noise_dim(); ++j) {
    noise_state.push_back(sq * phs.noise_state_factor(j) * sq);
    noise_input.push_back(sq * phs.noise_input(j));
  }
  return PHSForm(sq * phs.J() * sq, SymMatrix(sq * phs.R() * sq).matrix(), Matrix::Identity(d, d),
                 std::move(noise_state), sq * phs.F(), sq * phs.P(), std::move(noise_input), phs.S(), phs.N(), tol);
}

}  // namespace sphs
