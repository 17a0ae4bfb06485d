#pragma once

// Available storage of an SLTIS. The finite-horizon value
//
//   V(T, x) = inf_u E int_0^T <u_s, Y_s> ds = <x, K(T) x>
//
// is computed by backward dynamic programming over controls that are constant
// on intervals of length h. Each step propagates the quadratic cost exactly:
// with z = (x, u) and du = 0, the expectation E[z_t^T M z_t] obeys a linear
// matrix ODE, so one step is a single matrix exponential (Van Loan). The
// minimal storage is Q_min = -2 lim K(T).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "sphs/generator.hpp"
#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

struct RiccatiConfig {
  double step = 1e-3;
  double max_horizon = 200.0;
  /// Stop when the rate ||K_{i+1} - K_i|| / (h max(1, ||K_i||)) drops below this.
  double convergence_tol = 1e-8;
  /// Added to the control curvature before pseudo-inversion.
  double eps_reg = 0.0;
  /// Approximate number of K(T) snapshots kept in the trace.
  std::size_t trace_samples = 200;
  double divergence_bound = 1e12;
  TolerancePolicy tol{};

  void validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("storage step must be positive");
    if (!(max_horizon > 0.0) || !std::isfinite(max_horizon)) throw InvalidArgument("storage horizon must be positive");
    if (!(convergence_tol > 0.0)) throw InvalidArgument("convergence tolerance must be positive");
    if (!(eps_reg >= 0.0)) throw InvalidArgument("regularization must be nonnegative");
  }
};

struct KSnapshot {
  double horizon = 0.0;
  Matrix K;
};

struct RiccatiResidual {
  double value = 0.0;  // max of the three lines
  double equation = 0.0;
  double curvature = 0.0;
  double compatibility = 0.0;
};

struct StorageResult {
  SymMatrix Q_min;
  std::vector<KSnapshot> K_trace;
  RiccatiResidual riccati_residual;
  /// Largest eigenvalue of M_{Q_min}.
  double lmi_margin = 0.0;
  bool positive_definite = false;
  bool converged = false;
  double horizon = 0.0;
  std::size_t steps = 0;
  double last_change_rate = 0.0;
};

/// Residual of the generalized Riccati system at Q:
///   A^T Q + Q A + sum An^T Q An - S(Q) N(Q)^+ S(Q)^T = 0,
///   N(Q) <= 0,
///   S(Q) (I - N(Q) N(Q)^+) = 0,
/// with S(Q) = Q B + sum An^T Q Bn - C^T and N(Q) = sum Bn^T Q Bn - (D + D^T).
inline RiccatiResidual riccati_residual(const SLTIS& sys, const SymMatrix& q_sym, const TolerancePolicy& tol = {}) {
  if (q_sym.dim() != sys.state_dim()) throw ShapeError("storage matrix does not match the state dimension");
  const Matrix& q = q_sym.matrix();
  const Eigen::Index n = sys.input_dim();
  Matrix eq = sys.A().transpose() * q + q * sys.A();
  Matrix s = q * sys.B() - sys.C().transpose();
  Matrix nm = -(sys.D() + sys.D().transpose());
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    eq += sys.noise_state(j).transpose() * q * sys.noise_state(j);
    s += sys.noise_state(j).transpose() * q * sys.noise_input(j);
    nm += sys.noise_input(j).transpose() * q * sys.noise_input(j);
  }
  const Matrix n_pinv = pinv_svd(nm, tol);
  RiccatiResidual r;
  r.equation = frobenius(eq - s * n_pinv * s.transpose());
  r.curvature = std::max(0.0, max_eigenvalue(SymMatrix(nm)));
  r.compatibility = frobenius(s * (Matrix::Identity(n, n) - nm * n_pinv));
  r.value = std::max({r.equation, r.curvature, r.compatibility});
  return r;
}

namespace detail {

/// Exact one-step propagation of quadratic forms in z = (x, u) over [0, h]:
/// vec(M_h) = phi * vec(M_0) + w, where w accumulates the running cost.
struct StepOperator {
  Matrix phi;
  Vector w;
};

inline StepOperator step_operator(const SLTIS& sys, double h) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const Eigen::Index m = d + n;
  Matrix a_aug = Matrix::Zero(m, m);
  a_aug.topLeftCorner(d, d) = sys.A();
  a_aug.topRightCorner(d, n) = sys.B();
  const Matrix eye = Matrix::Identity(m, m);
  // Column-major vec: vec(X^T M) = (I kron X^T) vec M, vec(M X) = (X^T kron I) vec M,
  // vec(G^T M G) = (G^T kron G^T) vec M.
  Matrix lmat = Eigen::kroneckerProduct(eye, a_aug.transpose());
  lmat += Matrix(Eigen::kroneckerProduct(a_aug.transpose(), eye));
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    Matrix g = Matrix::Zero(m, m);
    g.topLeftCorner(d, d) = sys.noise_state(j);
    g.topRightCorner(d, n) = sys.noise_input(j);
    lmat += Matrix(Eigen::kroneckerProduct(g.transpose(), g.transpose()));
  }
  Matrix cost = Matrix::Zero(m, m);
  cost.bottomLeftCorner(n, d) = 0.5 * sys.C();
  cost.topRightCorner(d, n) = 0.5 * sys.C().transpose();
  cost.bottomRightCorner(n, n) = 0.5 * (sys.D() + sys.D().transpose());

  const Eigen::Index mm = m * m;
  Matrix van_loan = Matrix::Zero(mm + 1, mm + 1);
  van_loan.topLeftCorner(mm, mm) = lmat * h;
  van_loan.topRightCorner(mm, 1) = Eigen::Map<const Vector>(cost.data(), mm) * h;
  const Matrix e = van_loan.exp();
  return StepOperator{e.topLeftCorner(mm, mm), e.topRightCorner(mm, 1)};
}

}  // namespace detail

inline StorageResult value_iteration(const SLTIS& sys, const RiccatiConfig& cfg = {}) {
  cfg.validate();
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const Eigen::Index m = d + n;
  const double h = cfg.step;
  const auto op = detail::step_operator(sys, h);
  if (!all_finite(op.phi) || !all_finite(op.w)) throw NumericalDivergence("one-step propagator is not finite");

  const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.max_horizon / h - 1e-9));
  const std::size_t every = std::max<std::size_t>(1, max_steps / std::max<std::size_t>(1, cfg.trace_samples));

  StorageResult result;
  Matrix k = Matrix::Zero(d, d);
  Matrix lifted = Matrix::Zero(m, m);
  Matrix next(m, m);
  result.K_trace.push_back({0.0, k});

  for (std::size_t step = 1; step <= max_steps; ++step) {
    lifted.topLeftCorner(d, d) = k;
    Eigen::Map<Vector>(next.data(), m * m).noalias() = op.phi * Eigen::Map<const Vector>(lifted.data(), m * m);
    Eigen::Map<Vector>(next.data(), m * m) += op.w;
    next = 0.5 * (next + next.transpose()).eval();

    Matrix k_new;
    if (n == 0) {
      k_new = next;
    } else {
      // Curvature in u is O(h^2) when D + D^T = 0; rescale so thresholds are O(1).
      Matrix g = next.bottomRightCorner(n, n) / (h * h);
      const Matrix l = next.topRightCorner(d, n) / h;
      if (cfg.eps_reg > 0.0) g += cfg.eps_reg * Matrix::Identity(n, n);
      const double tau = cfg.tol.threshold(g);
      const double g_min = min_eigenvalue(SymMatrix(g));
      if (g_min < -tau) {
        throw InfeasibleError("value iteration: control curvature has negative eigenvalue " + std::to_string(g_min) +
                              " at horizon " + std::to_string(static_cast<double>(step) * h) +
                              "; the supply can be driven to minus infinity");
      }
      const Matrix g_pinv = pinv_svd(g, cfg.tol);
      const Matrix off_range = (Matrix::Identity(n, n) - g * g_pinv) * l.transpose();
      if (frobenius(off_range) > cfg.tol.threshold(l)) {
        throw InfeasibleError("value iteration: linear term has a component on the kernel of the control curvature "
                              "at horizon " + std::to_string(static_cast<double>(step) * h));
      }
      k_new = next.topLeftCorner(d, d) - l * g_pinv * l.transpose();
    }
    k_new = SymMatrix(k_new).matrix();
    if (!all_finite(k_new)) throw NumericalDivergence("value iteration produced non-finite entries");
    if (k_new.norm() > cfg.divergence_bound) {
      throw InfeasibleError("value iteration diverged: ||K|| exceeded " + std::to_string(cfg.divergence_bound) +
                            " at horizon " + std::to_string(static_cast<double>(step) * h));
    }

    const double change = (k_new - k).norm() / (h * std::max(1.0, k.norm()));
    k = std::move(k_new);
    result.steps = step;
    result.horizon = static_cast<double>(step) * h;
    result.last_change_rate = change;
    if (change < cfg.convergence_tol) {
      result.converged = true;
      break;
    }
    if (step % every == 0) result.K_trace.push_back({result.horizon, k});
  }
  if (result.K_trace.back().horizon != result.horizon) result.K_trace.push_back({result.horizon, k});

  result.Q_min = SymMatrix(-2.0 * k);
  result.riccati_residual = riccati_residual(sys, result.Q_min, cfg.tol);
  result.lmi_margin = max_eigenvalue(build_MQ(sys, QuadraticStorage{result.Q_min, cfg.tol}));
  result.positive_definite = min_eigenvalue(result.Q_min) > cfg.tol.threshold(result.Q_min.matrix());
  return result;
}

/// Q_min > tau in the PSD sense.
inline bool check_minimal_storage_positive_definite(const StorageResult& res, const TolerancePolicy& tol = {}) {
  return res.Q_min.dim() > 0 && min_eigenvalue(res.Q_min) > tol.threshold(res.Q_min.matrix());
}

/// Largest eigenvalue of K(T2) - K(T1) over consecutive trace samples; the
/// trace is nonincreasing in PSD order when this is <= tau.
inline double trace_monotonicity_violation(const StorageResult& res) {
  double worst = 0.0;
  for (std::size_t i = 1; i < res.K_trace.size(); ++i) {
    worst = std::max(worst, max_eigenvalue(SymMatrix(res.K_trace[i].K - res.K_trace[i - 1].K)));
  }
  return worst;
}

}  // namespace sphs
