#pragma once

// Infinitesimal quantities of the storage-balance process
//   Z_t = H(X_t) - int_0^t <u_s, Y_s> ds,
// namely the drift L H(x, v) and the diffusion pairing Sigma(x, v) = grad H(x)^T sigma(x, v).
// Closed forms for linear systems with quadratic storage, callback-based
// evaluation (with finite-difference fallbacks) for everything else.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

/// The (d+n)x(d+n) passivity matrix
///
///   [[QA + A^T Q + sum_j An_j^T Q An_j,   QB - C^T + sum_j An_j^T Q Bn_j],
///    [  (transpose of upper right),      -(D + D^T) + sum_j Bn_j^T Q Bn_j]]
///
/// whose negative semidefiniteness is the passivity LMI.
inline SymMatrix build_MQ(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const Matrix& q = storage.Q.matrix();

  Matrix xx = q * sys.A() + sys.A().transpose() * q;
  Matrix xu = q * sys.B() - sys.C().transpose();
  Matrix uu = -(sys.D() + sys.D().transpose());
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    const Matrix q_an = q * sys.noise_state(j);
    const Matrix q_bn = q * sys.noise_input(j);
    xx += sys.noise_state(j).transpose() * q_an;
    xu += sys.noise_state(j).transpose() * q_bn;
    uu += sys.noise_input(j).transpose() * q_bn;
  }
  Matrix m(d + n, d + n);
  m.topLeftCorner(d, d) = xx;
  m.topRightCorner(d, n) = xu;
  m.bottomLeftCorner(n, d) = xu.transpose();
  m.bottomRightCorner(n, n) = uu;
  return SymMatrix(m);
}

namespace detail {

inline void require_state_input(const SLTIS& sys, const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& v) {
  if (x.size() != sys.state_dim()) throw ShapeError("state vector has wrong dimension");
  if (v.size() != sys.input_dim()) throw ShapeError("input vector has wrong dimension");
}

}  // namespace detail

/// L H(x, v) = 1/2 (x, v)^T M_Q (x, v).
inline double lh_linear(const SLTIS& sys, const QuadraticStorage& storage, const Eigen::Ref<const Vector>& x,
                        const Eigen::Ref<const Vector>& v) {
  detail::require_state_input(sys, x, v);
  const SymMatrix m = build_MQ(sys, storage);
  Vector z(x.size() + v.size());
  z << x, v;
  return 0.5 * z.dot(m.matrix() * z);
}

/// Sigma(x, v)_j = <x, Q An_j x + Q Bn_j v>.
inline Vector sigma_linear(const SLTIS& sys, const QuadraticStorage& storage, const Eigen::Ref<const Vector>& x,
                           const Eigen::Ref<const Vector>& v) {
  validate_storage(sys, storage);
  detail::require_state_input(sys, x, v);
  Vector out(static_cast<Eigen::Index>(sys.noise_dim()));
  const Vector qx = storage.Q.matrix() * x;
  for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
    out(static_cast<Eigen::Index>(j)) = qx.dot(sys.noise_state(j) * x + sys.noise_input(j) * v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// General (callback) systems

/// Nonlinear system dX = b(X,u) dt + sigma(X,u) dW, Y = f(X,u) with storage H.
///
/// Callbacks must be safe to call concurrently. When grad_H / hess_H /
/// sigma_jacobian are empty, central finite differences with step
/// 1e-5 * max(1, ||x||) are used.
struct NonlinearSystem {
  Eigen::Index d = 0;
  Eigen::Index n = 0;
  Eigen::Index k = 0;
  std::function<Vector(const Vector&, const Vector&)> drift;      // b: d-vector
  std::function<Matrix(const Vector&, const Vector&)> diffusion;  // sigma: d x k
  std::function<Vector(const Vector&, const Vector&)> output;     // f: n-vector
  std::function<double(const Vector&)> storage;                   // H
  std::function<Vector(const Vector&)> grad_storage;              // optional
  std::function<Matrix(const Vector&)> hess_storage;              // optional
  /// Optional: Jacobian D_x sigma^j at (x, v) for column j.
  std::function<Matrix(const Vector&, const Vector&, Eigen::Index)> diffusion_jacobian;
};

namespace detail {

inline double fd_step(const Vector& x) { return 1e-5 * std::max(1.0, x.norm()); }

template <typename T>
T checked(T value, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (value.rows() != rows || value.cols() != cols) {
    throw CallbackError(std::string(what) + " callback returned a wrongly sized result");
  }
  if (!all_finite(value)) throw CallbackError(std::string(what) + " callback returned non-finite values");
  return value;
}

inline double checked_scalar(double value, const char* what) {
  if (!std::isfinite(value)) throw CallbackError(std::string(what) + " callback returned a non-finite value");
  return value;
}

inline void require_callbacks(const NonlinearSystem& sys) {
  if (!sys.drift || !sys.diffusion || !sys.output || !sys.storage) {
    throw CallbackError("nonlinear system needs drift, diffusion, output and storage callbacks");
  }
}

inline void require_point(const NonlinearSystem& sys, const Vector& x, const Vector& v) {
  if (x.size() != sys.d || v.size() != sys.n) throw ShapeError("probe point has wrong dimension");
}

}  // namespace detail

/// Central-difference gradient of H.
inline Vector fd_gradient(const std::function<double(const Vector&)>& h, const Vector& x) {
  const double step = detail::fd_step(x);
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + step;
    const double fp = detail::checked_scalar(h(xp), "storage");
    xp(i) = x(i) - step;
    const double fm = detail::checked_scalar(h(xp), "storage");
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Central-difference Hessian of H (second differences), symmetrized.
inline Matrix fd_hessian(const std::function<double(const Vector&)>& h, const Vector& x) {
  // Second differences need a larger step than first ones to stay above
  // rounding noise; use the cube root of machine epsilon scaling.
  const double step = 1e-4 * std::max(1.0, x.norm());
  const Eigen::Index d = x.size();
  Matrix out(d, d);
  const double f0 = detail::checked_scalar(h(x), "storage");
  Vector xp = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      double value = 0.0;
      if (i == j) {
        xp(i) = x(i) + step;
        const double fp = h(xp);
        xp(i) = x(i) - step;
        const double fm = h(xp);
        xp(i) = x(i);
        value = (fp - 2.0 * f0 + fm) / (step * step);
      } else {
        auto eval = [&](double si, double sj) {
          xp(i) = x(i) + si * step;
          xp(j) = x(j) + sj * step;
          const double r = h(xp);
          xp(i) = x(i);
          xp(j) = x(j);
          return r;
        };
        value = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * step * step);
      }
      out(i, j) = value;
      out(j, i) = value;
    }
  }
  if (!all_finite(out)) throw CallbackError("storage callback returned non-finite values");
  return out;
}

inline Vector storage_gradient(const NonlinearSystem& sys, const Vector& x) {
  if (sys.grad_storage) return detail::checked(sys.grad_storage(x), sys.d, 1, "storage gradient");
  return fd_gradient(sys.storage, x);
}

inline Matrix storage_hessian(const NonlinearSystem& sys, const Vector& x) {
  if (sys.hess_storage) return detail::checked(sys.hess_storage(x), sys.d, sys.d, "storage Hessian");
  return fd_hessian(sys.storage, x);
}

/// D_x sigma^j(x, v), by callback or central differences.
inline Matrix diffusion_column_jacobian(const NonlinearSystem& sys, const Vector& x, const Vector& v, Eigen::Index j) {
  if (sys.diffusion_jacobian) {
    return detail::checked(sys.diffusion_jacobian(x, v, j), sys.d, sys.d, "diffusion Jacobian");
  }
  const double step = detail::fd_step(x);
  Matrix jac(sys.d, sys.d);
  Vector xp = x;
  for (Eigen::Index i = 0; i < sys.d; ++i) {
    xp(i) = x(i) + step;
    const Matrix sp = detail::checked(sys.diffusion(xp, v), sys.d, sys.k, "diffusion");
    xp(i) = x(i) - step;
    const Matrix sm = detail::checked(sys.diffusion(xp, v), sys.d, sys.k, "diffusion");
    xp(i) = x(i);
    jac.col(i) = (sp.col(j) - sm.col(j)) / (2.0 * step);
  }
  return jac;
}

/// <grad H, b> + 1/2 tr(sigma sigma^T D^2 H) - <v, f>, with the trace evaluated
/// as sum_j sigma_j^T D^2 H sigma_j.
inline double lh_nonlinear(const NonlinearSystem& sys, const Vector& x, const Vector& v) {
  detail::require_callbacks(sys);
  detail::require_point(sys, x, v);
  const Vector grad = storage_gradient(sys, x);
  const Matrix hess = storage_hessian(sys, x);
  const Vector b = detail::checked(sys.drift(x, v), sys.d, 1, "drift");
  const Matrix sigma = detail::checked(sys.diffusion(x, v), sys.d, sys.k, "diffusion");
  const Vector f = detail::checked(sys.output(x, v), sys.n, 1, "output");
  double trace = 0.0;
  for (Eigen::Index j = 0; j < sys.k; ++j) trace += sigma.col(j).dot(hess * sigma.col(j));
  return grad.dot(b) + 0.5 * trace - v.dot(f);
}

/// Sigma(x, v) = grad H(x)^T sigma(x, v) as a k-vector.
inline Vector sigma_nonlinear(const NonlinearSystem& sys, const Vector& x, const Vector& v) {
  detail::require_callbacks(sys);
  detail::require_point(sys, x, v);
  const Vector grad = storage_gradient(sys, x);
  const Matrix sigma = detail::checked(sys.diffusion(x, v), sys.d, sys.k, "diffusion");
  return sigma.transpose() * grad;
}

/// Drift condition in Stratonovich form:
///   <grad H, b - 1/2 sum_j (D_x sigma^j) sigma^j> - <v, f>.
/// Agrees with lh_nonlinear wherever Sigma vanishes identically.
inline double stratonovich_drift(const NonlinearSystem& sys, const Vector& x, const Vector& v) {
  detail::require_callbacks(sys);
  detail::require_point(sys, x, v);
  const Vector grad = storage_gradient(sys, x);
  Vector corrected = detail::checked(sys.drift(x, v), sys.d, 1, "drift");
  const Matrix sigma = detail::checked(sys.diffusion(x, v), sys.d, sys.k, "diffusion");
  const Vector f = detail::checked(sys.output(x, v), sys.n, 1, "output");
  for (Eigen::Index j = 0; j < sys.k; ++j) {
    corrected -= 0.5 * diffusion_column_jacobian(sys, x, v, j) * sigma.col(j);
  }
  return grad.dot(corrected) - v.dot(f);
}

/// Wraps a linear system with quadratic storage as callbacks (exact
/// derivatives supplied).
inline NonlinearSystem as_callbacks(const SLTIS& sys, const QuadraticStorage& storage) {
  validate_storage(sys, storage);
  NonlinearSystem out;
  out.d = sys.state_dim();
  out.n = sys.input_dim();
  out.k = static_cast<Eigen::Index>(sys.noise_dim());
  out.drift = [sys](const Vector& x, const Vector& v) -> Vector { return sys.A() * x + sys.B() * v; };
  out.diffusion = [sys](const Vector& x, const Vector& v) -> Matrix {
    Matrix s(sys.state_dim(), static_cast<Eigen::Index>(sys.noise_dim()));
    for (std::size_t j = 0; j < sys.noise_dim(); ++j) {
      s.col(static_cast<Eigen::Index>(j)) = sys.noise_state(j) * x + sys.noise_input(j) * v;
    }
    return s;
  };
  out.output = [sys](const Vector& x, const Vector& v) -> Vector { return sys.C() * x + sys.D() * v; };
  const Matrix q = storage.Q.matrix();
  out.storage = [q](const Vector& x) { return 0.5 * x.dot(q * x); };
  out.grad_storage = [q](const Vector& x) -> Vector { return q * x; };
  out.hess_storage = [q](const Vector&) -> Matrix { return q; };
  out.diffusion_jacobian = [sys](const Vector&, const Vector&, Eigen::Index j) -> Matrix {
    return sys.noise_state(static_cast<std::size_t>(j));
  };
  return out;
}

// ---------------------------------------------------------------------------
// Sampled condition checks

struct ProbePoint {
  Vector x;
  Vector v;
};

/// Probe set for the box [lo, hi] in (x, v)-space: the box center, the
/// 2(d+n) face centers, then Halton points up to `count` quasi-random probes.
inline std::vector<ProbePoint> box_probes(Eigen::Index d, Eigen::Index n, const Vector& lo, const Vector& hi,
                                          std::size_t count = 256) {
  const Eigen::Index dim = d + n;
  if (lo.size() != dim || hi.size() != dim) throw ShapeError("probe box bounds must have d+n entries");
  if ((hi - lo).minCoeff() < 0.0) throw InvalidArgument("probe box requires lo <= hi");
  static constexpr int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59,
                                    61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
  if (dim > static_cast<Eigen::Index>(std::size(kPrimes))) throw InvalidArgument("probe box dimension too large");

  auto split = [&](const Vector& z) { return ProbePoint{z.head(d), z.tail(n)}; };
  std::vector<ProbePoint> probes;
  const Vector center = 0.5 * (lo + hi);
  probes.push_back(split(center));
  for (Eigen::Index i = 0; i < dim; ++i) {
    Vector z = center;
    z(i) = lo(i);
    probes.push_back(split(z));
    z(i) = hi(i);
    probes.push_back(split(z));
  }
  for (std::size_t idx = 1; idx <= count; ++idx) {
    Vector z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      // Radical inverse of idx in base kPrimes[i].
      const int base = kPrimes[i];
      double f = 1.0;
      double r = 0.0;
      std::size_t m = idx;
      while (m > 0) {
        f /= base;
        r += f * static_cast<double>(m % static_cast<std::size_t>(base));
        m /= static_cast<std::size_t>(base);
      }
      z(i) = lo(i) + r * (hi(i) - lo(i));
    }
    probes.push_back(split(z));
  }
  return probes;
}

/// Sampled evidence, not a certificate.
struct SampledConditionReport {
  double max_lh = 0.0;
  double max_sigma_norm = 0.0;
  ProbePoint worst_lh_probe;
  ProbePoint worst_sigma_probe;
  double threshold = 0.0;
  bool drift_condition_holds = true;      // max L H <= tau
  bool diffusion_condition_holds = true;  // max ||Sigma|| <= tau
  std::size_t probe_count = 0;
  static constexpr const char* kLabel = "sampled evidence, not a certificate";
  /// Smoothness of drift, diffusion, output and H cannot be checked from callbacks.
  static constexpr const char* kAssumptions = "assumptions declared by user";
};

inline SampledConditionReport check_conditions_sampled(const NonlinearSystem& sys, const std::vector<ProbePoint>& probes,
                                                       const TolerancePolicy& tol = {}) {
  SampledConditionReport report;
  report.threshold = tol.abs_floor();
  report.probe_count = probes.size();
  bool first = true;
  for (const auto& p : probes) {
    const double lh = lh_nonlinear(sys, p.x, p.v);
    const double sn = sigma_nonlinear(sys, p.x, p.v).norm();
    if (first || lh > report.max_lh) {
      report.max_lh = lh;
      report.worst_lh_probe = p;
    }
    if (first || sn > report.max_sigma_norm) {
      report.max_sigma_norm = sn;
      report.worst_sigma_probe = p;
    }
    first = false;
  }
  // Scale-aware threshold: relative to the magnitude of H over the probes.
  double scale = 1.0;
  for (const auto& p : probes) scale = std::max(scale, std::abs(sys.storage(p.x)));
  report.threshold = std::max(tol.abs_floor(), tol.rel_tol() * scale);
  report.drift_condition_holds = report.max_lh <= report.threshold;
  report.diffusion_condition_holds = report.max_sigma_norm <= report.threshold;
  return report;
}

/// Largest relative mismatch between supplied derivatives (gradient and
/// Hessian) and central finite differences over the probes. Returns 0 when no
/// derivatives are supplied.
inline double derivative_mismatch(const NonlinearSystem& sys, const std::vector<ProbePoint>& probes) {
  double worst = 0.0;
  for (const auto& p : probes) {
    if (sys.grad_storage) {
      const Vector g = detail::checked(sys.grad_storage(p.x), sys.d, 1, "storage gradient");
      const Vector fd = fd_gradient(sys.storage, p.x);
      worst = std::max(worst, (g - fd).norm() / std::max(1.0, fd.norm()));
    }
    if (sys.hess_storage) {
      const Matrix h = detail::checked(sys.hess_storage(p.x), sys.d, sys.d, "storage Hessian");
      const Matrix fd = fd_hessian(sys.storage, p.x);
      worst = std::max(worst, (h - fd).norm() / std::max(1.0, fd.norm()));
    }
  }
  return worst;
}

}  // namespace sphs
