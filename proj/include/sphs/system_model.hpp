#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sphs/matrix_kernel.hpp"

namespace sphs {

namespace detail {

inline std::string shape_string(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(name + " must be " + shape_string(rows, cols) + ", got " + shape_string(m.rows(), m.cols()));
  }
  require_finite(m, name);
}

inline bool same_entries(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

inline bool same_entries(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](const Matrix& x, const Matrix& y) {
           return same_entries(x, y);
         });
}

}  // namespace detail

/// Stochastic linear time-invariant input-state-output system
///
///   dX = (A X + B u) dt + sum_j (Anoise_j X + Bnoise_j u) dW^j
///   Y  = C X + D u
///
/// with state dimension d, input/output dimension n (n = 0 allowed for
/// uncontrolled systems) and k independent Wiener channels. Shapes and
/// finiteness are checked on construction.
class SLTIS {
 public:
  SLTIS(Matrix a, Matrix b, std::vector<Matrix> noise_state, std::vector<Matrix> noise_input, Matrix c, Matrix d)
      : a_(std::move(a)),
        b_(std::move(b)),
        noise_state_(std::move(noise_state)),
        noise_input_(std::move(noise_input)),
        c_(std::move(c)),
        d_(std::move(d)) {
    const Eigen::Index ds = a_.rows();
    const Eigen::Index n = d_.rows();
    if (ds < 1) throw ShapeError("state dimension must be positive");
    detail::require_shape(a_, ds, ds, "A");
    detail::require_shape(b_, ds, n, "B");
    detail::require_shape(c_, n, ds, "C");
    detail::require_shape(d_, n, n, "D");
    if (noise_state_.size() != noise_input_.size()) {
      throw ShapeError("number of state-noise matrices (" + std::to_string(noise_state_.size()) +
                       ") differs from number of input-noise matrices (" + std::to_string(noise_input_.size()) + ")");
    }
    for (std::size_t j = 0; j < noise_state_.size(); ++j) {
      detail::require_shape(noise_state_[j], ds, ds, "Afrak[" + std::to_string(j) + "]");
      detail::require_shape(noise_input_[j], ds, n, "Bfrak[" + std::to_string(j) + "]");
    }
  }

  /// Deterministic system with k noise channels that are all zero.
  static SLTIS zero(Eigen::Index d, Eigen::Index n, std::size_t k) {
    return SLTIS(Matrix::Zero(d, d), Matrix::Zero(d, n), std::vector<Matrix>(k, Matrix::Zero(d, d)),
                 std::vector<Matrix>(k, Matrix::Zero(d, n)), Matrix::Zero(n, d), Matrix::Zero(n, n));
  }

  [[nodiscard]] Eigen::Index state_dim() const { return a_.rows(); }
  [[nodiscard]] Eigen::Index input_dim() const { return d_.rows(); }
  [[nodiscard]] std::size_t noise_dim() const { return noise_state_.size(); }

  [[nodiscard]] const Matrix& A() const { return a_; }
  [[nodiscard]] const Matrix& B() const { return b_; }
  [[nodiscard]] const Matrix& C() const { return c_; }
  [[nodiscard]] const Matrix& D() const { return d_; }
  [[nodiscard]] const Matrix& noise_state(std::size_t j) const { return noise_state_.at(j); }
  [[nodiscard]] const Matrix& noise_input(std::size_t j) const { return noise_input_.at(j); }
  [[nodiscard]] const std::vector<Matrix>& noise_state() const { return noise_state_; }
  [[nodiscard]] const std::vector<Matrix>& noise_input() const { return noise_input_; }

  /// Bitwise equality of all system matrices.
  friend bool operator==(const SLTIS& x, const SLTIS& y) {
    return detail::same_entries(x.a_, y.a_) && detail::same_entries(x.b_, y.b_) &&
           detail::same_entries(x.c_, y.c_) && detail::same_entries(x.d_, y.d_) &&
           detail::same_entries(x.noise_state_, y.noise_state_) &&
           detail::same_entries(x.noise_input_, y.noise_input_);
  }

 private:
  Matrix a_, b_;
  std::vector<Matrix> noise_state_, noise_input_;
  Matrix c_, d_;
};

/// Quadratic storage H(x) = 1/2 <Q x, x>.
struct QuadraticStorage {
  SymMatrix Q;
  TolerancePolicy tol{};

  [[nodiscard]] Eigen::Index dim() const { return Q.dim(); }
  [[nodiscard]] double energy(const Eigen::Ref<const Vector>& x) const { return 0.5 * x.dot(Q.matrix() * x); }
  [[nodiscard]] Vector gradient(const Eigen::Ref<const Vector>& x) const { return Q.matrix() * x; }
};

/// Q must match the state dimension and be symmetric within tau(Q). The
/// SymMatrix type already guarantees exact symmetry, so this overload only
/// checks the dimension.
inline void validate_storage(const SLTIS& sys, const QuadraticStorage& storage) {
  if (storage.dim() != sys.state_dim()) {
    throw ShapeError("storage matrix Q is " + detail::shape_string(storage.dim(), storage.dim()) +
                     " but the system state dimension is " + std::to_string(sys.state_dim()));
  }
}

/// Builds a storage from an arbitrary square matrix, rejecting asymmetry above tau.
inline QuadraticStorage make_storage(const SLTIS& sys, const Eigen::Ref<const Matrix>& q, const TolerancePolicy& tol = {}) {
  if (q.rows() != sys.state_dim() || q.cols() != sys.state_dim()) {
    throw ShapeError("storage matrix Q is " + detail::shape_string(q.rows(), q.cols()) +
                     " but the system state dimension is " + std::to_string(sys.state_dim()));
  }
  require_finite(q, "Q");
  const double asym = max_abs(q - q.transpose());
  if (asym > tol.threshold(q)) {
    throw ShapeError("Q violates symmetry: max |Q - Q^T| = " + std::to_string(asym));
  }
  return QuadraticStorage{SymMatrix(q), tol};
}

/// Port-Hamiltonian parameters. The compiled system is
///
///   A = (J - R - 1/2 sum_j Fn_j^T Q Fn_j) Q,   B = F - P,
///   Anoise_j = Fn_j Q,                          Bnoise_j = Bnoise_j,
///   C = (F + P + sum_j Fn_j^T Q Bnoise_j)^T Q,  D = S + N + 1/2 sum_j Bnoise_j^T Q Bnoise_j
///
/// where Fn_j is noise_state_factor(j). The constructor enforces J = -J^T,
/// R = R^T, Q = Q^T >= 0, S = S^T, N = -N^T and [[R, P], [P^T, S]] >= 0,
/// each within tau of the matrix concerned.
class PHSForm {
 public:
  PHSForm(Matrix j, Matrix r, Matrix q, std::vector<Matrix> noise_state_factor, Matrix f, Matrix p,
          std::vector<Matrix> noise_input, Matrix s, Matrix n, const TolerancePolicy& tol = {})
      : j_(std::move(j)),
        r_(std::move(r)),
        q_(std::move(q)),
        noise_state_factor_(std::move(noise_state_factor)),
        f_(std::move(f)),
        p_(std::move(p)),
        noise_input_(std::move(noise_input)),
        s_(std::move(s)),
        n_(std::move(n)) {
    const Eigen::Index d = j_.rows();
    const Eigen::Index m = s_.rows();
    if (d < 1) throw ShapeError("state dimension must be positive");
    detail::require_shape(j_, d, d, "J");
    detail::require_shape(r_, d, d, "R");
    detail::require_shape(q_, d, d, "Q");
    detail::require_shape(f_, d, m, "F");
    detail::require_shape(p_, d, m, "P");
    detail::require_shape(s_, m, m, "S");
    detail::require_shape(n_, m, m, "N");
    if (noise_state_factor_.size() != noise_input_.size()) {
      throw ShapeError("PHS noise lists Abar and Bfrak have different lengths");
    }
    for (std::size_t i = 0; i < noise_state_factor_.size(); ++i) {
      detail::require_shape(noise_state_factor_[i], d, d, "Abar[" + std::to_string(i) + "]");
      detail::require_shape(noise_input_[i], d, m, "Bfrak[" + std::to_string(i) + "]");
    }

    auto require = [](bool ok, const std::string& what, double violation) {
      if (!ok) throw StructureError(what + " violated (violation " + std::to_string(violation) + ")");
    };
    const double j_skew = max_abs(j_ + j_.transpose());
    require(j_skew <= tol.threshold(j_), "J skew-symmetry", j_skew);
    const double r_sym = max_abs(r_ - r_.transpose());
    require(r_sym <= tol.threshold(r_), "R symmetry", r_sym);
    const double q_sym = max_abs(q_ - q_.transpose());
    require(q_sym <= tol.threshold(q_), "Q symmetry", q_sym);
    const double q_min = min_eigenvalue(SymMatrix(q_));
    require(q_min >= -tol.threshold(q_), "Q positive semidefiniteness", -q_min);
    const double s_sym = max_abs(s_ - s_.transpose());
    require(s_sym <= tol.threshold(s_), "S symmetry", s_sym);
    const double n_skew = max_abs(n_ + n_.transpose());
    require(n_skew <= tol.threshold(n_), "N skew-symmetry", n_skew);
    const Matrix block = dissipation_block();
    const double block_min = min_eigenvalue(SymMatrix(block));
    require(block_min >= -tol.threshold(block), "[[R, P], [P^T, S]] positive semidefiniteness", -block_min);
  }

  [[nodiscard]] Eigen::Index state_dim() const { return j_.rows(); }
  [[nodiscard]] Eigen::Index input_dim() const { return s_.rows(); }
  [[nodiscard]] std::size_t noise_dim() const { return noise_state_factor_.size(); }

  [[nodiscard]] const Matrix& J() const { return j_; }
  [[nodiscard]] const Matrix& R() const { return r_; }
  [[nodiscard]] const Matrix& Q() const { return q_; }
  [[nodiscard]] const Matrix& F() const { return f_; }
  [[nodiscard]] const Matrix& P() const { return p_; }
  [[nodiscard]] const Matrix& S() const { return s_; }
  [[nodiscard]] const Matrix& N() const { return n_; }
  [[nodiscard]] const Matrix& noise_state_factor(std::size_t i) const { return noise_state_factor_.at(i); }
  [[nodiscard]] const Matrix& noise_input(std::size_t i) const { return noise_input_.at(i); }
  [[nodiscard]] const std::vector<Matrix>& noise_state_factor() const { return noise_state_factor_; }
  [[nodiscard]] const std::vector<Matrix>& noise_input() const { return noise_input_; }

  /// [[R, P], [P^T, S]], symmetrized.
  [[nodiscard]] Matrix dissipation_block() const {
    const Eigen::Index d = state_dim();
    const Eigen::Index m = input_dim();
    Matrix block(d + m, d + m);
    block.topLeftCorner(d, d) = r_;
    block.topRightCorner(d, m) = p_;
    block.bottomLeftCorner(m, d) = p_.transpose();
    block.bottomRightCorner(m, m) = s_;
    return 0.5 * (block + block.transpose());
  }

  friend bool operator==(const PHSForm& x, const PHSForm& y) {
    return detail::same_entries(x.j_, y.j_) && detail::same_entries(x.r_, y.r_) && detail::same_entries(x.q_, y.q_) &&
           detail::same_entries(x.f_, y.f_) && detail::same_entries(x.p_, y.p_) && detail::same_entries(x.s_, y.s_) &&
           detail::same_entries(x.n_, y.n_) && detail::same_entries(x.noise_state_factor_, y.noise_state_factor_) &&
           detail::same_entries(x.noise_input_, y.noise_input_);
  }

 private:
  Matrix j_, r_, q_;
  std::vector<Matrix> noise_state_factor_;
  Matrix f_, p_;
  std::vector<Matrix> noise_input_;
  Matrix s_, n_;
};

// ---------------------------------------------------------------------------
// Controls

struct ZeroControl {};

struct ConstantControl {
  Vector value;
};

/// u(t) = values[i] for the largest i with times[i] <= t; zero before times[0].
struct PiecewiseConstantControl {
  std::vector<double> times;
  std::vector<Vector> values;
};

/// u(t) = gain * X(t), evaluated at the left end of each step.
struct StateFeedbackControl {
  Matrix gain;
};

class ControlSpec {
 public:
  using Variant = std::variant<ZeroControl, ConstantControl, PiecewiseConstantControl, StateFeedbackControl>;

  ControlSpec() = default;
  ControlSpec(Variant v) : v_(std::move(v)) {}  // NOLINT(google-explicit-constructor)
  template <class T, class = std::enable_if_t<std::is_constructible_v<Variant, T&&> &&
                                              !std::is_same_v<std::decay_t<T>, ControlSpec> &&
                                              !std::is_same_v<std::decay_t<T>, Variant>>>
  ControlSpec(T&& c) : v_(std::forward<T>(c)) {}  // NOLINT(google-explicit-constructor)

  [[nodiscard]] const Variant& variant() const { return v_; }

  /// Checks dimensions against (d, n) and that switching times increase strictly.
  void validate(Eigen::Index d, Eigen::Index n) const {
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, ConstantControl>) {
            if (c.value.size() != n) throw ShapeError("constant control must have " + std::to_string(n) + " entries");
            require_finite(c.value, "constant control");
          } else if constexpr (std::is_same_v<T, PiecewiseConstantControl>) {
            if (c.times.size() != c.values.size() || c.times.empty()) {
              throw ShapeError("piecewise-constant control needs one value per switching time");
            }
            for (std::size_t i = 0; i < c.times.size(); ++i) {
              if (!std::isfinite(c.times[i])) throw NonFiniteError("switching time is not finite");
              if (i > 0 && !(c.times[i] > c.times[i - 1])) {
                throw InvalidArgument("piecewise-constant switching times must be strictly increasing");
              }
              if (c.values[i].size() != n) {
                throw ShapeError("piecewise-constant control value must have " + std::to_string(n) + " entries");
              }
              require_finite(c.values[i], "piecewise-constant control value");
            }
          } else if constexpr (std::is_same_v<T, StateFeedbackControl>) {
            detail::require_shape(c.gain, n, d, "state feedback gain");
          }
        },
        v_);
  }

  /// Control value at time t and state x, written into `out` (size n).
  void evaluate(double t, const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> out) const {
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, ZeroControl>) {
            out.setZero();
          } else if constexpr (std::is_same_v<T, ConstantControl>) {
            out = c.value;
          } else if constexpr (std::is_same_v<T, PiecewiseConstantControl>) {
            const auto it = std::upper_bound(c.times.begin(), c.times.end(), t);
            if (it == c.times.begin()) {
              out.setZero();
            } else {
              out = c.values[static_cast<std::size_t>(it - c.times.begin() - 1)];
            }
          } else {
            out.noalias() = c.gain * x;
          }
        },
        v_);
  }

  [[nodiscard]] bool is_state_feedback() const { return std::holds_alternative<StateFeedbackControl>(v_); }

 private:
  Variant v_ = ZeroControl{};
};

}  // namespace sphs
