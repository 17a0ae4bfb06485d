#pragma once

// Mass-spring-damper and RLC circuits with multiplicative noise, written in
// port-Hamiltonian coordinates (state = positions/charges and momenta/fluxes).
// Physical parameters must be positive; noise intensities are not bounded, so
// systems that fail the passivity test can be generated on purpose.

#include <cmath>
#include <string>

#include "sphs/interconnect.hpp"
#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

struct DemoSystem {
  SLTIS sys;
  SymMatrix Q;
};

namespace detail {

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be positive");
}

}  // namespace detail

/// Mass m, damping c, spring constant kappa, force noise sigma.
inline DemoSystem demo_msd(double m, double c, double kappa, double sigma) {
  detail::require_positive(m, "m");
  detail::require_positive(c, "c");
  detail::require_positive(kappa, "kappa");
  if (!std::isfinite(sigma)) throw InvalidArgument("sigma must be finite");
  Matrix q(2, 2);
  q << kappa, 0, 0, 1.0 / m;
  Matrix drift(2, 2);
  drift << 0, 1, -1, -c;
  Matrix noise(2, 2);
  noise << 0, 0, 0, sigma;
  Matrix b(2, 1);
  b << 0, 1;
  Matrix out(1, 2);
  out << 0, 1;
  return DemoSystem{SLTIS(drift * q, b, {noise * q}, {Matrix::Zero(2, 1)}, out * q, Matrix::Zero(1, 1)), SymMatrix(q)};
}

/// Resistance r, inductance l, capacitance cap, noise on the charge (s1) and
/// flux (s2) equations, both driven by the same Wiener process.
inline DemoSystem demo_rlc(double r, double l, double cap, double s1, double s2) {
  detail::require_positive(r, "r");
  detail::require_positive(l, "l");
  detail::require_positive(cap, "cap");
  if (!std::isfinite(s1) || !std::isfinite(s2)) throw InvalidArgument("noise intensities must be finite");
  Matrix q(2, 2);
  q << 1.0 / cap, 0, 0, 1.0 / l;
  Matrix drift(2, 2);
  drift << 0, 1, -1, -r;
  Matrix noise(2, 2);
  noise << 0, s1, 0, s2;
  Matrix b(2, 1);
  b << 0, 1;
  Matrix out(1, 2);
  out << 0, 1;
  return DemoSystem{SLTIS(drift * q, b, {noise * q}, {Matrix::Zero(2, 1)}, out * q, Matrix::Zero(1, 1)), SymMatrix(q)};
}

/// Power-conserving coupling K = [[0, 1], [-1, 0]] of the two demos above.
inline DemoSystem demo_coupled(const DemoSystem& msd, const DemoSystem& rlc) {
  Matrix k(2, 2);
  k << 0, 1, -1, 0;
  return DemoSystem{interconnect(msd.sys, rlc.sys, InterconnectSpec{1, k}),
                    SymMatrix(block_diagonal(msd.Q.matrix(), rlc.Q.matrix()))};
}

}  // namespace sphs
