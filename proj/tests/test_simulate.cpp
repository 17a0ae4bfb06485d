#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sphs/generator.hpp"
#include "sphs/simulate.hpp"

using namespace sphs;

namespace {

SLTIS scalar_decay() {
  return SLTIS(Matrix::Constant(1, 1, -1.0), Matrix::Zero(1, 0), {}, {}, Matrix::Zero(0, 1), Matrix::Zero(0, 0));
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double deterministic_error(double dt) {
  SimConfig cfg;
  cfg.t_end = 1.0;
  cfg.dt = dt;
  cfg.n_paths = 1;
  cfg.x0 = vec({1.0});
  const auto ens = simulate_paths(scalar_decay(), oracle::identity_storage(1), cfg);
  return std::abs(ens.mean_X(0, ens.mean_X.cols() - 1) - std::exp(-1.0));
}

}  // namespace

TEST(Simulate, DeterministicDecay) {
  EXPECT_LE(deterministic_error(1e-3), 3e-3);
}

TEST(Simulate, EulerErrorIsFirstOrder) {
  const double e1 = deterministic_error(1e-2);
  const double e2 = deterministic_error(5e-3);
  const double e3 = deterministic_error(2.5e-3);
  EXPECT_GE(e1 / e2, 1.5);
  EXPECT_LE(e1 / e2, 2.5);
  EXPECT_GE(e2 / e3, 1.5);
  EXPECT_LE(e2 / e3, 2.5);
}

TEST(Simulate, ZeroSystemKeepsZConstant) {
  SimConfig cfg;
  cfg.t_end = 0.1;
  cfg.dt = 1e-2;
  cfg.n_paths = 300;
  cfg.x0 = vec({1.0, -2.0});
  cfg.control = ConstantControl{vec({3.0})};
  const auto ens = simulate_paths(SLTIS::zero(2, 1, 1), oracle::identity_storage(2), cfg);
  for (std::size_t i = 0; i < ens.times.size(); ++i) {
    EXPECT_EQ(ens.mean_Z[i], 2.5);
    EXPECT_EQ(ens.se_Z[i], 0.0);
  }
}

TEST(Simulate, InitialValueIsExact) {
  oracle::Gen g(61);
  const auto s = oracle::random_sltis(g, 3, 1, 2);
  const QuadraticStorage q{SymMatrix(g.psd(3, 3)), {}};
  SimConfig cfg;
  cfg.t_end = 0.01;
  cfg.dt = 1e-3;
  cfg.n_paths = 513;
  cfg.x0 = g.vector(3);
  const auto ens = simulate_paths(s, q, cfg);
  EXPECT_EQ(ens.mean_Z[0], q.energy(cfg.x0));
  EXPECT_EQ(ens.mean_H[0], q.energy(cfg.x0));
  EXPECT_EQ(ens.se_Z[0], 0.0);
}

TEST(Simulate, SecondMomentMatchesEulerRecursion) {
  // dX = a X dt + s X dW: Euler gives E[X_{i+1}^2] = ((1 + a dt)^2 + s^2 dt) E[X_i^2] exactly.
  const double a = -0.5, sig = 0.8, dt = 1e-2;
  const SLTIS s(Matrix::Constant(1, 1, a), Matrix::Zero(1, 0), {Matrix::Constant(1, 1, sig)}, {Matrix::Zero(1, 0)},
                Matrix::Zero(0, 1), Matrix::Zero(0, 0));
  SimConfig cfg;
  cfg.t_end = 1.0;
  cfg.dt = dt;
  cfg.n_paths = 20000;
  cfg.seed = 7;
  cfg.x0 = vec({1.0});
  const auto ens = simulate_paths(s, oracle::identity_storage(1), cfg);
  const double factor = (1 + a * dt) * (1 + a * dt) + sig * sig * dt;
  for (std::size_t i = 0; i < ens.times.size(); i += 10) {
    const double expected = 0.5 * std::pow(factor, static_cast<double>(i));
    EXPECT_NEAR(ens.mean_H[i], expected, 4.0 * ens.se_H[i] + 1e-12) << "i = " << i;
  }
}

TEST(Simulate, OneStepDriftMatchesGenerator) {
  const auto s = oracle::unit_msd(1.0);
  const auto q = oracle::identity_storage(2);
  SimConfig cfg;
  cfg.dt = 1e-3;
  cfg.t_end = 1e-3;
  cfg.n_paths = 100000;
  cfg.seed = 3;
  cfg.x0 = vec({0.0, 1.0});
  const auto ens = simulate_paths(s, q, cfg);
  const double drift = (ens.mean_Z[1] - ens.mean_Z[0]) / cfg.dt;
  const double ci = ens.se_Z[1] / cfg.dt;
  EXPECT_NEAR(drift, lh_linear(s, q, cfg.x0, vec({0})), 3 * ci + 5e-3);
}

TEST(Simulate, GeneratorConsistencyOnRandomCertifiedSystems) {
  oracle::Gen g(62);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_phs(g, 2, 1, 1, 2);
    const SLTIS s = compile_phs(p);
    const QuadraticStorage q{SymMatrix(p.Q()), {}};
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.t_end = 1e-3;
    cfg.n_paths = 20000;
    cfg.seed = static_cast<std::uint64_t>(100 + trial);
    cfg.x0 = g.vector(2);
    const Vector u = g.vector(1);
    cfg.control = ConstantControl{u};
    const auto ens = simulate_paths(s, q, cfg);
    const double drift = (ens.mean_Z[1] - ens.mean_Z[0]) / cfg.dt;
    const double ci = ens.se_Z[1] / cfg.dt;
    const double bound = 3 * ci + 5 * cfg.dt * (1 + cfg.x0.squaredNorm()) * std::max(1.0, s.A().norm() * s.A().norm());
    EXPECT_NEAR(drift, lh_linear(s, q, cfg.x0, u), bound);
  }
}

TEST(Simulate, ReproducibleAcrossThreadCounts) {
  const auto s = oracle::unit_msd(1.0);
  SimConfig cfg;
  cfg.t_end = 0.2;
  cfg.dt = 1e-3;
  cfg.n_paths = 2000;
  cfg.seed = 99;
  cfg.x0 = vec({1.0, 1.0});
  cfg.threads = 1;
  const auto serial = simulate_paths(s, oracle::identity_storage(2), cfg);
  cfg.threads = 7;
  const auto parallel = simulate_paths(s, oracle::identity_storage(2), cfg);
  std::ostringstream a, b;
  write_csv(a, serial);
  write_csv(b, parallel);
  EXPECT_EQ(a.str(), b.str());
  cfg.seed = 100;
  std::ostringstream c;
  write_csv(c, simulate_paths(s, oracle::identity_storage(2), cfg));
  EXPECT_NE(a.str(), c.str());
}

TEST(Simulate, CsvFormat) {
  SimConfig cfg;
  cfg.t_end = 2e-3;
  cfg.dt = 1e-3;
  cfg.n_paths = 2;
  cfg.x0 = vec({1.0});
  const auto ens = simulate_paths(scalar_decay(), oracle::identity_storage(1), cfg);
  std::ostringstream os;
  write_csv(os, ens);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,mean_Z,se_Z,mean_H,se_H");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  // Every path takes the same step; 17 digits make the text round-trip exactly.
  const std::string mean_h = rows[1].substr(0, rows[1].rfind(','));
  const double x1 = 1.0 - 1e-3;
  EXPECT_NEAR(std::stod(mean_h.substr(mean_h.rfind(',') + 1)), 0.5 * x1 * x1, 1e-16);
}

TEST(Simulate, ReportsBlowUp) {
  const SLTIS s(Matrix::Constant(1, 1, 1e300), Matrix::Zero(1, 0), {}, {}, Matrix::Zero(0, 1), Matrix::Zero(0, 0));
  SimConfig cfg;
  cfg.t_end = 0.1;
  cfg.dt = 1e-2;
  cfg.n_paths = 4;
  cfg.x0 = vec({1e10});
  try {
    simulate_paths(s, oracle::identity_storage(1), cfg);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("t = 0.01"), std::string::npos) << e.what();
  }
}

TEST(Simulate, RejectsBadConfig) {
  SimConfig cfg;
  cfg.x0 = vec({1.0});
  cfg.dt = 0;
  EXPECT_THROW(simulate_paths(scalar_decay(), oracle::identity_storage(1), cfg), InvalidArgument);
  cfg.dt = 1e-3;
  cfg.n_paths = 0;
  EXPECT_THROW(simulate_paths(scalar_decay(), oracle::identity_storage(1), cfg), InvalidArgument);
  cfg.n_paths = 1;
  cfg.x0 = vec({1.0, 2.0});
  EXPECT_THROW(simulate_paths(scalar_decay(), oracle::identity_storage(1), cfg), ShapeError);
}

TEST(DecreasingTest, Examples) {
  const auto pass = decreasing_test({3.0, 2.0, 1.0}, {1e-6, 1e-6, 1e-6});
  EXPECT_TRUE(pass.pass);
  const auto fail = decreasing_test({0.0, 1.0}, {0.01, 0.01});
  EXPECT_FALSE(fail.pass);
  EXPECT_EQ(fail.worst_index, 0u);
  EXPECT_NEAR(fail.worst_excess, 1.0 - 3.0 * std::sqrt(2e-4), 1e-15);
  EXPECT_THROW(decreasing_test({1.0}, {0.0}), InvalidArgument);
}

TEST(DecreasingTest, MassSpringDamperPasses) {
  SimConfig cfg;
  cfg.t_end = 5.0;
  cfg.dt = 1e-3;
  cfg.n_paths = 10000;
  cfg.seed = 2024;
  cfg.x0 = vec({1.0, 1.0});
  const auto ens = simulate_paths(oracle::unit_msd(1.0), oracle::identity_storage(2), cfg);
  EXPECT_TRUE(decreasing_test(ens).pass);
}

TEST(SignificantIncrease, FindsWorstPair) {
  const auto ev = significant_increase({0.0, -1.0, 2.0, 1.0}, {0.1, 0.1, 0.1, 0.1});
  EXPECT_TRUE(ev.found);
  EXPECT_EQ(ev.from, 1u);
  EXPECT_EQ(ev.to, 2u);
  EXPECT_FALSE(significant_increase({3.0, 2.0, 1.0}, {0.0, 0.0, 0.0}).found);
}

TEST(SupermartingaleDefect, ZeroSystemIsExactlyZero) {
  SimConfig cfg;
  cfg.t_end = 0.1;
  cfg.dt = 1e-2;
  cfg.x0 = vec({1.0, 2.0});
  DefectOptions opts;
  opts.outer_paths = 4;
  opts.inner_samples = 16;
  const auto d = supermartingale_defect(SLTIS::zero(2, 1, 1), oracle::identity_storage(2), cfg, {0.0, 0.05}, opts);
  ASSERT_EQ(d.size(), 2u);
  for (const auto& r : d) {
    EXPECT_EQ(r.max_defect, 0.0);
    EXPECT_TRUE(r.ok);
  }
}

TEST(SupermartingaleDefect, MassSpringDamperWithinCi) {
  SimConfig cfg;
  cfg.t_end = 1.0;
  cfg.dt = 1e-3;
  cfg.seed = 5;
  cfg.x0 = vec({1.0, 1.0});
  const auto d = supermartingale_defect(oracle::unit_msd(1.0), oracle::identity_storage(2), cfg, {0.0, 0.25, 0.5});
  for (const auto& r : d) EXPECT_TRUE(r.ok) << "s = " << r.restart_time << " excess " << r.worst_excess;
}

TEST(SupermartingaleDefect, UnstableDriftFails) {
  const SLTIS s(Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 0), {}, {}, Matrix::Zero(0, 1), Matrix::Zero(0, 0));
  SimConfig cfg;
  cfg.t_end = 1.0;
  cfg.dt = 1e-2;
  cfg.x0 = vec({2.0});
  DefectOptions opts;
  opts.outer_paths = 2;
  opts.inner_samples = 8;
  const auto d = supermartingale_defect(s, oracle::identity_storage(1), cfg, {0.0}, opts);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_FALSE(d[0].ok);
  EXPECT_NEAR(d[0].max_defect, 4.0 * cfg.dt, 1e-12);
}
