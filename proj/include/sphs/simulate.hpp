#pragma once

// Euler-Maruyama Monte Carlo for SLTIS paths and the storage-balance process
//   Z_t = H(X_t) - int_0^t <u_s, Y_s> ds   (left Riemann sum).
//
// Each path draws from its own generator keyed by (seed, path index). Paths
// are grouped in fixed blocks whose statistics are merged in block order, so
// the result does not depend on the number of threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

/// splitmix64 stream. Distinct keys give statistically independent streams.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t key) : state_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Key of substream `index` under `key`.
  static std::uint64_t derive(std::uint64_t key, std::uint64_t index) {
    return mix(mix(key) ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
  }

 private:
  std::uint64_t state_;
};

struct SimConfig {
  double t_end = 1.0;
  double dt = 1e-3;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  Vector x0;
  ControlSpec control{};
  /// Worker threads; 0 selects the hardware concurrency.
  unsigned threads = 0;

  [[nodiscard]] std::size_t steps() const { return static_cast<std::size_t>(std::floor(t_end / dt + 1e-9)); }

  void validate(Eigen::Index d, Eigen::Index n) const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive");
    if (!(t_end >= dt) || !std::isfinite(t_end)) throw InvalidArgument("t_end must be at least dt");
    if (n_paths < 1) throw InvalidArgument("n_paths must be at least 1");
    if (x0.size() != d) throw ShapeError("x0 must have " + std::to_string(d) + " entries");
    require_finite(x0, "x0");
    control.validate(d, n);
  }
};

struct SimulationEnsemble {
  std::vector<double> times;
  std::vector<double> mean_Z, se_Z, mean_H, se_H;
  /// Mean state, one column per grid time.
  Matrix mean_X;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Count, mean and sum of squared deviations; merged with Chan's formula.
struct Moments {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    count += 1.0;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    if (count == 0.0) {
      *this = o;
      return;
    }
    const double total = count + o.count;
    const double delta = o.mean - mean;
    mean += delta * (o.count / total);
    m2 += o.m2 + delta * delta * (count * o.count / total);
    count = total;
  }

  [[nodiscard]] double standard_error() const {
    if (count < 2.0) return 0.0;
    return std::sqrt(std::max(0.0, m2 / (count - 1.0)) / count);
  }
};

inline constexpr std::size_t kBlockSize = 256;

struct BlockStats {
  std::vector<Moments> z, h;
  Matrix x_sum;  // d x (steps + 1)
  double first_bad_time = std::numeric_limits<double>::infinity();

  void reset(Eigen::Index d, std::size_t points) {
    z.assign(points, Moments{});
    h.assign(points, Moments{});
    x_sum = Matrix::Zero(d, static_cast<Eigen::Index>(points));
    first_bad_time = std::numeric_limits<double>::infinity();
  }
};

/// Integrates one path, feeding every grid point to `visit(i, x, z_minus_h0, h_minus_h0)`.
/// Returns the first time at which the state became non-finite, or +inf.
template <typename Visit>
double integrate_path(const SLTIS& sys, const Matrix& q, const SimConfig& cfg, std::size_t path, std::size_t steps,
                      Visit&& visit) {
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const std::size_t k = sys.noise_dim();
  SplitMix64 rng(SplitMix64::derive(cfg.seed, path));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sqrt_dt = std::sqrt(cfg.dt);

  Vector x = cfg.x0;
  Vector u(n), y(n), dx(d), qx(d);
  qx.noalias() = q * x;
  const double h0 = 0.5 * x.dot(qx);
  double supply = 0.0;
  visit(std::size_t{0}, x, 0.0, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * cfg.dt;
    cfg.control.evaluate(t, x, u);
    y.noalias() = sys.C() * x;
    y.noalias() += sys.D() * u;
    supply += cfg.dt * u.dot(y);
    dx.noalias() = sys.A() * x;
    dx.noalias() += sys.B() * u;
    dx *= cfg.dt;
    for (std::size_t j = 0; j < k; ++j) {
      const double dw = sqrt_dt * normal(rng);
      dx.noalias() += dw * (sys.noise_state(j) * x);
      dx.noalias() += dw * (sys.noise_input(j) * u);
    }
    x += dx;
    if (!x.allFinite()) return static_cast<double>(i + 1) * cfg.dt;
    qx.noalias() = q * x;
    const double h = 0.5 * x.dot(qx);
    visit(i + 1, x, (h - h0) - supply, h - h0);
  }
  return std::numeric_limits<double>::infinity();
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(block) for blocks [0, count) on up to `threads` workers, in waves
/// of `threads` consecutive blocks, calling merge(block) in block order after
/// each wave.
template <typename Work, typename Merge>
void run_blocks(std::size_t count, unsigned threads, Work&& work, Merge&& merge) {
  for (std::size_t wave = 0; wave < count; wave += threads) {
    const std::size_t end = std::min(count, wave + threads);
    std::vector<std::exception_ptr> errors(end - wave);
    if (end - wave == 1) {
      work(wave, std::size_t{0});
    } else {
      std::vector<std::thread> pool;
      for (std::size_t b = wave; b < end; ++b) {
        pool.emplace_back([&, b] {
          try {
            work(b, b - wave);
          } catch (...) {
            errors[b - wave] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t b = wave; b < end; ++b) merge(b, b - wave);
  }
}

}  // namespace detail

inline SimulationEnsemble simulate_paths(const SLTIS& sys, const QuadraticStorage& storage, const SimConfig& cfg) {
  validate_storage(sys, storage);
  cfg.validate(sys.state_dim(), sys.input_dim());
  const Eigen::Index d = sys.state_dim();
  const std::size_t steps = cfg.steps();
  const std::size_t points = steps + 1;
  const Matrix& q = storage.Q.matrix();
  const double h0 = storage.energy(cfg.x0);

  const std::size_t blocks = (cfg.n_paths + detail::kBlockSize - 1) / detail::kBlockSize;
  const unsigned threads =
      static_cast<unsigned>(std::min<std::size_t>(detail::resolve_threads(cfg.threads), std::max<std::size_t>(1, blocks)));

  std::vector<detail::BlockStats> slots(threads);
  detail::BlockStats total;
  total.reset(d, points);

  auto work = [&](std::size_t block, std::size_t slot) {
    auto& st = slots[slot];
    st.reset(d, points);
    const std::size_t first = block * detail::kBlockSize;
    const std::size_t last = std::min(cfg.n_paths, first + detail::kBlockSize);
    for (std::size_t p = first; p < last; ++p) {
      const double bad = detail::integrate_path(sys, q, cfg, p, steps,
                                                [&](std::size_t i, const Vector& x, double z, double h) {
                                                  st.z[i].add(z);
                                                  st.h[i].add(h);
                                                  st.x_sum.col(static_cast<Eigen::Index>(i)) += x;
                                                });
      st.first_bad_time = std::min(st.first_bad_time, bad);
      if (std::isfinite(st.first_bad_time)) return;
    }
  };
  auto merge = [&](std::size_t, std::size_t slot) {
    const auto& st = slots[slot];
    total.first_bad_time = std::min(total.first_bad_time, st.first_bad_time);
    for (std::size_t i = 0; i < points; ++i) {
      total.z[i].merge(st.z[i]);
      total.h[i].merge(st.h[i]);
    }
    total.x_sum += st.x_sum;
  };
  detail::run_blocks(blocks, threads, work, merge);
  if (std::isfinite(total.first_bad_time)) {
    throw NonFiniteError("simulation produced a non-finite state at t = " + std::to_string(total.first_bad_time));
  }

  SimulationEnsemble ens;
  ens.n_paths = cfg.n_paths;
  ens.seed = cfg.seed;
  ens.times.resize(points);
  ens.mean_Z.resize(points);
  ens.se_Z.resize(points);
  ens.mean_H.resize(points);
  ens.se_H.resize(points);
  for (std::size_t i = 0; i < points; ++i) {
    ens.times[i] = static_cast<double>(i) * cfg.dt;
    // At i = 0 every deviation is exactly zero, so mean_Z[0] == H(x0) exactly.
    ens.mean_Z[i] = h0 + total.z[i].mean;
    ens.se_Z[i] = total.z[i].standard_error();
    ens.mean_H[i] = h0 + total.h[i].mean;
    ens.se_H[i] = total.h[i].standard_error();
  }
  ens.mean_X = total.x_sum / static_cast<double>(cfg.n_paths);
  return ens;
}

/// CSV with header t,mean_Z,se_Z,mean_H,se_H and 17 significant digits.
inline void write_csv(std::ostream& os, const SimulationEnsemble& ens) {
  const auto old_precision = os.precision(17);
  os << "t,mean_Z,se_Z,mean_H,se_H\n";
  for (std::size_t i = 0; i < ens.times.size(); ++i) {
    os << ens.times[i] << ',' << ens.mean_Z[i] << ',' << ens.se_Z[i] << ',' << ens.mean_H[i] << ',' << ens.se_H[i]
       << '\n';
  }
  os.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Statistical tests (evidence, not certificates)

struct DecreasingTestResult {
  bool pass = true;
  /// Index i of the pair (i, i+1) with the largest excess.
  std::size_t worst_index = 0;
  /// mean[i+1] - mean[i] - multiplier * sqrt(se_i^2 + se_{i+1}^2) at the worst pair.
  double worst_excess = -std::numeric_limits<double>::infinity();
  static constexpr const char* kLabel = "statistical evidence, not a certificate";
};

inline DecreasingTestResult decreasing_test(const std::vector<double>& mean, const std::vector<double>& se,
                                            double multiplier = 3.0) {
  if (mean.size() < 2 || se.size() != mean.size()) {
    throw InvalidArgument("decreasing test needs at least two time points with matching standard errors");
  }
  DecreasingTestResult r;
  for (std::size_t i = 0; i + 1 < mean.size(); ++i) {
    const double excess = mean[i + 1] - mean[i] - multiplier * std::sqrt(se[i] * se[i] + se[i + 1] * se[i + 1]);
    if (excess > r.worst_excess) {
      r.worst_excess = excess;
      r.worst_index = i;
    }
  }
  r.pass = r.worst_excess <= 0.0;
  return r;
}

inline DecreasingTestResult decreasing_test(const SimulationEnsemble& ens, double multiplier = 3.0) {
  return decreasing_test(ens.mean_Z, ens.se_Z, multiplier);
}

struct IncreaseEvidence {
  bool found = false;
  std::size_t from = 0;
  std::size_t to = 0;
  /// series[to] - series[from] - multiplier * sqrt(se_from^2 + se_to^2), maximized over from < to.
  double excess = -std::numeric_limits<double>::infinity();
};

/// Largest CI-significant increase over any pair of times.
inline IncreaseEvidence significant_increase(const std::vector<double>& series, const std::vector<double>& se,
                                             double multiplier = 3.0) {
  if (se.size() != series.size()) throw InvalidArgument("series and standard errors differ in length");
  IncreaseEvidence ev;
  for (std::size_t i = 0; i < series.size(); ++i) {
    for (std::size_t j = i + 1; j < series.size(); ++j) {
      const double excess = series[j] - series[i] - multiplier * std::sqrt(se[i] * se[i] + se[j] * se[j]);
      if (excess > ev.excess) {
        ev.excess = excess;
        ev.from = i;
        ev.to = j;
      }
    }
  }
  ev.found = ev.excess > 0.0;
  return ev;
}

struct DefectOptions {
  std::size_t outer_paths = 64;
  std::size_t inner_samples = 1024;
  double multiplier = 3.0;
};

struct RestartDefect {
  double restart_time = 0.0;
  /// Largest conditional mean of Z_{s+dt} - Z_s over the outer paths.
  double max_defect = 0.0;
  /// Standard error belonging to that outer path.
  double se = 0.0;
  /// Largest of (mean - multiplier * se - floor) over outer paths; <= 0 when ok.
  double worst_excess = 0.0;
  bool ok = true;
};

/// For each restart time s, simulates outer paths up to s and then estimates
/// E[Z_{s+dt} - Z_s | X_s] from fresh one-step samples. The deterministic
/// Euler term dt^2/2 <Q b, b> (b = A X_s + B u_s) is removed so that the
/// estimate is unbiased for dt * L H(X_s, u_s).
inline std::vector<RestartDefect> supermartingale_defect(const SLTIS& sys, const QuadraticStorage& storage,
                                                         const SimConfig& cfg, const std::vector<double>& restart_times,
                                                         const DefectOptions& opts = {}) {
  validate_storage(sys, storage);
  cfg.validate(sys.state_dim(), sys.input_dim());
  if (opts.outer_paths < 1 || opts.inner_samples < 2) throw InvalidArgument("defect test needs samples");
  const Matrix& q = storage.Q.matrix();
  const Eigen::Index d = sys.state_dim();
  const Eigen::Index n = sys.input_dim();
  const std::size_t k = sys.noise_dim();
  const double eps = std::numeric_limits<double>::epsilon();

  std::vector<RestartDefect> out;
  for (std::size_t r = 0; r < restart_times.size(); ++r) {
    const double s = restart_times[r];
    if (!(s >= 0.0) || !(s < cfg.t_end)) throw InvalidArgument("restart times must lie in [0, t_end)");
    const auto steps_to_s = static_cast<std::size_t>(std::floor(s / cfg.dt + 1e-9));
    RestartDefect res;
    res.restart_time = s;
    res.worst_excess = -std::numeric_limits<double>::infinity();
    res.max_defect = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < opts.outer_paths; ++p) {
      Vector xs = cfg.x0;
      const double bad = detail::integrate_path(sys, q, cfg, p, steps_to_s,
                                                [&](std::size_t i, const Vector& x, double, double) {
                                                  if (i == steps_to_s) xs = x;
                                                });
      if (std::isfinite(bad)) throw NonFiniteError("simulation produced a non-finite state at t = " + std::to_string(bad));

      const double t = static_cast<double>(steps_to_s) * cfg.dt;
      Vector u(n);
      cfg.control.evaluate(t, xs, u);
      const Vector b = sys.A() * xs + sys.B() * u;
      const Vector y = sys.C() * xs + sys.D() * u;
      const double hs = 0.5 * xs.dot(q * xs);
      const double correction = 0.5 * cfg.dt * cfg.dt * b.dot(q * b);
      const double supply = cfg.dt * u.dot(y);
      std::vector<Vector> columns(k);
      for (std::size_t j = 0; j < k; ++j) columns[j] = sys.noise_state(j) * xs + sys.noise_input(j) * u;

      SplitMix64 rng(SplitMix64::derive(SplitMix64::derive(cfg.seed ^ 0x5bd1e995ULL, r), p));
      std::normal_distribution<double> normal(0.0, 1.0);
      const double sqrt_dt = std::sqrt(cfg.dt);
      detail::Moments m;
      Vector x1(d);
      for (std::size_t i = 0; i < opts.inner_samples; ++i) {
        x1 = xs + cfg.dt * b;
        for (std::size_t j = 0; j < k; ++j) x1 += (sqrt_dt * normal(rng)) * columns[j];
        m.add(0.5 * x1.dot(q * x1) - hs - supply - correction);
      }
      const double se = m.standard_error();
      const double floor = 64.0 * eps * std::max(1.0, hs);
      const double excess = m.mean - opts.multiplier * se - floor;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.se = se;
      }
      res.max_defect = std::max(res.max_defect, m.mean);
    }
    res.ok = res.worst_excess <= 0.0;
    out.push_back(res);
  }
  return out;
}

}  // namespace sphs
