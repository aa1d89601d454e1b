#pragma once

// Experiment harness: runs a solver to a stopping rule, logs per-iteration
// metrics and aggregates curves across seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vicomm/algorithms.hpp"
#include "vicomm/problems.hpp"

namespace vicomm {

enum class Algorithm { OptimisticMasha, ExtraGradient };

inline const char* to_string(Algorithm a) {
  return a == Algorithm::OptimisticMasha ? "OptimisticMasha" : "ExtraGradient";
}

struct StopRule {
  std::optional<std::size_t> max_rounds;
  std::optional<double> target_rel_dist_sq;
};

struct RunConfig {
  Algorithm algorithm = Algorithm::OptimisticMasha;
  CompressorKind compressor = CompressorKind::PermK;
  TheoremParams params;  ///< Extra Gradient reads only params.eta
  StopRule stop;
  std::uint64_t seed = 0;
  std::size_t log_every = 1;
  std::optional<Vec> start;     ///< defaults to the zero vector
  bool track_lyapunov = true;   ///< Optimistic MASHA only

  void validate() const {
    if (!stop.max_rounds && !stop.target_rel_dist_sq) {
      throw ConfigError("run config: set max_rounds, target_rel_dist_sq, or both");
    }
    if (stop.target_rel_dist_sq && !(*stop.target_rel_dist_sq >= 0.0)) {
      throw ConfigError("run config: target_rel_dist_sq must be nonnegative");
    }
    if (log_every == 0) throw ConfigError("run config: log_every must be positive");
  }
};

struct MetricsRow {
  std::size_t k = 0;
  std::uint64_t uplink_scalars = 0;  ///< cumulative, per device
  double dist_sq = 0.0;
  double rel_dist_sq = 0.0;
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
  bool sync = false;  ///< b_{k-1}: whether the step into k refreshed the anchor
  std::int64_t wall_time_ns = 0;
};

struct RunMetrics {
  Algorithm algorithm = Algorithm::OptimisticMasha;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::size_t rounds = 0;
  std::size_t syncs = 0;
  bool converged = false;  ///< target reached (or start was already optimal)
  bool diverged = false;

  const MetricsRow& final_row() const { return rows.back(); }
};

/// Raised by run() when the solver diverges; carries the rows logged so far.
class RunDiverged : public DivergenceError {
 public:
  RunDiverged(const DivergenceError& cause, RunMetrics partial)
      : DivergenceError(cause), partial_(std::move(partial)) {}
  const RunMetrics& partial() const noexcept { return partial_; }

 private:
  RunMetrics partial_;
};

namespace detail {

class RunLogger {
 public:
  RunLogger(RunMetrics& metrics, double initial_dist)
      : metrics_(metrics), initial_(initial_dist), start_(std::chrono::steady_clock::now()) {}

  double relative(double dist) const { return initial_ > 0.0 ? dist / initial_ : 0.0; }

  void push(std::size_t k, std::uint64_t uplink, double dist, double psi, bool sync) {
    MetricsRow row;
    row.k = k;
    row.uplink_scalars = uplink;
    row.dist_sq = dist;
    row.rel_dist_sq = relative(dist);
    row.lyapunov = psi;
    row.sync = sync;
    row.wall_time_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                           std::chrono::steady_clock::now() - start_)
                           .count();
    metrics_.rows.push_back(row);
  }

 private:
  RunMetrics& metrics_;
  double initial_;
  std::chrono::steady_clock::time_point start_;
};

inline bool reached(const StopRule& stop, double rel) {
  return stop.target_rel_dist_sq && rel <= *stop.target_rel_dist_sq;
}

}  // namespace detail

/// Runs one configured solver until a stopping rule fires. Rows are logged at
/// k = 0, every log_every steps, and at the final step.
inline RunMetrics run(const RunConfig& config, const ProblemInstance& problem) {
  config.validate();
  const OperatorOracle& oracle = problem.oracle;
  const std::size_t dim = oracle.dim();
  const Vec start = config.start ? *config.start : Vec::Zero(static_cast<Eigen::Index>(dim));
  require_dim(start, dim, "run: start point");

  RunMetrics metrics;
  metrics.algorithm = config.algorithm;
  metrics.seed = config.seed;
  const double dist0 = dist_sq(start, problem.z_star);
  detail::RunLogger log(metrics, dist0);
  const std::size_t max_rounds =
      config.stop.max_rounds.value_or(std::numeric_limits<std::size_t>::max());

  auto finished = [&](std::size_t k, double dist) {
    return dist0 == 0.0 || detail::reached(config.stop, log.relative(dist)) || k >= max_rounds;
  };

  if (config.algorithm == Algorithm::OptimisticMasha) {
    const OptimisticMasha solver(oracle, problem.g, config.params, config.seed,
                                 config.compressor);
    auto psi = [&](const SolverState& s) {
      return config.track_lyapunov ? lyapunov(s, oracle, config.params, problem.z_star)
                                   : std::numeric_limits<double>::quiet_NaN();
    };
    SolverState state = solver.init(start);
    std::uint64_t uplink = solver.init_cost();
    log.push(0, uplink, dist0, psi(state), false);
    double dist = dist0;
    while (!finished(state.k, dist)) {
      StepOutcome out;
      try {
        out = solver.step(state);
      } catch (const DivergenceError& e) {
        metrics.rounds = state.k;
        metrics.diverged = true;
        throw RunDiverged(e, std::move(metrics));
      }
      state = std::move(out.state);
      uplink += out.uplink_scalars_per_device;
      metrics.syncs += out.synced ? 1 : 0;
      dist = dist_sq(state.z, problem.z_star);
      if (state.k % config.log_every == 0 || finished(state.k, dist)) {
        log.push(state.k, uplink, dist, psi(state), out.synced);
      }
    }
    metrics.rounds = state.k;
    metrics.converged = dist0 == 0.0 || detail::reached(config.stop, log.relative(dist));
    return metrics;
  }

  const double eta = config.params.eta;
  if (!(eta > 0.0)) throw ConfigError("extra gradient: eta must be positive");
  Vec z = start;
  std::size_t k = 0;
  std::uint64_t uplink = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  log.push(0, uplink, dist0, nan, false);
  double dist = dist0;
  while (!finished(k, dist)) {
    try {
      auto step = extra_gradient_step(z, oracle, problem.g, eta, k);
      z = std::move(step.z);
      uplink += step.uplink_scalars_per_device;
    } catch (const DivergenceError& e) {
      metrics.rounds = k;
      metrics.diverged = true;
      throw RunDiverged(e, std::move(metrics));
    }
    ++k;
    dist = dist_sq(z, problem.z_star);
    if (k % config.log_every == 0 || finished(k, dist)) log.push(k, uplink, dist, nan, false);
  }
  metrics.rounds = k;
  metrics.converged = dist0 == 0.0 || detail::reached(config.stop, log.relative(dist));
  return metrics;
}

/// Smallest cumulative uplink at which rel_dist_sq <= eps, if ever.
inline std::optional<std::uint64_t> floats_to_accuracy(const RunMetrics& metrics, double eps) {
  for (const auto& row : metrics.rows) {
    if (row.rel_dist_sq <= eps) return row.uplink_scalars;
  }
  return std::nullopt;
}

/// Pointwise statistics across seeds on the union of all uplink values, each
/// run read as a step function (value of the last row at or before x).
struct AggregateCurves {
  std::vector<std::uint64_t> uplink;
  std::vector<double> rel_mean, rel_min, rel_max;
  std::vector<double> psi_mean, psi_min, psi_max;
};

inline AggregateCurves aggregate_seeds(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw Error("aggregate_seeds: no runs given");
  std::string diverged;
  for (const auto& r : runs) {
    if (r.diverged) diverged += (diverged.empty() ? "" : ", ") + std::to_string(r.seed);
    if (r.rows.empty()) throw Error("aggregate_seeds: run without rows");
  }
  if (!diverged.empty()) throw Error("aggregate_seeds: diverged seeds: " + diverged);

  AggregateCurves out;
  for (const auto& r : runs) {
    for (const auto& row : r.rows) out.uplink.push_back(row.uplink_scalars);
  }
  std::sort(out.uplink.begin(), out.uplink.end());
  out.uplink.erase(std::unique(out.uplink.begin(), out.uplink.end()), out.uplink.end());
  // Keep only grid points every run has reached.
  std::uint64_t first = 0;
  for (const auto& r : runs) first = std::max(first, r.rows.front().uplink_scalars);
  out.uplink.erase(out.uplink.begin(),
                   std::lower_bound(out.uplink.begin(), out.uplink.end(), first));

  std::vector<std::size_t> cursor(runs.size(), 0);
  const double n = static_cast<double>(runs.size());
  for (std::uint64_t x : out.uplink) {
    double rs = 0.0, rlo = std::numeric_limits<double>::infinity(), rhi = -rlo;
    double ps = 0.0, plo = rlo, phi = -rlo;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& rows = runs[i].rows;
      while (cursor[i] + 1 < rows.size() && rows[cursor[i] + 1].uplink_scalars <= x) ++cursor[i];
      const auto& row = rows[cursor[i]];
      rs += row.rel_dist_sq;
      rlo = std::min(rlo, row.rel_dist_sq);
      rhi = std::max(rhi, row.rel_dist_sq);
      ps += row.lyapunov;
      plo = std::min(plo, row.lyapunov);
      phi = std::max(phi, row.lyapunov);
    }
    out.rel_mean.push_back(rs / n);
    out.rel_min.push_back(rlo);
    out.rel_max.push_back(rhi);
    out.psi_mean.push_back(ps / n);
    out.psi_min.push_back(plo);
    out.psi_max.push_back(phi);
  }
  return out;
}

/// Seed-averaged Psi^k for k = 0 .. K over the common prefix of runs logged
/// every step.
inline std::vector<double> mean_lyapunov_by_round(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw Error("mean_lyapunov_by_round: no runs given");
  std::size_t common = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      if (r.rows[i].k != i) throw Error("mean_lyapunov_by_round: runs must log every step");
    }
    common = std::min(common, r.rows.size());
  }
  std::vector<double> mean(common, 0.0);
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < common; ++i) mean[i] += r.rows[i].lyapunov;
  }
  for (double& v : mean) v /= static_cast<double>(runs.size());
  return mean;
}

/// Largest ratio mean(Psi^{k+1}) / mean(Psi^k) along the curve.
inline double max_step_ratio(std::span<const double> curve) {
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    if (curve[i] > 0.0) worst = std::max(worst, curve[i + 1] / curve[i]);
  }
  return worst;
}

}  // namespace vicomm
