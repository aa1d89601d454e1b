#pragma once

// Optimistic MASHA with permutation compressors, the distributed Extra
// Gradient baseline, and theorem-driven parameter selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vicomm/compressors.hpp"
#include "vicomm/core.hpp"
#include "vicomm/rng.hpp"

namespace vicomm {

/// Step parameters of Optimistic MASHA: anchor probability gamma, negative
/// momentum alpha, step eta.
struct TheoremParams {
  double gamma = 0.125;
  double alpha = 0.5;
  double eta = 0.0;
};

/// eta = min{ sqrt(alpha gamma) / (2 delta), 1 / (8 (L + delta)) }; the first
/// branch is +inf when delta = 0.
inline double theorem_step(const ProblemConstants& c, double gamma, double alpha) {
  const double second = 1.0 / (8.0 * (c.L + c.delta));
  if (c.delta == 0.0) return second;
  const double first = std::sqrt(alpha * gamma) / (2.0 * c.delta);
  return std::min(first, second);
}

/// gamma = override, or min(1/M, 1/8); alpha = 1/2; eta from theorem_step.
inline TheoremParams theorem_params(const ProblemConstants& constants, std::size_t devices,
                                    std::optional<double> gamma_override = std::nullopt) {
  constants.validate();
  if (devices == 0) throw ConfigError("theorem_params: need at least one device");
  TheoremParams p;
  if (gamma_override) {
    const double g = *gamma_override;
    if (!(g > 0.0 && g <= 0.125)) {
      throw ConfigError("theorem_params: gamma must lie in (0, 1/8], got " + std::to_string(g));
    }
    p.gamma = g;
  } else {
    p.gamma = std::min(1.0 / static_cast<double>(devices), 0.125);
  }
  p.alpha = 0.5;
  p.eta = theorem_step(constants, p.gamma, p.alpha);
  return p;
}

/// Per-step contraction factor of the Lyapunov function:
/// max[1 - mu eta / 2, 1 - 1/(1/(eta mu) + 1/gamma), alpha, 1/2].
inline double contraction_factor(const ProblemConstants& c, const TheoremParams& p) {
  const double me = c.mu * p.eta;
  return std::max({1.0 - me / 2.0, 1.0 - 1.0 / (1.0 / me + 1.0 / p.gamma), p.alpha, 0.5});
}

/// Iterates beyond this norm are treated as divergence.
inline constexpr double kDivergenceNorm = 1e12;

inline void check_divergence(std::size_t k, const Vec& z) {
  if (!z.allFinite()) throw DivergenceError(k, std::numeric_limits<double>::quiet_NaN());
  const double n = z.norm();
  if (n > kDivergenceNorm) throw DivergenceError(k, n);
}

/// Anchor refresh bit b_k ~ Bernoulli(gamma), keyed by (seed, k, "sync") and
/// independent of the permutation draws.
inline bool sync_bit(std::uint64_t seed, std::uint64_t k, double gamma) {
  rng::CounterRng gen(seed, k, rng::purpose::kSync);
  return gen.bernoulli(gamma);
}

/// Iterate triple and the operator values every device keeps cached.
///
/// At iteration k: z = z^k, z_prev = z^{k-1}, w = w^k, w_prev = w^{k-1}.
/// The F_m caches are what each device remembers; the F caches are the full
/// averaged operator at the anchors, known to all devices only through
/// uncompressed exchanges.
struct SolverState {
  std::size_t k = 0;
  Vec z;
  Vec z_prev;
  Vec w;
  Vec w_prev;
  std::vector<Vec> local_at_z_prev;  ///< F_m(z^{k-1})
  std::vector<Vec> local_at_w_prev;  ///< F_m(w^{k-1})
  std::vector<Vec> local_at_w;       ///< F_m(w^k)
  Vec full_at_w_prev;                ///< F(w^{k-1})
  Vec full_at_w;                     ///< F(w^k)
};

struct StepOutcome {
  SolverState state;
  std::size_t uplink_scalars_per_device = 0;
  bool synced = false;
  Vec direction;  ///< the aggregated Delta^k
};

/// delta_m^k = F_m(z^k) - F_m(w^{k-1}) + alpha (F_m(z^k) - F_m(z^{k-1})).
inline Vec local_difference(const Vec& at_z, const Vec& at_w_prev, const Vec& at_z_prev,
                            double alpha) {
  Vec out = at_z - at_w_prev;
  out += alpha * (at_z - at_z_prev);
  return out;
}

class OptimisticMasha {
 public:
  OptimisticMasha(const OperatorOracle& oracle, CompositeTerm g, TheoremParams params,
                  std::uint64_t seed, CompressorKind compressor = CompressorKind::PermK)
      : oracle_(&oracle), g_(std::move(g)), params_(params), seed_(seed), compressor_(compressor) {
    if (!(params_.eta > 0.0) || !std::isfinite(params_.eta)) {
      throw ConfigError("optimistic masha: eta must be positive and finite");
    }
    if (!(params_.gamma > 0.0 && params_.gamma <= 1.0)) {
      throw ConfigError("optimistic masha: gamma must lie in (0, 1]");
    }
    if (!(params_.alpha >= 0.0 && params_.alpha < 1.0)) {
      throw ConfigError("optimistic masha: alpha must lie in [0, 1)");
    }
    if (compressor_ == CompressorKind::PermK) check_divisibility(oracle.dim(), oracle.devices());
  }

  const TheoremParams& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }
  CompressorKind compressor() const noexcept { return compressor_; }

  /// Uplink cost of the initial full exchange of F_m(z^0).
  std::size_t init_cost() const noexcept { return oracle_->dim(); }

  /// Scalars per device for one compressed message.
  std::size_t payload() const {
    if (compressor_ == CompressorKind::Identity) return oracle_->dim();
    const std::size_t d = oracle_->dim();
    const std::size_t m = oracle_->devices();
    return d >= m ? d / m : 1;
  }

  /// z^0 = w^0 = z^{-1} = w^{-1} = start, with every cache at F(start).
  SolverState init(const Vec& start) const { return make_state(start, start, start, start, 0); }

  SolverState init() const {
    return init(Vec::Zero(static_cast<Eigen::Index>(oracle_->dim())));
  }

  /// A state at arbitrary points with consistent caches.
  SolverState make_state(const Vec& z, const Vec& z_prev, const Vec& w_prev, const Vec& w,
                         std::size_t k) const {
    const std::size_t devices = oracle_->devices();
    SolverState s;
    s.k = k;
    s.z = z;
    s.z_prev = z_prev;
    s.w = w;
    s.w_prev = w_prev;
    for (std::size_t m = 0; m < devices; ++m) {
      s.local_at_z_prev.push_back(oracle_->local(m, z_prev));
      s.local_at_w_prev.push_back(oracle_->local(m, w_prev));
      s.local_at_w.push_back(oracle_->local(m, w));
    }
    s.full_at_w_prev = mean_of(s.local_at_w_prev);
    s.full_at_w = mean_of(s.local_at_w);
    return s;
  }

  /// The round's shared permutation (PermK only).
  PermutationRound round(std::uint64_t k) const {
    return derive_round(seed_, k, oracle_->dim(), oracle_->devices());
  }

  /// Each device's delta_m^k given its fresh F_m(z^k).
  std::vector<Vec> local_differences(const SolverState& s, std::span<const Vec> at_z) const {
    std::vector<Vec> out;
    out.reserve(at_z.size());
    for (std::size_t m = 0; m < at_z.size(); ++m) {
      out.push_back(local_difference(at_z[m], s.local_at_w_prev[m], s.local_at_z_prev[m],
                                     params_.alpha));
    }
    return out;
  }

  /// Delta^k = (1/M) sum_m Q_m(delta_m^k) + F(w^{k-1}) for a given round.
  Vec direction(const SolverState& s, std::span<const Vec> differences,
                const PermutationRound& r) const {
    Vec out = aggregate(r, differences);
    out += s.full_at_w_prev;
    return out;
  }

  /// Delta^k with the round derived from the shared seed (or no compression).
  Vec direction(const SolverState& s, std::span<const Vec> differences) const {
    if (compressor_ == CompressorKind::Identity) {
      Vec out = mean_of(differences);
      out += s.full_at_w_prev;
      return out;
    }
    return direction(s, differences, round(s.k));
  }

  /// F_m(z^k) for every device.
  std::vector<Vec> evaluate_locals(const Vec& z) const {
    std::vector<Vec> out;
    out.reserve(oracle_->devices());
    for (std::size_t m = 0; m < oracle_->devices(); ++m) out.push_back(oracle_->local(m, z));
    return out;
  }

  /// One iteration: compressed exchange, prox step, anchor refresh with
  /// probability gamma (w^{k+1} = z^k plus a full exchange of F_m(z^k)).
  StepOutcome step(const SolverState& s) const {
    const std::size_t k = s.k;
    std::vector<Vec> at_z = evaluate_locals(s.z);
    const std::vector<Vec> diffs = local_differences(s, at_z);

    StepOutcome out;
    out.direction = direction(s, diffs);
    out.uplink_scalars_per_device = payload();

    Vec pre = s.z;
    pre += params_.gamma * (s.w - s.z);
    pre -= params_.eta * out.direction;
    Vec z_next = prox(g_, params_.eta, pre);
    check_divergence(k + 1, z_next);

    out.synced = sync_bit(seed_, k, params_.gamma);

    SolverState& n = out.state;
    n.k = k + 1;
    n.w_prev = s.w;
    n.local_at_w_prev = s.local_at_w;
    n.full_at_w_prev = s.full_at_w;
    if (out.synced) {
      n.w = s.z;
      n.local_at_w = at_z;
      n.full_at_w = mean_of(at_z);
      out.uplink_scalars_per_device += oracle_->dim();
    } else {
      n.w = s.w;
      n.local_at_w = s.local_at_w;
      n.full_at_w = s.full_at_w;
    }
    n.z_prev = s.z;
    n.local_at_z_prev = std::move(at_z);
    n.z = std::move(z_next);
    return out;
  }

 private:
  const OperatorOracle* oracle_;
  CompositeTerm g_;
  TheoremParams params_;
  std::uint64_t seed_;
  CompressorKind compressor_;
};

/// Psi^{k+1} = (1 + 2 mu eta) ||z^{k+1} - z*||^2 + ((gamma + eta mu)/gamma) ||w^{k+1} - z*||^2
///           + 2 eta <F(z^k) - F(z^{k+1}), z^{k+1} - z*> + gamma ||w^k - z^{k+1}||^2
///           + (1/8) ||z^{k+1} - z^k||^2
inline double lyapunov(const Vec& z_next, const Vec& z, const Vec& w, const Vec& w_next,
                       const OperatorOracle& oracle, const TheoremParams& p, const Vec& z_star) {
  const double mu = oracle.constants().mu;
  const double eta = p.eta;
  const double gamma = p.gamma;
  const Vec err = z_next - z_star;
  const Vec f_gap = oracle.global(z) - oracle.global(z_next);
  return (1.0 + 2.0 * mu * eta) * err.squaredNorm() +
         (gamma + eta * mu) / gamma * (w_next - z_star).squaredNorm() +
         2.0 * eta * f_gap.dot(err) + gamma * (w - z_next).squaredNorm() +
         0.125 * (z_next - z).squaredNorm();
}

/// Psi^k of a solver state (z^k, z^{k-1}, w^{k-1}, w^k).
inline double lyapunov(const SolverState& s, const OperatorOracle& oracle, const TheoremParams& p,
                       const Vec& z_star) {
  return lyapunov(s.z, s.z_prev, s.w_prev, s.w, oracle, p, z_star);
}

struct ExtraGradientStep {
  Vec z;
  std::size_t uplink_scalars_per_device;
};

/// z_half = prox(z - eta F(z)), z_next = prox(z - eta F(z_half)); both
/// evaluations need an uncompressed exchange, so 2d scalars per device.
inline ExtraGradientStep extra_gradient_step(const Vec& z, const OperatorOracle& oracle,
                                             const CompositeTerm& g, double eta,
                                             std::size_t k = 0) {
  if (!(eta > 0.0)) throw ConfigError("extra gradient: eta must be positive");
  Vec half = prox(g, eta, z - eta * oracle.global(z));
  check_divergence(k + 1, half);
  Vec next = prox(g, eta, z - eta * oracle.global(half));
  check_divergence(k + 1, next);
  return {std::move(next), 2 * oracle.dim()};
}

inline double extra_gradient_default_step(const ProblemConstants& c) {
  if (!(c.L > 0.0)) throw ConfigError("extra gradient: L must be positive");
  return 1.0 / (2.0 * c.L);
}

}  // namespace vicomm
