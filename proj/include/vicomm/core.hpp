#pragma once

// Dense vectors, the distributed operator oracle, composite-term proximal maps
// and distance metrics.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "vicomm/errors.hpp"

namespace vicomm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void require_dim(const Vec& v, std::size_t dim, const char* what) {
  if (static_cast<std::size_t>(v.size()) != dim) {
    throw DimensionError(what, dim, static_cast<std::size_t>(v.size()));
  }
}

/// Measured problem constants: Lipschitz constant L of F, strong-monotonicity
/// modulus mu of F, and the relatedness constant delta of the F_m - F.
struct ProblemConstants {
  double L = 0.0;
  double mu = 0.0;
  double delta = 0.0;

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) {
      throw ConfigError("problem constants: mu must be positive, got " + std::to_string(mu));
    }
    if (!(L >= mu) || !std::isfinite(L)) {
      throw ConfigError("problem constants: need mu <= L, got L=" + std::to_string(L) +
                        " mu=" + std::to_string(mu));
    }
    if (!(delta >= 0.0) || !std::isfinite(delta)) {
      throw ConfigError("problem constants: delta must be nonnegative");
    }
  }
};

/// Arithmetic mean with a fixed reduction order: ascending index, sequential
/// accumulation, one final division. Every global average in the library goes
/// through here so that equal inputs give equal bits.
inline Vec mean_of(std::span<const Vec> values) {
  if (values.empty()) throw Error("mean_of: empty input");
  Vec acc = values.front();
  for (std::size_t m = 1; m < values.size(); ++m) acc += values[m];
  acc /= static_cast<double>(values.size());
  return acc;
}

/// F(z) = (1/M) sum_m F_m(z), with each F_m held by one simulated device.
///
/// Devices are indexed from 0. The local map must be a pure function: the
/// same (m, z) always yields the same bits.
class OperatorOracle {
 public:
  using LocalFn = std::function<Vec(std::size_t, const Vec&)>;

  OperatorOracle(std::size_t devices, std::size_t dim, LocalFn local,
                 ProblemConstants constants = {})
      : devices_(devices), dim_(dim), local_(std::move(local)), constants_(constants) {
    if (devices_ == 0) throw ConfigError("operator oracle: need at least one device");
    if (dim_ == 0) throw ConfigError("operator oracle: dimension must be positive");
    if (!local_) throw ConfigError("operator oracle: empty local map");
  }

  std::size_t devices() const noexcept { return devices_; }
  std::size_t dim() const noexcept { return dim_; }
  const ProblemConstants& constants() const noexcept { return constants_; }
  void set_constants(const ProblemConstants& c) { constants_ = c; }

  Vec local(std::size_t m, const Vec& z) const {
    if (m >= devices_) throw IndexError(m, devices_);
    require_dim(z, dim_, "eval_local");
    Vec out = local_(m, z);
    require_dim(out, dim_, "eval_local result");
    return out;
  }

  Vec global(const Vec& z) const {
    require_dim(z, dim_, "eval_global");
    std::vector<Vec> parts;
    parts.reserve(devices_);
    for (std::size_t m = 0; m < devices_; ++m) parts.push_back(local(m, z));
    return mean_of(parts);
  }

 private:
  std::size_t devices_;
  std::size_t dim_;
  LocalFn local_;
  ProblemConstants constants_;
};

inline Vec eval_local(const OperatorOracle& oracle, std::size_t m, const Vec& z) {
  return oracle.local(m, z);
}

inline Vec eval_global(const OperatorOracle& oracle, const Vec& z) { return oracle.global(z); }

// Composite term g. Only kinds with a closed-form proximal map are supported.

struct ZeroTerm {};

/// Indicator of the closed Euclidean ball; an empty center means the origin.
struct BallIndicator {
  double radius = 1.0;
  Vec center;
};

/// g(u) = (c/2) ||u||^2.
struct ScaledL2 {
  double coefficient = 0.0;
};

using CompositeTerm = std::variant<ZeroTerm, BallIndicator, ScaledL2>;

inline bool is_zero_term(const CompositeTerm& g) { return std::holds_alternative<ZeroTerm>(g); }

/// argmin_u { eta g(u) + 1/2 ||u - v||^2 }.
inline Vec prox(const CompositeTerm& g, double eta, const Vec& v) {
  if (!(eta > 0.0)) throw ConfigError("prox: step must be positive");
  return std::visit(
      [&](const auto& term) -> Vec {
        using T = std::decay_t<decltype(term)>;
        if constexpr (std::is_same_v<T, ZeroTerm>) {
          return v;
        } else if constexpr (std::is_same_v<T, BallIndicator>) {
          if (!(term.radius > 0.0)) throw ConfigError("ball indicator: radius must be positive");
          Vec offset = v;
          if (term.center.size() != 0) {
            require_dim(term.center, static_cast<std::size_t>(v.size()), "ball center");
            offset -= term.center;
          }
          const double norm = offset.norm();
          if (norm <= term.radius) return v;
          offset *= term.radius / norm;
          if (term.center.size() != 0) offset += term.center;
          return offset;
        } else {
          if (!(term.coefficient >= 0.0)) {
            throw ConfigError("scaled l2: coefficient must be nonnegative");
          }
          return v / (1.0 + eta * term.coefficient);
        }
      },
      g);
}

inline double dist_sq(const Vec& z, const Vec& z_star) {
  require_dim(z_star, static_cast<std::size_t>(z.size()), "dist_sq");
  return (z - z_star).squaredNorm();
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace vicomm
