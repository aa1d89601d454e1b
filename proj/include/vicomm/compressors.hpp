#pragma once

// Permutation compressors. All M devices derive one shared permutation per
// round from a common seed, so their selected coordinates are coupled: for
// d >= M the devices cover every coordinate exactly once; for d <= M every
// coordinate is covered by exactly M/d devices.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vicomm/core.hpp"
#include "vicomm/rng.hpp"

namespace vicomm {

enum class CompressorKind { PermK, Identity };

inline const char* to_string(CompressorKind kind) {
  return kind == CompressorKind::PermK ? "PermK" : "Identity";
}

/// Throws ConfigError unless M | d, or d | M with M > 1.
inline void check_divisibility(std::size_t dim, std::size_t devices) {
  if (dim == 0 || devices == 0) throw ConfigError("permutation compressor: empty dimension");
  if (dim >= devices) {
    if (dim % devices != 0) {
      throw ConfigError("permutation compressor: dimension " + std::to_string(dim) +
                        " is not divisible by device count " + std::to_string(devices));
    }
  } else if (devices % dim != 0) {
    throw ConfigError("permutation compressor: device count " + std::to_string(devices) +
                      " is not divisible by dimension " + std::to_string(dim));
  }
}

/// One round's shared permutation.
///
/// Wide branch (d >= M): perm is a permutation of {0..d-1}; device m owns
/// perm[q m .. q (m+1)) with q = d/M. Narrow branch (d < M): perm has length M,
/// is an arrangement of the multiset where each coordinate appears q = M/d
/// times, and device m owns perm[m].
struct PermutationRound {
  std::uint64_t round = 0;
  std::size_t dim = 0;
  std::size_t devices = 0;
  std::size_t block = 0;
  std::vector<std::size_t> perm;

  bool wide() const noexcept { return dim >= devices; }

  std::span<const std::size_t> coordinates(std::size_t m) const {
    if (m >= devices) throw IndexError(m, devices);
    if (wide()) return std::span<const std::size_t>(perm).subspan(block * m, block);
    return std::span<const std::size_t>(perm).subspan(m, 1);
  }

  /// The factor each selected entry is multiplied by in Q_m.
  double scale() const noexcept {
    return wide() ? static_cast<double>(devices) : static_cast<double>(dim);
  }

  /// Scalars a device actually puts on the wire: the selected raw values.
  /// Coordinate indices are not sent because receivers re-derive perm.
  std::size_t payload() const noexcept { return wide() ? block : 1; }
};

/// The identity arrangement the shuffle starts from.
inline std::vector<std::size_t> base_arrangement(std::size_t dim, std::size_t devices) {
  check_divisibility(dim, devices);
  std::vector<std::size_t> base;
  if (dim >= devices) {
    base.resize(dim);
    std::iota(base.begin(), base.end(), std::size_t{0});
  } else {
    const std::size_t q = devices / dim;
    base.reserve(devices);
    for (std::size_t j = 0; j < dim; ++j) base.insert(base.end(), q, j);
  }
  return base;
}

/// Builds a round from an explicit permutation, validating its structure.
inline PermutationRound make_round(std::uint64_t k, std::size_t dim, std::size_t devices,
                                   std::vector<std::size_t> perm) {
  auto expected = base_arrangement(dim, devices);
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != expected) {
    throw ConfigError("permutation round: sequence is not an arrangement of the coordinate set");
  }
  PermutationRound r;
  r.round = k;
  r.dim = dim;
  r.devices = devices;
  r.block = dim >= devices ? dim / devices : devices / dim;
  r.perm = std::move(perm);
  return r;
}

/// Shared round permutation: counter-based generator keyed by (seed, k, "perm"),
/// then a Fisher-Yates shuffle. Identical on every device and platform.
inline PermutationRound derive_round(std::uint64_t seed, std::uint64_t k, std::size_t dim,
                                     std::size_t devices) {
  PermutationRound r;
  r.round = k;
  r.dim = dim;
  r.devices = devices;
  r.block = dim >= devices ? dim / devices : devices / dim;
  r.perm = base_arrangement(dim, devices);
  rng::CounterRng gen(seed, k, rng::purpose::kPermutation);
  for (std::size_t i = r.perm.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(gen.below(i));
    std::swap(r.perm[i - 1], r.perm[j]);
  }
  return r;
}

struct Compressed {
  Vec value;            ///< Q_m(u) as a dense vector
  std::size_t scalars;  ///< scalars transmitted for it
};

/// Q_m(u) for device m.
inline Compressed compress(const PermutationRound& round, std::size_t m, const Vec& u) {
  require_dim(u, round.dim, "compress");
  Compressed out{Vec::Zero(static_cast<Eigen::Index>(round.dim)), round.payload()};
  const double s = round.scale();
  for (std::size_t j : round.coordinates(m)) {
    const auto i = static_cast<Eigen::Index>(j);
    out.value[i] = s * u[i];
  }
  return out;
}

/// Server-side decode of (1/M) sum_m Q_m(a_m).
///
/// Each received raw value is weighted by scale/M in one multiplication. In the
/// wide branch scale/M is exactly 1 and every coordinate has one sender, so the
/// aggregate of identical inputs reproduces them bit for bit.
inline Vec aggregate(const PermutationRound& round, std::span<const Vec> inputs) {
  if (inputs.size() != round.devices) {
    throw DimensionError("aggregate: one input per device", round.devices, inputs.size());
  }
  Vec acc = Vec::Zero(static_cast<Eigen::Index>(round.dim));
  const double weight = round.scale() / static_cast<double>(round.devices);
  for (std::size_t m = 0; m < round.devices; ++m) {
    require_dim(inputs[m], round.dim, "aggregate");
    for (std::size_t j : round.coordinates(m)) {
      const auto i = static_cast<Eigen::Index>(j);
      acc[i] += weight * inputs[m][i];
    }
  }
  return acc;
}

/// Number of distinct round permutations: d! (wide) or M!/(q!)^d (narrow).
/// Saturates at the uint64 maximum.
inline std::uint64_t count_rounds(std::size_t dim, std::size_t devices) {
  check_divisibility(dim, devices);
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  if (dim >= devices) {
    std::uint64_t n = 1;
    for (std::size_t i = 2; i <= dim; ++i) {
      if (n > kMax / i) return kMax;
      n *= i;
    }
    return n;
  }
  // Multinomial as a product of binomials, each computed exactly.
  const std::size_t q = devices / dim;
  std::uint64_t total = 1;
  std::size_t remaining = devices;
  for (std::size_t j = 0; j < dim; ++j) {
    std::uint64_t binom = 1;
    for (std::size_t i = 1; i <= q; ++i) {
      binom = binom * (remaining - q + i) / i;
    }
    if (binom != 0 && total > kMax / binom) return kMax;
    total *= binom;
    remaining -= q;
  }
  return total;
}

inline constexpr std::uint64_t kMaxEnumeratedRounds = 1000000;

/// Calls fn(round) for every distinct round permutation, each with equal weight.
template <class Fn>
void for_each_round(std::size_t dim, std::size_t devices, Fn&& fn) {
  const auto count = count_rounds(dim, devices);
  if (count > kMaxEnumeratedRounds) {
    throw SizeError("round enumeration too large: " + std::to_string(count) +
                    " permutations (limit " + std::to_string(kMaxEnumeratedRounds) + ")");
  }
  auto perm = base_arrangement(dim, devices);
  std::uint64_t k = 0;
  do {
    fn(make_round(k++, dim, devices, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
}

struct UnbiasednessCheck {
  Vec expectation;  ///< exact E[(1/M) sum Q_m(a_m)]
  Vec true_mean;    ///< (1/M) sum a_m
};

inline UnbiasednessCheck enumerate_unbiasedness(std::size_t dim, std::size_t devices,
                                                std::span<const Vec> inputs) {
  if (inputs.size() != devices) {
    throw DimensionError("enumerate_unbiasedness: one input per device", devices, inputs.size());
  }
  Vec sum = Vec::Zero(static_cast<Eigen::Index>(dim));
  std::uint64_t n = 0;
  for_each_round(dim, devices, [&](const PermutationRound& r) {
    sum += aggregate(r, inputs);
    ++n;
  });
  return {sum / static_cast<double>(n), mean_of(inputs)};
}

struct VarianceGap {
  double lhs;  ///< exact E||(1/M) sum Q_m(a_m) - mean||^2
  double rhs;  ///< (1/M) sum ||a_m - mean||^2
};

inline VarianceGap variance_gap(std::size_t dim, std::size_t devices,
                                std::span<const Vec> inputs) {
  if (inputs.size() != devices) {
    throw DimensionError("variance_gap: one input per device", devices, inputs.size());
  }
  const Vec mean = mean_of(inputs);
  double total = 0.0;
  std::uint64_t n = 0;
  for_each_round(dim, devices, [&](const PermutationRound& r) {
    total += (aggregate(r, inputs) - mean).squaredNorm();
    ++n;
  });
  double spread = 0.0;
  for (const Vec& a : inputs) spread += (a - mean).squaredNorm();
  return {total / static_cast<double>(n), spread / static_cast<double>(devices)};
}

}  // namespace vicomm
