#pragma once

// Synthetic distributed problems with measurable constants:
//
//   bilinear saddle point  f_m(x, y) = x^T A_m y + a_m^T x + b_m^T y
//                                      + (lambda/2)||x||^2 - (lambda/2)||y||^2,
//   quadratic minimization f_m(z)    = (1/2) z^T C_m z - c_m^T z.
//
// Both give affine operators, so L, mu, delta and z* are computed exactly
// from the matrices.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vicomm/core.hpp"
#include "vicomm/linalg.hpp"
#include "vicomm/rng.hpp"

namespace vicomm {

struct BilinearInstance {
  std::size_t devices = 0;
  std::size_t dim = 0;  ///< per-block dimension; z = (x, y) has length 2*dim
  std::vector<Mat> coupling;  ///< A_m
  std::vector<Vec> shift_x;   ///< a_m
  std::vector<Vec> shift_y;   ///< b_m
  double lambda = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t operator_dim() const noexcept { return 2 * dim; }

  void validate() const {
    if (devices == 0 || dim == 0) throw ConfigError("bilinear instance: empty dimensions");
    if (coupling.size() != devices || shift_x.size() != devices || shift_y.size() != devices) {
      throw ConfigError("bilinear instance: expected one matrix and two shifts per device");
    }
    const auto n = static_cast<Eigen::Index>(dim);
    for (std::size_t m = 0; m < devices; ++m) {
      if (coupling[m].rows() != n || coupling[m].cols() != n) {
        throw DimensionError("bilinear instance: coupling matrix", dim,
                             static_cast<std::size_t>(coupling[m].rows()));
      }
      require_dim(shift_x[m], dim, "bilinear instance: a_m");
      require_dim(shift_y[m], dim, "bilinear instance: b_m");
    }
    if (!(lambda >= 0.0)) throw ConfigError("bilinear instance: lambda must be nonnegative");
  }
};

struct QuadraticInstance {
  std::size_t devices = 0;
  std::size_t dim = 0;
  std::vector<Mat> hessian;  ///< C_m, symmetric positive definite
  std::vector<Vec> linear;   ///< c_m
  std::uint64_t seed = 0;

  std::size_t operator_dim() const noexcept { return dim; }

  void validate() const {
    if (devices == 0 || dim == 0) throw ConfigError("quadratic instance: empty dimensions");
    if (hessian.size() != devices || linear.size() != devices) {
      throw ConfigError("quadratic instance: expected one matrix and one vector per device");
    }
    const auto n = static_cast<Eigen::Index>(dim);
    for (std::size_t m = 0; m < devices; ++m) {
      if (hessian[m].rows() != n || hessian[m].cols() != n) {
        throw DimensionError("quadratic instance: C_m", dim,
                             static_cast<std::size_t>(hessian[m].rows()));
      }
      require_dim(linear[m], dim, "quadratic instance: c_m");
    }
  }
};

inline Mat gaussian_matrix(std::size_t rows, std::size_t cols, rng::CounterRng& gen) {
  Mat out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = gen.normal();
  }
  return out;
}

inline Vec gaussian_vector(std::size_t n, rng::CounterRng& gen) {
  Vec out(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = gen.normal();
  return out;
}

/// A_m = A + B_m with A Gaussian rescaled to ||A||_2 = target_norm and B_m
/// entries N(0, sigma^2). Each random block has its own counter stream keyed
/// by (seed, device), so instances that differ only in sigma share A, a_m,
/// b_m and the unit noise directions.
inline BilinearInstance generate_bilinear(std::size_t devices, std::size_t dim,
                                          double target_norm, double sigma, double lambda,
                                          std::uint64_t seed) {
  if (devices == 0 || dim == 0) throw ConfigError("generate_bilinear: M and d must be positive");
  if (!(target_norm > 0.0)) throw ConfigError("generate_bilinear: target norm must be positive");
  if (!(sigma >= 0.0)) throw ConfigError("generate_bilinear: sigma must be nonnegative");
  if (!(lambda > 0.0)) throw ConfigError("generate_bilinear: lambda must be positive");

  BilinearInstance inst;
  inst.devices = devices;
  inst.dim = dim;
  inst.lambda = lambda;
  inst.sigma = sigma;
  inst.seed = seed;

  rng::CounterRng base_gen(seed, 0, rng::purpose::kCouplingBase);
  Mat base = gaussian_matrix(dim, dim, base_gen);
  base *= target_norm / spectral_norm(base);

  for (std::size_t m = 0; m < devices; ++m) {
    rng::CounterRng noise_gen(seed, m, rng::purpose::kCouplingNoise);
    Mat noise = gaussian_matrix(dim, dim, noise_gen);
    inst.coupling.push_back(base + sigma * noise);
    rng::CounterRng ax(seed, m, rng::purpose::kShiftX);
    inst.shift_x.push_back(gaussian_vector(dim, ax));
    rng::CounterRng by(seed, m, rng::purpose::kShiftY);
    inst.shift_y.push_back(gaussian_vector(dim, by));
  }
  return inst;
}

/// Mean coupling matrix (1/M) sum A_m, accumulated in device order.
inline Mat mean_coupling(const BilinearInstance& inst) {
  Mat acc = inst.coupling.front();
  for (std::size_t m = 1; m < inst.devices; ++m) acc += inst.coupling[m];
  acc /= static_cast<double>(inst.devices);
  return acc;
}

/// F_m(x, y) = (A_m y + a_m + lambda x, -A_m^T x - b_m + lambda y).
inline Vec bilinear_local(const BilinearInstance& inst, std::size_t m, const Vec& z) {
  const auto n = static_cast<Eigen::Index>(inst.dim);
  const auto x = z.head(n);
  const auto y = z.tail(n);
  Vec out(2 * n);
  out.head(n).noalias() = inst.coupling[m] * y;
  out.head(n) += inst.shift_x[m] + inst.lambda * x;
  out.tail(n).noalias() = -(inst.coupling[m].transpose() * x);
  out.tail(n) += inst.lambda * y - inst.shift_y[m];
  return out;
}

/// C_m = (L - mu) G G^T / ||G G^T|| + mu I + sigma S_m with S_m a symmetric
/// Gaussian perturbation; each C_m is then shifted up if needed so that its
/// smallest eigenvalue is at least mu. c_m ~ N(0, I).
inline QuadraticInstance generate_quadratic(std::size_t devices, std::size_t dim, double mu,
                                            double lipschitz, double sigma, std::uint64_t seed) {
  if (devices == 0 || dim == 0) throw ConfigError("generate_quadratic: M and d must be positive");
  if (!(mu > 0.0) || !(lipschitz >= mu)) {
    throw ConfigError("generate_quadratic: need 0 < mu <= L");
  }
  if (!(sigma >= 0.0)) throw ConfigError("generate_quadratic: sigma must be nonnegative");

  QuadraticInstance inst;
  inst.devices = devices;
  inst.dim = dim;
  inst.seed = seed;
  const auto n = static_cast<Eigen::Index>(dim);

  rng::CounterRng base_gen(seed, 0, rng::purpose::kQuadBase);
  const Mat g = gaussian_matrix(dim, dim, base_gen);
  Mat gram = g * g.transpose();
  gram /= spectral_norm(gram);
  const Mat base = (lipschitz - mu) * gram + mu * Mat::Identity(n, n);

  for (std::size_t m = 0; m < devices; ++m) {
    rng::CounterRng noise_gen(seed, m, rng::purpose::kQuadNoise);
    const Mat raw = gaussian_matrix(dim, dim, noise_gen);
    Mat c = base + sigma * (raw + raw.transpose()) / std::sqrt(2.0);
    c = 0.5 * (c + c.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(c, Eigen::EigenvaluesOnly);
    const double lowest = eig.eigenvalues().minCoeff();
    if (lowest < mu) c += (mu - lowest) * Mat::Identity(n, n);
    inst.hessian.push_back(std::move(c));
    rng::CounterRng lin_gen(seed, m, rng::purpose::kQuadShift);
    inst.linear.push_back(gaussian_vector(dim, lin_gen));
  }
  return inst;
}

inline Mat mean_hessian(const QuadraticInstance& inst) {
  Mat acc = inst.hessian.front();
  for (std::size_t m = 1; m < inst.devices; ++m) acc += inst.hessian[m];
  acc /= static_cast<double>(inst.devices);
  return acc;
}

/// F_m(z) = C_m z - c_m.
inline Vec quadratic_local(const QuadraticInstance& inst, std::size_t m, const Vec& z) {
  Vec out = inst.hessian[m] * z;
  out -= inst.linear[m];
  return out;
}

/// Exact constants of an affine bilinear operator.
///
/// L = sqrt(lambda^2 + ||Abar||^2) is the spectral norm of the full Jacobian
/// [[lambda I, Abar], [-Abar^T, lambda I]] (its singular values are
/// sqrt(lambda^2 + s_i^2)). mu = lambda. delta = max_m ||A_m - Abar||_2.
inline ProblemConstants measure_constants(const BilinearInstance& inst,
                                          const PowerIterationOptions& opts = {}) {
  inst.validate();
  const Mat abar = mean_coupling(inst);
  ProblemConstants c;
  c.mu = inst.lambda;
  c.L = std::hypot(inst.lambda, spectral_norm(abar, opts));
  for (const Mat& a : inst.coupling) c.delta = std::max(c.delta, spectral_norm(a - abar, opts));
  return c;
}

/// mu and L are the extreme eigenvalues of the mean Hessian; delta is
/// max_m ||C_m - Cbar||_2.
inline ProblemConstants measure_constants(const QuadraticInstance& inst,
                                          const PowerIterationOptions& opts = {}) {
  inst.validate();
  const Mat cbar = mean_hessian(inst);
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (cbar + cbar.transpose()), Eigen::EigenvaluesOnly);
  ProblemConstants c;
  c.mu = eig.eigenvalues().minCoeff();
  c.L = spectral_norm(cbar, opts);
  for (const Mat& h : inst.hessian) c.delta = std::max(c.delta, spectral_norm(h - cbar, opts));
  return c;
}

namespace detail {

inline double scaled_l2_coefficient(const CompositeTerm& g) {
  if (is_zero_term(g)) return 0.0;
  if (const auto* l2 = std::get_if<ScaledL2>(&g)) return l2->coefficient;
  throw ConfigError("solve_star: closed-form solution needs g = 0 or a scaled l2 term");
}

inline Vec solve_affine(const Mat& jacobian, const Vec& rhs) {
  Eigen::FullPivLU<Mat> lu(jacobian);
  if (!lu.isInvertible()) throw NumericalError("solve_star: singular system");
  Vec z = lu.solve(rhs);
  const double residual = (jacobian * z - rhs).norm();
  if (!(residual <= 1e-8 * (1.0 + rhs.norm()))) {
    throw NumericalError("solve_star: residual " + std::to_string(residual) +
                         " exceeds tolerance");
  }
  return z;
}

}  // namespace detail

/// Solves F(z*) + c z* = 0 by a dense direct solve (c = 0 unless g is a
/// scaled l2 term, whose gradient folds into the linear system).
inline Vec solve_star(const BilinearInstance& inst, const CompositeTerm& g = ZeroTerm{}) {
  inst.validate();
  const double extra = detail::scaled_l2_coefficient(g);
  const auto n = static_cast<Eigen::Index>(inst.dim);
  const Mat abar = mean_coupling(inst);
  Mat jac(2 * n, 2 * n);
  jac.topLeftCorner(n, n) = (inst.lambda + extra) * Mat::Identity(n, n);
  jac.topRightCorner(n, n) = abar;
  jac.bottomLeftCorner(n, n) = -abar.transpose();
  jac.bottomRightCorner(n, n) = (inst.lambda + extra) * Mat::Identity(n, n);
  Vec rhs(2 * n);
  rhs.head(n) = -mean_of(inst.shift_x);
  rhs.tail(n) = mean_of(inst.shift_y);
  return detail::solve_affine(jac, rhs);
}

inline Vec solve_star(const QuadraticInstance& inst, const CompositeTerm& g = ZeroTerm{}) {
  inst.validate();
  const double extra = detail::scaled_l2_coefficient(g);
  const auto n = static_cast<Eigen::Index>(inst.dim);
  const Mat jac = mean_hessian(inst) + extra * Mat::Identity(n, n);
  return detail::solve_affine(jac, mean_of(inst.linear));
}

inline OperatorOracle saddle_operator(std::shared_ptr<const BilinearInstance> inst,
                                      ProblemConstants constants = {}) {
  inst->validate();
  const std::size_t devices = inst->devices;
  const std::size_t dim = inst->operator_dim();
  return OperatorOracle(
      devices, dim,
      [inst = std::move(inst)](std::size_t m, const Vec& z) { return bilinear_local(*inst, m, z); },
      constants);
}

inline OperatorOracle saddle_operator(const BilinearInstance& inst,
                                      ProblemConstants constants = {}) {
  return saddle_operator(std::make_shared<const BilinearInstance>(inst), constants);
}

inline OperatorOracle quadratic_operator(std::shared_ptr<const QuadraticInstance> inst,
                                         ProblemConstants constants = {}) {
  inst->validate();
  const std::size_t devices = inst->devices;
  const std::size_t dim = inst->operator_dim();
  return OperatorOracle(
      devices, dim,
      [inst = std::move(inst)](std::size_t m, const Vec& z) {
        return quadratic_local(*inst, m, z);
      },
      constants);
}

inline OperatorOracle quadratic_operator(const QuadraticInstance& inst,
                                         ProblemConstants constants = {}) {
  return quadratic_operator(std::make_shared<const QuadraticInstance>(inst), constants);
}

/// A distributed VI ready to solve: operator (with measured constants),
/// composite term and exact solution.
struct ProblemInstance {
  OperatorOracle oracle;
  CompositeTerm g;
  Vec z_star;

  const ProblemConstants& constants() const noexcept { return oracle.constants(); }
  std::size_t dim() const noexcept { return oracle.dim(); }
  std::size_t devices() const noexcept { return oracle.devices(); }
};

/// Measures the constants of F (g is handled by the prox step and does not
/// enter them) and solves for z*.
inline ProblemInstance make_problem(const BilinearInstance& inst,
                                    const CompositeTerm& g = ZeroTerm{}) {
  auto constants = measure_constants(inst);
  Vec z_star = solve_star(inst, g);
  return {saddle_operator(inst, constants), g, std::move(z_star)};
}

inline ProblemInstance make_problem(const QuadraticInstance& inst,
                                    const CompositeTerm& g = ZeroTerm{}) {
  auto constants = measure_constants(inst);
  Vec z_star = solve_star(inst, g);
  return {quadratic_operator(inst, constants), g, std::move(z_star)};
}

}  // namespace vicomm
