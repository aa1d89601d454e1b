#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>

#include "vicomm/core.hpp"
#include "vicomm/rng.hpp"

namespace vicomm {

struct PowerIterationOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 10000;
};

/// Largest singular value of a dense matrix by power iteration on A^T A.
///
/// Stops once the eigen-residual ||A^T A v - theta v|| drops below
/// tolerance * theta, which bounds the relative error of theta by the same
/// tolerance. The start vector is a fixed pseudorandom direction.
inline double spectral_norm(const Mat& a, const PowerIterationOptions& opts = {}) {
  if (a.size() == 0) return 0.0;
  const double frob = a.norm();
  if (frob == 0.0) return 0.0;
  if (!std::isfinite(frob)) throw NumericalError("spectral_norm: matrix has non-finite entries");

  // Work on a scaled copy so that tiny or huge matrices behave alike.
  const Mat scaled = a / frob;
  rng::CounterRng gen(0x5eed, static_cast<std::uint64_t>(a.cols()), rng::purpose::kPowerStart);
  Vec v(a.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gen.normal();
  v.normalize();

  double theta = 0.0;
  double residual = 0.0;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    const Vec av = scaled * v;
    Vec w = scaled.transpose() * av;
    theta = v.dot(w);
    residual = (w - theta * v).norm();
    if (theta > 0.0 && residual <= opts.tolerance * theta) return std::sqrt(theta) * frob;
    const double wn = w.norm();
    if (wn == 0.0) {
      throw NumericalError("spectral_norm: iterate collapsed to zero");
    }
    v = w / wn;
  }
  std::ostringstream msg;
  msg << "spectral_norm: power iteration did not converge after " << opts.max_iterations
      << " iterations (estimate " << std::sqrt(std::max(theta, 0.0)) * frob
      << ", relative residual " << (theta > 0.0 ? residual / theta : residual) << ", size "
      << a.rows() << "x" << a.cols() << ")";
  throw NumericalError(msg.str());
}

}  // namespace vicomm
