#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "vicomm/core.hpp"
#include "vicomm/linalg.hpp"
#include "vicomm/rng.hpp"

using namespace vicomm;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Vec random_vec(rng::CounterRng& gen, std::size_t n, double scale = 1.0) {
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * gen.normal();
  return v;
}

}  // namespace

TEST(Prox, ZeroTermIsIdentity) {
  const Vec v = vec({1.5, -2.0, 0.25});
  EXPECT_EQ(prox(ZeroTerm{}, 0.3, v), v);
}

TEST(Prox, BallProjectsOutsidePoints) {
  const Vec out = prox(BallIndicator{1.0, {}}, 0.7, vec({3.0, 4.0}));
  EXPECT_NEAR(out[0], 0.6, 1e-15);
  EXPECT_NEAR(out[1], 0.8, 1e-15);
  const Vec inside = vec({0.1, -0.2});
  EXPECT_EQ(prox(BallIndicator{1.0, {}}, 0.7, inside), inside);
}

TEST(Prox, BallWithCenter) {
  const Vec out = prox(BallIndicator{2.0, vec({1.0, 1.0})}, 1.0, vec({1.0, 6.0}));
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], 3.0, 1e-15);
}

TEST(Prox, ScaledL2Shrinks) {
  const Vec out = prox(ScaledL2{2.0}, 0.5, vec({4.0, -2.0}));
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], -1.0);
}

TEST(Prox, RejectsBadArguments) {
  EXPECT_THROW(prox(ZeroTerm{}, 0.0, vec({1.0})), ConfigError);
  EXPECT_THROW(prox(BallIndicator{-1.0, {}}, 1.0, vec({1.0})), ConfigError);
  EXPECT_THROW(prox(ScaledL2{-1.0}, 1.0, vec({1.0})), ConfigError);
}

TEST(Prox, NonexpansiveOnRandomPairs) {
  rng::CounterRng gen(7, 0, rng::tag("t.prox"));
  const std::vector<CompositeTerm> terms = {ZeroTerm{}, BallIndicator{1.5, {}}, ScaledL2{3.0}};
  for (const auto& g : terms) {
    for (int t = 0; t < 200; ++t) {
      const Vec u = random_vec(gen, 5, 2.0), v = random_vec(gen, 5, 2.0);
      EXPECT_LE((prox(g, 0.4, u) - prox(g, 0.4, v)).norm(), (u - v).norm() + 1e-12);
    }
  }
}

TEST(Prox, MatchesOptimalityForScaledL2) {
  // u = prox(v) iff v - u = eta c u.
  rng::CounterRng gen(8, 0, rng::tag("t.prox2"));
  for (int t = 0; t < 50; ++t) {
    const Vec v = random_vec(gen, 4);
    const Vec u = prox(ScaledL2{1.7}, 0.3, v);
    EXPECT_LE((v - u - 0.3 * 1.7 * u).norm(), 1e-14);
  }
}

TEST(Oracle, GlobalIsMeanOfLocals) {
  const OperatorOracle oracle(3, 2, [](std::size_t m, const Vec& z) {
    return Vec((static_cast<double>(m) + 1.0) * z);
  });
  const Vec g = oracle.global(vec({1.0, -1.0}));
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -2.0);
  EXPECT_EQ(eval_global(oracle, vec({1.0, 2.0})), oracle.global(vec({1.0, 2.0})));
}

TEST(Oracle, ChecksIndicesAndDimensions) {
  const OperatorOracle oracle(2, 2, [](std::size_t, const Vec& z) { return z; });
  EXPECT_THROW(oracle.local(2, vec({1.0, 2.0})), IndexError);
  EXPECT_THROW(oracle.local(0, vec({1.0})), DimensionError);
  const OperatorOracle bad(1, 2, [](std::size_t, const Vec&) { return vec({1.0}); });
  EXPECT_THROW(bad.local(0, vec({1.0, 2.0})), DimensionError);
  EXPECT_THROW(OperatorOracle(0, 2, [](std::size_t, const Vec& z) { return z; }), ConfigError);
}

TEST(Constants, Validation) {
  EXPECT_NO_THROW((ProblemConstants{2.0, 1.0, 0.0}.validate()));
  EXPECT_THROW((ProblemConstants{2.0, 0.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((ProblemConstants{0.5, 1.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((ProblemConstants{2.0, 1.0, -1.0}.validate()), ConfigError);
}

TEST(Rng, CounterStreamsAreReproducibleAndDistinct) {
  rng::CounterRng a(1, 2, rng::tag("x")), b(1, 2, rng::tag("x")), c(1, 3, rng::tag("x"));
  for (int i = 0; i < 10; ++i) {
    const auto va = a(), vb = b(), vc = c();
    EXPECT_EQ(va, vb);
    EXPECT_NE(va, vc);
  }
}

TEST(Rng, BoundedDrawsStayInRange) {
  rng::CounterRng gen(3, 0, rng::tag("below"));
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = gen.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
  rng::CounterRng gen(4, 0, rng::tag("normal"));
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = gen.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(SpectralNorm, MatchesSvd) {
  rng::CounterRng gen(5, 0, rng::tag("t.svd"));
  for (int n : {1, 3, 10, 40}) {
    Mat a(n, n + 2);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = gen.normal();
    Eigen::JacobiSVD<Mat> svd(a);
    EXPECT_NEAR(spectral_norm(a), svd.singularValues()[0], 1e-6 * svd.singularValues()[0]);
  }
  EXPECT_EQ(spectral_norm(Mat::Zero(3, 3)), 0.0);
}
