#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "vicomm/simulator.hpp"

using namespace vicomm;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

ProblemInstance scalar_problem() {
  BilinearInstance inst;
  inst.devices = 1;
  inst.dim = 1;
  inst.coupling = {Mat::Constant(1, 1, 2.0)};
  inst.shift_x = {vec({1.0})};
  inst.shift_y = {vec({-1.0})};
  inst.lambda = 0.5;
  return make_problem(inst);
}

RunConfig om_config(const ProblemInstance& problem, std::uint64_t seed, std::size_t rounds) {
  RunConfig rc;
  rc.algorithm = Algorithm::OptimisticMasha;
  rc.params = theorem_params(problem.constants(), problem.devices());
  rc.stop.max_rounds = rounds;
  rc.seed = seed;
  return rc;
}

RunMetrics synthetic(std::uint64_t seed, std::vector<std::pair<std::uint64_t, double>> points) {
  RunMetrics m;
  m.seed = seed;
  std::size_t k = 0;
  for (auto [u, rel] : points) {
    MetricsRow row;
    row.k = k++;
    row.uplink_scalars = u;
    row.rel_dist_sq = rel;
    row.dist_sq = rel;
    row.lyapunov = 2.0 * rel;
    m.rows.push_back(row);
  }
  m.rounds = k - 1;
  return m;
}

}  // namespace

TEST(Run, StartAtSolutionConvergesImmediately) {
  const auto problem = scalar_problem();
  auto rc = om_config(problem, 1, 100);
  rc.start = problem.z_star;
  const auto m = run(rc, problem);
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_TRUE(m.converged);
  EXPECT_EQ(m.rows[0].rel_dist_sq, 0.0);
  EXPECT_EQ(m.rows[0].uplink_scalars, 2u);
}

TEST(Run, ZeroRoundsLogsOneRow) {
  const auto problem = scalar_problem();
  const auto m = run(om_config(problem, 1, 0), problem);
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_EQ(m.rows[0].k, 0u);
  EXPECT_EQ(m.rows[0].rel_dist_sq, 1.0);
  EXPECT_FALSE(m.converged);
}

TEST(Run, RequiresStoppingRule) {
  const auto problem = scalar_problem();
  auto rc = om_config(problem, 1, 0);
  rc.stop.max_rounds.reset();
  EXPECT_THROW(run(rc, problem), ConfigError);
  rc.stop.max_rounds = 5;
  rc.log_every = 0;
  EXPECT_THROW(run(rc, problem), ConfigError);
}

TEST(Run, ExtraGradientDecreasesMonotonically) {
  const auto problem = scalar_problem();
  RunConfig rc;
  rc.algorithm = Algorithm::ExtraGradient;
  rc.params.eta = extra_gradient_default_step(problem.constants());
  rc.stop.max_rounds = 40;
  const auto m = run(rc, problem);
  // Hand iteration of the same recursion for the first five steps.
  const auto& F = problem.oracle;
  Vec z = Vec::Zero(2);
  for (std::size_t k = 1; k <= 5; ++k) {
    const Vec half = z - rc.params.eta * F.global(z);
    z = z - rc.params.eta * F.global(half);
    EXPECT_NEAR(m.rows[k].dist_sq, (z - problem.z_star).squaredNorm(), 1e-14);
  }
  for (std::size_t i = 1; i < m.rows.size(); ++i) {
    EXPECT_LT(m.rows[i].rel_dist_sq, m.rows[i - 1].rel_dist_sq);
    EXPECT_EQ(m.rows[i].uplink_scalars, 4 * m.rows[i].k);
    EXPECT_TRUE(std::isnan(m.rows[i].lyapunov));
  }
}

TEST(Run, TargetStopsRun) {
  const auto problem = scalar_problem();
  auto rc = om_config(problem, 3, 100000);
  rc.stop.target_rel_dist_sq = 1e-6;
  const auto m = run(rc, problem);
  EXPECT_TRUE(m.converged);
  EXPECT_LE(m.final_row().rel_dist_sq, 1e-6);
  EXPECT_GT(m.rows[m.rows.size() - 2].rel_dist_sq, 1e-6);
}

TEST(Run, AccountingIdentity) {
  const auto problem = make_problem(generate_bilinear(4, 6, 5.0, 0.3, 1.0, 2));
  const auto m = run(om_config(problem, 8, 500), problem);
  std::uint64_t expected = 12;
  std::size_t syncs = 0;
  for (std::size_t i = 1; i < m.rows.size(); ++i) {
    expected += 3 + (m.rows[i].sync ? 12 : 0);
    syncs += m.rows[i].sync ? 1 : 0;
    EXPECT_EQ(m.rows[i].uplink_scalars, expected);
    EXPECT_GT(m.rows[i].uplink_scalars, m.rows[i - 1].uplink_scalars);
  }
  EXPECT_EQ(syncs, m.syncs);
  EXPECT_EQ(m.final_row().uplink_scalars, 12 + 500 * 3 + 12 * m.syncs);
}

TEST(Run, CostModelExample) {
  // d = 100, M = 10, gamma = 0.1, 100 rounds with exactly 10 syncs.
  const auto problem = make_problem(generate_bilinear(10, 50, 10.0, 0.1, 1.0, 4));
  std::uint64_t seed = 0;
  for (std::uint64_t s = 1; s < 1000 && !seed; ++s) {
    int hits = 0;
    for (std::uint64_t k = 0; k < 100; ++k) hits += sync_bit(s, k, 0.1) ? 1 : 0;
    if (hits == 10) seed = s;
  }
  ASSERT_NE(seed, 0u);
  auto rc = om_config(problem, seed, 100);
  ASSERT_EQ(rc.params.gamma, 0.1);
  const auto m = run(rc, problem);
  EXPECT_EQ(m.syncs, 10u);
  EXPECT_EQ(m.final_row().uplink_scalars, 2100u);
}

TEST(Run, LogEveryKeepsFinalRow) {
  const auto problem = scalar_problem();
  auto rc = om_config(problem, 1, 23);
  rc.log_every = 10;
  const auto m = run(rc, problem);
  ASSERT_EQ(m.rows.size(), 4u);
  EXPECT_EQ(m.rows[1].k, 10u);
  EXPECT_EQ(m.rows[3].k, 23u);
}

TEST(Run, DeterministicExceptWallTime) {
  const auto problem = make_problem(generate_bilinear(2, 4, 5.0, 0.3, 1.0, 2));
  const auto a = run(om_config(problem, 5, 300), problem);
  const auto b = run(om_config(problem, 5, 300), problem);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].dist_sq, b.rows[i].dist_sq);
    EXPECT_EQ(a.rows[i].lyapunov, b.rows[i].lyapunov);
    EXPECT_EQ(a.rows[i].sync, b.rows[i].sync);
  }
}

TEST(Run, DivergenceCarriesPartialMetrics) {
  const auto problem = scalar_problem();
  RunConfig rc;
  rc.algorithm = Algorithm::ExtraGradient;
  rc.params.eta = 50.0;
  rc.stop.max_rounds = 1000;
  try {
    run(rc, problem);
    FAIL() << "expected divergence";
  } catch (const RunDiverged& e) {
    EXPECT_TRUE(e.partial().diverged);
    EXPECT_FALSE(e.partial().rows.empty());
  }
}

TEST(FloatsToAccuracy, Examples) {
  const auto m = synthetic(1, {{100, 1.0}, {110, 0.5}, {130, 0.01}, {140, 0.001}});
  EXPECT_EQ(floats_to_accuracy(m, 0.01), 130u);
  EXPECT_EQ(floats_to_accuracy(m, 0.6), 110u);
  EXPECT_FALSE(floats_to_accuracy(m, 1e-4).has_value());
  EXPECT_EQ(floats_to_accuracy(m, 1.0), 100u);
}

TEST(AggregateSeeds, IdenticalInputsGiveSameCurve) {
  const auto m = synthetic(1, {{10, 1.0}, {20, 0.5}, {30, 0.25}});
  const std::vector<RunMetrics> runs = {m, m, m};
  const auto c = aggregate_seeds(runs);
  ASSERT_EQ(c.uplink, (std::vector<std::uint64_t>{10, 20, 30}));
  EXPECT_EQ(c.rel_mean, (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_EQ(c.rel_min, c.rel_max);
  EXPECT_EQ(c.psi_mean, (std::vector<double>{2.0, 1.0, 0.5}));
}

TEST(AggregateSeeds, StepFunctionInterpolation) {
  const std::vector<RunMetrics> runs = {synthetic(1, {{10, 1.0}, {20, 0.5}, {40, 0.1}}),
                                        synthetic(2, {{10, 1.0}, {30, 0.3}})};
  const auto c = aggregate_seeds(runs);
  ASSERT_EQ(c.uplink, (std::vector<std::uint64_t>{10, 20, 30, 40}));
  EXPECT_DOUBLE_EQ(c.rel_mean[1], 0.75);
  EXPECT_DOUBLE_EQ(c.rel_mean[2], 0.4);
  EXPECT_DOUBLE_EQ(c.rel_mean[3], 0.2);
  EXPECT_DOUBLE_EQ(c.rel_min[3], 0.1);
  EXPECT_DOUBLE_EQ(c.rel_max[3], 0.3);
}

TEST(AggregateSeeds, Errors) {
  EXPECT_THROW(aggregate_seeds(std::vector<RunMetrics>{}), Error);
  auto bad = synthetic(7, {{10, 1.0}});
  bad.diverged = true;
  const std::vector<RunMetrics> runs = {synthetic(1, {{10, 1.0}}), bad};
  try {
    aggregate_seeds(runs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

TEST(LyapunovCurve, MeanAndRatio) {
  const std::vector<RunMetrics> runs = {synthetic(1, {{1, 1.0}, {2, 0.5}, {3, 0.2}}),
                                        synthetic(2, {{1, 1.0}, {2, 0.3}})};
  const auto curve = mean_lyapunov_by_round(runs);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_DOUBLE_EQ(curve[1], 0.8);
  EXPECT_DOUBLE_EQ(max_step_ratio(curve), 0.4);
}
