#include <cmath>
#include <filesystem>
#include <regex>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "vicomm/experiment.hpp"

using namespace vicomm;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "problem": {"type": "bilinear", "M": 2, "d": 4, "target_norm_A": 5.0, "sigma": 0.2,
              "lambda": 1.0, "seed": 3},
  "algorithms": [
    {"name": "OptimisticMasha", "compressor": "PermK", "gamma": "auto", "eta": "auto", "alpha": 0.5},
    {"name": "ExtraGradient", "eta": "auto"}
  ],
  "run": {"max_rounds": 20000, "target_rel_dist_sq": 1e-6, "seeds": [1, 2, 3, 4, 5], "log_every": 1},
  "output": {"directory": "unused", "emit_svg": true}
})";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vicomm_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Minimal well-formedness check: balanced tags, one root, quoted attributes.
bool well_formed_xml(const std::string& doc) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  int roots = 0;
  while ((pos = doc.find('<', pos)) != std::string::npos) {
    const auto end = doc.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = doc.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (stack.empty()) ++roots;
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() && roots == 1;
}

}  // namespace

TEST(Config, ParsesSmallConfig) {
  const auto cfg = parse_config(kSmallConfig);
  EXPECT_EQ(cfg.problem.devices, 2u);
  EXPECT_EQ(cfg.problem.dim, 4u);
  ASSERT_EQ(cfg.algorithms.size(), 2u);
  EXPECT_FALSE(cfg.algorithms[0].gamma.has_value());
  EXPECT_EQ(cfg.run.seeds.size(), 5u);
}

TEST(Config, SyntaxErrorReportsPosition) {
  const auto msg = config_error("{\n  \"problem\": {\n    \"M\": 2,,\n  }\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Config, FieldDiagnostics) {
  EXPECT_NE(config_error(R"({"problem": {"M": 2, "dd": 4}, "algorithms": [{"name": "ExtraGradient"}],
                             "run": {"max_rounds": 1}})")
                .find("problem: unknown field 'dd'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"problem": {"M": -2}, "algorithms": [{"name": "ExtraGradient"}],
                             "run": {"max_rounds": 1}})")
                .find("problem.M"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"problem": {}, "algorithms": [{"name": "Foo"}], "run": {"max_rounds": 1}})")
                .find("algorithms[0].name"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"problem": {}, "algorithms": [{"name": "ExtraGradient"}], "run": {}})")
                .find("run"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"problem": {}, "algorithms": [{"name": "OptimisticMasha", "eta": "fast"}],
                             "run": {"max_rounds": 1}})")
                .find("algorithms[0].eta"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"problem": {}, "algorithms": [{"name": "ExtraGradient"}, {"name": "ExtraGradient"}],
                             "run": {"max_rounds": 1}})")
                .find("duplicate label"),
            std::string::npos);
}

TEST(Config, RoundTripThroughJson) {
  const auto cfg = parse_config(kSmallConfig);
  const auto again = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
}

TEST(Config, Presets) {
  const auto p = preset("desk-fig1-small");
  EXPECT_EQ(p.problem.devices, 10u);
  EXPECT_EQ(p.problem.dim, 100u);
  EXPECT_DOUBLE_EQ(p.problem.lambda, 1.0);
  EXPECT_DOUBLE_EQ(p.problem.sigma, 1.0);
  EXPECT_DOUBLE_EQ(preset("paper-fig1-big").problem.sigma, 100.0);
  EXPECT_DOUBLE_EQ(preset("paper-fig1-medium").problem.lambda, 1e-3);
  EXPECT_DOUBLE_EQ(preset("paper-fig1-small", 1e-2).problem.lambda, 1.0);
  EXPECT_EQ(preset("desk-fig1").sweep_sigmas.size(), 3u);
  EXPECT_THROW(preset("nope"), ConfigError);
}

TEST(Config, SeedOverride) {
  auto cfg = parse_config(kSmallConfig);
  override_seed(cfg, 40);
  EXPECT_EQ(cfg.problem.seed, 40u);
  EXPECT_EQ(cfg.run.seeds, (std::vector<std::uint64_t>{40, 41, 42, 43, 44}));
}

TEST(Io, Format17RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.123456789, -2.5e17}) {
    EXPECT_EQ(std::stod(format17(v)), v);
  }
  EXPECT_EQ(format17(std::nan("")), "nan");
  EXPECT_EQ(format17(0.1), "0.10000000000000001");
}

TEST(Io, CsvHeaderAndStrip) {
  RunMetrics m;
  MetricsRow row;
  row.k = 0;
  row.uplink_scalars = 8;
  row.dist_sq = 2.0;
  row.rel_dist_sq = 1.0;
  row.lyapunov = 3.0;
  row.wall_time_ns = 1234;
  m.rows.push_back(row);
  const auto csv = metrics_csv(m);
  EXPECT_EQ(csv, std::string(kCsvHeader) + "\n0,8,2,1,3,0,1234\n");
  EXPECT_EQ(strip_last_column(csv), "k,uplink_scalars,dist_sq,rel_dist_sq,lyapunov,sync\n0,8,2,1,3,0\n");
}

TEST(Io, InstanceRoundTripIsExact) {
  const auto inst = generate_bilinear(3, 4, 10.0, 0.5, 0.7, 9);
  const auto back = bilinear_from_json(json::parse(to_json(inst).dump()));
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(back.coupling[m], inst.coupling[m]);
    EXPECT_EQ(back.shift_x[m], inst.shift_x[m]);
    EXPECT_EQ(back.shift_y[m], inst.shift_y[m]);
  }
  const auto q = generate_quadratic(2, 3, 1.0, 5.0, 0.2, 4);
  const auto qb = quadratic_from_json(json::parse(to_json(q).dump()));
  EXPECT_EQ(qb.hessian[1], q.hessian[1]);
  EXPECT_EQ(qb.linear[0], q.linear[0]);
}

TEST(Io, AtomicWriteReplacesFile) {
  const auto dir = fresh_dir("atomic");
  write_file_atomic(dir / "a.txt", "one");
  write_file_atomic(dir / "a.txt", "two");
  EXPECT_EQ(read_file(dir / "a.txt"), "two");
  EXPECT_FALSE(fs::exists(dir / "a.txt.tmp"));
  EXPECT_THROW(read_file(dir / "missing.txt"), IoError);
}

TEST(Svg, WellFormedAndSelfContained) {
  const auto doc = svg::line_chart("a < b & c", "x", "y",
                                   {{"one", {{0, 1}, {1, 2}, {2, std::nan("")}}}, {"two", {{0, 0}}}});
  EXPECT_TRUE(well_formed_xml(doc));
  EXPECT_EQ(doc.find("href"), std::string::npos);
  EXPECT_EQ(doc.find("url("), std::string::npos);
  EXPECT_NE(doc.find("a &lt; b &amp; c"), std::string::npos);
  EXPECT_GT(std::count(doc.begin(), doc.end(), '\n'), 5);
}

TEST(Experiment, GenerateWritesInstanceAndManifest) {
  const auto dir = fresh_dir("generate");
  const auto cfg = parse_config(kSmallConfig);
  const auto manifest = cmd_generate(cfg, dir);
  ASSERT_TRUE(fs::exists(dir / "instance.json"));
  const auto first = read_file(dir / "instance.json");
  cmd_generate(cfg, dir);
  EXPECT_EQ(read_file(dir / "instance.json"), first);
  for (const char* key : {"L", "mu", "delta", "norm_mean_coupling"}) {
    EXPECT_TRUE(manifest["constants"].contains(key)) << key;
  }
  EXPECT_EQ(manifest["z_star"].size(), 8u);
  const auto loaded = load_instance_file(dir / "instance.json", ZeroTerm{});
  const auto direct = generate_problem(cfg.problem);
  EXPECT_EQ(loaded.problem.z_star, direct.problem.z_star);
}

TEST(Experiment, RunWritesOneCsvPerAlgorithmAndSeed) {
  const auto dir = fresh_dir("run");
  const auto cfg = parse_config(kSmallConfig);
  const auto lp = generate_problem(cfg.problem);
  const auto result = run_experiment(cfg, lp, dir, 2);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir)) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 10u);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "convergence.svg"));
  EXPECT_TRUE(well_formed_xml(read_file(dir / "convergence.svg")));

  const auto manifest = json::parse(read_file(dir / "manifest.json"));
  for (const auto& r : manifest["runs"]) {
    const auto text = read_file(dir / r["file"].get<std::string>());
    EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
    const auto last = text.substr(text.rfind('\n', text.size() - 2) + 1);
    const double rel = std::stod(last.substr(
        last.find(',', last.find(',', last.find(',') + 1) + 1) + 1));
    EXPECT_TRUE(rel <= 1e-6 || r["max_rounds_exhausted"].get<bool>()) << r.dump();
  }
}

TEST(Experiment, ManifestAutoParametersMatchFormula) {
  const auto cfg = parse_config(kSmallConfig);
  const auto lp = generate_problem(cfg.problem);
  const auto result = run_experiment(cfg, lp, {}, 1);
  const auto& m = result.manifest;
  const double L = m["constants"]["L"], delta = m["constants"]["delta"];
  for (const auto& a : m["algorithms"]) {
    const double eta = a["eta"];
    if (a["name"] == "OptimisticMasha") {
      ASSERT_TRUE(a["eta_auto"].get<bool>());
      const double gamma = a["gamma"], alpha = a["alpha"];
      EXPECT_EQ(gamma, std::min(1.0 / 2.0, 0.125));
      const double formula = delta == 0.0 ? 1.0 / (8.0 * L)
                                          : std::min(std::sqrt(alpha * gamma) / (2.0 * delta),
                                                     1.0 / (8.0 * (L + delta)));
      EXPECT_NEAR(eta, formula, 1e-12);
    } else {
      EXPECT_NEAR(eta, 1.0 / (2.0 * L), 1e-12);
    }
  }
}

TEST(Experiment, EchoedConfigReproducesRuns) {
  const auto cfg = parse_config(kSmallConfig);
  const auto lp = generate_problem(cfg.problem);
  const auto first = run_experiment(cfg, lp, {}, 1);
  const auto echoed = config_from_json(first.manifest["config"]);
  const auto second = run_experiment(echoed, generate_problem(echoed.problem), {}, 1);
  ASSERT_EQ(first.runs.size(), second.runs.size());
  for (std::size_t i = 0; i < first.runs.size(); ++i) {
    EXPECT_EQ(metrics_csv(first.runs[i].metrics, false), metrics_csv(second.runs[i].metrics, false));
  }
}

TEST(Experiment, CheckReproAcrossJobCounts) {
  const auto cfg = parse_config(kSmallConfig);
  const auto lp = generate_problem(cfg.problem);
  const auto rep = check_repro(cfg, lp, 4);
  EXPECT_TRUE(rep.identical);
  EXPECT_TRUE(rep.mismatches.empty());
}

TEST(Experiment, DivergenceDoesNotAbortSiblings) {
  auto cfg = parse_config(kSmallConfig);
  cfg.algorithms[1].eta = 100.0;
  const auto lp = generate_problem(cfg.problem);
  const auto result = run_experiment(cfg, lp, fresh_dir("diverge"), 1);
  EXPECT_TRUE(result.any_diverged());
  for (const auto& r : result.runs) {
    if (r.label == "optimistic_masha") {
      EXPECT_FALSE(r.divergence.has_value());
      EXPECT_TRUE(r.metrics.converged);
    } else {
      EXPECT_TRUE(r.divergence.has_value());
    }
  }
}

TEST(Experiment, SweepSingleAlgorithm) {
  auto cfg = parse_config(kSmallConfig);
  cfg.algorithms.resize(1);
  cfg.run.seeds = {1, 2};
  cfg.sweep_sigmas = {0.0, 0.5};
  const auto dir = fresh_dir("sweep");
  const auto res = sweep_sigma(cfg, dir, 1);
  ASSERT_EQ(res.rows.size(), 2u);
  EXPECT_EQ(res.rows[0].floats.size(), 1u);
  EXPECT_LT(res.rows[0].constants.delta, res.rows[1].constants.delta);
  EXPECT_TRUE(fs::exists(dir / "sigma_0.svg"));
  EXPECT_TRUE(fs::exists(dir / "sigma_1.svg"));
  const auto svg_text = read_file(dir / "sigma_0.svg");
  const std::regex polyline("<polyline");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg_text.begin(), svg_text.end(), polyline),
                          std::sregex_iterator()),
            1);
  const auto table = read_file(dir / "sweep_table.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "sigma,L,mu,delta,floats_optimistic_masha,ratio_eg_over_om");
  cfg.sweep_sigmas = {1.0};
  EXPECT_THROW(sweep_sigma(cfg, {}, 1), ConfigError);
}
