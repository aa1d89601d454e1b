// vi_commsim: instance generation, experiment runs, sigma sweeps and
// reproducibility checks.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vicomm/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDiverged = 2, kIoError = 3, kReproMismatch = 4 };

struct Options {
  std::string config;
  std::string preset;
  std::string out;
  std::string instance;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_scale;
  std::size_t jobs = 1;
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("VI_COMMSIM_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0') throw vicomm::ConfigError(std::string("VI_COMMSIM_SEED: not an integer: ") + raw);
  return v;
}

vicomm::ExperimentConfig load_config(const Options& o) {
  if (o.config.empty() == o.preset.empty()) {
    throw vicomm::ConfigError("give exactly one of --config or --preset");
  }
  if (o.lambda_scale && o.preset.empty()) throw vicomm::ConfigError("--lambda-scale requires --preset");
  vicomm::ExperimentConfig cfg;
  if (!o.preset.empty()) {
    cfg = vicomm::preset(o.preset, o.lambda_scale);
  } else {
    try {
      cfg = vicomm::parse_config(vicomm::read_file(o.config));
    } catch (const vicomm::ConfigError& e) {
      throw vicomm::ConfigError(o.config + ": " + e.what());
    }
  }
  if (o.seed) {
    vicomm::override_seed(cfg, *o.seed);
  } else if (auto s = env_seed()) {
    vicomm::override_seed(cfg, *s);
  }
  return cfg;
}

std::filesystem::path out_dir(const Options& o, const vicomm::ExperimentConfig& cfg) {
  return o.out.empty() ? std::filesystem::path(cfg.output.directory) : std::filesystem::path(o.out);
}

vicomm::LoadedProblem problem_for(const Options& o, const vicomm::ExperimentConfig& cfg) {
  if (!o.instance.empty()) return vicomm::load_instance_file(o.instance, cfg.problem.composite);
  return vicomm::generate_problem(cfg.problem);
}

void report_divergences(const vicomm::ExperimentResult& r) {
  for (const auto& run : r.runs) {
    if (run.divergence) {
      std::cerr << "diverged: " << run.label << " seed " << run.seed << ": " << *run.divergence << '\n';
    }
  }
}

int cmd_generate(const Options& o) {
  const auto cfg = load_config(o);
  const auto dir = out_dir(o, cfg);
  const auto manifest = vicomm::cmd_generate(cfg, dir);
  std::cout << "wrote " << (dir / "instance.json").string() << '\n'
            << "constants: " << manifest["constants"].dump() << '\n';
  return kOk;
}

int cmd_run(const Options& o) {
  const auto cfg = load_config(o);
  const auto dir = out_dir(o, cfg);
  const auto lp = problem_for(o, cfg);
  const auto result = vicomm::run_experiment(cfg, lp, dir, o.jobs);
  for (const auto& run : result.runs) {
    std::printf("%-20s seed %-6llu rounds %-9zu uplink %-12llu rel %.3e%s\n", run.label.c_str(),
                static_cast<unsigned long long>(run.seed), run.metrics.rounds,
                static_cast<unsigned long long>(run.metrics.rows.back().uplink_scalars),
                run.metrics.rows.back().rel_dist_sq,
                run.divergence ? "  DIVERGED" : (run.metrics.converged ? "" : "  (max_rounds)"));
  }
  std::cout << "wrote " << (dir / "manifest.json").string() << '\n';
  report_divergences(result);
  return result.any_diverged() ? kDiverged : kOk;
}

int cmd_sweep(const Options& o) {
  auto cfg = load_config(o);
  if (cfg.sweep_sigmas.empty()) {
    throw vicomm::ConfigError("sweep-sigma: config has no sweep.sigmas list");
  }
  const auto dir = out_dir(o, cfg);
  const auto res = vicomm::sweep_sigma(cfg, dir, o.jobs);
  std::cout << vicomm::sweep_table_csv(res);
  std::cout << "wrote " << (dir / "sweep_table.csv").string() << '\n';
  bool diverged = false;
  for (const auto& r : res.rows) diverged = diverged || r.diverged;
  return diverged ? kDiverged : kOk;
}

int cmd_check_repro(const Options& o) {
  const auto cfg = load_config(o);
  const auto lp = problem_for(o, cfg);
  const auto rep = vicomm::check_repro(cfg, lp, o.jobs);
  if (rep.identical) {
    std::cout << "check-repro: identical (jobs 1 twice, jobs " << std::max<std::size_t>(o.jobs, 2)
              << ")\n";
    return kOk;
  }
  for (const auto& m : rep.mismatches) std::cerr << "check-repro: mismatch in " << m << '\n';
  return kReproMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Communication-compressed variational inequality simulator"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config");
    sub->add_option("--preset", o.preset, "named preset (paper-fig1[-small|-medium|-big], desk-fig1[...])");
    sub->add_option("--lambda-scale", o.lambda_scale, "with --preset: lambda = ||A||_2 * scale");
    sub->add_option("--out", o.out, "output directory (default: config output.directory)");
    sub->add_option("--seed", o.seed, "base seed; overrides config and VI_COMMSIM_SEED");
  };
  auto* gen = app.add_subcommand("generate", "generate an instance and its manifest");
  add_common(gen);
  auto* run = app.add_subcommand("run", "run every (algorithm, seed) pair");
  add_common(run);
  run->add_option("--instance", o.instance, "instance.json from `generate` (default: regenerate)");
  run->add_option("--jobs", o.jobs, "parallel runs")->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep-sigma", "rerun the experiment for each sigma in the sweep list");
  add_common(sweep);
  sweep->add_option("--jobs", o.jobs, "parallel runs")->check(CLI::PositiveNumber);
  auto* repro = app.add_subcommand("check-repro", "verify CSVs are identical across repeats and job counts");
  add_common(repro);
  repro->add_option("--instance", o.instance, "instance.json from `generate` (default: regenerate)");
  repro->add_option("--jobs", o.jobs, "parallel runs for the third pass")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    return cmd_check_repro(o);
  } catch (const vicomm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const vicomm::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const vicomm::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const vicomm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
}
