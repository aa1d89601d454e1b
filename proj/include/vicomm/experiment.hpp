#pragma once

// Command implementations behind the vi_commsim tool: instance generation,
// configured multi-seed runs, sigma sweeps and reproducibility checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "vicomm/algorithms.hpp"
#include "vicomm/config.hpp"
#include "vicomm/io.hpp"
#include "vicomm/problems.hpp"
#include "vicomm/simulator.hpp"
#include "vicomm/svg.hpp"

namespace vicomm {

namespace fs = std::filesystem;

/// A generated or loaded instance together with its solved problem.
struct LoadedProblem {
  std::variant<BilinearInstance, QuadraticInstance> instance;
  ProblemInstance problem;
  std::optional<double> mean_coupling_norm;  ///< bilinear only
  std::string instance_file;                 ///< empty when generated from the config
};

inline LoadedProblem load_problem(std::variant<BilinearInstance, QuadraticInstance> instance,
                                  const CompositeTerm& g) {
  if (auto* b = std::get_if<BilinearInstance>(&instance)) {
    auto problem = make_problem(*b, g);
    const double norm = spectral_norm(mean_coupling(*b));
    return {std::move(instance), std::move(problem), norm, {}};
  }
  auto problem = make_problem(std::get<QuadraticInstance>(instance), g);
  return {std::move(instance), std::move(problem), std::nullopt, {}};
}

inline LoadedProblem generate_problem(const ProblemSpec& p) {
  if (p.type == "bilinear") {
    return load_problem(
        generate_bilinear(p.devices, p.dim, p.target_norm_A, p.sigma, p.lambda, p.seed),
        p.composite);
  }
  return load_problem(generate_quadratic(p.devices, p.dim, p.mu, p.lipschitz, p.sigma, p.seed),
                      p.composite);
}

inline json instance_json(const LoadedProblem& lp) {
  return std::visit([](const auto& inst) { return to_json(inst); }, lp.instance);
}

inline LoadedProblem load_instance_file(const fs::path& path, const CompositeTerm& g) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("instance " + path.string() + ": " + e.what());
  }
  const std::string type = j.value("type", "");
  try {
    std::optional<LoadedProblem> lp;
    if (type == "bilinear") lp = load_problem(bilinear_from_json(j), g);
    if (type == "quadratic") lp = load_problem(quadratic_from_json(j), g);
    if (lp) {
      lp->instance_file = path.string();
      return std::move(*lp);
    }
  } catch (const json::exception& e) {
    throw ConfigError("instance " + path.string() + ": " + e.what());
  }
  throw ConfigError("instance " + path.string() + ": unknown type '" + type + "'");
}

inline json constants_json(const LoadedProblem& lp) {
  const auto& c = lp.problem.constants();
  json out = {{"L", c.L}, {"mu", c.mu}, {"delta", c.delta}};
  if (lp.mean_coupling_norm) out["norm_mean_coupling"] = *lp.mean_coupling_norm;
  return out;
}

/// An algorithm entry with every "auto" parameter resolved.
struct ResolvedAlgorithm {
  AlgorithmSpec spec;
  TheoremParams params;
  bool gamma_auto = false;
  bool eta_auto = false;
};

/// Optimistic MASHA: gamma "auto" = min(1/M, 1/8); eta "auto" = the theorem
/// step for (L, delta, gamma, alpha). Extra Gradient: eta "auto" = 1/(2L).
inline ResolvedAlgorithm resolve(const AlgorithmSpec& spec, const ProblemConstants& c,
                                 std::size_t devices) {
  ResolvedAlgorithm r;
  r.spec = spec;
  r.gamma_auto = !spec.gamma;
  r.eta_auto = !spec.eta;
  if (spec.algorithm == Algorithm::ExtraGradient) {
    r.params.gamma = 0.0;
    r.params.alpha = 0.0;
    r.params.eta = spec.eta ? *spec.eta : extra_gradient_default_step(c);
    return r;
  }
  if (spec.eta) {
    r.params.gamma = spec.gamma ? *spec.gamma : std::min(1.0 / static_cast<double>(devices), 0.125);
    r.params.alpha = spec.alpha;
    r.params.eta = *spec.eta;
  } else {
    r.params = theorem_params(c, devices, spec.gamma);
    r.params.alpha = spec.alpha;
    r.params.eta = theorem_step(c, r.params.gamma, r.params.alpha);
  }
  return r;
}

inline RunConfig make_run_config(const ResolvedAlgorithm& alg, const RunSpec& run,
                                 std::uint64_t seed) {
  RunConfig rc;
  rc.algorithm = alg.spec.algorithm;
  rc.compressor = alg.spec.compressor;
  rc.params = alg.params;
  rc.stop.max_rounds = run.max_rounds;
  rc.stop.target_rel_dist_sq = run.target_rel_dist_sq;
  rc.seed = seed;
  rc.log_every = run.log_every;
  rc.track_lyapunov = run.lyapunov;
  return rc;
}

struct RunOutcome {
  std::string label;
  std::size_t algorithm_index = 0;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::optional<std::string> divergence;
  std::string file;
};

struct ExperimentResult {
  std::vector<ResolvedAlgorithm> algorithms;
  std::vector<RunOutcome> runs;
  json manifest;
  bool any_diverged() const {
    return std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.divergence.has_value(); });
  }
};

inline std::string csv_name(const std::string& label, std::uint64_t seed) {
  return label + "_seed" + std::to_string(seed) + ".csv";
}

inline std::string target_key(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

/// Mean over seeds of floats_to_accuracy; absent when any seed missed eps.
inline std::optional<double> mean_floats_to_accuracy(const std::vector<const RunMetrics*>& runs,
                                                     double eps) {
  if (runs.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto* m : runs) {
    const auto f = floats_to_accuracy(*m, eps);
    if (!f) return std::nullopt;
    sum += static_cast<double>(*f);
  }
  return sum / static_cast<double>(runs.size());
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Runs every (algorithm, seed) pair on the problem. Writes one CSV per pair
/// and a manifest into out_dir unless out_dir is empty.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const LoadedProblem& lp,
                                       const fs::path& out_dir, std::size_t jobs) {
  const ProblemInstance& problem = lp.problem;
  const auto& constants = problem.constants();
  ExperimentResult result;
  for (const auto& spec : cfg.algorithms) {
    result.algorithms.push_back(resolve(spec, constants, problem.devices()));
  }

  for (std::size_t a = 0; a < result.algorithms.size(); ++a) {
    for (std::uint64_t seed : cfg.run.seeds) {
      RunOutcome o;
      o.label = label_of(result.algorithms[a].spec);
      o.algorithm_index = a;
      o.seed = seed;
      o.file = csv_name(o.label, seed);
      result.runs.push_back(std::move(o));
    }
  }

  parallel_for(result.runs.size(), jobs, [&](std::size_t i) {
    RunOutcome& o = result.runs[i];
    const RunConfig rc = make_run_config(result.algorithms[o.algorithm_index], cfg.run, o.seed);
    try {
      o.metrics = run(rc, problem);
    } catch (const RunDiverged& e) {
      o.metrics = e.partial();
      o.divergence = e.what();
    }
    if (!out_dir.empty()) write_file_atomic(out_dir / o.file, metrics_csv(o.metrics));
  });

  json manifest;
  manifest["config"] = to_json(cfg);
  manifest["problem"] = {{"type", cfg.problem.type},
                         {"M", problem.devices()},
                         {"operator_dim", problem.dim()},
                         {"sigma", cfg.problem.sigma},
                         {"seed", cfg.problem.seed}};
  if (cfg.problem.type == "bilinear") {
    manifest["problem"]["lambda"] = cfg.problem.lambda;
    manifest["problem"]["target_norm_A"] = cfg.problem.target_norm_A;
  }
  if (!lp.instance_file.empty()) {
    // The instance file, not the config's problem block, defines the problem.
    json p = {{"instance_file", lp.instance_file}, {"M", problem.devices()}, {"operator_dim", problem.dim()}};
    if (const auto* b = std::get_if<BilinearInstance>(&lp.instance)) {
      p["type"] = "bilinear";
      p["lambda"] = b->lambda;
      p["sigma"] = b->sigma;
      p["seed"] = b->seed;
    } else {
      p["type"] = "quadratic";
      p["seed"] = std::get<QuadraticInstance>(lp.instance).seed;
    }
    manifest["problem"] = std::move(p);
  }
  manifest["constants"] = constants_json(lp);
  manifest["bits_per_scalar"] = kBitsPerScalar;

  json algs = json::array();
  for (const auto& alg : result.algorithms) {
    json j = {{"label", label_of(alg.spec)},
              {"name", to_string(alg.spec.algorithm)},
              {"eta", alg.params.eta},
              {"eta_auto", alg.eta_auto}};
    if (alg.spec.algorithm == Algorithm::OptimisticMasha) {
      j["compressor"] = to_string(alg.spec.compressor);
      j["gamma"] = alg.params.gamma;
      j["gamma_auto"] = alg.gamma_auto;
      j["alpha"] = alg.params.alpha;
      j["contraction_factor"] = contraction_factor(constants, alg.params);
    }
    algs.push_back(std::move(j));
  }
  manifest["algorithms"] = std::move(algs);

  json runs = json::array();
  for (const auto& o : result.runs) {
    const auto& m = o.metrics;
    json j = {{"label", o.label},
              {"seed", o.seed},
              {"file", o.file},
              {"rounds", m.rounds},
              {"syncs", m.syncs},
              {"converged", m.converged},
              {"diverged", m.diverged},
              {"max_rounds_exhausted", !m.converged && !m.diverged},
              {"final_rel_dist_sq", m.rows.back().rel_dist_sq},
              {"total_uplink_scalars", m.rows.back().uplink_scalars}};
    if (o.divergence) j["divergence"] = *o.divergence;
    json floats = json::object(), bits = json::object();
    for (double eps : cfg.run.report_targets) {
      const auto f = floats_to_accuracy(m, eps);
      floats[target_key(eps)] = f ? json(*f) : json(nullptr);
      bits[target_key(eps)] = f ? json(*f * kBitsPerScalar) : json(nullptr);
    }
    j["floats_to_accuracy"] = std::move(floats);
    j["bits_to_accuracy"] = std::move(bits);
    runs.push_back(std::move(j));
  }
  manifest["runs"] = std::move(runs);

  json summary = json::array();
  for (std::size_t a = 0; a < result.algorithms.size(); ++a) {
    const auto& alg = result.algorithms[a];
    std::vector<const RunMetrics*> ok;
    std::vector<RunMetrics> good;
    for (const auto& o : result.runs) {
      if (o.algorithm_index == a && !o.divergence) {
        ok.push_back(&o.metrics);
        good.push_back(o.metrics);
      }
    }
    json s = {{"label", label_of(alg.spec)}, {"completed_seeds", ok.size()}};
    json floats = json::object();
    for (double eps : cfg.run.report_targets) {
      floats[target_key(eps)] = optional_json(mean_floats_to_accuracy(ok, eps));
    }
    s["mean_floats_to_accuracy"] = std::move(floats);
    if (alg.spec.algorithm == Algorithm::OptimisticMasha && cfg.run.lyapunov && !good.empty()) {
      json contraction = {{"rho", contraction_factor(constants, alg.params)}};
      double rate_sum = 0.0;
      std::size_t rate_n = 0;
      for (const auto& m : good) {
        const double psi0 = m.rows.front().lyapunov, psik = m.rows.back().lyapunov;
        if (m.rounds > 0 && psi0 > 0.0 && psik > 0.0) {
          rate_sum += std::pow(psik / psi0, 1.0 / static_cast<double>(m.rounds));
          ++rate_n;
        }
      }
      contraction["mean_empirical_rate"] =
          rate_n ? json(rate_sum / static_cast<double>(rate_n)) : json(nullptr);
      if (cfg.run.log_every == 1) {
        const auto curve = mean_lyapunov_by_round(good);
        contraction["max_mean_step_ratio"] = max_step_ratio(curve);
      }
      s["contraction"] = std::move(contraction);
    }
    summary.push_back(std::move(s));
  }
  manifest["summary"] = std::move(summary);
  result.manifest = manifest;

  if (!out_dir.empty()) {
    write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
    if (cfg.output.emit_svg) {
      std::vector<svg::Series> series;
      for (std::size_t a = 0; a < result.algorithms.size(); ++a) {
        std::vector<RunMetrics> good;
        for (const auto& o : result.runs) {
          if (o.algorithm_index == a && !o.divergence) good.push_back(o.metrics);
        }
        if (good.empty()) continue;
        const auto curves = aggregate_seeds(good);
        svg::Series s{label_of(result.algorithms[a].spec), {}};
        for (std::size_t i = 0; i < curves.uplink.size(); ++i) {
          if (curves.rel_mean[i] > 0.0) {
            s.points.emplace_back(static_cast<double>(curves.uplink[i]), std::log10(curves.rel_mean[i]));
          }
        }
        series.push_back(std::move(s));
      }
      write_file_atomic(out_dir / "convergence.svg",
                        svg::line_chart("sigma = " + target_key(cfg.problem.sigma),
                                        "transmitted scalars per device",
                                        "log10 ||z - z*||^2 / ||z0 - z*||^2", series));
    }
  }
  return result;
}

/// Writes instance.json and instance_manifest.json.
inline json cmd_generate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const LoadedProblem lp = generate_problem(cfg.problem);
  json manifest;
  manifest["config"] = to_json(cfg);
  manifest["constants"] = constants_json(lp);
  manifest["z_star"] = to_json(lp.problem.z_star);
  write_file_atomic(out_dir / "instance.json", instance_json(lp).dump() + "\n");
  write_file_atomic(out_dir / "instance_manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

struct SweepRow {
  double sigma = 0.0;
  ProblemConstants constants;
  std::vector<std::optional<double>> floats;  ///< per algorithm, seed-mean
  std::optional<double> ratio;                ///< Extra Gradient / Optimistic MASHA
  bool diverged = false;
};

struct SweepResult {
  std::vector<std::string> labels;
  double target = 0.0;
  std::vector<SweepRow> rows;
};

inline std::string sweep_table_csv(const SweepResult& s) {
  std::ostringstream out;
  out << "sigma,L,mu,delta";
  for (const auto& l : s.labels) out << ",floats_" << l;
  out << ",ratio_eg_over_om\n";
  auto opt = [](const std::optional<double>& v) { return v ? format17(*v) : std::string("NA"); };
  for (const auto& r : s.rows) {
    out << format17(r.sigma) << ',' << format17(r.constants.L) << ',' << format17(r.constants.mu)
        << ',' << format17(r.constants.delta);
    for (const auto& f : r.floats) out << ',' << opt(f);
    out << ',' << opt(r.ratio) << '\n';
  }
  return out.str();
}

/// For each sigma: regenerate the instance from the same base seed, run all
/// algorithms, and tabulate seed-mean floats to reach `target`.
inline SweepResult sweep_sigma(const ExperimentConfig& base, const fs::path& out_dir,
                               std::size_t jobs) {
  if (base.sweep_sigmas.size() < 2) throw ConfigError("sweep-sigma: need at least two sigma values");
  SweepResult res;
  res.target = base.run.target_rel_dist_sq.value_or(
      base.run.report_targets.empty() ? 1e-4 : base.run.report_targets.back());
  for (const auto& a : base.algorithms) res.labels.push_back(label_of(a));

  for (std::size_t i = 0; i < base.sweep_sigmas.size(); ++i) {
    ExperimentConfig cfg = base;
    cfg.problem.sigma = base.sweep_sigmas[i];
    cfg.sweep_sigmas.clear();
    const LoadedProblem lp = generate_problem(cfg.problem);
    const fs::path sub = out_dir.empty() ? fs::path() : out_dir / ("sigma_" + std::to_string(i));
    const auto er = run_experiment(cfg, lp, sub, jobs);

    SweepRow row;
    row.sigma = cfg.problem.sigma;
    row.constants = lp.problem.constants();
    row.diverged = er.any_diverged();
    // The ratio uses the first entry of each algorithm in the config.
    std::optional<std::size_t> om_index, eg_index;
    for (std::size_t a = 0; a < er.algorithms.size(); ++a) {
      std::vector<const RunMetrics*> ok;
      bool bad = false;
      for (const auto& o : er.runs) {
        if (o.algorithm_index != a) continue;
        if (o.divergence) bad = true;
        ok.push_back(&o.metrics);
      }
      const auto f = bad ? std::nullopt : mean_floats_to_accuracy(ok, res.target);
      row.floats.push_back(f);
      const Algorithm kind = er.algorithms[a].spec.algorithm;
      if (kind == Algorithm::OptimisticMasha && !om_index) om_index = a;
      if (kind == Algorithm::ExtraGradient && !eg_index) eg_index = a;
    }
    if (om_index && eg_index) {
      const auto& om = row.floats[*om_index];
      const auto& eg = row.floats[*eg_index];
      if (om && eg && *om > 0.0) row.ratio = *eg / *om;
    }
    res.rows.push_back(std::move(row));

    if (!out_dir.empty() && cfg.output.emit_svg) {
      std::vector<svg::Series> series;
      for (std::size_t a = 0; a < er.algorithms.size(); ++a) {
        std::vector<RunMetrics> good;
        for (const auto& o : er.runs) {
          if (o.algorithm_index == a && !o.divergence) good.push_back(o.metrics);
        }
        if (good.empty()) continue;
        const auto curves = aggregate_seeds(good);
        svg::Series s{label_of(er.algorithms[a].spec), {}};
        for (std::size_t j = 0; j < curves.uplink.size(); ++j) {
          if (curves.rel_mean[j] > 0.0) {
            s.points.emplace_back(static_cast<double>(curves.uplink[j]), std::log10(curves.rel_mean[j]));
          }
        }
        series.push_back(std::move(s));
      }
      write_file_atomic(out_dir / ("sigma_" + std::to_string(i) + ".svg"),
                        svg::line_chart("sigma = " + target_key(cfg.problem.sigma) +
                                            ", delta = " + target_key(lp.problem.constants().delta),
                                        "transmitted scalars per device",
                                        "log10 relative squared distance", series));
    }
  }
  if (!out_dir.empty()) write_file_atomic(out_dir / "sweep_table.csv", sweep_table_csv(res));
  return res;
}

struct ReproReport {
  bool identical = true;
  std::vector<std::string> mismatches;
};

/// Runs the experiment three times (jobs = 1 twice, then `jobs`) and compares
/// the CSVs with the wall-time column removed.
inline ReproReport check_repro(const ExperimentConfig& cfg, const LoadedProblem& lp,
                               std::size_t jobs) {
  ExperimentConfig quiet = cfg;
  quiet.output.emit_svg = false;
  const auto first = run_experiment(quiet, lp, {}, 1);
  const auto second = run_experiment(quiet, lp, {}, 1);
  const auto third = run_experiment(quiet, lp, {}, std::max<std::size_t>(jobs, 2));
  ReproReport rep;
  for (std::size_t i = 0; i < first.runs.size(); ++i) {
    const auto base = strip_last_column(metrics_csv(first.runs[i].metrics));
    if (base != strip_last_column(metrics_csv(second.runs[i].metrics))) {
      rep.identical = false;
      rep.mismatches.push_back(first.runs[i].file + " (repeat run)");
    }
    if (base != strip_last_column(metrics_csv(third.runs[i].metrics))) {
      rep.identical = false;
      rep.mismatches.push_back(first.runs[i].file + " (parallel run)");
    }
  }
  return rep;
}

}  // namespace vicomm
