#pragma once

// Experiment configuration: a JSON document with problem, algorithms, run,
// output and (optional) sweep blocks. See configs/ for examples.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vicomm/compressors.hpp"
#include "vicomm/core.hpp"
#include "vicomm/simulator.hpp"

namespace vicomm {

using json = nlohmann::json;

struct ProblemSpec {
  std::string type = "bilinear";  ///< "bilinear" or "quadratic"
  std::size_t devices = 10;
  std::size_t dim = 100;
  double target_norm_A = 100.0;  ///< bilinear
  double sigma = 1.0;
  double lambda = 1.0;           ///< bilinear
  double mu = 1.0;               ///< quadratic
  double lipschitz = 10.0;       ///< quadratic
  std::uint64_t seed = 1;
  CompositeTerm composite = ZeroTerm{};
};

struct AlgorithmSpec {
  Algorithm algorithm = Algorithm::OptimisticMasha;
  std::string label;
  CompressorKind compressor = CompressorKind::PermK;
  std::optional<double> gamma;  ///< nullopt = "auto"
  std::optional<double> eta;    ///< nullopt = "auto"
  double alpha = 0.5;
};

struct RunSpec {
  std::optional<std::size_t> max_rounds;
  std::optional<double> target_rel_dist_sq;
  std::vector<std::uint64_t> seeds{1};
  std::size_t log_every = 1;
  bool lyapunov = true;
  std::vector<double> report_targets{1e-2, 1e-4, 1e-6};
};

struct OutputSpec {
  std::string directory = "out";
  bool emit_svg = true;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<AlgorithmSpec> algorithms;
  RunSpec run;
  OutputSpec output;
  std::vector<double> sweep_sigmas;
};

inline std::string algorithm_key(Algorithm a) {
  return a == Algorithm::OptimisticMasha ? "optimistic_masha" : "extra_gradient";
}

inline std::string label_of(const AlgorithmSpec& a) {
  return a.label.empty() ? algorithm_key(a.algorithm) : a.label;
}

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config " + (path_.empty() ? std::string("<root>") : path_) + ": " + what);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!node_.contains(key)) fail("missing field '" + key + "'");
    return node_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number()) throw ConfigError("config " + where(key) + ": expected a number");
    return v.get<double>();
  }

  double positive(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v > 0.0)) throw ConfigError("config " + where(key) + ": must be positive");
    return v;
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number_unsigned()) {
      throw ConfigError("config " + where(key) + ": expected a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_string()) throw ConfigError("config " + where(key) + ": expected a string");
    return v.get<std::string>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_boolean()) throw ConfigError("config " + where(key) + ": expected true or false");
    return v.get<bool>();
  }

  /// number | "auto" | absent (= auto).
  std::optional<double> number_or_auto(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto& v = node_.at(key);
    if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
    if (!v.is_number()) throw ConfigError("config " + where(key) + ": expected a number or \"auto\"");
    const double x = v.get<double>();
    if (!(x > 0.0)) throw ConfigError("config " + where(key) + ": must be positive");
    return x;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) fail("unknown field '" + key + "'");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

inline CompositeTerm composite_from_json(const json& node, const std::string& path) {
  ConfigReader r(node, path);
  const std::string type = r.string("type", "zero");
  CompositeTerm out;
  if (type == "zero") {
    out = ZeroTerm{};
  } else if (type == "ball") {
    out = BallIndicator{r.positive("radius", 1.0), Vec{}};
  } else if (type == "l2") {
    const double c = r.number("coefficient", 0.0);
    if (!(c >= 0.0)) throw ConfigError("config " + path + ".coefficient: must be nonnegative");
    out = ScaledL2{c};
  } else {
    throw ConfigError("config " + path + ".type: expected \"zero\", \"ball\" or \"l2\"");
  }
  r.reject_unknown();
  return out;
}

inline json composite_to_json(const CompositeTerm& g) {
  if (const auto* b = std::get_if<BallIndicator>(&g)) return {{"type", "ball"}, {"radius", b->radius}};
  if (const auto* l2 = std::get_if<ScaledL2>(&g)) {
    return {{"type", "l2"}, {"coefficient", l2->coefficient}};
  }
  return {{"type", "zero"}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& root) {
  detail::ConfigReader top(root, "");
  ExperimentConfig cfg;

  {
    detail::ConfigReader r(top.at("problem"), "problem");
    auto& p = cfg.problem;
    p.type = r.string("type", p.type);
    if (p.type != "bilinear" && p.type != "quadratic") {
      throw ConfigError("config problem.type: expected \"bilinear\" or \"quadratic\"");
    }
    p.devices = r.integer("M", p.devices);
    p.dim = r.integer("d", p.dim);
    if (p.devices == 0 || p.dim == 0) throw ConfigError("config problem: M and d must be positive");
    p.target_norm_A = r.positive("target_norm_A", p.target_norm_A);
    p.sigma = r.number("sigma", p.sigma);
    if (!(p.sigma >= 0.0)) throw ConfigError("config problem.sigma: must be nonnegative");
    p.lambda = r.positive("lambda", p.lambda);
    p.mu = r.positive("mu", p.mu);
    p.lipschitz = r.positive("L", p.lipschitz);
    p.seed = r.integer("seed", p.seed);
    if (r.has("composite")) p.composite = detail::composite_from_json(r.at("composite"), "problem.composite");
    r.reject_unknown();
  }

  {
    const json& list = top.at("algorithms");
    if (!list.is_array() || list.empty()) {
      throw ConfigError("config algorithms: expected a non-empty array");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "algorithms[" + std::to_string(i) + "]";
      detail::ConfigReader r(list[i], path);
      AlgorithmSpec a;
      const std::string name = r.string("name", "");
      if (name == "OptimisticMasha") {
        a.algorithm = Algorithm::OptimisticMasha;
      } else if (name == "ExtraGradient") {
        a.algorithm = Algorithm::ExtraGradient;
      } else {
        throw ConfigError("config " + path + ".name: expected \"OptimisticMasha\" or \"ExtraGradient\"");
      }
      a.label = r.string("label", "");
      const std::string comp = r.string("compressor", "PermK");
      if (comp == "PermK") {
        a.compressor = CompressorKind::PermK;
      } else if (comp == "Identity") {
        a.compressor = CompressorKind::Identity;
      } else {
        throw ConfigError("config " + path + ".compressor: expected \"PermK\" or \"Identity\"");
      }
      a.gamma = r.number_or_auto("gamma");
      a.eta = r.number_or_auto("eta");
      a.alpha = r.number("alpha", a.alpha);
      if (!(a.alpha >= 0.0 && a.alpha < 1.0)) {
        throw ConfigError("config " + path + ".alpha: must lie in [0, 1)");
      }
      r.reject_unknown();
      cfg.algorithms.push_back(std::move(a));
    }
    std::set<std::string> labels;
    for (const auto& a : cfg.algorithms) {
      if (!labels.insert(label_of(a)).second) {
        throw ConfigError("config algorithms: duplicate label '" + label_of(a) +
                          "' (set distinct \"label\" fields)");
      }
    }
  }

  {
    detail::ConfigReader r(top.at("run"), "run");
    auto& run = cfg.run;
    if (r.has("max_rounds")) run.max_rounds = r.integer("max_rounds", 0);
    if (r.has("target_rel_dist_sq")) {
      run.target_rel_dist_sq = r.number("target_rel_dist_sq", 0.0);
      if (!(*run.target_rel_dist_sq >= 0.0)) {
        throw ConfigError("config run.target_rel_dist_sq: must be nonnegative");
      }
    }
    if (!run.max_rounds && !run.target_rel_dist_sq) {
      throw ConfigError("config run: set max_rounds, target_rel_dist_sq, or both");
    }
    if (r.has("seeds")) {
      const json& seeds = r.at("seeds");
      if (!seeds.is_array() || seeds.empty()) {
        throw ConfigError("config run.seeds: expected a non-empty array of integers");
      }
      run.seeds.clear();
      for (const auto& s : seeds) {
        if (!s.is_number_unsigned()) throw ConfigError("config run.seeds: expected nonnegative integers");
        run.seeds.push_back(s.get<std::uint64_t>());
      }
    }
    run.log_every = r.integer("log_every", run.log_every);
    if (run.log_every == 0) throw ConfigError("config run.log_every: must be positive");
    run.lyapunov = r.boolean("lyapunov", run.lyapunov);
    if (r.has("report_targets")) {
      const json& t = r.at("report_targets");
      if (!t.is_array()) throw ConfigError("config run.report_targets: expected an array");
      run.report_targets.clear();
      for (const auto& v : t) {
        if (!v.is_number() || !(v.get<double>() > 0.0 && v.get<double>() < 1.0)) {
          throw ConfigError("config run.report_targets: values must lie in (0, 1)");
        }
        run.report_targets.push_back(v.get<double>());
      }
    }
    r.reject_unknown();
  }

  if (top.has("output")) {
    detail::ConfigReader r(top.at("output"), "output");
    cfg.output.directory = r.string("directory", cfg.output.directory);
    cfg.output.emit_svg = r.boolean("emit_svg", cfg.output.emit_svg);
    r.reject_unknown();
  }

  if (top.has("sweep")) {
    detail::ConfigReader r(top.at("sweep"), "sweep");
    const json& s = r.at("sigmas");
    if (!s.is_array()) throw ConfigError("config sweep.sigmas: expected an array");
    for (const auto& v : s) {
      if (!v.is_number() || !(v.get<double>() >= 0.0)) {
        throw ConfigError("config sweep.sigmas: values must be nonnegative numbers");
      }
      cfg.sweep_sigmas.push_back(v.get<double>());
    }
    r.reject_unknown();
  }

  top.reject_unknown();
  return cfg;
}

/// Parses JSON text; syntax errors report line and column.
inline ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(root);
}

inline json to_json(const ExperimentConfig& cfg) {
  json out;
  const auto& p = cfg.problem;
  out["problem"] = {{"type", p.type},           {"M", p.devices},   {"d", p.dim},
                    {"target_norm_A", p.target_norm_A}, {"sigma", p.sigma},
                    {"lambda", p.lambda},       {"mu", p.mu},       {"L", p.lipschitz},
                    {"seed", p.seed},           {"composite", detail::composite_to_json(p.composite)}};
  json algs = json::array();
  for (const auto& a : cfg.algorithms) {
    json j;
    j["name"] = to_string(a.algorithm);
    if (!a.label.empty()) j["label"] = a.label;
    j["compressor"] = to_string(a.compressor);
    j["gamma"] = a.gamma ? json(*a.gamma) : json("auto");
    j["eta"] = a.eta ? json(*a.eta) : json("auto");
    j["alpha"] = a.alpha;
    algs.push_back(std::move(j));
  }
  out["algorithms"] = std::move(algs);
  json run;
  if (cfg.run.max_rounds) run["max_rounds"] = *cfg.run.max_rounds;
  if (cfg.run.target_rel_dist_sq) run["target_rel_dist_sq"] = *cfg.run.target_rel_dist_sq;
  run["seeds"] = cfg.run.seeds;
  run["log_every"] = cfg.run.log_every;
  run["lyapunov"] = cfg.run.lyapunov;
  run["report_targets"] = cfg.run.report_targets;
  out["run"] = std::move(run);
  out["output"] = {{"directory", cfg.output.directory}, {"emit_svg", cfg.output.emit_svg}};
  if (!cfg.sweep_sigmas.empty()) out["sweep"] = {{"sigmas", cfg.sweep_sigmas}};
  return out;
}

/// Overrides the base seed: the problem seed becomes `seed` and the run
/// seeds become seed, seed+1, ... (keeping their count).
inline void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.problem.seed = seed;
  for (std::size_t i = 0; i < cfg.run.seeds.size(); ++i) cfg.run.seeds[i] = seed + i;
}

/// Named presets for the three-regime bilinear comparison (M = 10, d = 100,
/// ||A||_2 = 100, sigma in {1, 10, 100}).
///
///   paper-fig1-{small,medium,big}: lambda = ||A||_2 / 1e5 (slow)
///   desk-fig1-{small,medium,big}:  lambda = ||A||_2 / 100
///   paper-fig1, desk-fig1:         same, with all three sigmas as a sweep
///
/// lambda_scale, when given, sets lambda = ||A||_2 * lambda_scale.
inline ExperimentConfig preset(const std::string& name,
                               std::optional<double> lambda_scale = std::nullopt) {
  ExperimentConfig cfg;
  std::string family = name;
  std::optional<double> sigma;
  for (const auto& [suffix, value] :
       {std::pair{"-small", 1.0}, std::pair{"-medium", 10.0}, std::pair{"-big", 100.0}}) {
    const std::string s = suffix;
    if (family.size() > s.size() && family.ends_with(s)) {
      family.resize(family.size() - s.size());
      sigma = value;
      break;
    }
  }
  double scale = 0.0;
  if (family == "paper-fig1") {
    scale = 1e-5;
  } else if (family == "desk-fig1") {
    scale = 1e-2;
  } else {
    throw ConfigError("unknown preset '" + name +
                      "' (expected paper-fig1[-small|-medium|-big] or desk-fig1[-small|-medium|-big])");
  }
  if (lambda_scale) {
    if (!(*lambda_scale > 0.0)) throw ConfigError("--lambda-scale must be positive");
    scale = *lambda_scale;
  }
  auto& p = cfg.problem;
  p.type = "bilinear";
  p.devices = 10;
  p.dim = 100;
  p.target_norm_A = 100.0;
  p.sigma = sigma.value_or(1.0);
  p.lambda = p.target_norm_A * scale;
  p.seed = 1;

  AlgorithmSpec om;
  om.algorithm = Algorithm::OptimisticMasha;
  AlgorithmSpec eg;
  eg.algorithm = Algorithm::ExtraGradient;
  cfg.algorithms = {om, eg};

  cfg.run.target_rel_dist_sq = 1e-4;
  cfg.run.max_rounds = family == "paper-fig1" ? 5000000 : 1000000;
  cfg.run.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  cfg.run.log_every = 10;
  cfg.run.lyapunov = false;
  cfg.run.report_targets = {1e-2, 1e-3, 1e-4};
  cfg.output.directory = "out/" + name;
  if (!sigma) cfg.sweep_sigmas = {1.0, 10.0, 100.0};
  return cfg;
}

}  // namespace vicomm
