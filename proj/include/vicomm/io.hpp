#pragma once

// CSV logs, instance files and atomic file output.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <json.hpp>

#include "vicomm/problems.hpp"
#include "vicomm/simulator.hpp"

namespace vicomm {

using json = nlohmann::json;

inline constexpr const char* kCsvHeader =
    "k,uplink_scalars,dist_sq,rel_dist_sq,lyapunov,sync,wall_time_ns";
inline constexpr unsigned kBitsPerScalar = 64;

/// 17 significant digits: enough to round-trip any double.
inline std::string format17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const RunMetrics& metrics, bool with_wall_time = true) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& r : metrics.rows) {
    out << r.k << ',' << r.uplink_scalars << ',' << format17(r.dist_sq) << ','
        << format17(r.rel_dist_sq) << ',' << format17(r.lyapunov) << ',' << (r.sync ? 1 : 0)
        << ',';
    if (with_wall_time) out << r.wall_time_ns;
    out << '\n';
  }
  return out.str();
}

/// Drops the last column of every line. Used to compare logs while ignoring
/// the wall-time column.
inline std::string strip_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.rfind(',');
    out << (pos == std::string::npos ? line : line.substr(0, pos)) << '\n';
  }
  return out.str();
}

/// Writes to a sibling temporary and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Instance files: a JSON document with row-major matrices. nlohmann/json
// prints doubles in shortest round-trip form, so loading reproduces the bits.

inline json to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vec vec_from_json(const json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n) throw ConfigError(where + ": expected array of " + std::to_string(n));
  Vec v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline Mat mat_from_json(const json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n) throw ConfigError(where + ": expected " + std::to_string(n) + " rows");
  Mat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Vec row = vec_from_json(j[i], n, where + "[" + std::to_string(i) + "]");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

inline json to_json(const BilinearInstance& inst) {
  json out;
  out["type"] = "bilinear";
  out["M"] = inst.devices;
  out["d"] = inst.dim;
  out["lambda"] = inst.lambda;
  out["sigma"] = inst.sigma;
  out["seed"] = inst.seed;
  json devices = json::array();
  for (std::size_t m = 0; m < inst.devices; ++m) {
    devices.push_back({{"A", to_json(inst.coupling[m])},
                       {"a", to_json(inst.shift_x[m])},
                       {"b", to_json(inst.shift_y[m])}});
  }
  out["devices"] = std::move(devices);
  return out;
}

inline json to_json(const QuadraticInstance& inst) {
  json out;
  out["type"] = "quadratic";
  out["M"] = inst.devices;
  out["d"] = inst.dim;
  out["seed"] = inst.seed;
  json devices = json::array();
  for (std::size_t m = 0; m < inst.devices; ++m) {
    devices.push_back({{"C", to_json(inst.hessian[m])}, {"c", to_json(inst.linear[m])}});
  }
  out["devices"] = std::move(devices);
  return out;
}

inline BilinearInstance bilinear_from_json(const json& j) {
  BilinearInstance inst;
  inst.devices = j.at("M").get<std::size_t>();
  inst.dim = j.at("d").get<std::size_t>();
  inst.lambda = j.at("lambda").get<double>();
  inst.sigma = j.value("sigma", 0.0);
  inst.seed = j.value("seed", std::uint64_t{0});
  const auto& devs = j.at("devices");
  if (devs.size() != inst.devices) throw ConfigError("instance: device block count mismatch");
  for (std::size_t m = 0; m < inst.devices; ++m) {
    const std::string where = "devices[" + std::to_string(m) + "]";
    inst.coupling.push_back(mat_from_json(devs[m].at("A"), inst.dim, where + ".A"));
    inst.shift_x.push_back(vec_from_json(devs[m].at("a"), inst.dim, where + ".a"));
    inst.shift_y.push_back(vec_from_json(devs[m].at("b"), inst.dim, where + ".b"));
  }
  inst.validate();
  return inst;
}

inline QuadraticInstance quadratic_from_json(const json& j) {
  QuadraticInstance inst;
  inst.devices = j.at("M").get<std::size_t>();
  inst.dim = j.at("d").get<std::size_t>();
  inst.seed = j.value("seed", std::uint64_t{0});
  const auto& devs = j.at("devices");
  if (devs.size() != inst.devices) throw ConfigError("instance: device block count mismatch");
  for (std::size_t m = 0; m < inst.devices; ++m) {
    const std::string where = "devices[" + std::to_string(m) + "]";
    inst.hessian.push_back(mat_from_json(devs[m].at("C"), inst.dim, where + ".C"));
    inst.linear.push_back(vec_from_json(devs[m].at("c"), inst.dim, where + ".c"));
  }
  inst.validate();
  return inst;
}

}  // namespace vicomm
