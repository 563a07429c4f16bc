#pragma once

// Per-evaluation metrics files and their aggregation across seeds.
//
// Metrics file (one per run), comma separated with a header row:
//   env_steps,success_rate,mean_bc_loss,mean_filter_fraction,mean_critic_loss,mean_actor_loss
// Wall-clock time is kept out of it so identical runs give identical bytes;
// it goes to a sibling "<stem>.timing.csv" with columns env_steps,wall_seconds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qguide/config.hpp"
#include "qguide/errors.hpp"

namespace qguide {

struct MetricsRow {
  std::int64_t env_steps = 0;
  double success_rate = 0.0;
  double mean_bc_loss = 0.0;
  double mean_filter_fraction = 0.0;
  double mean_critic_loss = 0.0;
  double mean_actor_loss = 0.0;
  double wall_seconds = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader =
    "env_steps,success_rate,mean_bc_loss,mean_filter_fraction,mean_critic_loss,mean_actor_loss";

inline std::filesystem::path timing_path(const std::filesystem::path& metrics) {
  auto p = metrics;
  p.replace_extension(".timing.csv");
  return p;
}

/// Append-only writer; every row is flushed as soon as it is written.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    timing_.open(timing_path(path), std::ios::trunc);
    if (!out_ || !timing_) throw ConfigError("cannot write metrics file " + path.string());
    out_ << kMetricsHeader << '\n';
    timing_ << "env_steps,wall_seconds\n";
    out_.flush();
    timing_.flush();
  }

  void append(const MetricsRow& r) {
    if (r.env_steps <= last_steps_) throw ConfigError("metrics rows must have increasing env_steps");
    last_steps_ = r.env_steps;
    using detail::format_double;
    out_ << r.env_steps << ',' << format_double(r.success_rate) << ',' << format_double(r.mean_bc_loss)
         << ',' << format_double(r.mean_filter_fraction) << ',' << format_double(r.mean_critic_loss)
         << ',' << format_double(r.mean_actor_loss) << '\n';
    timing_ << r.env_steps << ',' << format_double(r.wall_seconds) << '\n';
    out_.flush();
    timing_.flush();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_, timing_;
  std::int64_t last_steps_ = -1;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}
}  // namespace detail

/// Reads a metrics file (and its timing sidecar when present).
inline std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader)
    throw ConfigError(path.string() + ": missing or unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 6) throw ConfigError(path.string() + ": malformed metrics row");
    MetricsRow r;
    r.env_steps = detail::parse_int<std::int64_t>("env_steps", cells[0]);
    r.success_rate = detail::parse_double("success_rate", cells[1]);
    r.mean_bc_loss = detail::parse_double("mean_bc_loss", cells[2]);
    r.mean_filter_fraction = detail::parse_double("mean_filter_fraction", cells[3]);
    r.mean_critic_loss = detail::parse_double("mean_critic_loss", cells[4]);
    r.mean_actor_loss = detail::parse_double("mean_actor_loss", cells[5]);
    rows.push_back(r);
  }
  std::ifstream timing(timing_path(path));
  if (timing) {
    std::map<std::int64_t, double> wall;
    std::getline(timing, line);
    while (std::getline(timing, line)) {
      const auto cells = detail::split_csv_line(line);
      if (cells.size() == 2)
        wall[detail::parse_int<std::int64_t>("env_steps", cells[0])] = detail::parse_double("wall_seconds", cells[1]);
    }
    for (auto& r : rows)
      if (auto it = wall.find(r.env_steps); it != wall.end()) r.wall_seconds = it->second;
  }
  return rows;
}

// ---------------------------------------------------------------------------

inline constexpr int kMetricCount = 5;
inline constexpr const char* kMetricNames[kMetricCount] = {
    "success_rate", "mean_bc_loss", "mean_filter_fraction", "mean_critic_loss", "mean_actor_loss"};

inline double metric_value(const MetricsRow& r, int k) {
  switch (k) {
    case 0: return r.success_rate;
    case 1: return r.mean_bc_loss;
    case 2: return r.mean_filter_fraction;
    case 3: return r.mean_critic_loss;
    default: return r.mean_actor_loss;
  }
}

struct CurvePoint {
  std::int64_t env_steps = 0;
  double mean[kMetricCount] = {};
  double stddev[kMetricCount] = {};  // sample standard deviation, 0 for one seed
};

struct AggregateCurve {
  std::string env;
  std::string variant;
  int seed_count = 0;
  std::vector<CurvePoint> points;
};

/// Per-point mean and sample standard deviation (n - 1 denominator) across
/// runs that share the same evaluation grid.
inline AggregateCurve aggregate_seeds(const std::vector<std::vector<MetricsRow>>& runs) {
  if (runs.empty()) throw ConfigError("aggregate_seeds needs at least one run");
  const auto& grid = runs.front();
  for (const auto& r : runs) {
    if (r.size() != grid.size()) throw ConfigError("runs have different numbers of evaluation points");
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i].env_steps != grid[i].env_steps) throw ConfigError("runs have misaligned evaluation grids");
  }
  AggregateCurve curve;
  curve.seed_count = static_cast<int>(runs.size());
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CurvePoint p;
    p.env_steps = grid[i].env_steps;
    for (int k = 0; k < kMetricCount; ++k) {
      // Sort so the result does not depend on file order.
      std::vector<double> vals;
      for (const auto& r : runs) vals.push_back(metric_value(r[i], k));
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double v : vals) sum += v;
      const double mean = sum / n;
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      p.mean[k] = mean;
      p.stddev[k] = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    curve.points.push_back(p);
  }
  return curve;
}

inline AggregateCurve aggregate_seed_files(const std::vector<std::filesystem::path>& files) {
  std::vector<std::vector<MetricsRow>> runs;
  for (const auto& f : files) runs.push_back(read_metrics(f));
  return aggregate_seeds(runs);
}

inline void write_curve(const std::filesystem::path& path, const AggregateCurve& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write curve " + path.string());
  out << "# env=" << c.env << "\n# variant=" << c.variant << "\n# seeds=" << c.seed_count << "\n";
  out << "env_steps";
  for (const char* name : kMetricNames) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (const auto& p : c.points) {
    out << p.env_steps;
    for (int k = 0; k < kMetricCount; ++k)
      out << ',' << detail::format_double(p.mean[k]) << ',' << detail::format_double(p.stddev[k]);
    out << '\n';
  }
}

inline AggregateCurve read_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open curve " + path.string());
  AggregateCurve c;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = detail::trim(line.substr(1, eq - 1)), value = detail::trim(line.substr(eq + 1));
      if (key == "env") c.env = value;
      else if (key == "variant") c.variant = value;
      else if (key == "seeds") c.seed_count = detail::parse_int<int>("seeds", value);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 1 + 2 * kMetricCount) throw ConfigError(path.string() + ": malformed curve row");
    CurvePoint p;
    p.env_steps = detail::parse_int<std::int64_t>("env_steps", cells[0]);
    for (int k = 0; k < kMetricCount; ++k) {
      p.mean[k] = detail::parse_double("mean", cells[1 + 2 * k]);
      p.stddev[k] = detail::parse_double("std", cells[2 + 2 * k]);
    }
    c.points.push_back(p);
  }
  return c;
}

}  // namespace qguide
