#pragma once

// SVG learning-curve panels: success rate, BC loss and filter-pass fraction
// per environment, one series per guidance variant, mean line with a
// +/- one standard deviation band.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qguide/metrics.hpp"

namespace qguide {

struct PlotPanel {
  int metric;  // index into kMetricNames
  const char* file_suffix;
  const char* title;
};

inline constexpr PlotPanel kPlotPanels[] = {
    {0, "success_rate", "Success rate on test set"},
    {1, "bc_loss", "BC loss"},
    {2, "filter_fraction", "Filter-pass fraction"},
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

inline std::string render_panel(const std::string& env, const PlotPanel& panel,
                                const std::vector<const AggregateCurve*>& series) {
  constexpr double W = 640, H = 400, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmax = 1.0, ymin = 0.0, ymax = panel.metric == 1 ? 1e-9 : 1.0;
  for (const auto* c : series)
    for (const auto& p : c->points) {
      xmax = std::max(xmax, static_cast<double>(p.env_steps));
      ymax = std::max(ymax, p.mean[panel.metric] + p.stddev[panel.metric]);
      ymin = std::min(ymin, p.mean[panel.metric] - p.stddev[panel.metric]);
    }
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  auto sx = [&](double x) { return left + pw * x / xmax; };
  auto sy = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::ostringstream s;
  s.precision(6);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
    << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "  <text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
    << xml_escape(env + ": " + panel.title) << "</text>\n"
    << "  <line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
    << top + ph << "\" stroke=\"black\"/>\n"
    << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0, xv = xmax * i / 4.0;
    s << "  <text x=\"" << left - 8 << "\" y=\"" << sy(yv) + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << yv << "</text>\n"
      << "  <text x=\"" << sx(xv) << "\" y=\"" << top + ph + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << xv << "</text>\n";
  }
  s << "  <text x=\"" << left + pw / 2 << "\" y=\"" << H - 10
    << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">environment steps</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& c = *series[k];
    const char* color = series_color(k);
    if (!c.points.empty()) {
      s << "  <polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : c.points)
        s << sx(p.env_steps) << ',' << sy(p.mean[panel.metric] + p.stddev[panel.metric]) << ' ';
      for (auto it = c.points.rbegin(); it != c.points.rend(); ++it)
        s << sx(it->env_steps) << ',' << sy(it->mean[panel.metric] - it->stddev[panel.metric]) << ' ';
      s << "\"/>\n  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& p : c.points) s << sx(p.env_steps) << ',' << sy(p.mean[panel.metric]) << ' ';
      s << "\"/>\n";
    }
    const double ly = top + 16 + 20 * k;
    s << "  <line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "  <text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(c.variant) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace detail

/// Writes <env>_<panel>.svg for every environment present in `curves`.
inline std::vector<std::filesystem::path> emit_plots(const std::vector<AggregateCurve>& curves,
                                                     const std::filesystem::path& out_dir) {
  if (curves.empty()) throw ConfigError("no curves to plot");
  std::map<std::string, std::vector<const AggregateCurve*>> by_env;
  for (const auto& c : curves) by_env[c.env].push_back(&c);
  for (auto& [env, list] : by_env)
    std::sort(list.begin(), list.end(), [](const auto* a, const auto* b) { return a->variant < b->variant; });

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [env, list] : by_env) {
    for (const auto& panel : kPlotPanels) {
      const auto path = out_dir / (env + "_" + panel.file_suffix + ".svg");
      std::ofstream out(path, std::ios::trunc);
      if (!out) throw ConfigError("cannot write plot " + path.string());
      out << detail::render_panel(env, panel, list);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace qguide
