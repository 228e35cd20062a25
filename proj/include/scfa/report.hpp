#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scfa/checkpoint.hpp"
#include "scfa/image_io.hpp"

// Minimal plot rendering for the `report` command: aggregate bar charts and
// per-step loss curves as PNGs. No text rasterizer — each image gets a
// sidecar .json mapping bars/curves to their labels and values, which is
// also the machine-readable form.

namespace scfa {

namespace detail {

inline Tensor<float> plot_canvas(int h, int w) {
  Tensor<float> t(h, w, 3);
  t.m.setConstant(1.0f);
  return t;
}

inline void fill_rect(Tensor<float>& t, int y0, int y1, int x0, int x1,
                      const std::array<float, 3>& rgb) {
  y0 = std::max(y0, 0);
  x0 = std::max(x0, 0);
  y1 = std::min(y1, t.h);
  x1 = std::min(x1, t.w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) t.at(y, x, c) = rgb[c];
}

inline std::array<float, 3> series_color(std::size_t i) {
  static const std::array<std::array<float, 3>, 6> palette{{{0.85f, 0.33f, 0.1f},
                                                            {0.0f, 0.45f, 0.74f},
                                                            {0.47f, 0.67f, 0.19f},
                                                            {0.49f, 0.18f, 0.56f},
                                                            {0.93f, 0.69f, 0.13f},
                                                            {0.3f, 0.75f, 0.93f}}};
  return palette[i % palette.size()];
}

}  // namespace detail

/// Horizontal-axis bar chart of labeled nonnegative-or-mixed values. Bars are
/// scaled to the largest |value|; negative bars hang below the baseline.
inline void render_bar_chart(const std::vector<std::pair<std::string, double>>& values,
                             const std::filesystem::path& png_path) {
  if (values.empty()) throw Error("render_bar_chart: no values");
  const int bar_w = 24, gap = 8, h = 160, margin = 12;
  const int w = margin * 2 + int(values.size()) * (bar_w + gap) - gap;
  Tensor<float> canvas = detail::plot_canvas(h, w);

  double peak = 0;
  for (const auto& [_, v] : values) peak = std::max(peak, std::abs(v));
  if (peak == 0) peak = 1;
  const int base = h - margin, top = margin;
  const int span = base - top;

  nlohmann::json legend = nlohmann::json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& [label, v] = values[i];
    const int x0 = margin + int(i) * (bar_w + gap);
    const int len = int(std::lround(std::abs(v) / peak * span));
    detail::fill_rect(canvas, base - len, base, x0, x0 + bar_w, detail::series_color(i));
    legend.push_back({{"label", label}, {"value", v}, {"bar", int(i)}});
  }
  detail::fill_rect(canvas, base, base + 2, margin / 2, w - margin / 2, {0.2f, 0.2f, 0.2f});

  save_image(png_path, Image<float>(canvas, Space::metric));
  std::filesystem::path sidecar = png_path;
  sidecar.replace_extension(".json");
  save_json(sidecar, {{"kind", "bar_chart"}, {"bars", legend}});
}

/// Polyline chart of one or more equally-long series (e.g. per-step losses),
/// each auto-scaled into a shared vertical range.
inline void render_line_chart(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                              const std::filesystem::path& png_path) {
  if (series.empty()) throw Error("render_line_chart: no series");
  std::size_t n = 0;
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& [_, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys) {
      lo = first ? y : std::min(lo, y);
      hi = first ? y : std::max(hi, y);
      first = false;
    }
  }
  if (n < 2) throw Error("render_line_chart: series need at least two points");
  if (hi == lo) hi = lo + 1;

  const int h = 160, margin = 10;
  const int w = std::max(200, std::min(1024, int(n) + 2 * margin));
  Tensor<float> canvas = detail::plot_canvas(h, w);
  const int span_y = h - 2 * margin, span_x = w - 2 * margin;

  nlohmann::json legend = nlohmann::json::array();
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& [label, ys] = series[s];
    const auto color = detail::series_color(s);
    int prev_y = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const int x = margin + int(double(i) / double(n - 1) * span_x);
      const int y = margin + int(std::lround((hi - ys[i]) / (hi - lo) * span_y));
      const int y0 = i == 0 ? y : std::min(prev_y, y), y1 = i == 0 ? y : std::max(prev_y, y);
      detail::fill_rect(canvas, y0, y1 + 1, x, x + 1, color);
      prev_y = y;
    }
    legend.push_back({{"label", label}, {"series", int(s)}, {"points", int(ys.size())}});
  }
  save_image(png_path, Image<float>(canvas, Space::metric));
  std::filesystem::path sidecar = png_path;
  sidecar.replace_extension(".json");
  save_json(sidecar, {{"kind", "line_chart"}, {"min", lo}, {"max", hi}, {"series", legend}});
}

/// Pulls one numeric key per line out of a JSONL training log.
inline std::vector<double> log_series(const std::filesystem::path& jsonl, const std::string& key) {
  std::ifstream in(jsonl);
  if (!in) throw Error("log_series: cannot open " + jsonl.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains(key) && j[key].is_number()) out.push_back(j[key].get<double>());
  }
  return out;
}

/// Renders the standard artifacts for one run directory (report.json +
/// train_log.jsonl): an aggregate bar chart and a loss-curve chart.
inline void render_run_report(const std::filesystem::path& run_dir,
                              const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const nlohmann::json report = load_json(run_dir / "report.json");
  std::vector<std::pair<std::string, double>> aggregates;
  for (const auto& [key, value] : report.at("aggregates").items())
    if (value.is_number()) aggregates.emplace_back(key, value.get<double>());
  render_bar_chart(aggregates, out_dir / "aggregates.png");

  std::vector<std::pair<std::string, std::vector<double>>> curves;
  for (const std::string key : {"composite", "disc"}) {
    std::vector<double> ys = log_series(run_dir / "train_log.jsonl", key);
    if (ys.size() >= 2) curves.emplace_back(key, std::move(ys));
  }
  if (!curves.empty()) render_line_chart(curves, out_dir / "loss_curves.png");
}

}  // namespace scfa
