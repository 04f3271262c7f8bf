#pragma once

// Result tables (CSV) and the plots derived from them (SVG). The CSV files are
// the canonical output; every plot is drawn from the same in-memory series.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "factordiff/backtest.hpp"
#include "factordiff/csv.hpp"

namespace factordiff::report {

// ---------------------------------------------------------------------------
// CSV

inline std::string optional_number(const std::optional<double>& v) {
  return v ? csv::format_double(*v) : std::string("NA");
}

/// month,strategy,realized_return,cumulative
inline std::string backtest_csv(const BacktestResult& r) {
  std::string out = "month,strategy,realized_return,cumulative\n";
  for (std::size_t t = 0; t < r.months.size(); ++t)
    for (auto s : kStrategies) {
      const auto ti = static_cast<Eigen::Index>(t);
      out += r.months[t] + "," + std::string(strategy_name(s)) + "," + csv::format_double(r[s].realized[ti]) + "," +
             csv::format_double(r[s].cumulative[ti]) + "\n";
    }
  return out;
}

/// month x asset weight matrix for one strategy.
inline std::string weights_csv(const BacktestResult& r, StrategyId s) {
  std::string out = "month";
  for (const auto& a : r.assets) out += "," + csv::quote_if_needed(a);
  out += "\n";
  const auto& w = r[s].weights;
  for (Eigen::Index t = 0; t < w.rows(); ++t) {
    out += r.months[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < w.cols(); ++i) out += "," + csv::format_double(w(t, i));
    out += "\n";
  }
  return out;
}

/// strategy,mean_return,volatility,sharpe_annualized,mean_hhi,converged
inline std::string metrics_csv(const BacktestResult& r) {
  std::string out = "strategy,mean_return,volatility,sharpe_annualized,mean_hhi,converged\n";
  for (auto s : kStrategies) {
    const auto& m = r[s].metrics;
    out += std::string(strategy_name(s)) + "," + csv::format_double(m.mean_return) + "," +
           csv::format_double(m.volatility) + "," + optional_number(m.sharpe_annualized) + "," +
           csv::format_double(mean_hhi(r[s])) + "," + (r.all_converged(s) ? "1" : "0") + "\n";
  }
  return out;
}

/// epoch,mean_loss with epochs counted from 1.
inline std::string loss_curve_csv(const std::vector<double>& curve) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) out += std::to_string(e + 1) + "," + csv::format_double(curve[e]) + "\n";
  return out;
}

/// k,seed,mean_return,volatility,sharpe_annualized,mean_hhi,converged_flag,status
/// Failed cells keep their row with NA metrics and the error in `status`.
inline std::string ablation_csv(const AblationResult& r) {
  std::string out = "k,seed,mean_return,volatility,sharpe_annualized,mean_hhi,converged_flag,status\n";
  for (const auto& e : r.entries) {
    out += std::to_string(e.k) + "," + std::to_string(e.seed) + ",";
    if (e.ok) {
      const auto& m = e.result[StrategyId::DiffusionMVO].metrics;
      out += csv::format_double(m.mean_return) + "," + csv::format_double(m.volatility) + "," +
             optional_number(m.sharpe_annualized) + "," + csv::format_double(e.mean_hhi) + "," +
             (e.converged ? "1" : "0") + ",ok\n";
    } else {
      out += "NA,NA,NA,NA,0," + csv::quote_if_needed("failed: " + e.error) + "\n";
    }
  }
  return out;
}

/// Writes backtest.csv, metrics.csv and weights_<strategy>.csv into `dir`.
inline void write_backtest_tables(const BacktestResult& r, const std::filesystem::path& dir) {
  csv::write_file(dir / "backtest.csv", backtest_csv(r));
  csv::write_file(dir / "metrics.csv", metrics_csv(r));
  for (auto s : kStrategies)
    csv::write_file(dir / ("weights_" + std::string(strategy_name(s)) + ".csv"), weights_csv(r, s));
}

// ---------------------------------------------------------------------------
// SVG

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* strategy_color(StrategyId s) {
  switch (s) {
    case StrategyId::DiffusionMVO: return "#d62728";
    case StrategyId::EW: return "#1f77b4";
    case StrategyId::Emp: return "#2ca02c";
    case StrategyId::ShrEmp: return "#9467bd";
  }
  return "#000000";
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

/// Axes box with ticks at min/mid/max, polylines and a legend.
inline std::string line_panel(const std::vector<Series>& series, double left, double top, double width, double height,
                              const std::string& title, const std::string& x_label,
                              const std::vector<std::string>& x_names = {}) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5 * std::max(1e-6, std::abs(ymin)), ymax += 0.5 * std::max(1e-6, std::abs(ymax));
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * width; };
  auto py = [&](double y) { return top + height - (y - ymin) / (ymax - ymin) * height; };

  std::string out;
  out += "<text x=\"" + fmt(left + width / 2) + "\" y=\"" + fmt(top - 12) +
         "\" text-anchor=\"middle\" font-size=\"14\">" + escape_xml(title) + "</text>\n";
  out += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(width) + "\" height=\"" + fmt(height) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (double f : {0.0, 0.5, 1.0}) {
    const double yv = ymin + f * (ymax - ymin);
    out += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"10\">" +
           tick(yv) + "</text>\n";
    const double xv = xmin + f * (xmax - xmin);
    std::string xl = tick(xv);
    if (!x_names.empty()) {
      const auto idx = static_cast<std::size_t>(std::lround(xv));
      if (idx < x_names.size()) xl = x_names[idx];
    }
    out += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(top + height + 14) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + escape_xml(xl) + "</text>\n";
  }
  out += "<text x=\"" + fmt(left + width / 2) + "\" y=\"" + fmt(top + height + 30) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + escape_xml(x_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += fmt(px(s.x[i])) + "," + fmt(py(s.y[i]));
    }
    out += "<polyline class=\"series\" data-label=\"" + escape_xml(s.label) + "\" fill=\"none\" stroke=\"" + s.color +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = top + 14 + 14 * static_cast<double>(k);
    out += "<line x1=\"" + fmt(left + 8) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" + fmt(left + 24) + "\" y2=\"" +
           fmt(ly - 4) + "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(left + 28) + "\" y=\"" + fmt(ly) + "\" font-size=\"10\">" + escape_xml(s.label) +
           "</text>\n";
  }
  return out;
}

inline std::string svg_document(double width, double height, const std::string& body) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) +
         "\" height=\"" + fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) +
         "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body + "</svg>\n";
}

/// Cumulative wealth of the four strategies over the test months.
inline std::string cumulative_svg(const BacktestResult& r, const std::string& title = "Cumulative wealth") {
  std::vector<Series> series;
  for (auto s : kStrategies) {
    Series sr{std::string(strategy_name(s)), strategy_color(s), {}, {}};
    // Wealth starts at 1 before the first test month.
    sr.x.push_back(0.0);
    sr.y.push_back(1.0);
    for (Eigen::Index t = 0; t < r[s].cumulative.size(); ++t) {
      sr.x.push_back(static_cast<double>(t + 1));
      sr.y.push_back(r[s].cumulative[t]);
    }
    series.push_back(std::move(sr));
  }
  std::vector<std::string> names{"start"};
  names.insert(names.end(), r.months.begin(), r.months.end());
  return svg_document(720, 420, line_panel(series, 70, 40, 620, 320, title, "month", names));
}

/// Diffusion-strategy weights of the top min(25, N) assets (rows) over the test months (columns).
inline std::string heatmap_svg(const BacktestResult& r, StrategyId strategy = StrategyId::DiffusionMVO,
                               const std::string& title = "Weights heatmap") {
  const int n = std::min<int>(25, static_cast<int>(r.assets.size()));
  const auto top = top_assets_by_average_allocation(r, strategy, n);
  const auto& w = r[strategy].weights;
  const double cell_w = std::max(4.0, std::min(24.0, 600.0 / std::max<double>(1.0, static_cast<double>(w.rows()))));
  const double cell_h = 14.0;
  const double left = 90, top_y = 40;
  double wmax = w.size() ? w.maxCoeff() : 1.0;
  if (!(wmax > 0.0)) wmax = 1.0;
  std::string body;
  body += "<text x=\"" + fmt(left) + "\" y=\"24\" font-size=\"14\">" + escape_xml(title) + " (max weight " +
          tick(wmax) + ")</text>\n";
  for (int row = 0; row < n; ++row) {
    const auto& asset = top[static_cast<std::size_t>(row)];
    const auto col = static_cast<Eigen::Index>(
        std::find(r.assets.begin(), r.assets.end(), asset) - r.assets.begin());
    const double y = top_y + cell_h * row;
    body += "<text class=\"row-label\" x=\"" + fmt(left - 4) + "\" y=\"" + fmt(y + cell_h - 3) +
            "\" text-anchor=\"end\" font-size=\"10\">" + escape_xml(asset) + "</text>\n";
    for (Eigen::Index t = 0; t < w.rows(); ++t) {
      const double v = std::clamp(w(t, col) / wmax, 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      body += "<rect x=\"" + fmt(left + cell_w * static_cast<double>(t)) + "\" y=\"" + fmt(y) + "\" width=\"" +
              fmt(cell_w) + "\" height=\"" + fmt(cell_h) + "\" fill=\"" + color + "\"/>\n";
    }
  }
  const double bottom = top_y + cell_h * n;
  if (!r.months.empty()) {
    body += "<text x=\"" + fmt(left) + "\" y=\"" + fmt(bottom + 14) + "\" font-size=\"10\">" +
            escape_xml(r.months.front()) + "</text>\n";
    body += "<text x=\"" + fmt(left + cell_w * static_cast<double>(w.rows())) + "\" y=\"" + fmt(bottom + 14) +
            "\" text-anchor=\"end\" font-size=\"10\">" + escape_xml(r.months.back()) + "</text>\n";
  }
  const double width = left + cell_w * static_cast<double>(w.rows()) + 30;
  return svg_document(std::max(320.0, width), bottom + 30, body);
}

/// Seed-averaged Sharpe ratio and mean HHI of the diffusion strategy against k.
inline std::string ablation_summary_svg(const AblationResult& r) {
  std::map<int, std::pair<double, int>> sharpe, conc;
  for (const auto& e : r.entries) {
    if (!e.ok) continue;
    if (auto s = e.result[StrategyId::DiffusionMVO].metrics.sharpe_annualized) {
      sharpe[e.k].first += *s;
      sharpe[e.k].second += 1;
    }
    conc[e.k].first += e.mean_hhi;
    conc[e.k].second += 1;
  }
  auto to_series = [](const std::map<int, std::pair<double, int>>& m, const std::string& label, const char* color) {
    Series s{label, color, {}, {}};
    for (const auto& [k, v] : m) {
      s.x.push_back(k);
      s.y.push_back(v.first / v.second);
    }
    return s;
  };
  std::string body = line_panel({to_series(sharpe, "DiffusionMVO Sharpe", "#d62728")}, 70, 40, 300, 260,
                                "Annualized Sharpe vs k", "k");
  body += line_panel({to_series(conc, "DiffusionMVO mean HHI", "#1f77b4")}, 460, 40, 300, 260, "Mean HHI vs k", "k");
  return svg_document(800, 360, body);
}

}  // namespace factordiff::report
