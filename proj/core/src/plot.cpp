#include "growth/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace growth::plot {

using nlohmann::json;

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* palette(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double nice_step(double range) {
  const double raw = range / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

std::vector<double> years(const json& months) {
  std::vector<double> out;
  for (const auto& m : months) out.push_back(m.get<double>() / 12.0);
  return out;
}

std::vector<double> values(const json& arr) {
  std::vector<double> out;
  for (const auto& v : arr) {
    out.push_back(v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

Chart cluster_chart(const std::string& title, const json& grid, const json& clusters) {
  Chart c;
  c.title = title;
  const auto x = years(grid);
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    const auto& cl = clusters[k];
    c.areas.push_back({x, values(cl["lower95"]), values(cl["upper95"]), palette(k), 0.15});
    char label[64];
    std::snprintf(label, sizeof(label), "cluster %zu (%.0f%%)", k + 1,
                  100.0 * cl["weight"].get<double>());
    Line l{x, values(cl["mean"]), palette(k), 2.0, 1.0, false, label};
    c.lines.push_back(std::move(l));
  }
  return c;
}

}  // namespace

std::string render_svg(const Chart& chart) {
  const double w = chart.width, h = chart.height;
  const double left = 60, right = 20, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto extend_x = [&](double v) {
    if (std::isfinite(v)) { x0 = std::min(x0, v); x1 = std::max(x1, v); }
  };
  auto extend_y = [&](double v) {
    if (std::isfinite(v)) { y0 = std::min(y0, v); y1 = std::max(y1, v); }
  };
  for (const auto& a : chart.areas) {
    for (double v : a.x) extend_x(v);
    for (double v : a.lower) extend_y(v);
    for (double v : a.upper) extend_y(v);
  }
  for (const auto& l : chart.lines) {
    for (double v : l.x) extend_x(v);
    for (double v : l.y) extend_y(v);
  }
  if (chart.hline) extend_y(*chart.hline);
  if (!std::isfinite(x0)) { x0 = 0; x1 = 10; }
  if (!std::isfinite(y0)) { y0 = 0; y1 = 1; }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * (w - left - right); };
  auto sy = [&](double v) { return h - bottom - (v - y0) / (y1 - y0) * (h - top - bottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
     << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\" font-family=\"sans-serif\" "
     << "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(chart.title) << "</text>\n";

  // Axes and ticks.
  os << "<g stroke=\"#444\" fill=\"none\"><line x1=\"" << num(left) << "\" y1=\"" << num(h - bottom)
     << "\" x2=\"" << num(w - right) << "\" y2=\"" << num(h - bottom) << "\"/><line x1=\""
     << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
     << num(h - bottom) << "\"/></g>\n";
  const double xs = nice_step(x1 - x0), ys = nice_step(y1 - y0);
  os << "<g fill=\"#444\">\n";
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9; t += xs) {
    os << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(h - bottom + 15)
       << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9; t += ys) {
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(t) + 4)
       << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
  }
  os << "<text x=\"" << num((left + w - right) / 2) << "\" y=\"" << num(h - 12)
     << "\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";
  os << "<text transform=\"translate(16 " << num((top + h - bottom) / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(chart.y_label) << "</text>\n</g>\n";

  for (const auto& a : chart.areas) {
    if (a.x.empty()) continue;
    os << "<polygon fill=\"" << a.color << "\" fill-opacity=\"" << num(a.opacity)
       << "\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < a.x.size(); ++i) os << num(sx(a.x[i])) << ',' << num(sy(a.upper[i])) << ' ';
    for (std::size_t i = a.x.size(); i-- > 0;) os << num(sx(a.x[i])) << ',' << num(sy(a.lower[i])) << ' ';
    os << "\"/>\n";
  }
  for (const auto& l : chart.lines) {
    if (l.markers) {
      os << "<g fill=\"" << l.color << "\" fill-opacity=\"" << num(l.opacity) << "\">";
      for (std::size_t i = 0; i < l.x.size(); ++i) {
        if (!std::isfinite(l.y[i])) continue;
        os << "<circle cx=\"" << num(sx(l.x[i])) << "\" cy=\"" << num(sy(l.y[i])) << "\" r=\"3\"/>";
      }
      os << "</g>\n";
    } else {
      os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"" << num(l.width)
         << "\" stroke-opacity=\"" << num(l.opacity) << "\" points=\"";
      for (std::size_t i = 0; i < l.x.size(); ++i) {
        if (std::isfinite(l.y[i])) os << num(sx(l.x[i])) << ',' << num(sy(l.y[i])) << ' ';
      }
      os << "\"/>\n";
    }
  }
  if (chart.hline) {
    os << "<line x1=\"" << num(left) << "\" x2=\"" << num(w - right) << "\" y1=\""
       << num(sy(*chart.hline)) << "\" y2=\"" << num(sy(*chart.hline))
       << "\" stroke=\"#d62728\" stroke-dasharray=\"6 4\"/>\n";
  }
  // Legend for labelled lines.
  double ly = top + 8;
  for (const auto& l : chart.lines) {
    if (l.label.empty()) continue;
    os << "<rect x=\"" << num(w - right - 150) << "\" y=\"" << num(ly - 8)
       << "\" width=\"10\" height=\"10\" fill=\"" << l.color << "\"/><text x=\""
       << num(w - right - 135) << "\" y=\"" << num(ly + 1) << "\">" << escape(l.label)
       << "</text>\n";
    ly += 15;
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::pair<std::string, Chart>> charts_from_json(const std::string& text) {
  const json j = json::parse(text);
  const std::string protocol = j.value("protocol", "");
  std::vector<std::pair<std::string, Chart>> out;

  if (protocol == "cluster_sweep") {
    for (const auto& e : j.at("entries")) {
      const auto k = e.at("n_clusters").get<std::size_t>();
      out.emplace_back("clusters_k" + std::to_string(k),
                       cluster_chart("Cluster mean curves, K = " + std::to_string(k),
                                     e.at("grid_months"), e.at("clusters")));
    }
  } else if (protocol == "sex_stratified") {
    Chart overlay;
    overlay.title = "Mean curves by sex";
    for (const auto& arm : j.at("arms")) {
      const std::string sex = arm.at("sex").get<std::string>();
      Chart c = cluster_chart("Cluster mean curves, sex " + sex, arm.at("grid_months"),
                              arm.at("clusters"));
      for (auto l : c.lines) {
        l.color = sex == "F" ? "#d62728" : "#1f77b4";
        l.label = sex + " " + l.label;
        overlay.lines.push_back(std::move(l));
      }
      out.emplace_back("clusters_sex_" + sex, std::move(c));
    }
    out.emplace_back("clusters_sex_overlay", std::move(overlay));
  } else if (protocol == "missing" || protocol == "forecast") {
    std::size_t n = 0;
    for (const auto& r : j.at("records")) {
      if (!r.contains("curve_ages")) continue;
      Chart c;
      c.title = r.at("method").get<std::string>() + ", " + r.at("condition").get<std::string>() +
                ", " + r.at("id").get<std::string>();
      const auto cx = years(r.at("curve_ages"));
      if (r.contains("curve_lower95")) {
        c.areas.push_back({cx, values(r["curve_lower95"]), values(r["curve_upper95"]), "#1f77b4", 0.2});
      }
      c.lines.push_back({cx, values(r.at("curve_mean")), "#1f77b4", 2.0, 1.0, false, "prediction"});
      c.lines.push_back({years(r.at("retained_ages")), values(r.at("retained_values")), "#000000",
                         1.0, 1.0, true, "observed"});
      if (r.contains("ages")) {
        c.lines.push_back({years(r["ages"]), values(r["observed"]), "#d62728", 1.0, 1.0, true,
                           "held out"});
      }
      out.emplace_back(protocol + "_" + std::to_string(n++), std::move(c));
    }
  } else if (protocol == "risk_samples") {
    Chart c;
    const double thr = j.at("threshold").get<double>();
    c.title = "Predictive samples, threshold " + num(thr);
    c.hline = thr;
    const auto x = years(j.at("target_ages"));
    const std::size_t target_idx = j.value("target_index", x.size() - 1);
    for (const auto& s : j.at("samples")) {
      const auto y = values(s);
      const bool crosses = y.at(target_idx) > thr;
      c.lines.push_back({x, y, crosses ? "#000000" : "#9e9e9e", 1.0, crosses ? 0.9 : 0.5, false, ""});
    }
    if (j.contains("observed_ages")) {
      c.lines.push_back({years(j["observed_ages"]), values(j["observed_values"]), "#d62728", 1.0,
                         1.0, true, "observed"});
    }
    out.emplace_back("risk_samples", std::move(c));
  } else {
    throw std::invalid_argument("unrecognized report protocol: '" + protocol + "'");
  }
  return out;
}

}  // namespace growth::plot
