#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace growth::plot {

struct Line {
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  double width = 1.5;
  double opacity = 1.0;
  bool markers = false;  // draw points instead of a polyline
  std::string label;
};

struct Area {
  std::vector<double> x;
  std::vector<double> lower;
  std::vector<double> upper;
  std::string color = "#1f77b4";
  double opacity = 0.2;
};

struct Chart {
  std::string title;
  std::string x_label = "age (years)";
  std::string y_label = "BMI (kg/m2)";
  std::vector<Area> areas;
  std::vector<Line> lines;
  std::optional<double> hline;  // e.g. an overweight threshold
  double width = 640;
  double height = 420;
};

std::string render_svg(const Chart& chart);

// Builds named charts from a JSON report emitted by the library (cluster
// sweep, sex-stratified, missing/forecast, risk samples). Ages in months are
// shown in years. Throws std::invalid_argument on unknown input.
std::vector<std::pair<std::string, Chart>> charts_from_json(const std::string& text);

}  // namespace growth::plot
