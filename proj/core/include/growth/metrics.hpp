#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace growth::metrics {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double v) const { return lower <= v && v <= upper; }
};

// One individual's evaluation under one method and condition.
struct PredictionRecord {
  std::string id;
  std::string condition;
  std::vector<double> ages;                            // testing points
  std::vector<double> observed;
  std::vector<double> predicted;                       // point prediction per age
  std::vector<std::vector<Interval>> cluster_intervals;  // [cluster][point], 95%
  std::vector<double> weights;                         // membership per cluster

  // Throws std::invalid_argument if sequences are misaligned or weights do
  // not sum to 1 within 1e-9.
  void validate() const;
};

// Mean of squared errors over one individual's testing points.
// Throws NoTestingPoints (id may be empty) when there are none.
double mse(std::span<const double> observed, std::span<const double> predicted,
           const std::string& id = {});
double mse(const PredictionRecord& record);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample sd (n - 1); 0 for a single value
  std::size_t n = 0;
};
// NaN mean/sd for an empty input.
Summary summarize(std::span<const double> values);

// Sum_k tau_k * (share of testing points inside cluster k's interval), in [0, 1].
double weighted_coverage(const PredictionRecord& record);
// 100 x mean over individuals of weighted_coverage.
double wcic95(std::span<const PredictionRecord> records);

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace growth::metrics
