#include "growth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "growth/error.hpp"

namespace growth::metrics {

void PredictionRecord::validate() const {
  const std::size_t n = ages.size();
  if (observed.size() != n || predicted.size() != n) {
    throw std::invalid_argument("prediction record sequences misaligned for " + id);
  }
  if (cluster_intervals.size() != weights.size()) {
    throw std::invalid_argument("interval/weight count mismatch for " + id);
  }
  for (const auto& ci : cluster_intervals) {
    if (ci.size() != n) throw std::invalid_argument("interval length mismatch for " + id);
  }
  if (!weights.empty()) {
    const double s = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("weights do not sum to 1 for " + id);
  }
}

double mse(std::span<const double> observed, std::span<const double> predicted,
           const std::string& id) {
  if (observed.size() != predicted.size()) throw std::invalid_argument("mse size mismatch");
  if (observed.empty()) throw NoTestingPoints(id);
  double s = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = predicted[i] - observed[i];
    s += d * d;
  }
  return s / static_cast<double>(observed.size());
}

double mse(const PredictionRecord& r) { return mse(r.observed, r.predicted, r.id); }

Summary summarize(std::span<const double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

double weighted_coverage(const PredictionRecord& r) {
  if (r.observed.empty()) throw NoTestingPoints(r.id);
  if (r.weights.empty()) throw std::invalid_argument("no cluster intervals for " + r.id);
  double total = 0.0;
  for (std::size_t k = 0; k < r.weights.size(); ++k) {
    std::size_t inside = 0;
    for (std::size_t j = 0; j < r.observed.size(); ++j) {
      if (r.cluster_intervals[k][j].contains(r.observed[j])) ++inside;
    }
    total += r.weights[k] * static_cast<double>(inside) / static_cast<double>(r.observed.size());
  }
  return total;
}

double wcic95(std::span<const PredictionRecord> records) {
  if (records.empty()) throw NoTestingPoints("");
  double s = 0.0;
  for (const auto& r : records) s += weighted_coverage(r);
  return 100.0 * s / static_cast<double>(records.size());
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, c] : table) index += c2(c);
  for (const auto& [_, c] : rows) sa += c2(c);
  for (const auto& [_, c] : cols) sb += c2(c);
  const double expected = sa * sb / c2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;  // both trivial partitions
  return (index - expected) / (max_index - expected);
}

}  // namespace growth::metrics
