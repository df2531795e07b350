#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "growth/cohort.hpp"
#include "growth/magmaclust.hpp"

namespace growth::overweight {

struct OverweightSpec {
  double target_age = 120.0;   // months
  double female_threshold = 22.0;
  double male_threshold = 22.8;
  std::size_t n_samples = 100000;
  double decision_cutoff = 0.05;
  // An observation within this many months of target_age defines the
  // observed status.
  double status_window = 0.5;

  double threshold(Sex sex) const { return sex == Sex::female ? female_threshold : male_threshold; }
  // Throws std::invalid_argument.
  void validate() const;
};

enum class RiskMethod { monte_carlo, closed_form };
const char* method_name(RiskMethod m);
RiskMethod parse_method(const std::string& name);  // throws std::invalid_argument

struct RiskResult {
  std::string id;
  double probability = 0.0;
  RiskMethod method = RiskMethod::monte_carlo;
  std::size_t n_samples = 0;  // 0 for closed form
  std::uint64_t seed = 0;
  double threshold = 0.0;
};

// Share of values strictly above the threshold.
double exceedance_fraction(std::span<const double> values, double threshold);

// Throws TargetAgeMissing unless target_age is one of prediction.target_times.
RiskResult overweight_probability(const magma::MixturePrediction& prediction,
                                  const OverweightSpec& spec, double threshold,
                                  RiskMethod method, std::uint64_t seed, std::string id = {});
RiskResult overweight_probability(const magma::MixturePrediction& prediction,
                                  const OverweightSpec& spec, Sex sex, RiskMethod method,
                                  std::uint64_t seed, std::string id = {});

// Seed derived from (id, horizon) so each child's risk is reproducible.
std::uint64_t risk_seed(std::uint64_t base, const std::string& id, double horizon);

// Observed BMI at target age (nearest within the window) > threshold; empty
// when no observation qualifies.
std::optional<bool> observed_status(const GrowthSeries& series, const OverweightSpec& spec);

struct Score {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sensitivity = 0.0;  // NaN when there are no positives
  double specificity = 0.0;  // NaN when there are no negatives
  double accuracy = 0.0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

// Positive prediction when probability >= cutoff. Throws MissingStatus.
Score classify_and_score(std::span<const RiskResult> risks,
                         const std::map<std::string, bool>& observed, double cutoff);

struct RiskRow {
  std::string id;
  Sex sex = Sex::female;
  double horizon = 0.0;
  double probability = 0.0;
  bool predicted_positive = false;
  bool observed_positive = false;
};

struct HorizonResult {
  double horizon = 0.0;
  std::size_t n_evaluable = 0;
  std::size_t n_excluded = 0;  // no observation at target age
  Score score;
};

struct OverweightReport {
  RiskMethod method = RiskMethod::monte_carlo;
  std::vector<HorizonResult> horizons;
  std::vector<RiskRow> rows;
};

std::vector<double> default_horizons();  // 24, 48, 72, 96

OverweightReport run_overweight_experiment(const magma::TrainedModel& model, const Cohort& test,
                                           std::span<const double> horizons,
                                           const OverweightSpec& spec, RiskMethod method,
                                           std::uint64_t seed);

std::string format_risk_csv(std::span<const RiskRow> rows);
std::string format_overweight_json(const OverweightReport& report);

}  // namespace growth::overweight
