#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "growth/cohort.hpp"
#include "growth/jenss_bayley.hpp"
#include "growth/magmaclust.hpp"
#include "growth/metrics.hpp"

namespace growth::experiments {

struct MethodOutput {
  std::vector<double> mean;
  // Per-cluster 95% intervals and weights; empty for methods without
  // uncertainty, which then have no coverage column.
  std::vector<std::vector<metrics::Interval>> cluster_intervals;
  std::vector<double> weights;
  // Mixture 95% band, only filled when requested for plotting.
  std::vector<metrics::Interval> mixture_band;
};

// A prediction method under evaluation. Throwing growth::Error marks the
// individual as a failed computation for this method.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual MethodOutput predict(const GrowthSeries& retained, std::span<const double> targets,
                               bool with_band) const = 0;
};

class GpMixturePredictor final : public Predictor {
 public:
  explicit GpMixturePredictor(const magma::TrainedModel& model) : model_(&model) {}
  std::string name() const override { return "gp_mixture"; }
  MethodOutput predict(const GrowthSeries& retained, std::span<const double> targets,
                       bool with_band) const override;

 private:
  const magma::TrainedModel* model_;
};

class SplinePredictor final : public Predictor {
 public:
  std::string name() const override { return "spline"; }
  MethodOutput predict(const GrowthSeries& retained, std::span<const double> targets,
                       bool with_band) const override;
};

// Population curves come from the training cohort; each test individual gets
// a shrinkage refit of (a, b) on its retained weight and height.
class JenssBayleyPredictor final : public Predictor {
 public:
  JenssBayleyPredictor(baselines::JenssBayleyModel weight, baselines::JenssBayleyModel height)
      : weight_(std::move(weight)), height_(std::move(height)) {}
  static JenssBayleyPredictor fit(const Cohort& train, double ridge = 1.0);
  std::string name() const override { return "jenss_bayley"; }
  MethodOutput predict(const GrowthSeries& retained, std::span<const double> targets,
                       bool with_band) const override;
  const baselines::JenssBayleyModel& weight_model() const { return weight_; }
  const baselines::JenssBayleyModel& height_model() const { return height_; }

 private:
  baselines::JenssBayleyModel weight_;
  baselines::JenssBayleyModel height_;
};

struct ReportRow {
  std::string method;
  std::string condition;
  double mse_mean = 0.0;
  double mse_sd = 0.0;
  std::optional<double> wcic_mean;
  std::optional<double> wcic_sd;
  double failed_fraction = 0.0;
  std::size_t n_evaluated = 0;
  std::size_t n_failed = 0;
};

struct IndividualResult {
  std::string method;
  std::string condition;
  std::string id;
  std::string status;  // "ok", or the failure reason
  std::optional<metrics::PredictionRecord> record;
  // Plotting extras for banded individuals only.
  std::vector<metrics::Interval> mixture_band;  // at record ages
  std::vector<double> retained_ages;
  std::vector<double> retained_values;
  std::vector<double> curve_ages;               // dense 0..120 grid
  std::vector<double> curve_mean;
  std::vector<metrics::Interval> curve_band;    // empty for methods without bands
};

struct SkippedIndividual {
  std::string condition;
  std::string id;
  std::string reason;
};

struct ExperimentReport {
  std::string protocol;  // "missing" or "forecast"
  std::vector<ReportRow> rows;
  std::vector<IndividualResult> individuals;
  std::vector<SkippedIndividual> skipped;

  const ReportRow* find(const std::string& method, const std::string& condition) const;
};

struct ExperimentOptions {
  std::uint64_t seed = 0;
  // Mixture bands are attached to the first `banded_records` evaluated
  // individuals per condition (plotting input).
  std::size_t banded_records = 6;
};

std::string missing_condition_label(double ratio);   // 0.25 -> "25%"
std::string forecast_condition_label(double cutoff);  // 72 -> "from 6 to 10 years"

std::vector<double> default_missing_ratios();   // 0.10, 0.25, 0.50, 0.75, 0.90
std::vector<double> default_forecast_cutoffs(); // 24, 36, 48, 60, 72

ExperimentReport run_missing_experiment(std::span<const Predictor* const> methods,
                                        const Cohort& test, std::span<const double> ratios,
                                        const ExperimentOptions& options = {});
ExperimentReport run_forecast_experiment(std::span<const Predictor* const> methods,
                                         const Cohort& test, std::span<const double> cutoffs,
                                         const ExperimentOptions& options = {});

struct ClusterCurve {
  double weight = 0.0;
  std::vector<double> mean;
  std::vector<double> lower95;
  std::vector<double> upper95;
};
// Hyper-posterior mean curve and pointwise 95% band per cluster on the grid.
std::vector<ClusterCurve> cluster_curves(const magma::TrainedModel& model);

struct SweepEntry {
  std::size_t n_clusters = 0;
  std::vector<std::size_t> occupancy;
  std::vector<ClusterCurve> curves;
  std::vector<double> grid;
};
std::vector<SweepEntry> run_cluster_sweep(const Cohort& train, std::span<const std::size_t> ks,
                                          const magma::ModelConfig& config);

struct SexArm {
  Sex sex = Sex::female;
  magma::TrainedModel model;
  ExperimentReport missing;
  ExperimentReport forecast;
  std::vector<ClusterCurve> curves;
};
// Trains and evaluates the GP mixture independently per sex.
std::vector<SexArm> run_sex_stratified(const Cohort& train, const Cohort& test,
                                       const magma::ModelConfig& config,
                                       std::span<const double> ratios,
                                       std::span<const double> cutoffs,
                                       const ExperimentOptions& options = {});

std::string format_report_csv(const ExperimentReport& report);
std::string format_report_json(const ExperimentReport& report);
std::string format_sweep_json(std::span<const SweepEntry> sweep);
std::string format_sex_json(std::span<const SexArm> arms);

}  // namespace growth::experiments
