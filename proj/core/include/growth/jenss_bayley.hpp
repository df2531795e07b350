#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "growth/cohort.hpp"

namespace growth::baselines {

enum class Measure { weight, height };
const char* measure_name(Measure m);

// f(t) = a + b t + c t^2 - exp(d - e t), t in months, e > 0.
struct JenssBayleyParams {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double e = 1.0;
  double operator()(double t) const;
};

struct IndividualOffset {
  double delta_a = 0.0;
  double delta_b = 0.0;  // per month
  std::size_t n_points = 0;
  double rmse = 0.0;
};

struct BaselineReportRow {
  std::string id;
  std::string model;
  std::string status;  // "ok" or a failure reason
  std::size_t n_points = 0;
  double rmse = 0.0;   // NaN when not fitted
};

struct JenssBayleyModel {
  Measure measure = Measure::weight;
  JenssBayleyParams population;
  double ridge = 1.0;
  double residual_variance = 0.0;              // sigma^2 of stage-2 model
  Eigen::Matrix2d offset_covariance = Eigen::Matrix2d::Identity();  // D over (a, b)
  std::map<std::string, IndividualOffset> individuals;
  std::vector<BaselineReportRow> report;

  bool has(const std::string& id) const { return individuals.count(id) != 0; }
  // Throws UnknownIndividual.
  std::vector<double> predict(const std::string& id, std::span<const double> times) const;
  // Shrinkage refit of (a, b) for an individual outside the training set.
  // Throws InsufficientPoints with fewer than 2 points.
  IndividualOffset fit_individual(std::span<const double> times,
                                  std::span<const double> values) const;
  std::vector<double> predict(const IndividualOffset& offset,
                              std::span<const double> times) const;
};

inline constexpr std::size_t kMinJenssBayleyPoints = 2;

// Stage 1: pooled nonlinear least squares for the population curve.
// Throws OptimizationDiverged when no start yields a finite fit.
JenssBayleyParams fit_population_curve(std::span<const std::vector<double>> times,
                                       std::span<const std::vector<double>> values);

// Individuals with fewer than 2 observations of the measure are skipped and
// reported. Throws InsufficientPoints if nobody qualifies.
JenssBayleyModel fit_jenss_bayley(const Cohort& cohort, Measure measure, double ridge = 1.0);

// weight(t) / (height(t)/100)^2. Non-positive weight or height at any query
// time appends one warning for the individual.
std::vector<double> jb_predict_bmi(const JenssBayleyModel& weight_model,
                                   const JenssBayleyModel& height_model, const std::string& id,
                                   std::span<const double> times,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<double> bmi_from_curves(std::span<const double> weight,
                                    std::span<const double> height);

std::string format_baseline_report(std::span<const BaselineReportRow> rows);

}  // namespace growth::baselines
