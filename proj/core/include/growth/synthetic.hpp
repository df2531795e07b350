#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "growth/cohort.hpp"
#include "growth/gp.hpp"

namespace growth::synth {

// Cluster mean BMI shape:
//   birth_bmi + peak_gain * (t/peak_age) exp(1 - t/peak_age)
//             + rebound_gain * ((t - rebound_age) / (120 - rebound_age))^2  for t > rebound_age
struct CurveTemplate {
  double birth_bmi = 13.0;
  double peak_gain = 4.0;
  double peak_age = 9.0;      // months
  double rebound_age = 60.0;  // months
  double rebound_gain = 3.0;

  double operator()(double age_months) const;
};

struct ClusterTemplate {
  double weight = 1.0;
  CurveTemplate curve;
};

struct SyntheticSpec {
  std::size_t n_individuals = 300;
  std::vector<ClusterTemplate> cluster_templates;
  // Zero variance disables the individual GP deviation.
  gp::KernelParams individual_kernel{1.0, 24.0};
  double noise_sd = 0.3;  // kg/m^2
  std::vector<double> visit_schedule;
  double dropout_rate = 0.0;
  double male_fraction = 0.5;

  void validate() const;
  std::uint64_t hash() const;
};

// Ages (months) of the scheduled visits in the reference cohort.
std::vector<double> reference_schedule();
// Three well-separated templates: low, mid and an upper cluster reaching
// ~26 kg/m^2 at 120 months, all peaking around 9 months.
SyntheticSpec default_spec();

struct IndividualTruth {
  std::string id;
  std::size_t cluster = 0;
  std::vector<double> ages;        // full schedule
  std::vector<double> noise_free;  // template + individual deviation
};

struct SimulationResult {
  Cohort cohort;
  std::vector<IndividualTruth> truth;
};

// Height curve used to emit weights consistent with the simulated BMI.
double height_template(double age_months);

SimulationResult simulate_cohort(const SyntheticSpec& spec, std::uint64_t seed);

std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const std::string& text);

}  // namespace growth::synth
