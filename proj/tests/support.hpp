#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "growth/cohort.hpp"
#include "growth/synthetic.hpp"

namespace growth::fixture {

inline GrowthSeries bmi_series(const std::string& id, std::vector<double> ages,
                               std::vector<double> bmis, Sex sex = Sex::female) {
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    Observation o;
    o.age = ages[i];
    o.bmi = bmis[i];
    obs.push_back(o);
  }
  return GrowthSeries(id, sex, std::move(obs));
}

inline synth::SimulationResult small_cohort(std::size_t n, std::uint64_t seed) {
  auto spec = synth::default_spec();
  spec.n_individuals = n;
  return synth::simulate_cohort(spec, seed);
}

inline std::vector<double> sorted_uniform(std::mt19937_64& rng, std::size_t n, double lo,
                                          double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace growth::fixture
