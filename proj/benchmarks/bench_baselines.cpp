#include <benchmark/benchmark.h>

#include "growth/jenss_bayley.hpp"
#include "growth/spline.hpp"
#include "growth/synthetic.hpp"

using namespace growth;

namespace {

void BM_SplineGcvFit(benchmark::State& state) {
  auto spec = synth::default_spec();
  spec.n_individuals = 1;
  const auto sim = synth::simulate_cohort(spec, 2);
  for (auto _ : state) benchmark::DoNotOptimize(baselines::fit_smoothing_spline(sim.cohort[0]));
}
BENCHMARK(BM_SplineGcvFit)->Unit(benchmark::kMicrosecond);

void BM_JenssBayleyFit(benchmark::State& state) {
  auto spec = synth::default_spec();
  spec.n_individuals = 100;
  const auto sim = synth::simulate_cohort(spec, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(baselines::fit_jenss_bayley(sim.cohort, baselines::Measure::weight));
  }
}
BENCHMARK(BM_JenssBayleyFit)->Unit(benchmark::kMillisecond);

}  // namespace
