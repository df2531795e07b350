#include <benchmark/benchmark.h>

#include "growth/magmaclust.hpp"
#include "growth/synthetic.hpp"

using namespace growth;

namespace {

synth::SimulationResult cohort(std::size_t n) {
  auto spec = synth::default_spec();
  spec.n_individuals = n;
  return synth::simulate_cohort(spec, 1);
}

void BM_EStep(benchmark::State& state) {
  const auto sim = cohort(static_cast<std::size_t>(state.range(0)));
  magma::ModelConfig cfg;
  const auto data = magma::prepare(sim.cohort, cfg.working_grid);
  const auto st = magma::initialize(data, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(magma::e_step(st, data));
}
BENCHMARK(BM_EStep)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const auto sim = cohort(60);
  magma::ModelConfig cfg;
  cfg.max_vem_iters = 5;
  const auto model = magma::train(sim.cohort, cfg);
  const auto& s = sim.cohort[0];
  std::vector<double> targets;
  for (double t = 0.0; t <= 120.0; t += 2.0) targets.push_back(t);
  for (auto _ : state) benchmark::DoNotOptimize(magma::predict(model, s, targets));
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMicrosecond);

}  // namespace
