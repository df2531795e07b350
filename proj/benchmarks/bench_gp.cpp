#include <benchmark/benchmark.h>

#include <vector>

#include "growth/gp.hpp"

using namespace growth;

namespace {

std::vector<double> grid(int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = 120.0 * i / std::max(1, n - 1);
  return t;
}

void BM_KernelMatrix(benchmark::State& state) {
  const auto t = grid(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gp::kernel_matrix({2.0, 20.0}, t));
}
BENCHMARK(BM_KernelMatrix)->Arg(20)->Arg(121);

void BM_SafeFactorize(benchmark::State& state) {
  const auto t = grid(static_cast<int>(state.range(0)));
  const auto n = static_cast<Eigen::Index>(t.size());
  const Eigen::MatrixXd k = gp::kernel_matrix({2.0, 20.0}, t) + 1e-6 * Eigen::MatrixXd::Identity(n, n);
  for (auto _ : state) benchmark::DoNotOptimize(gp::safe_factorize(k));
}
BENCHMARK(BM_SafeFactorize)->Arg(20)->Arg(121);

void BM_LogMarginalLikelihood(benchmark::State& state) {
  const auto t = grid(20);
  std::vector<double> y(t.size(), 16.0), m(t.size(), 15.5);
  for (std::size_t i = 0; i < y.size(); i += 2) y[i] += 0.4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gp::log_marginal_likelihood({2.0, 20.0}, {0.1}, t, y, m));
  }
}
BENCHMARK(BM_LogMarginalLikelihood);

}  // namespace
