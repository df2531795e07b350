#include <gtest/gtest.h>

#include <cmath>

#include "growth/overweight.hpp"

using namespace growth;
using namespace growth::overweight;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

magma::MixturePrediction one_point(std::vector<double> weights, std::vector<double> means,
                                   std::vector<double> sds, double age = 120.0) {
  magma::MixturePrediction p;
  p.target_times = {age};
  p.weights = Eigen::Map<const VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  for (std::size_t k = 0; k < means.size(); ++k) {
    gp::GaussianPosterior g;
    g.times = {age};
    g.mean = VectorXd::Constant(1, means[k]);
    g.covariance = MatrixXd::Constant(1, 1, sds[k] * sds[k]);
    p.per_cluster.push_back(g);
  }
  return p;
}

}  // namespace

TEST(RiskOracle, GaussianTailAtTwoSd) {
  const auto p = one_point({1.0}, {20.0}, {1.0});
  const auto r = overweight_probability(p, OverweightSpec{}, Sex::female, RiskMethod::closed_form, 0);
  EXPECT_NEAR(r.probability, 0.022750131948179, 1e-12);
  EXPECT_DOUBLE_EQ(r.threshold, 22.0);
}

TEST(RiskOracle, FourOfHundredSamplesCross) {
  std::vector<double> at_target(100, 20.0);
  for (int i = 0; i < 4; ++i) at_target[static_cast<std::size_t>(i * 25)] = 23.1;
  EXPECT_DOUBLE_EQ(exceedance_fraction(at_target, OverweightSpec{}.threshold(Sex::male)), 0.04);
}

TEST(RiskOracle, MonteCarloWithinBinomialError) {
  const auto p = one_point({0.3, 0.7}, {21.0, 22.5}, {1.2, 0.8});
  OverweightSpec spec;
  const auto cf = overweight_probability(p, spec, Sex::male, RiskMethod::closed_form, 0);
  const auto mc = overweight_probability(p, spec, Sex::male, RiskMethod::monte_carlo, 17);
  const double pr = cf.probability;
  EXPECT_LE(std::abs(mc.probability - pr), 3.0 * std::sqrt(pr * (1 - pr) / 1e5) + 1e-6);
}
