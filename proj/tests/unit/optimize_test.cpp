#include <gtest/gtest.h>

#include <cmath>

#include "growth/error.hpp"
#include "growth/optimize.hpp"

using namespace growth;
using Eigen::VectorXd;

TEST(Maximize, FindsConcaveQuadraticPeak) {
  auto f = [](const VectorXd& x) {
    gp::ValueAndGradient r;
    r.value = -(x(0) - 1.0) * (x(0) - 1.0) - 4.0 * (x(1) + 0.5) * (x(1) + 0.5);
    r.gradient = VectorXd(2);
    r.gradient << -2.0 * (x(0) - 1.0), -8.0 * (x(1) + 0.5);
    return r;
  };
  const auto res = opt::maximize(f, VectorXd::Zero(2), VectorXd::Constant(2, -5),
                                 VectorXd::Constant(2, 5));
  EXPECT_NEAR(res.x(0), 1.0, 1e-4);
  EXPECT_NEAR(res.x(1), -0.5, 1e-4);
}

TEST(Maximize, RespectsBoxAndNeverDecreases) {
  auto f = [](const VectorXd& x) {
    gp::ValueAndGradient r;
    r.value = x(0);
    r.gradient = VectorXd::Ones(1);
    return r;
  };
  const auto res = opt::maximize(f, VectorXd::Zero(1), VectorXd::Constant(1, -1),
                                 VectorXd::Constant(1, 2));
  EXPECT_NEAR(res.x(0), 2.0, 1e-12);
  EXPECT_GE(res.value, 0.0);
}

TEST(Maximize, NonFiniteStartDiverges) {
  auto f = [](const VectorXd& x) {
    gp::ValueAndGradient r;
    r.value = std::nan("");
    r.gradient = VectorXd::Zero(x.size());
    return r;
  };
  EXPECT_THROW(opt::maximize(f, VectorXd::Zero(1), VectorXd::Constant(1, -1),
                             VectorXd::Constant(1, 1)),
               OptimizationDiverged);
}
