#pragma once

#include <Eigen/Dense>
#include <functional>

#include "growth/gp.hpp"

namespace growth::opt {

struct AscentOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;     // stop when one step improves the objective by less
  int max_backtracks = 50;
  double armijo = 1e-4;
};

struct AscentResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

using Objective = std::function<gp::ValueAndGradient(const Eigen::VectorXd&)>;

// Maximizes `objective` inside the box [lower, upper] with BFGS-scaled
// gradient steps and backtracking line search. Every accepted step satisfies
// the Armijo condition, so the returned value is never below f(x0).
// Throws OptimizationDiverged when f(x0) is not finite or when 50 successive
// halvings of a steepest-ascent step fail while the gradient is still large.
AscentResult maximize(const Objective& objective, Eigen::VectorXd x0,
                      const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                      const AscentOptions& options = {});

}  // namespace growth::opt
