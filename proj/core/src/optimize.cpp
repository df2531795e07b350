#include "growth/optimize.hpp"

#include <algorithm>
#include <cmath>

#include "growth/error.hpp"

namespace growth::opt {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                      const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Zero the gradient components that push against an active bound.
Eigen::VectorXd projected(const Eigen::VectorXd& g, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd p = g;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if ((x(i) <= lo(i) && g(i) < 0.0) || (x(i) >= hi(i) && g(i) > 0.0)) p(i) = 0.0;
  }
  return p;
}

}  // namespace

AscentResult maximize(const Objective& objective, Eigen::VectorXd x0,
                      const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                      const AscentOptions& options) {
  const Eigen::Index d = x0.size();
  AscentResult res;
  res.x = clamp(x0, lower, upper);
  auto cur = objective(res.x);
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
    throw OptimizationDiverged("objective not finite at starting point");
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(d, d);
  bool scaled = false;

  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd g = projected(cur.gradient, res.x, lower, upper);
    if (g.norm() == 0.0) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    Eigen::VectorXd x_new;
    gp::ValueAndGradient next;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Eigen::VectorXd dir = h * g;
      if (attempt == 1 || g.dot(dir) <= 0.0) {
        h.setIdentity();
        scaled = false;
        dir = g;
      }
      double step = scaled ? 1.0 : std::min(1.0, 1.0 / g.norm());
      for (int bt = 0; bt < options.max_backtracks; ++bt, step *= 0.5) {
        x_new = clamp(res.x + step * dir, lower, upper);
        if ((x_new - res.x).norm() == 0.0) break;
        next = objective(x_new);
        if (std::isfinite(next.value) && next.gradient.allFinite() &&
            next.value >= cur.value + options.armijo * g.dot(x_new - res.x)) {
          accepted = true;
          break;
        }
      }
      if (!accepted && attempt == 1) {
        if (g.norm() > 1e-2 * (1.0 + std::abs(cur.value))) {
          throw OptimizationDiverged("line search failed " +
                                     std::to_string(options.max_backtracks) +
                                     " consecutive times");
        }
        // Gradient is at roundoff level; the current point is the optimum.
        res.converged = true;
      }
    }
    if (!accepted) break;

    const double improvement = next.value - cur.value;
    // BFGS update of the inverse Hessian of -f.
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = -(next.gradient - cur.gradient);
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h = Eigen::MatrixXd::Identity(d, d) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
      h = (id - rho * s * y.transpose()) * h * (id - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }

    res.x = x_new;
    cur = next;
    if (improvement < options.tolerance) {
      res.converged = true;
      break;
    }
  }
  res.value = cur.value;
  return res;
}

}  // namespace growth::opt
