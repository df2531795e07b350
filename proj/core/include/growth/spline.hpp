#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "growth/cohort.hpp"

namespace growth::baselines {

// Penalized cubic B-spline on one individual's BMI with knots at the unique
// observation ages. Outside the knot span the fit is extended linearly from
// the boundary value and slope.
struct SplineFit {
  std::vector<double> knots;         // unique ages, >= 4
  std::vector<double> knot_vector;   // knots with 4-fold boundary repeats
  Eigen::VectorXd coefficients;      // size knots.size() + 2
  double lambda = 0.0;               // dimensionless smoothing parameter
  double lambda_scale = 1.0;         // tr(B^T B) / tr(Omega); system uses lambda * scale
  double gcv = 0.0;
  double rmse = 0.0;                 // in-sample
};

inline constexpr std::size_t kMinSplinePoints = 4;
inline constexpr int kGcvGridSize = 41;  // lambda in 10^[-6, 4]

std::vector<double> gcv_lambda_grid();

// Full clamped knot vector for the given unique ages.
std::vector<double> cubic_knot_vector(std::span<const double> knots);
// Values (deriv 0), first or second derivatives of all basis functions at t.
Eigen::VectorXd bspline_basis(std::span<const double> knot_vector, double t, int deriv = 0);
Eigen::MatrixXd design_matrix(std::span<const double> knot_vector, std::span<const double> times);
// Omega_ij = integral of B_i'' B_j'' over the knot span.
Eigen::MatrixXd roughness_penalty(std::span<const double> knot_vector);

// GCV-selected fit. Throws InsufficientPoints with fewer than 4 distinct ages.
SplineFit fit_smoothing_spline(const GrowthSeries& series);
SplineFit fit_smoothing_spline(std::span<const double> ages, std::span<const double> values);
// Fixed dimensionless lambda; lambda == 0 gives the interpolating spline of
// minimal roughness.
SplineFit fit_smoothing_spline(std::span<const double> ages, std::span<const double> values,
                               double lambda);

std::vector<double> eval_spline(const SplineFit& fit, std::span<const double> times);

}  // namespace growth::baselines
