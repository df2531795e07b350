#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace growth::gp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Exponentiated-quadratic kernel. Both fields are strictly positive; the
// optimizers work on their logarithms.
struct KernelParams {
  double variance = 1.0;     // (kg/m^2)^2
  double lengthscale = 24.0; // months

  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

struct NoiseParam {
  double noise_variance = 0.0;  // (kg/m^2)^2, >= 0

  friend bool operator==(const NoiseParam&, const NoiseParam&) = default;
};

inline constexpr double kNoiseFloor = 1e-6;

struct GaussianPosterior {
  std::vector<double> times;
  VectorXd mean;
  MatrixXd covariance;

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }
  VectorXd sd() const;
};

void validate(const KernelParams& params);

// entry (i, j) = variance * exp(-(a_i - b_j)^2 / (2 lengthscale^2))
MatrixXd kernel_matrix(const KernelParams& params, std::span<const double> times_a,
                       std::span<const double> times_b);
inline MatrixXd kernel_matrix(const KernelParams& params, std::span<const double> times) {
  return kernel_matrix(params, times, times);
}
// d K / d log(lengthscale) for the square kernel matrix over `times`.
MatrixXd kernel_dlog_lengthscale(const KernelParams& params, std::span<const double> times);

struct Factorization {
  MatrixXd lower;       // L with L L^T = A + jitter I
  double jitter = 0.0;  // 0 when the plain factorization succeeded

  double log_det() const;
  VectorXd solve(const VectorXd& rhs) const;
  MatrixXd solve(const MatrixXd& rhs) const;
  MatrixXd inverse() const;
};

inline constexpr double kJitterStart = 1e-10;
inline constexpr double kJitterMax = 1e-4;

// Cholesky with escalating diagonal jitter (1e-10, 1e-9, ..., 1e-4).
// Throws NotPositiveDefinite when even the largest jitter fails.
Factorization safe_factorize(const MatrixXd& matrix);

struct ValueAndGradient {
  double value = 0.0;
  VectorXd gradient;
};

// Expected Gaussian log-density  -1/2 log|C| - 1/2 tr(C^{-1} A) - n/2 log 2pi,
// where A is the second-moment matrix of the residual about the mean, and its
// gradient with respect to parameters whose covariance derivatives are given.
ValueAndGradient expected_log_density(const MatrixXd& covariance, const MatrixXd& second_moment,
                                      std::span<const MatrixXd> covariance_derivatives);
double expected_log_density_value(const MatrixXd& covariance, const MatrixXd& second_moment);

// log N(values; prior_mean, K + noise I) with gradient over
// (log variance, log lengthscale, log noise_variance).
ValueAndGradient log_marginal_likelihood(const KernelParams& kernel, const NoiseParam& noise,
                                         std::span<const double> times,
                                         std::span<const double> values,
                                         std::span<const double> prior_mean);

// Conditions a joint Gaussian over an index grid on noisy observations of
// `observed_idx`; noise is added to the observed block only. Posterior
// `times` are filled from `joint_times` when provided, else from the indices.
GaussianPosterior gp_condition(const VectorXd& prior_mean, const MatrixXd& prior_cov,
                               std::span<const std::size_t> observed_idx,
                               std::span<const double> observed_values, const NoiseParam& noise,
                               std::span<const std::size_t> target_idx,
                               std::span<const double> joint_times = {});

// log N(x; mean, cov) using a precomputed factorization of cov.
double log_normal_density(const VectorXd& x, const VectorXd& mean, const Factorization& cov);

}  // namespace growth::gp
