#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "growth/cohort.hpp"
#include "growth/gp.hpp"

// Multi-task GP mixture for curve clustering and prediction.
//
// Each individual's curve is y_i(t) = mu_k(t) + f_i(t) + eps, where the
// cluster mean process mu_k ~ GP(m0, K_gamma_k) is shared by the members of
// cluster k, f_i ~ GP(0, K_theta) is the individual deviation and eps is
// white noise. Training maximizes a variational lower bound with the
// factorized family q(mu_1..mu_K) q(Z_1..Z_N); mean processes live on a fixed
// working grid and individual ages enter through linear interpolation
// weights onto that grid.
namespace growth::magma {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Relative diagonal nugget of mean-process covariances:
// K_gamma = variance * (R + kMeanNugget * I).
inline constexpr double kMeanNugget = 1e-6;

struct ModelConfig {
  std::size_t n_clusters = 3;
  bool shared_individual_hypers = true;
  int max_vem_iters = 60;
  // Stop once an iteration improves the bound by less than
  // vem_tolerance * max(1, |bound|).
  double vem_tolerance = 1e-6;
  std::vector<double> working_grid = default_grid();
  std::uint64_t seed = 0;

  static std::vector<double> default_grid();  // 0, 1, ..., 120 months
  void validate() const;
};

struct HyperPosterior {
  VectorXd mean;        // m_hat_k on the working grid
  MatrixXd covariance;  // C_hat_k
  double log_det = 0.0;
};

// Mutable training state shared by the E and M steps.
struct VemState {
  ModelConfig config;
  VectorXd prior_mean;  // m0 on the grid
  VectorXd mixing;      // pi
  MatrixXd memberships; // tau, N x K
  std::vector<gp::KernelParams> mean_kernels;        // gamma_k
  std::vector<gp::KernelParams> individual_kernels;  // theta (size 1 when shared)
  std::vector<gp::NoiseParam> noises;                // sigma^2 (size 1 when shared)
  std::vector<HyperPosterior> hyper;                 // q(mu_k)

  const gp::KernelParams& theta(std::size_t i) const {
    return individual_kernels.size() == 1 ? individual_kernels[0] : individual_kernels[i];
  }
  const gp::NoiseParam& sigma2(std::size_t i) const {
    return noises.size() == 1 ? noises[0] : noises[i];
  }
};

// One individual's observations with interpolation weights onto the grid.
struct PreparedSeries {
  std::vector<double> ages;
  VectorXd values;
  std::vector<std::size_t> grid_idx;  // sorted grid points touched
  MatrixXd weights;                   // n_obs x grid_idx.size()
};

struct TrainingData {
  std::vector<double> grid;
  std::vector<std::string> ids;
  std::vector<PreparedSeries> series;
};

TrainingData prepare(const Cohort& cohort, const std::vector<double>& grid);
PreparedSeries prepare_series(std::span<const double> ages, std::span<const double> values,
                              const std::vector<double>& grid);
// Dense interpolation matrix (times x grid).
MatrixXd interpolation_matrix(std::span<const double> times, const std::vector<double>& grid);

MatrixXd mean_process_covariance(const gp::KernelParams& params, const std::vector<double>& grid);

// Initial state: k-means memberships on coarse summaries, uniform pi,
// kernels at (data variance, 24 months).
VemState initialize(const TrainingData& data, const ModelConfig& config);

// Variational E step: q(mu_k) for every cluster, then q(Z_i).
void update_hyper_posteriors(VemState& state, const TrainingData& data);
void update_memberships(VemState& state, const TrainingData& data);

struct EStepResult {
  std::vector<HyperPosterior> hyper;
  MatrixXd memberships;
};
EStepResult e_step(const VemState& state, const TrainingData& data);

// Objective pieces maximized by the M step. Parameters are logs:
// mean process (log variance, log lengthscale); individual
// (log variance, log lengthscale, log noise variance).
gp::ValueAndGradient mean_process_objective(const VectorXd& log_params,
                                            const HyperPosterior& hyper,
                                            const VectorXd& prior_mean,
                                            const std::vector<double>& grid);
// Pooled tau-weighted individual term; `subset` selects individuals (all when
// empty).
gp::ValueAndGradient individual_objective(const VectorXd& log_params, const VemState& state,
                                          const TrainingData& data,
                                          std::span<const std::size_t> subset = {});

struct MStepReport {
  double objective_before = 0.0;
  double objective_after = 0.0;
};
MStepReport m_step(VemState& state, const TrainingData& data);
// Expected complete-data log-likelihood terms optimized by m_step.
double m_step_objective(const VemState& state, const TrainingData& data);

// Variational lower bound of the marginal likelihood.
double elbo(const VemState& state, const TrainingData& data);

struct TrainedModel {
  ModelConfig config;
  std::vector<std::string> ids;
  VectorXd prior_mean;
  VectorXd mixing;
  MatrixXd memberships;
  std::vector<gp::GaussianPosterior> hyper_posteriors;
  // Canonical representation: hyper_posteriors[k].covariance == factor * factor^T.
  std::vector<MatrixXd> hyper_factors;
  std::vector<gp::KernelParams> mean_kernels;
  gp::KernelParams individual_kernel;  // used for new individuals
  gp::NoiseParam noise;
  std::vector<gp::KernelParams> per_individual_kernels;  // empty when shared
  std::vector<gp::NoiseParam> per_individual_noise;      // empty when shared
  std::vector<double> training_log;                      // bound after each iteration
  int iterations = 0;
  bool converged = false;

  std::size_t n_clusters() const { return static_cast<std::size_t>(mixing.size()); }
  // argmax_k tau_ik, lowest index on exact ties.
  std::vector<std::size_t> map_labels() const;
  std::vector<std::size_t> occupancy() const;
  // Rebuilds covariances from the stored factors.
  void canonicalize();
};

TrainedModel train(const Cohort& cohort, const ModelConfig& config);
TrainedModel finalize(const VemState& state, const TrainingData& data,
                      std::vector<double> training_log, int iterations, bool converged);

struct MixturePrediction {
  std::vector<double> target_times;
  std::vector<gp::GaussianPosterior> per_cluster;
  VectorXd weights;

  VectorXd mean() const;      // sum_k w_k mean_k
  VectorXd variance() const;  // mixture variance per target
};

struct PredictOptions {
  // Predict a new noisy measurement (adds sigma^2 on the target block); set
  // false for the latent curve.
  bool include_noise = true;
};

MixturePrediction predict(const TrainedModel& model, std::span<const double> ages,
                          std::span<const double> values, std::span<const double> target_times,
                          const PredictOptions& options = {});
MixturePrediction predict(const TrainedModel& model, const GrowthSeries& series,
                          std::span<const double> target_times,
                          const PredictOptions& options = {});

// n x |target_times|; each row picks a cluster by weight then draws from that
// cluster's Gaussian.
MatrixXd sample_trajectories(const MixturePrediction& prediction, std::size_t n,
                             std::uint64_t seed);

struct Band {
  VectorXd lower;
  VectorXd upper;
};
struct CredibleBands {
  Band mixture;
  std::vector<Band> per_cluster;
};
inline constexpr double kBandTolerance = 1e-6;
CredibleBands credible_band(const MixturePrediction& prediction, double level);
// Quantile of a one-dimensional Gaussian mixture by bisection.
double mixture_quantile(std::span<const double> weights, std::span<const double> means,
                        std::span<const double> sds, double p);

}  // namespace growth::magma
