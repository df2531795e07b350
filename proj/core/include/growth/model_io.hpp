#pragma once

#include <filesystem>
#include <string>

#include "growth/magmaclust.hpp"

namespace growth::magma {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatName = "growthcast.magmaclust";

// JSON layout (all ages in months):
// {
//   "format": "growthcast.magmaclust", "version": 1,
//   "config": {n_clusters, shared_individual_hypers, max_vem_iters,
//              vem_tolerance, working_grid, seed},
//   "ids": [...], "mixing": [...], "memberships": [[...] per individual],
//   "prior_mean": [...],
//   "clusters": [{"kernel": {variance, lengthscale}, "mean": [...],
//                 "cov_factor": [[row-major lower-triangular rows]]}],
//   "individual_kernel": {...}, "noise_variance": s2,
//   "per_individual": [{variance, lengthscale, noise_variance}]  (optional),
//   "training_log": [...], "iterations": n, "converged": bool
// }
std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const std::string& text);

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace growth::magma
