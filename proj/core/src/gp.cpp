#include "growth/gp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "growth/error.hpp"

namespace growth::gp {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

VectorXd GaussianPosterior::sd() const {
  return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

void validate(const KernelParams& params) {
  if (!(params.variance > 0.0) || !std::isfinite(params.variance)) {
    throw NonPositiveParam("kernel variance must be positive, got " +
                           std::to_string(params.variance));
  }
  if (!(params.lengthscale > 0.0) || !std::isfinite(params.lengthscale)) {
    throw NonPositiveParam("kernel lengthscale must be positive, got " +
                           std::to_string(params.lengthscale));
  }
}

MatrixXd kernel_matrix(const KernelParams& params, std::span<const double> times_a,
                       std::span<const double> times_b) {
  validate(params);
  const double inv = 1.0 / (2.0 * params.lengthscale * params.lengthscale);
  MatrixXd k(times_a.size(), times_b.size());
  for (std::size_t j = 0; j < times_b.size(); ++j) {
    for (std::size_t i = 0; i < times_a.size(); ++i) {
      const double d = times_a[i] - times_b[j];
      k(i, j) = params.variance * std::exp(-d * d * inv);
    }
  }
  return k;
}

MatrixXd kernel_dlog_lengthscale(const KernelParams& params, std::span<const double> times) {
  MatrixXd k = kernel_matrix(params, times, times);
  const double inv_l2 = 1.0 / (params.lengthscale * params.lengthscale);
  for (std::size_t j = 0; j < times.size(); ++j) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double d = times[i] - times[j];
      k(i, j) *= d * d * inv_l2;
    }
  }
  return k;
}

double Factorization::log_det() const {
  return 2.0 * lower.diagonal().array().log().sum();
}

VectorXd Factorization::solve(const VectorXd& rhs) const {
  VectorXd y = lower.triangularView<Eigen::Lower>().solve(rhs);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

MatrixXd Factorization::solve(const MatrixXd& rhs) const {
  MatrixXd y = lower.triangularView<Eigen::Lower>().solve(rhs);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

MatrixXd Factorization::inverse() const {
  return solve(MatrixXd::Identity(lower.rows(), lower.rows()).eval());
}

Factorization safe_factorize(const MatrixXd& matrix) {
  if (matrix.rows() != matrix.cols()) throw NotPositiveDefinite("matrix is not square");
  const Eigen::Index n = matrix.rows();
  if (n == 0) return {MatrixXd(0, 0), 0.0};

  auto attempt = [&](double jitter, Factorization& out) {
    MatrixXd a = matrix;
    if (jitter > 0.0) a.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return false;
    MatrixXd l = llt.matrixL();
    if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return false;
    out.lower = std::move(l);
    out.jitter = jitter;
    return true;
  };

  Factorization f;
  if (attempt(0.0, f)) return f;
  for (double jitter = kJitterStart; jitter <= kJitterMax * (1.0 + 1e-9); jitter *= 10.0) {
    if (attempt(jitter, f)) return f;
  }
  throw NotPositiveDefinite("matrix of size " + std::to_string(n) +
                            " not positive definite after jitter " + std::to_string(kJitterMax));
}

// tr(C^{-1} A) as tr(L^{-1} A L^{-T}), avoiding an explicit inverse.
static double whitened_trace(const Factorization& f, const MatrixXd& a) {
  const auto l = f.lower.triangularView<Eigen::Lower>();
  const MatrixXd x = l.solve(a);
  return l.solve(MatrixXd(x.transpose())).trace();
}

double expected_log_density_value(const MatrixXd& covariance, const MatrixXd& second_moment) {
  const auto f = safe_factorize(covariance);
  const double n = static_cast<double>(covariance.rows());
  return -0.5 * f.log_det() - 0.5 * whitened_trace(f, second_moment) - 0.5 * n * kLog2Pi;
}

ValueAndGradient expected_log_density(const MatrixXd& covariance, const MatrixXd& second_moment,
                                      std::span<const MatrixXd> covariance_derivatives) {
  const auto f = safe_factorize(covariance);
  const double n = static_cast<double>(covariance.rows());
  const MatrixXd cinv = f.inverse();
  const MatrixXd cinv_a = cinv * second_moment;

  ValueAndGradient out;
  out.value = -0.5 * f.log_det() - 0.5 * whitened_trace(f, second_moment) - 0.5 * n * kLog2Pi;
  // d/dphi = 1/2 tr((C^-1 A C^-1 - C^-1) dC)
  const MatrixXd w = cinv_a * cinv - cinv;
  out.gradient.resize(static_cast<Eigen::Index>(covariance_derivatives.size()));
  for (std::size_t p = 0; p < covariance_derivatives.size(); ++p) {
    out.gradient(static_cast<Eigen::Index>(p)) =
        0.5 * w.cwiseProduct(covariance_derivatives[p].transpose()).sum();
  }
  return out;
}

ValueAndGradient log_marginal_likelihood(const KernelParams& kernel, const NoiseParam& noise,
                                         std::span<const double> times,
                                         std::span<const double> values,
                                         std::span<const double> prior_mean) {
  const std::size_t n = times.size();
  if (values.size() != n || prior_mean.size() != n) {
    throw std::invalid_argument("log_marginal_likelihood: dimension mismatch");
  }
  MatrixXd k = kernel_matrix(kernel, times);
  MatrixXd c = k;
  c.diagonal().array() += noise.noise_variance;

  VectorXd r(n);
  for (std::size_t i = 0; i < n; ++i) r(i) = values[i] - prior_mean[i];
  const MatrixXd a = r * r.transpose();

  const MatrixXd derivs[3] = {
      k,
      kernel_dlog_lengthscale(kernel, times),
      noise.noise_variance * MatrixXd::Identity(n, n),
  };
  return expected_log_density(c, a, derivs);
}

GaussianPosterior gp_condition(const VectorXd& prior_mean, const MatrixXd& prior_cov,
                               std::span<const std::size_t> observed_idx,
                               std::span<const double> observed_values, const NoiseParam& noise,
                               std::span<const std::size_t> target_idx,
                               std::span<const double> joint_times) {
  if (observed_idx.size() != observed_values.size()) {
    throw std::invalid_argument("gp_condition: observed index/value size mismatch");
  }
  const auto no = static_cast<Eigen::Index>(observed_idx.size());
  const auto nt = static_cast<Eigen::Index>(target_idx.size());

  GaussianPosterior post;
  post.times.reserve(target_idx.size());
  for (auto t : target_idx) {
    post.times.push_back(joint_times.empty() ? static_cast<double>(t) : joint_times[t]);
  }

  VectorXd mt(nt);
  MatrixXd ctt(nt, nt);
  for (Eigen::Index i = 0; i < nt; ++i) {
    mt(i) = prior_mean(target_idx[i]);
    for (Eigen::Index j = 0; j < nt; ++j) ctt(i, j) = prior_cov(target_idx[i], target_idx[j]);
  }
  if (no == 0) {
    post.mean = mt;
    post.covariance = ctt;
    return post;
  }

  VectorXd r(no);
  MatrixXd coo(no, no), cto(nt, no);
  for (Eigen::Index i = 0; i < no; ++i) {
    r(i) = observed_values[i] - prior_mean(observed_idx[i]);
    for (Eigen::Index j = 0; j < no; ++j) coo(i, j) = prior_cov(observed_idx[i], observed_idx[j]);
    coo(i, i) += noise.noise_variance;
  }
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < no; ++j) cto(i, j) = prior_cov(target_idx[i], observed_idx[j]);
  }

  const auto f = safe_factorize(coo);
  const MatrixXd v = f.lower.triangularView<Eigen::Lower>().solve(cto.transpose());
  const VectorXd alpha = f.solve(r);
  post.mean = mt + cto * alpha;
  post.covariance = ctt - v.transpose() * v;
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  return post;
}

double log_normal_density(const VectorXd& x, const VectorXd& mean, const Factorization& cov) {
  const VectorXd r = x - mean;
  const VectorXd z = cov.lower.triangularView<Eigen::Lower>().solve(r);
  return -0.5 * z.squaredNorm() - 0.5 * cov.log_det() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

}  // namespace growth::gp
