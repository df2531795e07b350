#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "growth/error.hpp"
#include "growth/gp.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::gp;

namespace {

struct Instance {
  VectorXd mean;
  MatrixXd cov;
  std::vector<std::size_t> obs, tgt;
  std::vector<double> values;
  double noise;
};

Instance random_instance(std::uint64_t seed, std::size_t max_points) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(2, max_points);
  std::normal_distribution<double> z;
  const std::size_t n = size(rng);
  MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
  Instance in;
  in.cov = a * a.transpose() + 0.1 * MatrixXd::Identity(n, n);
  in.mean = VectorXd(n);
  for (Eigen::Index i = 0; i < in.mean.size(); ++i) in.mean(i) = z(rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_obs = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
  in.obs.assign(perm.begin(), perm.begin() + static_cast<long>(n_obs));
  in.tgt.assign(perm.begin() + static_cast<long>(n_obs), perm.end());
  for (std::size_t k = 0; k < n_obs; ++k) in.values.push_back(z(rng));
  in.noise = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
  return in;
}

// Block formula solved with a pivoted LU, independent of the Cholesky path.
std::pair<VectorXd, MatrixXd> brute_force(const Instance& in) {
  const auto no = static_cast<Eigen::Index>(in.obs.size());
  const auto nt = static_cast<Eigen::Index>(in.tgt.size());
  MatrixXd soo(no, no), sto(nt, no), stt(nt, nt);
  VectorXd r(no), mt(nt);
  for (Eigen::Index i = 0; i < no; ++i) {
    r(i) = in.values[i] - in.mean(in.obs[i]);
    for (Eigen::Index j = 0; j < no; ++j) soo(i, j) = in.cov(in.obs[i], in.obs[j]);
    soo(i, i) += in.noise;
  }
  for (Eigen::Index i = 0; i < nt; ++i) {
    mt(i) = in.mean(in.tgt[i]);
    for (Eigen::Index j = 0; j < no; ++j) sto(i, j) = in.cov(in.tgt[i], in.obs[j]);
    for (Eigen::Index j = 0; j < nt; ++j) stt(i, j) = in.cov(in.tgt[i], in.tgt[j]);
  }
  const auto lu = soo.fullPivLu();
  return {mt + sto * lu.solve(r), stt - sto * lu.solve(MatrixXd(sto.transpose()))};
}

double fd_relative_error(const VectorXd& analytic, const VectorXd& numeric) {
  return (analytic - numeric).cwiseAbs().maxCoeff() / std::max(1.0, numeric.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(KernelOracle, UnitDistanceIsExpMinusHalf) {
  const std::vector<double> a = {0.0}, b = {1.0};
  EXPECT_NEAR(kernel_matrix({1.0, 1.0}, a, b)(0, 0), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(kernel_matrix({1.0, 1.0}, a, b)(0, 0), 0.6065306597126334, 1e-15);
}

TEST(KernelOracle, DiagonalEqualsVariance) {
  const std::vector<double> t = {7.0};
  EXPECT_DOUBLE_EQ(kernel_matrix({2.5, 13.0}, t)(0, 0), 2.5);
}

TEST(MarginalLikelihoodOracle, ScalarGaussianDensity) {
  const std::vector<double> t = {3.0}, y = {15.2}, m = {15.2};
  const auto r = log_marginal_likelihood({0.75, 10.0}, {0.25}, t, y, m);
  EXPECT_NEAR(r.value, -0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(MarginalLikelihoodOracle, GradientMatchesCentralDifferences) {
  constexpr double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto t = fixture::sorted_uniform(rng, 8, 0.0, 120.0);
    std::normal_distribution<double> z;
    std::vector<double> y(8), m(8);
    for (std::size_t i = 0; i < 8; ++i) {
      y[i] = 16.0 + 2.0 * z(rng);
      m[i] = 16.0 + z(rng);
    }
    std::uniform_real_distribution<double> lp(-1.0, 1.0);
    VectorXd x(3);
    x << lp(rng), std::log(20.0) + lp(rng), std::log(0.3) + lp(rng);
    auto eval = [&](const VectorXd& p) {
      return log_marginal_likelihood({std::exp(p(0)), std::exp(p(1))}, {std::exp(p(2))}, t, y, m);
    };
    const auto g = eval(x).gradient;
    VectorXd fd(3);
    for (int k = 0; k < 3; ++k) {
      VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      fd(k) = (eval(xp).value - eval(xm).value) / (2 * h);
    }
    EXPECT_LT(fd_relative_error(g, fd), 1e-5) << "seed " << seed;
  }
}

TEST(ConditionOracle, MatchesBruteForceOnSixPoints) {
  Instance in = random_instance(42, 6);
  while (in.mean.size() != 6) in = random_instance(in.mean.size() + 1000, 6);
  const auto post = gp_condition(in.mean, in.cov, in.obs, in.values, {in.noise}, in.tgt);
  const auto [m, c] = brute_force(in);
  EXPECT_LT((post.mean - m).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((post.covariance - c).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ConditionOracle, MatchesBruteForceOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Instance in = random_instance(seed, 10);
    const auto post = gp_condition(in.mean, in.cov, in.obs, in.values, {in.noise}, in.tgt);
    const auto [m, c] = brute_force(in);
    EXPECT_LT((post.mean - m).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
    EXPECT_LT((post.covariance - c).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
  }
}

TEST(FactorizationOracle, RandomSpdMultipliesBack) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  MatrixXd a(5, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
  const MatrixXd spd = a * a.transpose() + 0.5 * MatrixXd::Identity(5, 5);
  const auto f = safe_factorize(spd);
  EXPECT_EQ(f.jitter, 0.0);
  EXPECT_LT((f.lower * f.lower.transpose() - spd).cwiseAbs().maxCoeff(), 1e-8);
}
