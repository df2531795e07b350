#include <gtest/gtest.h>

#include <random>

#include "growth/error.hpp"
#include "growth/gp.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::gp;

TEST(Kernel, SymmetricAndPositiveSemidefinite) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = fixture::sorted_uniform(rng, 30, 0.0, 120.0);
    const MatrixXd k = kernel_matrix({2.0, 5.0 + 10.0 * rep}, t);
    EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (k + k.transpose()));
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(Kernel, RejectsNonPositiveParameters) {
  const std::vector<double> t = {0.0, 1.0};
  EXPECT_THROW(kernel_matrix({0.0, 1.0}, t), NonPositiveParam);
  EXPECT_THROW(kernel_matrix({1.0, -2.0}, t), NonPositiveParam);
}

TEST(SafeFactorize, IdentitySingularAndIndefinite) {
  const auto id = safe_factorize(MatrixXd::Identity(3, 3));
  EXPECT_EQ(id.jitter, 0.0);
  EXPECT_TRUE(id.lower.isApprox(MatrixXd::Identity(3, 3)));
  const auto ones = safe_factorize(MatrixXd::Ones(2, 2));
  EXPECT_GT(ones.jitter, 0.0);
  EXPECT_LE(ones.jitter, kJitterMax);
  MatrixXd bad = MatrixXd::Identity(2, 2);
  bad(1, 1) = -1.0;
  EXPECT_THROW(safe_factorize(bad), NotPositiveDefinite);
}

TEST(Condition, NoiseFreeInterpolatesObservedPoint) {
  const std::vector<double> t = {0.0, 10.0, 20.0};
  const MatrixXd k = kernel_matrix({1.0, 8.0}, t);
  const VectorXd m = VectorXd::Constant(3, 15.0);
  const std::vector<std::size_t> obs = {1}, tgt = {1};
  const std::vector<double> y = {17.25};
  const auto post = gp_condition(m, k, obs, y, {0.0}, tgt);
  EXPECT_NEAR(post.mean(0), 17.25, 1e-8);
  EXPECT_NEAR(post.covariance(0, 0), 0.0, 1e-8);
}

TEST(Condition, NoObservationsReturnsPriorMarginal) {
  const std::vector<double> t = {0.0, 10.0, 20.0};
  const MatrixXd k = kernel_matrix({1.0, 8.0}, t);
  VectorXd m(3);
  m << 13.0, 16.0, 15.0;
  const std::vector<std::size_t> tgt = {2, 0};
  const auto post = gp_condition(m, k, {}, {}, {0.1}, tgt, t);
  EXPECT_DOUBLE_EQ(post.mean(0), 15.0);
  EXPECT_DOUBLE_EQ(post.mean(1), 13.0);
  EXPECT_DOUBLE_EQ(post.covariance(0, 1), k(2, 0));
  EXPECT_EQ(post.times, (std::vector<double>{20.0, 0.0}));
}

TEST(Condition, NoiseFreePosteriorVarianceNeverExceedsPrior) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = fixture::sorted_uniform(rng, 9, 0.0, 120.0);
    const MatrixXd k = kernel_matrix({1.5, 15.0}, t) + 1e-6 * MatrixXd::Identity(9, 9);
    const std::vector<std::size_t> obs = {0, 3, 6}, tgt = {1, 2, 4, 5, 7, 8};
    const std::vector<double> y = {1.0, -0.5, 0.3};
    const auto post = gp_condition(VectorXd::Zero(9), k, obs, y, {0.0}, tgt);
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      EXPECT_LE(post.covariance(j, j), k(tgt[j], tgt[j]) + 1e-10);
    }
  }
}

TEST(MarginalLikelihood, PermutationInvariant) {
  const std::vector<double> t = {0, 5, 18, 40, 77}, y = {13, 16, 17, 15.5, 16.2};
  const std::vector<double> m(5, 15.0);
  const std::vector<double> tp = {40, 0, 77, 18, 5}, yp = {15.5, 13, 16.2, 17, 16};
  const auto a = log_marginal_likelihood({1.2, 20.0}, {0.2}, t, y, m);
  const auto b = log_marginal_likelihood({1.2, 20.0}, {0.2}, tp, yp, m);
  EXPECT_NEAR(a.value, b.value, 1e-10);
  EXPECT_LT((a.gradient - b.gradient).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MarginalLikelihood, ShiftInvariantWhenPriorMeanTracks) {
  const std::vector<double> t = {0, 5, 18, 40, 77}, y = {13, 16, 17, 15.5, 16.2};
  std::vector<double> m(5, 15.0), y2 = y, m2 = m;
  for (std::size_t i = 0; i < 5; ++i) {
    y2[i] += 3.7;
    m2[i] += 3.7;
  }
  const auto a = log_marginal_likelihood({1.2, 20.0}, {0.2}, t, y, m);
  const auto b = log_marginal_likelihood({1.2, 20.0}, {0.2}, t, y2, m2);
  EXPECT_NEAR(a.gradient(1), b.gradient(1), 1e-10);
}

TEST(ExpectedLogDensity, ReducesToLogDensityForRankOneMoment) {
  const std::vector<double> t = {0, 12, 30};
  const MatrixXd c = kernel_matrix({1.0, 15.0}, t) + 0.1 * MatrixXd::Identity(3, 3);
  VectorXd r(3);
  r << 0.3, -0.2, 0.5;
  const double v = expected_log_density_value(c, r * r.transpose());
  EXPECT_NEAR(v, log_normal_density(r, VectorXd::Zero(3), safe_factorize(c)), 1e-12);
}
