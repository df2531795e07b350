#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "growth/error.hpp"
#include "growth/jenss_bayley.hpp"
#include "growth/spline.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::baselines;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<double> eight_ages() { return {0.0, 3.0, 9.5, 14.0, 30.0, 47.0, 80.0, 118.0}; }

// Truncated power basis for cubic splines with the same knots (deriv 0 or 2).
double tp_value(const std::vector<double>& knots, std::size_t j, double t, int deriv) {
  if (j < 4) {
    const double p = static_cast<double>(j);
    if (deriv == 0) return std::pow(t, p);
    return j >= 2 ? p * (p - 1) * std::pow(t, p - 2) : 0.0;
  }
  const double k = knots[j - 3];
  const double d = t - k;
  if (d <= 0) return 0.0;
  return deriv == 0 ? d * d * d : 6.0 * d;
}

}  // namespace

TEST(SplineOracle, FixedLambdaMatchesDensePenalizedLeastSquares) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  const auto t = eight_ages();
  std::vector<double> y;
  for (double a : t) y.push_back(15.0 + 0.02 * a + z(rng));
  const double lambda = 0.37;
  const auto fit = fit_smoothing_spline(t, y, lambda);

  // Minimize ||X c - y||^2 + lambda * scale * c' Omega c as an augmented
  // least-squares problem solved by Householder QR.
  const MatrixXd x = design_matrix(fit.knot_vector, t);
  const MatrixXd omega = roughness_penalty(fit.knot_vector);
  const double scale = (x.transpose() * x).trace() / omega.trace();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(omega);
  const MatrixXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                        es.eigenvectors().transpose();
  MatrixXd aug(x.rows() + root.rows(), x.cols());
  aug << x, std::sqrt(lambda * scale) * root;
  VectorXd rhs = VectorXd::Zero(aug.rows());
  rhs.head(x.rows()) = Eigen::Map<const VectorXd>(y.data(), x.rows());
  const VectorXd c = aug.householderQr().solve(rhs);
  EXPECT_LT((fit.coefficients - c).cwiseAbs().maxCoeff(), 1e-8);
}

// Fitted values agree with a fit in a truncated power basis whose penalty is
// integrated by fine Simpson quadrature; this checks basis and penalty.
TEST(SplineOracle, FittedValuesMatchTruncatedPowerBasis) {
  const auto t = eight_ages();
  std::vector<double> y = {13.0, 15.5, 17.2, 16.9, 16.0, 15.6, 16.4, 19.0};
  const double lambda = 0.05;
  const auto fit = fit_smoothing_spline(t, y, lambda);
  const std::size_t nb = t.size() + 2;
  MatrixXd x(t.size(), nb);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < nb; ++j) x(i, j) = tp_value(t, j, t[i], 0);
  MatrixXd omega = MatrixXd::Zero(nb, nb);
  const int steps = 20000;
  const double a = t.front(), b = t.back(), hstep = (b - a) / steps;
  for (int s = 0; s <= steps; ++s) {
    const double u = a + s * hstep;
    const double wq = (s == 0 || s == steps) ? 1.0 : (s % 2 ? 4.0 : 2.0);
    VectorXd d2(nb);
    for (std::size_t j = 0; j < nb; ++j) d2(j) = tp_value(t, j, u, 2);
    omega += wq * hstep / 3.0 * d2 * d2.transpose();
  }
  const double lam = lambda * fit.lambda_scale;
  const VectorXd c = (x.transpose() * x + lam * omega)
                         .fullPivLu()
                         .solve(x.transpose() * Eigen::Map<const VectorXd>(y.data(), 8));
  const VectorXd fitted_tp = x * c;
  const auto fitted = eval_spline(fit, t);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(fitted[i], fitted_tp(i), 1e-6) << i;
}

TEST(SplineOracle, NoiseFreeCubicIsRecovered) {
  std::vector<double> t, y;
  for (int i = 0; i < 10; ++i) {
    const double a = 2.0 + 12.5 * i;
    t.push_back(a);
    y.push_back(14.0 + 0.1 * a - 0.002 * a * a + 1e-5 * a * a * a);
  }
  const auto fit = fit_smoothing_spline(fixture::bmi_series("P", t, y));
  const auto v = eval_spline(fit, t);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(v[i], y[i], 1e-6);
}

TEST(JenssBayleyOracle, NoiseFreePopulationRecovery) {
  const JenssBayleyParams truth{9.5, 0.16, -2.5e-4, 1.4, 0.07};
  std::mt19937_64 rng(3);
  std::vector<GrowthSeries> people;
  for (int i = 0; i < 40; ++i) {
    const auto ages = fixture::sorted_uniform(rng, 6, 0.0, 120.0);
    std::vector<Observation> obs;
    for (double a : ages) {
      Observation o;
      o.age = a;
      o.weight = truth(a);
      o.height = 100.0;
      o.bmi = bmi_from(*o.weight, *o.height);
      obs.push_back(o);
    }
    people.emplace_back("J" + std::to_string(i), Sex::female, std::move(obs));
  }
  const auto model = fit_jenss_bayley(Cohort(people, FileProvenance{}), Measure::weight);
  const auto& p = model.population;
  EXPECT_NEAR(p.a, truth.a, 1e-3 * std::abs(truth.a));
  EXPECT_NEAR(p.b, truth.b, 1e-3 * std::abs(truth.b));
  EXPECT_NEAR(p.c, truth.c, 1e-3 * std::abs(truth.c));
  EXPECT_NEAR(p.d, truth.d, 1e-3 * std::abs(truth.d));
  EXPECT_NEAR(p.e, truth.e, 1e-3 * std::abs(truth.e));
}
