#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "growth/error.hpp"
#include "growth/jenss_bayley.hpp"
#include "growth/spline.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::baselines;

TEST(Spline, TooFewPointsRejected) {
  const std::vector<double> a = {0, 10, 20}, y = {15, 16, 17};
  EXPECT_THROW(fit_smoothing_spline(a, y), InsufficientPoints);
}

TEST(Spline, ZeroPenaltyInterpolatesFourPoints) {
  const std::vector<double> a = {0, 7, 30, 55}, y = {14.0, 17.5, 16.0, 15.2};
  const auto fit = fit_smoothing_spline(a, y, 0.0);
  const auto v = eval_spline(fit, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(v[i], y[i], 1e-8);
}

TEST(Spline, BasisIsPartitionOfUnity) {
  const std::vector<double> knots = {0, 5, 12, 40, 100};
  const auto kv = cubic_knot_vector(knots);
  for (double t : {0.0, 3.3, 12.0, 60.0, 100.0}) {
    const auto b = bspline_basis(kv, t);
    EXPECT_EQ(b.size(), static_cast<Eigen::Index>(knots.size() + 2));
    EXPECT_NEAR(b.sum(), 1.0, 1e-12);
    EXPECT_GE(b.minCoeff(), -1e-15);
    EXPECT_NEAR(bspline_basis(kv, t, 1).sum(), 0.0, 1e-10);
  }
}

TEST(Spline, ExtrapolatesLinearlyOutsideKnots) {
  const std::vector<double> a = {10, 20, 35, 50, 70}, y = {17.0, 16.3, 15.8, 16.1, 17.0};
  const auto fit = fit_smoothing_spline(a, y);
  const std::vector<double> right = {80, 90, 100, 120}, left = {0, 4, 8};
  for (const auto* ts : {&right, &left}) {
    const auto v = eval_spline(fit, *ts);
    const double slope = (v[1] - v[0]) / ((*ts)[1] - (*ts)[0]);
    for (std::size_t i = 2; i < ts->size(); ++i) {
      EXPECT_NEAR(v[i], v[0] + slope * ((*ts)[i] - (*ts)[0]), 1e-9);
    }
  }
  const std::vector<double> edge = {70.0, 70.0 + 1e-7};
  const auto e = eval_spline(fit, edge);
  EXPECT_NEAR(e[0], e[1], 1e-5);
}

TEST(Spline, GcvSelectionIsDeterministicAndOnGrid) {
  const std::vector<double> a = {0, 3, 9, 15, 24, 40, 60}, y = {13.5, 16.8, 17.6, 17.2, 16.3, 15.6, 15.7};
  const auto f1 = fit_smoothing_spline(a, y);
  const auto f2 = fit_smoothing_spline(a, y);
  EXPECT_EQ(f1.lambda, f2.lambda);
  EXPECT_EQ(f1.coefficients, f2.coefficients);
  const auto grid = gcv_lambda_grid();
  EXPECT_EQ(grid.size(), kGcvGridSize);
  EXPECT_NE(std::find(grid.begin(), grid.end(), f1.lambda), grid.end());
  for (double lam : grid) {
    const auto other = fit_smoothing_spline(a, y, lam);
    EXPECT_GE(other.gcv, f1.gcv - 1e-12);
  }
}

TEST(Spline, DuplicateAgesAreRejectedBySeries) {
  EXPECT_THROW(fixture::bmi_series("x", {1, 1, 2, 3}, {15, 15, 16, 17}), std::invalid_argument);
}

TEST(JenssBayley, CurveIsFiniteOnFullRange) {
  const auto sim = fixture::small_cohort(30, 4);
  const auto w = fit_jenss_bayley(sim.cohort, Measure::weight);
  const auto h = fit_jenss_bayley(sim.cohort, Measure::height);
  EXPECT_GT(w.population.e, 0.0);
  EXPECT_GT(h.population.e, 0.0);
  for (double t = 0.0; t <= 120.0; t += 0.5) {
    EXPECT_TRUE(std::isfinite(w.population(t)));
    EXPECT_TRUE(std::isfinite(h.population(t)));
  }
  EXPECT_EQ(w.individuals.size(), 30u);
}

TEST(JenssBayley, TwoPointIndividualGetsFiniteOffsets) {
  const auto sim = fixture::small_cohort(20, 6);
  const auto w = fit_jenss_bayley(sim.cohort, Measure::weight);
  const std::vector<double> t = {12.0, 36.0}, y = {10.0, 14.5};
  const auto off = w.fit_individual(t, y);
  EXPECT_TRUE(std::isfinite(off.delta_a));
  EXPECT_TRUE(std::isfinite(off.delta_b));
  EXPECT_EQ(off.n_points, 2u);
  const std::vector<double> one_t = {12.0}, one_y = {10.0};
  EXPECT_THROW(w.fit_individual(one_t, one_y), InsufficientPoints);
}

TEST(JenssBayley, HugeRidgeShrinksOffsetsToZero) {
  const auto sim = fixture::small_cohort(20, 6);
  const auto w = fit_jenss_bayley(sim.cohort, Measure::weight, 1e12);
  for (const auto& [id, off] : w.individuals) {
    EXPECT_NEAR(off.delta_a, 0.0, 1e-6) << id;
    EXPECT_NEAR(off.delta_b, 0.0, 1e-6) << id;
  }
  EXPECT_THROW(fit_jenss_bayley(sim.cohort, Measure::weight, -1.0), NonPositiveParam);
}

namespace {
JenssBayleyModel flat_model(Measure m, double level) {
  JenssBayleyModel model;
  model.measure = m;
  model.population = {level, 0.0, 0.0, -200.0, 1.0};
  model.individuals["x"] = IndividualOffset{};
  return model;
}
}  // namespace

TEST(JenssBayley, BmiFromWeightAndHeight) {
  const std::vector<double> t = {24.0, 60.0};
  const auto bmi = jb_predict_bmi(flat_model(Measure::weight, 12.0), flat_model(Measure::height, 100.0), "x", t);
  EXPECT_NEAR(bmi[0], 12.0, 1e-12);
  EXPECT_NEAR(bmi[1], 12.0, 1e-12);
  const auto bumped = jb_predict_bmi(flat_model(Measure::weight, 12.12), flat_model(Measure::height, 100.0), "x", t);
  EXPECT_NEAR(bumped[0] / bmi[0], 1.01, 1e-12);
}

TEST(JenssBayley, NonPositiveCurveWarns) {
  const std::vector<double> t = {24.0};
  std::vector<std::string> warnings;
  const auto bmi = jb_predict_bmi(flat_model(Measure::weight, -1.0), flat_model(Measure::height, 100.0), "x", t, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  (void)bmi;
}

TEST(JenssBayley, UnknownIdThrows) {
  const std::vector<double> t = {24.0};
  EXPECT_THROW(flat_model(Measure::weight, 12.0).predict("nobody", t), UnknownIndividual);
}

TEST(JenssBayley, ReportListsSkippedIndividuals) {
  std::vector<GrowthSeries> people;
  for (int i = 0; i < 4; ++i) {
    std::vector<Observation> obs;
    for (double a : {1.0, 12.0, 36.0}) {
      Observation o;
      o.age = a;
      o.weight = 4.0 + a * 0.2 + i * 0.1;
      o.height = 55.0 + a * 0.6;
      o.bmi = bmi_from(*o.weight, *o.height);
      obs.push_back(o);
    }
    people.emplace_back("p" + std::to_string(i), Sex::female, obs);
  }
  Observation lone;
  lone.age = 5.0;
  lone.weight = 7.0;
  lone.height = 65.0;
  lone.bmi = bmi_from(7.0, 65.0);
  people.emplace_back("lonely", Sex::male, std::vector<Observation>{lone});
  const Cohort c(people, SyntheticProvenance{});
  const auto w = fit_jenss_bayley(c, Measure::weight);
  EXPECT_FALSE(w.has("lonely"));
  EXPECT_EQ(w.report.size(), 5u);
  const auto csv = format_baseline_report(w.report);
  EXPECT_EQ(csv.rfind("id,model,status,n_points,rmse\n", 0), 0u);
  EXPECT_NE(csv.find("lonely"), std::string::npos);
}
