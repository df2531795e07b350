#include <gtest/gtest.h>

#include <cmath>

#include "growth/error.hpp"
#include "growth/experiments.hpp"
#include "support.hpp"

using namespace growth;
using namespace growth::experiments;

namespace {

class FailingPredictor final : public Predictor {
 public:
  std::string name() const override { return "always_fails"; }
  MethodOutput predict(const GrowthSeries&, std::span<const double>, bool) const override {
    throw Error("stub failure");
  }
};

class NanPredictor final : public Predictor {
 public:
  std::string name() const override { return "nan"; }
  MethodOutput predict(const GrowthSeries&, std::span<const double> t, bool) const override {
    MethodOutput o;
    o.mean.assign(t.size(), std::nan(""));
    return o;
  }
};

magma::ModelConfig quick_config(std::size_t k) {
  magma::ModelConfig c;
  c.n_clusters = k;
  c.max_vem_iters = 5;
  c.working_grid.clear();
  for (double t = 0; t <= 120; t += 6) c.working_grid.push_back(t);
  return c;
}

const magma::TrainedModel& model() {
  static const auto m = magma::train(fixture::small_cohort(30, 21).cohort, quick_config(2));
  return m;
}

}  // namespace

TEST(Labels, Conditions) {
  EXPECT_EQ(missing_condition_label(0.25), "25%");
  EXPECT_EQ(missing_condition_label(0.9), "90%");
  EXPECT_EQ(forecast_condition_label(72.0), "from 6 to 10 years");
  EXPECT_EQ(forecast_condition_label(24.0), "from 2 to 10 years");
  EXPECT_EQ(default_missing_ratios().size(), 5u);
  EXPECT_EQ(default_forecast_cutoffs().size(), 5u);
}

TEST(Missing, FailuresAreCountedNotFatal) {
  const auto test = fixture::small_cohort(8, 22).cohort;
  FailingPredictor bad;
  NanPredictor nan;
  SplinePredictor spline;
  const Predictor* methods[] = {&bad, &nan, &spline};
  const std::vector<double> ratios = {0.5};
  const auto rep = run_missing_experiment(methods, test, ratios, {});
  const auto* row = rep.find("always_fails", "50%");
  ASSERT_NE(row, nullptr);
  EXPECT_DOUBLE_EQ(row->failed_fraction, 1.0);
  EXPECT_TRUE(std::isnan(row->mse_mean));
  EXPECT_DOUBLE_EQ(rep.find("nan", "50%")->failed_fraction, 1.0);
  EXPECT_EQ(rep.find("spline", "50%")->n_evaluated, test.size());
  EXPECT_FALSE(rep.find("spline", "50%")->wcic_mean.has_value());
}

TEST(Missing, SplineFailsEverywhereAtNinetyPercent) {
  const auto test = fixture::small_cohort(10, 23).cohort;
  SplinePredictor spline;
  const Predictor* methods[] = {&spline};
  const std::vector<double> ratios = {0.9};
  const auto rep = run_missing_experiment(methods, test, ratios, {});
  EXPECT_DOUBLE_EQ(rep.find("spline", "90%")->failed_fraction, 1.0);
}

TEST(Missing, ZeroRatioSkipsEveryone) {
  const auto test = fixture::small_cohort(4, 24).cohort;
  SplinePredictor spline;
  const Predictor* methods[] = {&spline};
  const std::vector<double> ratios = {0.0};
  const auto rep = run_missing_experiment(methods, test, ratios, {});
  EXPECT_EQ(rep.skipped.size(), test.size());
  EXPECT_EQ(rep.find("spline", "0%")->n_evaluated, 0u);
}

TEST(Missing, DeterministicForFixedSeed) {
  const auto test = fixture::small_cohort(6, 25).cohort;
  GpMixturePredictor gp(model());
  SplinePredictor spline;
  const Predictor* methods[] = {&gp, &spline};
  const std::vector<double> ratios = {0.25, 0.5};
  ExperimentOptions o;
  o.seed = 99;
  const auto a = run_missing_experiment(methods, test, ratios, o);
  const auto b = run_missing_experiment(methods, test, ratios, o);
  EXPECT_EQ(format_report_json(a), format_report_json(b));
  EXPECT_EQ(format_report_csv(a), format_report_csv(b));
  const auto* row = a.find("gp_mixture", "25%");
  ASSERT_TRUE(row->wcic_mean.has_value());
  EXPECT_GE(*row->wcic_mean, 0.0);
  EXPECT_LE(*row->wcic_mean, 100.0);
}

TEST(Forecast, EmptyHistoryRoutesToMixingWeights) {
  const auto s = fixture::bmi_series("late", {30.0, 60.0, 90.0, 120.0}, {16.0, 15.5, 16.2, 17.0});
  const Cohort test({s}, SyntheticProvenance{});
  GpMixturePredictor gp(model());
  SplinePredictor spline;
  const Predictor* methods[] = {&gp, &spline};
  const std::vector<double> cutoffs = {24.0};
  const auto rep = run_forecast_experiment(methods, test, cutoffs, {});
  EXPECT_EQ(rep.protocol, "forecast");
  EXPECT_DOUBLE_EQ(rep.find("gp_mixture", "from 2 to 10 years")->failed_fraction, 0.0);
  EXPECT_DOUBLE_EQ(rep.find("spline", "from 2 to 10 years")->failed_fraction, 1.0);
  for (const auto& ind : rep.individuals) {
    if (ind.method != "gp_mixture") continue;
    ASSERT_TRUE(ind.record.has_value());
    for (std::size_t k = 0; k < ind.record->weights.size(); ++k) {
      EXPECT_NEAR(ind.record->weights[k], model().mixing(static_cast<Eigen::Index>(k)), 1e-12);
    }
  }
}

TEST(Report, CsvLayout) {
  const auto test = fixture::small_cohort(4, 26).cohort;
  SplinePredictor spline;
  const Predictor* methods[] = {&spline};
  const std::vector<double> ratios = {0.1, 0.25, 0.5, 0.75, 0.9};
  const auto csv = format_report_csv(run_missing_experiment(methods, test, ratios, {}));
  std::size_t rows = 0, pos = 0;
  bool header_seen = false;
  while (pos < csv.size()) {
    const auto end = csv.find('\n', pos);
    const auto line = csv.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("#", 0) == 0) continue;
    if (!header_seen) {
      EXPECT_EQ(line, "method,condition,mse_mean,mse_sd,wcic_mean,wcic_sd,failed_fraction");
      header_seen = true;
      continue;
    }
    ++rows;
  }
  EXPECT_EQ(rows, 5u);
}

TEST(Sweep, OccupancySumsToCohortSize) {
  const auto train = fixture::small_cohort(20, 27).cohort;
  const std::vector<std::size_t> ks = {1, 2};
  const auto sweep = run_cluster_sweep(train, ks, quick_config(1));
  ASSERT_EQ(sweep.size(), 2u);
  for (const auto& e : sweep) {
    std::size_t total = 0;
    for (auto c : e.occupancy) total += c;
    EXPECT_EQ(total, train.size());
    EXPECT_EQ(e.curves.size(), e.n_clusters);
    for (const auto& c : e.curves) {
      for (std::size_t i = 0; i < c.mean.size(); ++i) {
        EXPECT_LE(c.lower95[i], c.mean[i]);
        EXPECT_GE(c.upper95[i], c.mean[i]);
      }
    }
  }
  EXPECT_NE(format_sweep_json(sweep).find("cluster_sweep"), std::string::npos);
}

TEST(Sex, OneArmPerSexWithItsOwnCurves) {
  const auto sim = fixture::small_cohort(40, 28).cohort;
  const auto [train, test] = split_cohort(sim, 30, 1);
  auto cfg = quick_config(3);
  const std::vector<double> ratios = {0.5}, cutoffs = {72.0};
  const auto arms = run_sex_stratified(train, test, cfg, ratios, cutoffs, {});
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_NE(arms[0].sex, arms[1].sex);
  for (const auto& arm : arms) {
    EXPECT_EQ(arm.curves.size(), 3u);
    EXPECT_NE(arm.missing.find("gp_mixture", "50%"), nullptr);
  }
  EXPECT_NE(format_sex_json(arms).find("sex_stratified"), std::string::npos);
}
