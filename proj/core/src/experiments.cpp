#include "growth/experiments.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "growth/error.hpp"
#include "growth/spline.hpp"
#include "growth/stats.hpp"

namespace growth::experiments {

using nlohmann::json;
using stats::central_z;
using stats::derive_seed;

namespace {

constexpr double kLevel = 0.95;

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string csv_number(double v) { return std::isfinite(v) ? shortest(v) : std::string(); }

std::vector<double> measure_points(const GrowthSeries& s, bool weight, std::vector<double>& ages) {
  std::vector<double> vals;
  ages.clear();
  for (const auto& o : s.observations()) {
    const auto& v = weight ? o.weight : o.height;
    if (v) {
      ages.push_back(o.age);
      vals.push_back(*v);
    }
  }
  return vals;
}

std::vector<double> plot_grid() {
  std::vector<double> g;
  for (int t = 0; t <= 120; t += 2) g.push_back(t);
  return g;
}

void band_json(const std::vector<metrics::Interval>& band, const char* lo_key, const char* hi_key,
               json& e) {
  json lo = json::array(), hi = json::array();
  for (const auto& b : band) {
    lo.push_back(b.lower);
    hi.push_back(b.upper);
  }
  e[lo_key] = lo;
  e[hi_key] = hi;
}

struct Split {
  GrowthSeries kept;
  GrowthSeries held;
};

// Runs every method on each individual's split and aggregates per method.
template <typename Splitter>
void evaluate_condition(std::span<const Predictor* const> methods, const Cohort& test,
                        const std::string& condition, Splitter&& split,
                        const ExperimentOptions& options, ExperimentReport& report) {
  struct Accumulator {
    std::vector<double> mse;
    std::vector<double> coverage;
    std::size_t failed = 0;
    std::size_t evaluated = 0;
    bool has_intervals = false;
  };
  std::vector<Accumulator> acc(methods.size());
  std::size_t banded = 0;

  for (const auto& series : test.individuals()) {
    const Split s = split(series);
    if (s.held.empty()) {
      report.skipped.push_back({condition, series.id(), NoTestingPoints(series.id()).what()});
      continue;
    }
    const auto ages = s.held.ages();
    const auto observed = s.held.bmis();
    const bool with_band = banded < options.banded_records;
    ++banded;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      IndividualResult res;
      res.method = methods[m]->name();
      res.condition = condition;
      res.id = series.id();
      res.status = "ok";
      ++acc[m].evaluated;
      try {
        MethodOutput out = methods[m]->predict(s.kept, ages, with_band);
        for (double v : out.mean) {
          if (!std::isfinite(v)) throw Error("non-finite prediction");
        }
        metrics::PredictionRecord rec;
        rec.id = series.id();
        rec.condition = condition;
        rec.ages = ages;
        rec.observed = observed;
        rec.predicted = std::move(out.mean);
        rec.cluster_intervals = std::move(out.cluster_intervals);
        rec.weights = std::move(out.weights);
        rec.validate();
        acc[m].mse.push_back(metrics::mse(rec));
        if (!rec.weights.empty()) {
          acc[m].has_intervals = true;
          acc[m].coverage.push_back(100.0 * metrics::weighted_coverage(rec));
        }
        res.mixture_band = std::move(out.mixture_band);
        res.record = std::move(rec);
        if (with_band) {
          res.retained_ages = s.kept.ages();
          res.retained_values = s.kept.bmis();
          res.curve_ages = plot_grid();
          MethodOutput curve = methods[m]->predict(s.kept, res.curve_ages, true);
          res.curve_mean = std::move(curve.mean);
          res.curve_band = std::move(curve.mixture_band);
        }
      } catch (const Error& e) {
        ++acc[m].failed;
        res.status = e.what();
      }
      report.individuals.push_back(std::move(res));
    }
  }

  for (std::size_t m = 0; m < methods.size(); ++m) {
    ReportRow row;
    row.method = methods[m]->name();
    row.condition = condition;
    const auto ms = metrics::summarize(acc[m].mse);
    row.mse_mean = ms.mean;
    row.mse_sd = ms.sd;
    if (acc[m].has_intervals) {
      const auto cs = metrics::summarize(acc[m].coverage);
      row.wcic_mean = cs.mean;
      row.wcic_sd = cs.sd;
    }
    row.n_evaluated = acc[m].evaluated;
    row.n_failed = acc[m].failed;
    row.failed_fraction = acc[m].evaluated == 0 ? 0.0
                                                : static_cast<double>(acc[m].failed) /
                                                      static_cast<double>(acc[m].evaluated);
    report.rows.push_back(std::move(row));
  }
}

json curve_json(const ClusterCurve& c) {
  return {{"weight", c.weight}, {"mean", c.mean}, {"lower95", c.lower95}, {"upper95", c.upper95}};
}

json number_or_null(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

json report_to_json(const ExperimentReport& r) {
  json j;
  j["protocol"] = r.protocol;
  j["metadata"] = {
      {"mse", "mean over individuals of per-individual mean squared error; sd across individuals"},
      {"wcic_indicator", "per_point"},
      {"interval_level", kLevel},
      {"failed_fraction", "failed / evaluated individuals; failed fits excluded from aggregates"}};
  j["rows"] = json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"method", row.method},
                         {"condition", row.condition},
                         {"mse_mean", number_or_null(row.mse_mean)},
                         {"mse_sd", number_or_null(row.mse_sd)},
                         {"wcic_mean", number_or_null(row.wcic_mean)},
                         {"wcic_sd", number_or_null(row.wcic_sd)},
                         {"failed_fraction", row.failed_fraction},
                         {"n_evaluated", row.n_evaluated},
                         {"n_failed", row.n_failed}});
  }
  j["records"] = json::array();
  for (const auto& ind : r.individuals) {
    json e = {{"method", ind.method},
              {"condition", ind.condition},
              {"id", ind.id},
              {"status", ind.status}};
    if (ind.record) {
      e["ages"] = ind.record->ages;
      e["observed"] = ind.record->observed;
      e["predicted"] = ind.record->predicted;
      e["weights"] = ind.record->weights;
    }
    if (!ind.mixture_band.empty()) band_json(ind.mixture_band, "lower95", "upper95", e);
    if (!ind.curve_ages.empty()) {
      e["retained_ages"] = ind.retained_ages;
      e["retained_values"] = ind.retained_values;
      e["curve_ages"] = ind.curve_ages;
      e["curve_mean"] = ind.curve_mean;
      if (!ind.curve_band.empty()) band_json(ind.curve_band, "curve_lower95", "curve_upper95", e);
    }
    j["records"].push_back(std::move(e));
  }
  j["skipped"] = json::array();
  for (const auto& s : r.skipped) {
    j["skipped"].push_back({{"condition", s.condition}, {"id", s.id}, {"reason", s.reason}});
  }
  return j;
}

}  // namespace

MethodOutput GpMixturePredictor::predict(const GrowthSeries& retained,
                                         std::span<const double> targets, bool with_band) const {
  const auto pred = magma::predict(*model_, retained, targets);
  MethodOutput out;
  const auto mean = pred.mean();
  out.mean.assign(mean.data(), mean.data() + mean.size());
  const double z = central_z(kLevel);
  for (std::size_t k = 0; k < pred.per_cluster.size(); ++k) {
    const auto& post = pred.per_cluster[k];
    const auto sd = post.sd();
    std::vector<metrics::Interval> iv(targets.size());
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      iv[j] = {post.mean(jj) - z * sd(jj), post.mean(jj) + z * sd(jj)};
    }
    out.cluster_intervals.push_back(std::move(iv));
    out.weights.push_back(pred.weights(static_cast<Eigen::Index>(k)));
  }
  if (with_band) {
    const auto band = magma::credible_band(pred, kLevel);
    for (Eigen::Index j = 0; j < band.mixture.lower.size(); ++j) {
      out.mixture_band.push_back({band.mixture.lower(j), band.mixture.upper(j)});
    }
  }
  return out;
}

MethodOutput SplinePredictor::predict(const GrowthSeries& retained,
                                      std::span<const double> targets, bool) const {
  const auto fit = baselines::fit_smoothing_spline(retained);
  MethodOutput out;
  out.mean = baselines::eval_spline(fit, targets);
  return out;
}

JenssBayleyPredictor JenssBayleyPredictor::fit(const Cohort& train, double ridge) {
  return JenssBayleyPredictor(baselines::fit_jenss_bayley(train, baselines::Measure::weight, ridge),
                              baselines::fit_jenss_bayley(train, baselines::Measure::height, ridge));
}

MethodOutput JenssBayleyPredictor::predict(const GrowthSeries& retained,
                                           std::span<const double> targets, bool) const {
  std::vector<double> wa, ha;
  const auto wv = measure_points(retained, true, wa);
  const auto hv = measure_points(retained, false, ha);
  const auto wo = weight_.fit_individual(wa, wv);
  const auto ho = height_.fit_individual(ha, hv);
  MethodOutput out;
  out.mean = baselines::bmi_from_curves(weight_.predict(wo, targets), height_.predict(ho, targets));
  return out;
}

const ReportRow* ExperimentReport::find(const std::string& method,
                                        const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.method == method && r.condition == condition) return &r;
  }
  return nullptr;
}

std::string missing_condition_label(double ratio) { return shortest(100.0 * ratio) + "%"; }

std::string forecast_condition_label(double cutoff) {
  return "from " + shortest(cutoff / 12.0) + " to 10 years";
}

std::vector<double> default_missing_ratios() { return {0.10, 0.25, 0.50, 0.75, 0.90}; }
std::vector<double> default_forecast_cutoffs() { return {24, 36, 48, 60, 72}; }

ExperimentReport run_missing_experiment(std::span<const Predictor* const> methods,
                                        const Cohort& test, std::span<const double> ratios,
                                        const ExperimentOptions& options) {
  ExperimentReport report;
  report.protocol = "missing";
  const std::uint64_t base = derive_seed(options.seed, "missing");
  for (double ratio : ratios) {
    const std::uint64_t ratio_seed = derive_seed(base, std::bit_cast<std::uint64_t>(ratio));
    evaluate_condition(
        methods, test, missing_condition_label(ratio),
        [&](const GrowthSeries& s) {
          auto sp = mask_random(s, ratio, derive_seed(ratio_seed, s.id()));
          return Split{std::move(sp.kept), std::move(sp.held_out)};
        },
        options, report);
  }
  return report;
}

ExperimentReport run_forecast_experiment(std::span<const Predictor* const> methods,
                                         const Cohort& test, std::span<const double> cutoffs,
                                         const ExperimentOptions& options) {
  ExperimentReport report;
  report.protocol = "forecast";
  for (double cutoff : cutoffs) {
    evaluate_condition(
        methods, test, forecast_condition_label(cutoff),
        [&](const GrowthSeries& s) {
          auto sp = truncate_after(s, cutoff);
          return Split{std::move(sp.kept), std::move(sp.held_out)};
        },
        options, report);
  }
  return report;
}

std::vector<ClusterCurve> cluster_curves(const magma::TrainedModel& model) {
  const double z = central_z(kLevel);
  std::vector<ClusterCurve> out;
  for (std::size_t k = 0; k < model.hyper_posteriors.size(); ++k) {
    const auto& hp = model.hyper_posteriors[k];
    const auto sd = hp.sd();
    ClusterCurve c;
    c.weight = model.mixing(static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < hp.mean.size(); ++j) {
      c.mean.push_back(hp.mean(j));
      c.lower95.push_back(hp.mean(j) - z * sd(j));
      c.upper95.push_back(hp.mean(j) + z * sd(j));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<SweepEntry> run_cluster_sweep(const Cohort& train, std::span<const std::size_t> ks,
                                          const magma::ModelConfig& config) {
  std::vector<SweepEntry> out;
  for (std::size_t k : ks) {
    magma::ModelConfig cfg = config;
    cfg.n_clusters = k;
    const auto model = magma::train(train, cfg);
    out.push_back({k, model.occupancy(), cluster_curves(model), model.config.working_grid});
  }
  return out;
}

std::vector<SexArm> run_sex_stratified(const Cohort& train, const Cohort& test,
                                       const magma::ModelConfig& config,
                                       std::span<const double> ratios,
                                       std::span<const double> cutoffs,
                                       const ExperimentOptions& options) {
  std::vector<SexArm> arms;
  for (Sex sex : {Sex::female, Sex::male}) {
    SexArm arm;
    arm.sex = sex;
    const Cohort tr = train.filter_sex(sex);
    const Cohort te = test.filter_sex(sex);
    arm.model = magma::train(tr, config);
    const GpMixturePredictor gp(arm.model);
    const Predictor* methods[] = {&gp};
    ExperimentOptions opt = options;
    opt.seed = derive_seed(options.seed, static_cast<std::uint64_t>(sex_code(sex)));
    arm.missing = run_missing_experiment(methods, te, ratios, opt);
    arm.forecast = run_forecast_experiment(methods, te, cutoffs, opt);
    arm.curves = cluster_curves(arm.model);
    arms.push_back(std::move(arm));
  }
  return arms;
}

std::string format_report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "# mse: mean over individuals of per-individual MSE (sd across individuals)\n"
     << "# wcic: per-point interval indicator averaged within individual, 95% level\n"
     << "method,condition,mse_mean,mse_sd,wcic_mean,wcic_sd,failed_fraction\n";
  for (const auto& r : report.rows) {
    os << r.method << ',' << r.condition << ',' << csv_number(r.mse_mean) << ','
       << csv_number(r.mse_sd) << ',' << (r.wcic_mean ? csv_number(*r.wcic_mean) : "") << ','
       << (r.wcic_sd ? csv_number(*r.wcic_sd) : "") << ',' << csv_number(r.failed_fraction)
       << '\n';
  }
  return os.str();
}

std::string format_report_json(const ExperimentReport& report) {
  return report_to_json(report).dump(1);
}

std::string format_sweep_json(std::span<const SweepEntry> sweep) {
  json j = json::array();
  for (const auto& e : sweep) {
    json curves = json::array();
    for (const auto& c : e.curves) curves.push_back(curve_json(c));
    j.push_back({{"n_clusters", e.n_clusters},
                 {"occupancy", e.occupancy},
                 {"grid_months", e.grid},
                 {"clusters", curves}});
  }
  return json{{"protocol", "cluster_sweep"}, {"entries", j}}.dump(1);
}

std::string format_sex_json(std::span<const SexArm> arms) {
  json j = json::array();
  for (const auto& a : arms) {
    json curves = json::array();
    for (const auto& c : a.curves) curves.push_back(curve_json(c));
    j.push_back({{"sex", std::string(1, sex_code(a.sex))},
                 {"grid_months", a.model.config.working_grid},
                 {"clusters", curves},
                 {"missing", report_to_json(a.missing)},
                 {"forecast", report_to_json(a.forecast)}});
  }
  return json{{"protocol", "sex_stratified"}, {"arms", j}}.dump(1);
}

}  // namespace growth::experiments
