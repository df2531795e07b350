#include "growth/overweight.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "growth/error.hpp"
#include "growth/stats.hpp"

namespace growth::overweight {

using stats::derive_seed;
using stats::normal_cdf;

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? std::numeric_limits<double>::quiet_NaN()
                  : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void OverweightSpec::validate() const {
  if (!(female_threshold > 0.0) || !(male_threshold > 0.0)) {
    throw std::invalid_argument("thresholds must be positive");
  }
  if (!(decision_cutoff > 0.0 && decision_cutoff < 1.0)) {
    throw std::invalid_argument("decision cutoff must lie in (0, 1)");
  }
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  if (!(status_window >= 0.0)) throw std::invalid_argument("status window must be >= 0");
}

const char* method_name(RiskMethod m) {
  return m == RiskMethod::monte_carlo ? "monte_carlo" : "closed_form";
}

RiskMethod parse_method(const std::string& name) {
  if (name == "monte_carlo") return RiskMethod::monte_carlo;
  if (name == "closed_form") return RiskMethod::closed_form;
  throw std::invalid_argument("unknown risk method: " + name);
}

double exceedance_fraction(std::span<const double> values, double threshold) {
  if (values.empty()) throw std::invalid_argument("no samples");
  std::size_t above = 0;
  for (double v : values) above += v > threshold ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(values.size());
}

RiskResult overweight_probability(const magma::MixturePrediction& prediction,
                                  const OverweightSpec& spec, double threshold,
                                  RiskMethod method, std::uint64_t seed, std::string id) {
  spec.validate();
  std::size_t idx = prediction.target_times.size();
  for (std::size_t j = 0; j < prediction.target_times.size(); ++j) {
    if (prediction.target_times[j] == spec.target_age) idx = j;
  }
  if (idx == prediction.target_times.size()) {
    throw TargetAgeMissing("target age " + shortest(spec.target_age) +
                           " months is not among the prediction targets");
  }
  const auto jj = static_cast<Eigen::Index>(idx);

  RiskResult r;
  r.id = std::move(id);
  r.method = method;
  r.seed = seed;
  r.threshold = threshold;
  if (method == RiskMethod::closed_form) {
    double p = 0.0;
    for (std::size_t k = 0; k < prediction.per_cluster.size(); ++k) {
      const auto& post = prediction.per_cluster[k];
      const double w = prediction.weights(static_cast<Eigen::Index>(k));
      const double mean = post.mean(jj);
      const double sd = std::sqrt(std::max(post.covariance(jj, jj), 0.0));
      const double tail = sd > 0.0 ? 1.0 - normal_cdf((threshold - mean) / sd)
                                   : (mean > threshold ? 1.0 : 0.0);
      p += w * tail;
    }
    r.probability = std::clamp(p, 0.0, 1.0);
  } else {
    // Trajectory values at the target age are the marginal draws at that
    // time point; sampling the one-point slice gives the same distribution.
    magma::MixturePrediction slice;
    slice.target_times = {spec.target_age};
    slice.weights = prediction.weights;
    for (const auto& post : prediction.per_cluster) {
      gp::GaussianPosterior s;
      s.times = {spec.target_age};
      s.mean = Eigen::VectorXd::Constant(1, post.mean(jj));
      s.covariance = Eigen::MatrixXd::Constant(1, 1, post.covariance(jj, jj));
      slice.per_cluster.push_back(std::move(s));
    }
    const Eigen::MatrixXd draws = magma::sample_trajectories(slice, spec.n_samples, seed);
    r.probability = exceedance_fraction(std::span(draws.data(), static_cast<std::size_t>(draws.size())),
                                        threshold);
    r.n_samples = spec.n_samples;
  }
  return r;
}

RiskResult overweight_probability(const magma::MixturePrediction& prediction,
                                  const OverweightSpec& spec, Sex sex, RiskMethod method,
                                  std::uint64_t seed, std::string id) {
  return overweight_probability(prediction, spec, spec.threshold(sex), method, seed,
                                std::move(id));
}

std::uint64_t risk_seed(std::uint64_t base, const std::string& id, double horizon) {
  return derive_seed(derive_seed(base, id), std::bit_cast<std::uint64_t>(horizon));
}

std::optional<bool> observed_status(const GrowthSeries& series, const OverweightSpec& spec) {
  const Observation* best = nullptr;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& o : series.observations()) {
    const double gap = std::abs(o.age - spec.target_age);
    if (gap <= spec.status_window && gap < best_gap) {
      best = &o;
      best_gap = gap;
    }
  }
  if (!best) return std::nullopt;
  return best->bmi > spec.threshold(series.sex());
}

Score classify_and_score(std::span<const RiskResult> risks,
                         const std::map<std::string, bool>& observed, double cutoff) {
  Score s;
  for (const auto& r : risks) {
    auto it = observed.find(r.id);
    if (it == observed.end()) throw MissingStatus(r.id);
    const bool pred = r.probability >= cutoff;
    if (pred && it->second) ++s.tp;
    else if (pred) ++s.fp;
    else if (it->second) ++s.fn;
    else ++s.tn;
  }
  s.sensitivity = ratio(s.tp, s.tp + s.fn);
  s.specificity = ratio(s.tn, s.tn + s.fp);
  s.accuracy = ratio(s.tp + s.tn, s.total());
  return s;
}

std::vector<double> default_horizons() { return {24, 48, 72, 96}; }

OverweightReport run_overweight_experiment(const magma::TrainedModel& model, const Cohort& test,
                                           std::span<const double> horizons,
                                           const OverweightSpec& spec, RiskMethod method,
                                           std::uint64_t seed) {
  spec.validate();
  OverweightReport report;
  report.method = method;
  const std::vector<double> target = {spec.target_age};
  for (double h : horizons) {
    HorizonResult hr;
    hr.horizon = h;
    std::vector<RiskResult> risks;
    std::map<std::string, bool> statuses;
    for (const auto& s : test.individuals()) {
      const auto status = observed_status(s, spec);
      if (!status) {
        ++hr.n_excluded;
        continue;
      }
      const auto kept = truncate_after(s, h).kept;
      const auto pred = magma::predict(model, kept, target);
      risks.push_back(
          overweight_probability(pred, spec, s.sex(), method, risk_seed(seed, s.id(), h), s.id()));
      statuses[s.id()] = *status;
      report.rows.push_back({s.id(), s.sex(), h, risks.back().probability,
                             risks.back().probability >= spec.decision_cutoff, *status});
    }
    hr.n_evaluable = risks.size();
    hr.score = classify_and_score(risks, statuses, spec.decision_cutoff);
    report.horizons.push_back(hr);
  }
  return report;
}

std::string format_risk_csv(std::span<const RiskRow> rows) {
  std::ostringstream os;
  os << "id,sex,horizon_months,probability,predicted_positive,observed_positive\n";
  for (const auto& r : rows) {
    os << r.id << ',' << sex_code(r.sex) << ',' << shortest(r.horizon) << ','
       << shortest(r.probability) << ',' << (r.predicted_positive ? 1 : 0) << ','
       << (r.observed_positive ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string format_overweight_json(const OverweightReport& report) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json hz = json::array();
  for (const auto& h : report.horizons) {
    hz.push_back({{"horizon_months", h.horizon},
                  {"n_evaluable", h.n_evaluable},
                  {"n_excluded", h.n_excluded},
                  {"tp", h.score.tp},
                  {"fp", h.score.fp},
                  {"tn", h.score.tn},
                  {"fn", h.score.fn},
                  {"sensitivity", num(h.score.sensitivity)},
                  {"specificity", num(h.score.specificity)},
                  {"accuracy", num(h.score.accuracy)}});
  }
  return json{{"protocol", "overweight"}, {"method", method_name(report.method)}, {"horizons", hz}}
      .dump(1);
}

}  // namespace growth::overweight
