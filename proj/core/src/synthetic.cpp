#include "growth/synthetic.hpp"

#include <cmath>
#include <json.hpp>
#include <random>
#include <stdexcept>

#include "growth/error.hpp"
#include "growth/stats.hpp"

namespace growth::synth {

using nlohmann::json;

double CurveTemplate::operator()(double t) const {
  double v = birth_bmi + peak_gain * (t / peak_age) * std::exp(1.0 - t / peak_age);
  if (t > rebound_age) {
    const double x = (t - rebound_age) / (120.0 - rebound_age);
    v += rebound_gain * x * x;
  }
  return v;
}

double height_template(double t) {
  // Logistic plus linear: 50 cm at birth, ~140 cm at 120 months.
  return 50.0 + 30.0 * (2.0 / (1.0 + std::exp(-t / 8.0)) - 1.0) + 0.5 * t;
}

void SyntheticSpec::validate() const {
  if (cluster_templates.empty()) throw DegenerateSpec("no cluster templates");
  if (visit_schedule.empty()) throw DegenerateSpec("empty visit schedule");
  if (n_individuals == 0) throw DegenerateSpec("n_individuals must be positive");
  double total = 0.0;
  for (const auto& c : cluster_templates) {
    if (!(c.weight > 0.0)) throw DegenerateSpec("mixing weights must be positive");
    if (!(c.curve.peak_age > 0.0) || !(c.curve.rebound_age < 120.0)) {
      throw DegenerateSpec("template needs peak_age > 0 and rebound_age < 120");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DegenerateSpec("mixing weights must sum to 1");
  for (std::size_t i = 1; i < visit_schedule.size(); ++i) {
    if (!(visit_schedule[i] > visit_schedule[i - 1])) {
      throw DegenerateSpec("visit schedule must be strictly increasing");
    }
  }
  if (visit_schedule.front() < 0.0) throw DegenerateSpec("negative visit age");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DegenerateSpec("dropout_rate in [0, 1)");
  if (!(noise_sd >= 0.0)) throw DegenerateSpec("noise_sd must be >= 0");
  if (!(individual_kernel.variance >= 0.0) || !(individual_kernel.lengthscale > 0.0)) {
    throw DegenerateSpec("invalid individual kernel");
  }
  if (!(male_fraction >= 0.0 && male_fraction <= 1.0)) throw DegenerateSpec("male_fraction in [0, 1]");
}

std::vector<double> reference_schedule() {
  return {0, 0.75, 3, 6, 9, 12, 15, 18, 24, 36, 48, 54, 60, 66, 72, 78, 84, 96, 108, 120};
}

SyntheticSpec default_spec() {
  SyntheticSpec s;
  s.n_individuals = 300;
  s.cluster_templates = {
      {0.40, {13.0, 3.5, 9.0, 60.0, 2.0}},
      {0.35, {13.2, 4.2, 9.0, 54.0, 6.0}},
      {0.25, {13.6, 5.0, 9.0, 42.0, 12.0}},
  };
  s.individual_kernel = {1.0, 24.0};
  s.noise_sd = 0.3;
  s.visit_schedule = reference_schedule();
  s.dropout_rate = 0.0;
  s.male_fraction = 0.5;
  return s;
}

std::uint64_t SyntheticSpec::hash() const {
  return stats::derive_seed(0x5eedULL, spec_to_json(*this));
}

SimulationResult simulate_cohort(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& sched = spec.visit_schedule;
  const std::size_t nv = sched.size();

  // Shared square root of the individual covariance on the schedule.
  gp::MatrixXd root = gp::MatrixXd::Zero(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
  if (spec.individual_kernel.variance > 0.0) {
    root = gp::safe_factorize(gp::kernel_matrix(spec.individual_kernel, sched)).lower;
  }
  std::vector<double> cum;
  double acc = 0.0;
  for (const auto& c : spec.cluster_templates) cum.push_back(acc += c.weight);

  std::vector<GrowthSeries> individuals;
  std::vector<IndividualTruth> truth;
  individuals.reserve(spec.n_individuals);
  truth.reserve(spec.n_individuals);
  for (std::size_t i = 0; i < spec.n_individuals; ++i) {
    std::mt19937_64 rng(stats::derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const double u = unif(rng) * acc;
    std::size_t cluster = 0;
    while (cluster + 1 < cum.size() && u >= cum[cluster]) ++cluster;
    const Sex sex = unif(rng) < spec.male_fraction ? Sex::male : Sex::female;

    gp::VectorXd z(static_cast<Eigen::Index>(nv));
    for (std::size_t j = 0; j < nv; ++j) z(static_cast<Eigen::Index>(j)) = normal(rng);
    const gp::VectorXd dev = root * z;

    IndividualTruth tr;
    tr.id = "S" + std::to_string(i + 1);
    tr.cluster = cluster;
    tr.ages = sched;
    std::vector<Observation> obs;
    std::vector<char> kept(nv, 0);
    for (std::size_t j = 0; j < nv; ++j) {
      const double clean = spec.cluster_templates[cluster].curve(sched[j]) + dev(static_cast<Eigen::Index>(j));
      tr.noise_free.push_back(clean);
      const double noise = spec.noise_sd * normal(rng);
      const bool dropped = unif(rng) < spec.dropout_rate;
      kept[j] = dropped ? 0 : 1;
      const double bmi = clean + noise;
      const double h = height_template(sched[j]);
      Observation o;
      o.age = sched[j];
      o.height = h;
      o.weight = bmi * (h / 100.0) * (h / 100.0);
      o.bmi = bmi_from(*o.weight, h);
      obs.push_back(o);
    }
    // Keep at least one visit.
    bool any = false;
    for (char k : kept) any = any || k;
    if (!any) kept[std::uniform_int_distribution<std::size_t>(0, nv - 1)(rng)] = 1;

    std::vector<Observation> retained;
    for (std::size_t j = 0; j < nv; ++j)
      if (kept[j]) retained.push_back(obs[j]);
    individuals.emplace_back(tr.id, sex, std::move(retained));
    truth.push_back(std::move(tr));
  }
  return {Cohort(std::move(individuals), SyntheticProvenance{seed, spec.hash()}), std::move(truth)};
}

std::string spec_to_json(const SyntheticSpec& spec) {
  json j;
  j["n_individuals"] = spec.n_individuals;
  j["individual_kernel"] = {{"variance", spec.individual_kernel.variance},
                            {"lengthscale", spec.individual_kernel.lengthscale}};
  j["noise_sd"] = spec.noise_sd;
  j["visit_schedule"] = spec.visit_schedule;
  j["dropout_rate"] = spec.dropout_rate;
  j["male_fraction"] = spec.male_fraction;
  j["clusters"] = json::array();
  for (const auto& c : spec.cluster_templates) {
    j["clusters"].push_back({{"weight", c.weight},
                             {"template",
                              {{"birth_bmi", c.curve.birth_bmi},
                               {"peak_gain", c.curve.peak_gain},
                               {"peak_age", c.curve.peak_age},
                               {"rebound_age", c.curve.rebound_age},
                               {"rebound_gain", c.curve.rebound_gain}}}});
  }
  return j.dump(2);
}

SyntheticSpec spec_from_json(const std::string& text) {
  SyntheticSpec s = default_spec();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DegenerateSpec(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  try {
    if (j.contains("n_individuals")) s.n_individuals = j.at("n_individuals").get<std::size_t>();
    if (j.contains("individual_kernel")) {
      s.individual_kernel.variance = j.at("individual_kernel").at("variance").get<double>();
      s.individual_kernel.lengthscale = j.at("individual_kernel").at("lengthscale").get<double>();
    }
    if (j.contains("noise_sd")) s.noise_sd = j.at("noise_sd").get<double>();
    if (j.contains("visit_schedule")) s.visit_schedule = j.at("visit_schedule").get<std::vector<double>>();
    if (j.contains("dropout_rate")) s.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("male_fraction")) s.male_fraction = j.at("male_fraction").get<double>();
    if (j.contains("clusters")) {
      s.cluster_templates.clear();
      for (const auto& c : j.at("clusters")) {
        ClusterTemplate ct;
        ct.weight = c.at("weight").get<double>();
        const auto& t = c.at("template");
        ct.curve.birth_bmi = t.value("birth_bmi", ct.curve.birth_bmi);
        ct.curve.peak_gain = t.value("peak_gain", ct.curve.peak_gain);
        ct.curve.peak_age = t.value("peak_age", ct.curve.peak_age);
        ct.curve.rebound_age = t.value("rebound_age", ct.curve.rebound_age);
        ct.curve.rebound_gain = t.value("rebound_gain", ct.curve.rebound_gain);
        s.cluster_templates.push_back(ct);
      }
    }
  } catch (const json::exception& e) {
    throw DegenerateSpec(std::string("invalid synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace growth::synth
