#include "cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "growth/cohort.hpp"
#include "growth/error.hpp"
#include "growth/experiments.hpp"
#include "growth/magmaclust.hpp"
#include "growth/model_io.hpp"
#include "growth/overweight.hpp"
#include "growth/plot.hpp"
#include "growth/service.hpp"
#include "growth/stats.hpp"
#include "growth/synthetic.hpp"

namespace growth::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileNotFound(path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// "a,b,c" or "start:stop:step" (inclusive stop).
std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    double a = 0, b = 0, s = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> a >> c1 >> b >> c2 >> s) || c1 != ':' || c2 != ':' || !(s > 0) || b < a) {
      throw UsageError("bad range '" + text + "', expected start:stop:step");
    }
    const auto n = static_cast<long>(std::floor((b - a) / s + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * s);
    return out;
  }
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad number '" + tok + "' in list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

Cohort read_cohort(const std::string& path, bool lenient, std::ostream& err) {
  auto res = load_cohort(path, LoadOptions{!lenient});
  for (const auto& d : res.diagnostics) {
    err << "warning: row " << d.row << " (" << d.column << "): " << d.reason << '\n';
  }
  return std::move(res.cohort);
}

struct CohortArgs {
  std::string cohort;
  std::string train;
  std::string test;
  std::size_t n_train = 0;
  bool lenient = false;
};

void add_cohort_args(CLI::App* app, CohortArgs& a) {
  app->add_option("--cohort", a.cohort, "Cohort CSV, split with --n-train");
  app->add_option("--train", a.train, "Training cohort CSV");
  app->add_option("--test", a.test, "Test cohort CSV");
  app->add_option("--n-train", a.n_train, "Training size when splitting --cohort");
  app->add_flag("--lenient", a.lenient, "Skip invalid CSV rows instead of failing");
}

std::pair<Cohort, Cohort> resolve_cohorts(const CohortArgs& a, std::uint64_t seed,
                                          std::ostream& err) {
  if (!a.train.empty() && !a.test.empty()) {
    return {read_cohort(a.train, a.lenient, err), read_cohort(a.test, a.lenient, err)};
  }
  if (!a.cohort.empty() && a.n_train > 0) {
    return split_cohort(read_cohort(a.cohort, a.lenient, err), a.n_train,
                        stats::derive_seed(seed, "split"));
  }
  throw UsageError("provide --train and --test, or --cohort with --n-train");
}

magma::ModelConfig model_config(std::size_t clusters, std::uint64_t seed, int max_iters,
                                bool per_individual) {
  magma::ModelConfig cfg;
  cfg.n_clusters = clusters;
  cfg.seed = seed;
  if (max_iters > 0) cfg.max_vem_iters = max_iters;
  cfg.shared_individual_hypers = !per_individual;
  return cfg;
}

void install_stop_on_signal(service::HttpServer& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread([set, &server] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  }).detach();
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"growthcast: childhood BMI trajectory modelling", "growthcast"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Base seed for all randomness")->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
  std::string sim_spec, sim_out, sim_truth;
  std::size_t sim_n = 0;
  sim->add_option("--spec", sim_spec, "Synthetic spec JSON (default built-in)");
  sim->add_option("--n", sim_n, "Override number of individuals");
  sim->add_option("--out", sim_out, "Cohort CSV output")->required();
  sim->add_option("--truth", sim_truth, "Ground-truth cluster labels CSV");
  sim->add_option("--seed", seed, "Seed");

  // train
  auto* tr = app.add_subcommand("train", "Fit the GP mixture to a cohort");
  std::string tr_cohort, tr_out;
  std::size_t tr_k = 3;
  int tr_iters = 0;
  bool tr_per_ind = false, tr_lenient = false;
  tr->add_option("--cohort", tr_cohort, "Training cohort CSV")->required();
  tr->add_option("--clusters", tr_k, "Number of clusters")->capture_default_str();
  tr->add_option("--max-iters", tr_iters, "Maximum variational EM iterations");
  tr->add_flag("--per-individual", tr_per_ind, "Per-individual kernel hyperparameters");
  tr->add_flag("--lenient", tr_lenient, "Skip invalid CSV rows");
  tr->add_option("--out", tr_out, "Model JSON output")->required();
  tr->add_option("--seed", seed, "Seed");

  // predict
  auto* pr = app.add_subcommand("predict", "Predict BMI trajectories for a cohort");
  std::string pr_model, pr_cohort, pr_targets = "0:120:1", pr_out, pr_id;
  double pr_cutoff = -1;
  pr->add_option("--model", pr_model, "Model JSON")->required();
  pr->add_option("--cohort", pr_cohort, "Cohort CSV with observations")->required();
  pr->add_option("--targets", pr_targets, "Target ages (list or start:stop:step)")
      ->capture_default_str();
  pr->add_option("--id", pr_id, "Only this individual");
  pr->add_option("--observe-until", pr_cutoff, "Use only observations up to this age");
  pr->add_option("--out", pr_out, "Prediction CSV output")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run an evaluation protocol");
  ev->require_subcommand(1);
  CohortArgs ev_cohorts;
  std::string ev_model, ev_out, ev_json, ev_methods = "gp_mixture,spline,jenss_bayley";
  std::size_t ev_k = 3;
  int ev_iters = 0;
  double ev_ridge = 1.0;
  auto add_common = [&](CLI::App* c, bool methods) {
    add_cohort_args(c, ev_cohorts);
    c->add_option("--model", ev_model, "Pre-trained model JSON (else trained on --train)");
    c->add_option("--clusters", ev_k, "Clusters when training")->capture_default_str();
    c->add_option("--max-iters", ev_iters, "Maximum variational EM iterations");
    c->add_option("--out", ev_out, "CSV report output");
    c->add_option("--json", ev_json, "JSON report output");
    c->add_option("--seed", seed, "Seed");
    if (methods) {
      c->add_option("--methods", ev_methods, "Comma list of gp_mixture, spline, jenss_bayley")
          ->capture_default_str();
      c->add_option("--ridge", ev_ridge, "Jenss-Bayley ridge strength")->capture_default_str();
    }
  };
  std::string ev_ratios = "0.1,0.25,0.5,0.75,0.9", ev_cutoffs = "24,36,48,60,72",
              ev_ks = "2:10:1", ev_horizons = "24,48,72,96", ev_method = "monte_carlo";
  std::size_t ev_samples = 100000;
  auto* ev_missing = ev->add_subcommand("missing", "Missing-ratio sweep");
  add_common(ev_missing, true);
  ev_missing->add_option("--ratios", ev_ratios, "Masking ratios")->capture_default_str();
  auto* ev_forecast = ev->add_subcommand("forecast", "Forecast-cutoff sweep");
  add_common(ev_forecast, true);
  ev_forecast->add_option("--cutoffs", ev_cutoffs, "Observation cutoffs (months)")
      ->capture_default_str();
  auto* ev_clusters = ev->add_subcommand("clusters", "Cluster-count sweep");
  add_cohort_args(ev_clusters, ev_cohorts);
  ev_clusters->add_option("--ks", ev_ks, "Cluster counts")->capture_default_str();
  ev_clusters->add_option("--max-iters", ev_iters, "Maximum variational EM iterations");
  ev_clusters->add_option("--out", ev_out, "Occupancy CSV output");
  ev_clusters->add_option("--json", ev_json, "JSON output with mean curves");
  ev_clusters->add_option("--seed", seed, "Seed");
  auto* ev_sex = ev->add_subcommand("sex", "Sex-stratified comparison");
  add_common(ev_sex, false);
  ev_sex->add_option("--ratios", ev_ratios, "Masking ratios")->capture_default_str();
  ev_sex->add_option("--cutoffs", ev_cutoffs, "Observation cutoffs")->capture_default_str();
  auto* ev_ow = ev->add_subcommand("overweight", "Overweight classification by horizon");
  add_common(ev_ow, false);
  ev_ow->add_option("--horizons", ev_horizons, "Observation horizons (months)")
      ->capture_default_str();
  ev_ow->add_option("--method", ev_method, "monte_carlo or closed_form")->capture_default_str();
  ev_ow->add_option("--samples", ev_samples, "Monte-Carlo samples")->capture_default_str();

  // risk
  auto* rk = app.add_subcommand("risk", "Overweight probability per individual");
  std::string rk_model, rk_cohort, rk_out, rk_id, rk_method = "monte_carlo", rk_samples_out;
  double rk_target = 120, rk_horizon = -1;
  std::size_t rk_samples = 100000, rk_draw = 100;
  std::optional<double> rk_threshold;
  rk->add_option("--model", rk_model, "Model JSON")->required();
  rk->add_option("--cohort", rk_cohort, "Cohort CSV")->required();
  rk->add_option("--id", rk_id, "Only this individual");
  rk->add_option("--target-age", rk_target, "Target age (months)")->capture_default_str();
  rk->add_option("--horizon", rk_horizon, "Use only observations up to this age");
  rk->add_option("--threshold", rk_threshold, "Override the sex-specific threshold");
  rk->add_option("--method", rk_method, "monte_carlo or closed_form")->capture_default_str();
  rk->add_option("--samples", rk_samples, "Monte-Carlo samples")->capture_default_str();
  rk->add_option("--out", rk_out, "Risk CSV output")->required();
  rk->add_option("--samples-out", rk_samples_out, "Trajectory samples JSON for plotting (needs --id)");
  rk->add_option("--draw", rk_draw, "Trajectories in --samples-out")->capture_default_str();
  rk->add_option("--seed", seed, "Seed");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP JSON service");
  service::ServiceConfig sv_cfg;
  sv->add_option("--model", sv_cfg.model_path, "Model JSON")->required();
  sv->add_option("--host", sv_cfg.host, "Bind address")->capture_default_str();
  sv->add_option("--port", sv_cfg.port, "Port (0 picks one)")->capture_default_str();
  sv->add_option("--max-body", sv_cfg.max_body_bytes, "Maximum request body bytes")
      ->capture_default_str();
  sv->add_option("--cors", sv_cfg.cors_allow, "Allowed CORS origin (repeatable, * for any)");
  sv->add_option("--threads", sv_cfg.threads, "Worker threads")->capture_default_str();

  // plot
  auto* pl = app.add_subcommand("plot", "Render SVG charts from a JSON report");
  std::string pl_report, pl_dir;
  pl->add_option("--report", pl_report, "JSON report")->required();
  pl->add_option("--out", pl_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }

  try {
    if (*sim) {
      synth::SyntheticSpec spec =
          sim_spec.empty() ? synth::default_spec() : synth::spec_from_json(read_text(sim_spec));
      if (sim_n > 0) spec.n_individuals = sim_n;
      const auto res = synth::simulate_cohort(spec, seed);
      ensure_parent(sim_out);
      write_cohort(res.cohort, sim_out);
      if (!sim_truth.empty()) {
        std::ostringstream os;
        os << "id,cluster\n";
        for (const auto& t : res.truth) os << t.id << ',' << t.cluster << '\n';
        write_text(sim_truth, os.str());
      }
      out << "wrote " << res.cohort.size() << " individuals to " << sim_out << '\n';
    } else if (*tr) {
      const Cohort cohort = read_cohort(tr_cohort, tr_lenient, err);
      const auto model = magma::train(cohort, model_config(tr_k, seed, tr_iters, tr_per_ind));
      ensure_parent(tr_out);
      magma::save_model(model, tr_out);
      out << "trained K=" << tr_k << " in " << model.iterations << " iterations"
          << (model.converged ? "" : " (iteration cap reached)") << "; occupancy";
      for (auto o : model.occupancy()) out << ' ' << o;
      out << '\n';
    } else if (*pr) {
      const auto model = magma::load_model(pr_model);
      const Cohort cohort = read_cohort(pr_cohort, false, err);
      const auto targets = parse_list(pr_targets);
      std::ostringstream os;
      os.precision(17);
      os << "id,age_months,mean,lower95,upper95\n";
      bool any = false;
      for (const auto& s : cohort.individuals()) {
        if (!pr_id.empty() && s.id() != pr_id) continue;
        any = true;
        const GrowthSeries obs = pr_cutoff >= 0 ? truncate_after(s, pr_cutoff).kept : s;
        const auto pred = magma::predict(model, obs, targets);
        const auto band = magma::credible_band(pred, 0.95);
        const auto mean = pred.mean();
        for (std::size_t j = 0; j < targets.size(); ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          os << s.id() << ',' << targets[j] << ',' << mean(jj) << ',' << band.mixture.lower(jj)
             << ',' << band.mixture.upper(jj) << '\n';
        }
      }
      if (!any) throw UnknownIndividual(pr_id);
      write_text(pr_out, os.str());
    } else if (*ev) {
      if (*ev_clusters) {
        const auto [train, test] = [&] {
          if (!ev_cohorts.train.empty()) {
            return std::pair{read_cohort(ev_cohorts.train, ev_cohorts.lenient, err), Cohort{}};
          }
          if (!ev_cohorts.cohort.empty()) {
            return std::pair{read_cohort(ev_cohorts.cohort, ev_cohorts.lenient, err), Cohort{}};
          }
          throw UsageError("provide --cohort or --train");
        }();
        std::vector<std::size_t> ks;
        for (double k : parse_list(ev_ks)) ks.push_back(static_cast<std::size_t>(k));
        const auto sweep =
            experiments::run_cluster_sweep(train, ks, model_config(3, seed, ev_iters, false));
        std::ostringstream os;
        os << "n_clusters,cluster,occupancy\n";
        for (const auto& e : sweep) {
          for (std::size_t k = 0; k < e.occupancy.size(); ++k) {
            os << e.n_clusters << ',' << k << ',' << e.occupancy[k] << '\n';
          }
        }
        if (!ev_out.empty()) write_text(ev_out, os.str());
        if (!ev_json.empty()) write_text(ev_json, experiments::format_sweep_json(sweep));
        if (ev_out.empty() && ev_json.empty()) out << os.str();
        return 0;
      }

      auto [train, test] = resolve_cohorts(ev_cohorts, seed, err);
      auto get_model = [&, &train = train] {
        return ev_model.empty()
                   ? magma::train(train, model_config(ev_k, seed, ev_iters, false))
                   : magma::load_model(ev_model);
      };
      auto emit = [&](const std::string& csv, const std::string& js) {
        if (!ev_out.empty()) write_text(ev_out, csv);
        if (!ev_json.empty()) write_text(ev_json, js);
        if (ev_out.empty() && ev_json.empty()) out << csv;
      };

      if (*ev_missing || *ev_forecast) {
        const auto model = get_model();
        std::optional<experiments::GpMixturePredictor> gp;
        std::optional<experiments::SplinePredictor> sp;
        std::optional<experiments::JenssBayleyPredictor> jb;
        std::vector<const experiments::Predictor*> methods;
        std::istringstream in(ev_methods);
        std::string m;
        while (std::getline(in, m, ',')) {
          if (m == "gp_mixture") methods.push_back(&gp.emplace(model));
          else if (m == "spline") methods.push_back(&sp.emplace());
          else if (m == "jenss_bayley")
            methods.push_back(&jb.emplace(experiments::JenssBayleyPredictor::fit(train, ev_ridge)));
          else throw UsageError("unknown method '" + m + "'");
        }
        experiments::ExperimentOptions opt;
        opt.seed = seed;
        const auto report =
            *ev_missing
                ? experiments::run_missing_experiment(methods, test, parse_list(ev_ratios), opt)
                : experiments::run_forecast_experiment(methods, test, parse_list(ev_cutoffs), opt);
        emit(experiments::format_report_csv(report), experiments::format_report_json(report));
      } else if (*ev_sex) {
        experiments::ExperimentOptions opt;
        opt.seed = seed;
        const auto arms = experiments::run_sex_stratified(
            train, test, model_config(ev_k, seed, ev_iters, false), parse_list(ev_ratios),
            parse_list(ev_cutoffs), opt);
        std::ostringstream os;
        os << "sex,protocol,method,condition,mse_mean,mse_sd,wcic_mean,wcic_sd,failed_fraction\n";
        for (const auto& a : arms) {
          for (const auto* r : {&a.missing, &a.forecast}) {
            std::istringstream rows(experiments::format_report_csv(*r));
            std::string line;
            while (std::getline(rows, line)) {
              if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
              os << sex_code(a.sex) << ',' << r->protocol << ',' << line << '\n';
            }
          }
        }
        emit(os.str(), experiments::format_sex_json(arms));
      } else if (*ev_ow) {
        const auto model = get_model();
        overweight::OverweightSpec spec;
        spec.n_samples = ev_samples;
        const auto report = overweight::run_overweight_experiment(
            model, test, parse_list(ev_horizons), spec, overweight::parse_method(ev_method), seed);
        emit(overweight::format_risk_csv(report.rows), overweight::format_overweight_json(report));
      }
    } else if (*rk) {
      const auto model = magma::load_model(rk_model);
      const Cohort cohort = read_cohort(rk_cohort, false, err);
      overweight::OverweightSpec spec;
      spec.target_age = rk_target;
      spec.n_samples = rk_samples;
      const auto method = overweight::parse_method(rk_method);
      std::vector<overweight::RiskRow> rows;
      for (const auto& s : cohort.individuals()) {
        if (!rk_id.empty() && s.id() != rk_id) continue;
        const GrowthSeries obs = rk_horizon >= 0 ? truncate_after(s, rk_horizon).kept : s;
        const double thr = rk_threshold.value_or(spec.threshold(s.sex()));
        const std::vector<double> target = {spec.target_age};
        const auto pred = magma::predict(model, obs, target);
        const auto r = overweight::overweight_probability(
            pred, spec, thr, method, overweight::risk_seed(seed, s.id(), rk_horizon), s.id());
        const auto status = overweight::observed_status(s, spec);
        rows.push_back({s.id(), s.sex(), rk_horizon, r.probability,
                        r.probability >= spec.decision_cutoff, status.value_or(false)});
        if (!rk_samples_out.empty() && !rk_id.empty()) {
          std::vector<double> grid;
          for (double t = 0; t < spec.target_age; t += 1.0) grid.push_back(t);
          grid.push_back(spec.target_age);
          const auto full = magma::predict(model, obs, grid);
          const Eigen::MatrixXd draws =
              magma::sample_trajectories(full, rk_draw, stats::derive_seed(seed, "samples"));
          json samples = json::array();
          for (Eigen::Index i = 0; i < draws.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index c = 0; c < draws.cols(); ++c) row.push_back(draws(i, c));
            samples.push_back(std::move(row));
          }
          json j = {{"protocol", "risk_samples"},     {"id", s.id()},
                    {"threshold", thr},               {"target_ages", grid},
                    {"target_index", grid.size() - 1}, {"samples", samples},
                    {"observed_ages", obs.ages()},    {"observed_values", obs.bmis()}};
          write_text(rk_samples_out, j.dump(1));
        }
      }
      if (rows.empty()) throw UnknownIndividual(rk_id);
      write_text(rk_out, overweight::format_risk_csv(rows));
    } else if (*sv) {
      const auto svc = service::load_service(sv_cfg);
      service::HttpServer server(sv_cfg, svc);
      const int port = server.bind();
      out << "listening on " << sv_cfg.host << ':' << port << " model " << svc->model_version()
          << std::endl;
      install_stop_on_signal(server);
      server.run();
    } else if (*pl) {
      const auto charts = plot::charts_from_json(read_text(pl_report));
      fs::create_directories(pl_dir);
      for (const auto& [name, chart] : charts) {
        write_text(fs::path(pl_dir) / (name + ".svg"), plot::render_svg(chart));
      }
      out << "wrote " << charts.size() << " charts to " << pl_dir << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace growth::cli
