#include "growth/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <stdexcept>

#include "growth/error.hpp"
#include "growth/experiments.hpp"
#include "growth/model_io.hpp"
#include "growth/overweight.hpp"
#include "growth/stats.hpp"

namespace growth::service {

using nlohmann::json;

namespace {

// Malformed payload (400) versus well-formed but out-of-domain (422).
struct SchemaViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Response error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const SchemaViolation& e) {
    return error_response(400, e.what());
  } catch (const json::exception&) {
    return error_response(400, "malformed JSON body");
  } catch (const DomainViolation& e) {
    return error_response(422, e.what());
  } catch (const TargetOutOfRange& e) {
    return error_response(422, e.what());
  } catch (const TargetAgeMissing& e) {
    return error_response(422, e.what());
  } catch (...) {
    return error_response(500, "internal error");
  }
}

const json& require(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end()) throw SchemaViolation(std::string("missing field: ") + key);
  return *it;
}

double number(const json& v, const char* what) {
  if (!v.is_number()) throw SchemaViolation(std::string(what) + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw SchemaViolation(std::string(what) + " must be finite");
  return x;
}

std::uint64_t unsigned_field(const json& body, const char* key, std::uint64_t fallback) {
  auto it = body.find(key);
  if (it == body.end()) return fallback;
  if (!it->is_number_unsigned() &&
      !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    throw SchemaViolation(std::string(key) + " must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

Sex parse_sex_field(const json& body) {
  const json& v = require(body, "sex");
  if (!v.is_string()) throw SchemaViolation("sex must be \"F\" or \"M\"");
  const auto s = v.get<std::string>();
  if (s == "F") return Sex::female;
  if (s == "M") return Sex::male;
  throw SchemaViolation("sex must be \"F\" or \"M\"");
}

struct Observed {
  std::vector<double> ages;
  std::vector<double> values;
};

Observed parse_observations(const json& body) {
  const json& arr = require(body, "observations");
  if (!arr.is_array()) throw SchemaViolation("observations must be an array");
  std::vector<std::pair<double, double>> pts;
  for (const auto& o : arr) {
    if (!o.is_object()) throw SchemaViolation("each observation must be an object");
    const double age = number(require(o, "age_months"), "age_months");
    const double bmi = number(require(o, "bmi"), "bmi");
    if (age < 0.0) throw DomainViolation("observation age must be >= 0");
    if (!(bmi > kBmiLower && bmi < kBmiUpper)) throw DomainViolation("bmi outside (5, 60)");
    pts.emplace_back(age, bmi);
  }
  std::sort(pts.begin(), pts.end());
  Observed out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0 && pts[i].first == pts[i - 1].first) {
      throw DomainViolation("duplicate observation age");
    }
    out.ages.push_back(pts[i].first);
    out.values.push_back(pts[i].second);
  }
  return out;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::string fingerprint(const magma::TrainedModel& model) {
  const std::string text = magma::model_to_json(model);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string("1-") + buf;
}

}  // namespace

Service::Service(magma::TrainedModel model) : model_(std::move(model)) {
  version_ = fingerprint(model_);
  json clusters = json::array();
  for (const auto& c : experiments::cluster_curves(model_)) {
    clusters.push_back(
        {{"weight", c.weight}, {"mean", c.mean}, {"lower95", c.lower95}, {"upper95", c.upper95}});
  }
  clusters_body_ =
      json{{"grid_months", model_.config.working_grid}, {"clusters", clusters}}.dump();
}

Response Service::health() const {
  return {200, json{{"status", "ok"}, {"model_version", version_}}.dump()};
}

Response Service::clusters() const { return {200, clusters_body_}; }

Response Service::predict(const std::string& text) const {
  return guarded([&] {
    const json body = json::parse(text);
    if (!body.is_object()) throw SchemaViolation("body must be a JSON object");
    parse_sex_field(body);
    const Observed obs = parse_observations(body);
    const json& t = require(body, "target_ages");
    if (!t.is_array() || t.empty()) throw SchemaViolation("target_ages must be a non-empty array");
    std::vector<double> targets;
    for (const auto& v : t) targets.push_back(number(v, "target_ages entry"));
    const std::uint64_t n_samples = unsigned_field(body, "n_samples", 0);
    const std::uint64_t seed = unsigned_field(body, "seed", 0);

    const auto pred = magma::predict(model_, obs.ages, obs.values, targets);
    const auto bands = magma::credible_band(pred, 0.95);
    json out;
    out["target_ages"] = targets;
    out["mean"] = to_vec(pred.mean());
    out["mixture_lower95"] = to_vec(bands.mixture.lower);
    out["mixture_upper95"] = to_vec(bands.mixture.upper);
    out["weights"] = to_vec(pred.weights);
    json clusters = json::array();
    for (std::size_t k = 0; k < pred.per_cluster.size(); ++k) {
      clusters.push_back({{"mean", to_vec(pred.per_cluster[k].mean)},
                          {"lower95", to_vec(bands.per_cluster[k].lower)},
                          {"upper95", to_vec(bands.per_cluster[k].upper)}});
    }
    out["clusters"] = clusters;
    if (n_samples > 0) {
      const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(n_samples, kMaxWireSamples));
      const Eigen::MatrixXd draws = magma::sample_trajectories(pred, n, seed);
      json rows = json::array();
      for (Eigen::Index r = 0; r < draws.rows(); ++r) rows.push_back(to_vec(draws.row(r).transpose()));
      out["samples"] = rows;
      out["seed"] = seed;
    }
    return Response{200, out.dump()};
  });
}

Response Service::risk(const std::string& text) const {
  return guarded([&] {
    const json body = json::parse(text);
    if (!body.is_object()) throw SchemaViolation("body must be a JSON object");
    const Sex sex = parse_sex_field(body);
    const Observed obs = parse_observations(body);
    overweight::OverweightSpec spec;
    if (auto it = body.find("target_age_months"); it != body.end()) {
      spec.target_age = number(*it, "target_age_months");
    }
    double threshold = spec.threshold(sex);
    if (auto it = body.find("threshold"); it != body.end()) {
      threshold = number(*it, "threshold");
      if (!(threshold > 0.0)) throw DomainViolation("threshold must be positive");
    }
    overweight::RiskMethod method = overweight::RiskMethod::closed_form;
    if (auto it = body.find("method"); it != body.end()) {
      if (!it->is_string()) throw SchemaViolation("method must be a string");
      try {
        method = overweight::parse_method(it->get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw SchemaViolation(e.what());
      }
    }
    const std::uint64_t n_samples = unsigned_field(body, "n_samples", spec.n_samples);
    if (n_samples < 1 || n_samples > kMaxRiskSamples) {
      throw DomainViolation("n_samples must lie in [1, 1000000]");
    }
    spec.n_samples = static_cast<std::size_t>(n_samples);
    const std::uint64_t seed = unsigned_field(body, "seed", 0);

    const std::vector<double> target = {spec.target_age};
    const auto pred = magma::predict(model_, obs.ages, obs.values, target);
    const auto r = overweight::overweight_probability(pred, spec, threshold, method, seed);
    json out = {{"probability", r.probability},
                {"method", overweight::method_name(r.method)},
                {"threshold_used", r.threshold},
                {"target_age_months", spec.target_age}};
    if (method == overweight::RiskMethod::monte_carlo) {
      out["n_samples"] = r.n_samples;
      out["seed"] = seed;
    }
    return Response{200, out.dump()};
  });
}

std::shared_ptr<const Service> load_service(const ServiceConfig& config) {
  return std::make_shared<const Service>(magma::load_model(config.model_path));
}

struct HttpServer::Impl {
  ServiceConfig config;
  std::shared_ptr<const Service> service;
  httplib::Server server;
};

HttpServer::HttpServer(ServiceConfig config, std::shared_ptr<const Service> service)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->service = std::move(service);
  auto& srv = impl_->server;
  const ServiceConfig& cfg = impl_->config;
  const Service* svc = impl_->service.get();

  const int threads = std::max(1, cfg.threads);
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  srv.set_payload_max_length(cfg.max_body_bytes);

  auto cors = [&cfg](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_header("Origin")) return;
    const std::string origin = req.get_header_value("Origin");
    for (const auto& allowed : cfg.cors_allow) {
      if (allowed == "*" || allowed == origin) {
        res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
        res.set_header("Vary", "Origin");
        return;
      }
    }
  };
  auto send = [cors](const httplib::Request& req, httplib::Response& res, const Response& r) {
    cors(req, res);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };

  srv.Get("/v1/health", [svc, send](const httplib::Request& q, httplib::Response& s) {
    send(q, s, svc->health());
  });
  srv.Get("/v1/clusters", [svc, send](const httplib::Request& q, httplib::Response& s) {
    send(q, s, svc->clusters());
  });
  srv.Post("/v1/predict", [svc, send](const httplib::Request& q, httplib::Response& s) {
    send(q, s, svc->predict(q.body));
  });
  srv.Post("/v1/risk", [svc, send](const httplib::Request& q, httplib::Response& s) {
    send(q, s, svc->risk(q.body));
  });
  srv.Options(R"(/v1/.*)", [cors](const httplib::Request& q, httplib::Response& s) {
    cors(q, s);
    s.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    s.set_header("Access-Control-Allow-Headers", "Content-Type");
    s.status = 204;
  });
  srv.set_exception_handler(
      [](const httplib::Request&, httplib::Response& s, std::exception_ptr) {
        s.status = 500;
        s.set_content(json{{"error", "internal error"}}.dump(), "application/json");
      });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& s) {
    if (s.body.empty()) {
      const std::string msg = s.status == 404 ? "not found"
                              : s.status == 413 ? "request body too large"
                                                : "request failed";
      s.set_content(json{{"error", msg}}.dump(), "application/json");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& cfg = impl_->config;
  int port = cfg.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(cfg.host);
  } else if (!impl_->server.bind_to_port(cfg.host, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  cfg.port = port;
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace growth::service
