#include <gtest/gtest.h>

#include <thread>

#include "growth/experiments.hpp"
#include "growth/overweight.hpp"
#include "growth/service.hpp"
#include "support.hpp"

// After Eigen: the HTTP header leaks macros that break its product kernels.
#include <httplib.h>
#include <json.hpp>

using namespace growth;
using namespace growth::service;
using nlohmann::json;

namespace {

const magma::TrainedModel& model() {
  static const auto m = [] {
    magma::ModelConfig c;
    c.n_clusters = 2;
    c.max_vem_iters = 4;
    c.working_grid.clear();
    for (double t = 0; t <= 120; t += 6) c.working_grid.push_back(t);
    return magma::train(fixture::small_cohort(20, 41).cohort, c);
  }();
  return m;
}

const Service& svc() {
  static const Service s(model());
  return s;
}

const std::string kPredictBody = R"({"sex":"F","observations":[{"age_months":6,"bmi":17.1},
  {"age_months":24,"bmi":16.3}],"target_ages":[60,120]})";

}  // namespace

TEST(ServiceLogic, HealthReportsModelVersion) {
  const auto r = svc().health();
  EXPECT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["model_version"], svc().model_version());
  EXPECT_EQ(Service(model()).model_version(), svc().model_version());
}

TEST(ServiceLogic, ClustersMatchLibraryCurves) {
  const auto j = json::parse(svc().clusters().body);
  const auto curves = experiments::cluster_curves(model());
  ASSERT_EQ(j["clusters"].size(), curves.size());
  for (std::size_t k = 0; k < curves.size(); ++k) {
    EXPECT_EQ(j["clusters"][k]["mean"].get<std::vector<double>>(), curves[k].mean);
    EXPECT_EQ(j["clusters"][k]["weight"].get<double>(), curves[k].weight);
  }
}

TEST(ServiceLogic, PredictMatchesLibrary) {
  const auto r = svc().predict(kPredictBody);
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  const std::vector<double> a = {6, 24}, y = {17.1, 16.3}, t = {60, 120};
  const auto p = magma::predict(model(), a, y, t);
  const auto mean = j["mean"].get<std::vector<double>>();
  for (int i = 0; i < 2; ++i) EXPECT_EQ(mean[i], p.mean()(i));
  EXPECT_EQ(j["weights"].size(), 2u);
  EXPECT_FALSE(j.contains("samples"));
}

TEST(ServiceLogic, SamplesAreCappedAndReproducible) {
  json body = json::parse(kPredictBody);
  body["n_samples"] = 1000;
  body["seed"] = 7;
  const auto r1 = svc().predict(body.dump());
  const auto r2 = svc().predict(body.dump());
  ASSERT_EQ(r1.status, 200);
  EXPECT_EQ(r1.body, r2.body);
  EXPECT_EQ(json::parse(r1.body)["samples"].size(), kMaxWireSamples);
}

TEST(ServiceLogic, RiskDefaultsToClosedFormAndSexThreshold) {
  const auto r = svc().risk(R"({"sex":"F","observations":[{"age_months":12,"bmi":17.5}]})");
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["threshold_used"], 22.0);
  EXPECT_EQ(j["method"], "closed_form");
  EXPECT_EQ(j["target_age_months"], 120.0);
  const auto m = json::parse(svc().risk(R"({"sex":"M","observations":[]})").body);
  EXPECT_EQ(m["threshold_used"], 22.8);

  const std::vector<double> a = {12}, y = {17.5}, t = {120};
  const auto p = magma::predict(model(), a, y, t);
  const auto lib = overweight::overweight_probability(p, overweight::OverweightSpec{}, Sex::female,
                                                      overweight::RiskMethod::closed_form, 0);
  EXPECT_EQ(j["probability"].get<double>(), lib.probability);
}

TEST(ServiceLogic, MonteCarloRiskIsReproducible) {
  const std::string body =
      R"({"sex":"F","observations":[{"age_months":12,"bmi":17.5}],"method":"monte_carlo","n_samples":2000,"seed":3})";
  const auto a = svc().risk(body);
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body, svc().risk(body).body);
  EXPECT_EQ(json::parse(a.body)["n_samples"], 2000);
}

TEST(ServiceLogic, SchemaViolationsAre400) {
  for (const char* body : {"not json", "[1,2]", R"({"observations":[],"target_ages":[60]})",
                           R"({"sex":"X","observations":[],"target_ages":[60]})",
                           R"({"sex":"F","observations":[{"age_months":"a","bmi":15}],"target_ages":[60]})",
                           R"({"sex":"F","observations":[],"target_ages":[]})",
                           R"({"sex":"F","observations":[],"target_ages":[60],"n_samples":-1})"}) {
    const auto r = svc().predict(body);
    EXPECT_EQ(r.status, 400) << body << " -> " << r.body;
    EXPECT_TRUE(json::parse(r.body).contains("error"));
  }
  EXPECT_EQ(svc().risk(R"({"sex":"F","observations":[],"method":"guess"})").status, 400);
}

TEST(ServiceLogic, DomainViolationsAre422) {
  for (const char* body : {R"({"sex":"F","observations":[{"age_months":-1,"bmi":15}],"target_ages":[60]})",
                           R"({"sex":"F","observations":[{"age_months":1,"bmi":80}],"target_ages":[60]})",
                           R"({"sex":"F","observations":[],"target_ages":[150]})",
                           R"({"sex":"F","observations":[{"age_months":1,"bmi":15},{"age_months":1,"bmi":16}],"target_ages":[60]})"}) {
    EXPECT_EQ(svc().predict(body).status, 422) << body;
  }
  EXPECT_EQ(svc().risk(R"({"sex":"F","observations":[],"threshold":0})").status, 422);
  EXPECT_EQ(svc().risk(R"({"sex":"F","observations":[],"n_samples":0,"method":"monte_carlo"})").status, 422);
  EXPECT_EQ(svc().risk(R"({"sex":"F","observations":[],"target_age_months":200})").status, 422);
}

TEST(ServiceLogic, InternalFailuresAre500WithoutDetails) {
  auto broken = model();
  broken.individual_kernel.variance = -1.0;
  const Service bad(broken);
  const auto r = bad.predict(kPredictBody);
  EXPECT_EQ(r.status, 500);
  EXPECT_EQ(json::parse(r.body)["error"], "internal error");
}

TEST(Http, EndpointsOverLoopback) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.cors_allow = {"http://localhost:5173"};
  auto shared = std::make_shared<const Service>(model());
  HttpServer server(cfg, shared);
  const int port = server.bind();
  ASSERT_GT(port, 0);
  std::thread th([&] { server.run(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/v1/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(h->body, shared->health().body);

  auto c = cli.Get("/v1/clusters");
  ASSERT_TRUE(c);
  EXPECT_EQ(c->body, shared->clusters().body);

  auto p1 = cli.Post("/v1/predict", kPredictBody, "application/json");
  auto p2 = cli.Post("/v1/predict", kPredictBody, "application/json");
  ASSERT_TRUE(p1 && p2);
  EXPECT_EQ(p1->status, 200);
  EXPECT_EQ(p1->body, p2->body);
  EXPECT_EQ(p1->body, shared->predict(kPredictBody).body);

  auto bad = cli.Post("/v1/predict", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto risk = cli.Post("/v1/risk", R"({"sex":"F","observations":[]})", "application/json");
  ASSERT_TRUE(risk);
  EXPECT_EQ(json::parse(risk->body)["threshold_used"], 22.0);

  httplib::Headers allowed = {{"Origin", "http://localhost:5173"}};
  auto ok = cli.Get("/v1/health", allowed);
  EXPECT_EQ(ok->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  httplib::Headers foreign = {{"Origin", "http://evil.example"}};
  auto no = cli.Get("/v1/health", foreign);
  EXPECT_FALSE(no->has_header("Access-Control-Allow-Origin"));

  auto missing = cli.Get("/v1/nothing");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  server.stop();
  th.join();
  EXPECT_FALSE(server.running());
}
