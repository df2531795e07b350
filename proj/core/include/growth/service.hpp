#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "growth/magmaclust.hpp"

namespace growth::service {

struct ServiceConfig {
  std::string model_path;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  std::size_t max_body_bytes = 1 << 20;
  std::vector<std::string> cors_allow;  // "*" allows any origin
  int threads = 4;
};

inline constexpr std::size_t kMaxWireSamples = 200;
inline constexpr std::size_t kMaxRiskSamples = 1000000;

struct Response {
  int status = 200;
  std::string body;
};

// Endpoint logic over an immutable model; transport-independent and safe to
// call concurrently.
class Service {
 public:
  explicit Service(magma::TrainedModel model);

  Response health() const;
  Response clusters() const;
  Response predict(const std::string& body) const;
  Response risk(const std::string& body) const;

  const magma::TrainedModel& model() const { return model_; }
  const std::string& model_version() const { return version_; }

 private:
  magma::TrainedModel model_;
  std::string version_;
  std::string clusters_body_;
};

// Loads and validates the model file; throws on failure.
std::shared_ptr<const Service> load_service(const ServiceConfig& config);

class HttpServer {
 public:
  HttpServer(ServiceConfig config, std::shared_ptr<const Service> service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port; throws std::runtime_error when binding fails.
  int bind();
  // Blocks until stop(); in-flight requests complete before returning.
  void run();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace growth::service
