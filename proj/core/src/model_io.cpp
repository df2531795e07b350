#include "growth/model_io.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "growth/error.hpp"

namespace growth::magma {

using nlohmann::json;

namespace {

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json lower_json(const MatrixXd& l) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(i + 1));
    for (Eigen::Index j = 0; j <= i; ++j) row[static_cast<std::size_t>(j)] = l(i, j);
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd json_lower(const json& j, Eigen::Index n) {
  if (static_cast<Eigen::Index>(j.size()) != n) throw Error("cov_factor has wrong number of rows");
  MatrixXd l = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = j[static_cast<std::size_t>(i)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != i + 1) throw Error("cov_factor row has wrong length");
    for (Eigen::Index j2 = 0; j2 <= i; ++j2) l(i, j2) = row[static_cast<std::size_t>(j2)];
  }
  return l;
}

json kernel_json(const gp::KernelParams& k) {
  return {{"variance", k.variance}, {"lengthscale", k.lengthscale}};
}

gp::KernelParams json_kernel(const json& j) {
  gp::KernelParams k{j.at("variance").get<double>(), j.at("lengthscale").get<double>()};
  gp::validate(k);
  return k;
}

}  // namespace

std::string model_to_json(const TrainedModel& m) {
  json j;
  j["format"] = kModelFormatName;
  j["version"] = kModelFormatVersion;
  j["config"] = {{"n_clusters", m.config.n_clusters},
                 {"shared_individual_hypers", m.config.shared_individual_hypers},
                 {"max_vem_iters", m.config.max_vem_iters},
                 {"vem_tolerance", m.config.vem_tolerance},
                 {"working_grid", m.config.working_grid},
                 {"seed", m.config.seed}};
  j["ids"] = m.ids;
  j["mixing"] = vec_json(m.mixing);
  json tau = json::array();
  for (Eigen::Index i = 0; i < m.memberships.rows(); ++i) {
    tau.push_back(vec_json(m.memberships.row(i).transpose()));
  }
  j["memberships"] = std::move(tau);
  j["prior_mean"] = vec_json(m.prior_mean);
  j["clusters"] = json::array();
  for (std::size_t k = 0; k < m.n_clusters(); ++k) {
    j["clusters"].push_back({{"kernel", kernel_json(m.mean_kernels[k])},
                             {"mean", vec_json(m.hyper_posteriors[k].mean)},
                             {"cov_factor", lower_json(m.hyper_factors[k])}});
  }
  j["individual_kernel"] = kernel_json(m.individual_kernel);
  j["noise_variance"] = m.noise.noise_variance;
  if (!m.per_individual_kernels.empty()) {
    json per = json::array();
    for (std::size_t i = 0; i < m.per_individual_kernels.size(); ++i) {
      per.push_back({{"variance", m.per_individual_kernels[i].variance},
                     {"lengthscale", m.per_individual_kernels[i].lengthscale},
                     {"noise_variance", m.per_individual_noise[i].noise_variance}});
    }
    j["per_individual"] = std::move(per);
  }
  j["training_log"] = m.training_log;
  j["iterations"] = m.iterations;
  j["converged"] = m.converged;
  return j.dump();
}

TrainedModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormatName) throw Error("not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error("unsupported model version " + std::to_string(version));
    }
    TrainedModel m;
    const auto& c = j.at("config");
    m.config.n_clusters = c.at("n_clusters").get<std::size_t>();
    m.config.shared_individual_hypers = c.at("shared_individual_hypers").get<bool>();
    m.config.max_vem_iters = c.at("max_vem_iters").get<int>();
    m.config.vem_tolerance = c.at("vem_tolerance").get<double>();
    m.config.working_grid = c.at("working_grid").get<std::vector<double>>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.validate();

    const auto p = static_cast<Eigen::Index>(m.config.working_grid.size());
    const auto kc = static_cast<Eigen::Index>(m.config.n_clusters);
    m.ids = j.at("ids").get<std::vector<std::string>>();
    m.mixing = json_vec(j.at("mixing"));
    if (m.mixing.size() != kc) throw Error("mixing has wrong length");
    const auto& tau = j.at("memberships");
    m.memberships.resize(static_cast<Eigen::Index>(tau.size()), kc);
    for (std::size_t i = 0; i < tau.size(); ++i) {
      const VectorXd row = json_vec(tau[i]);
      if (row.size() != kc) throw Error("membership row has wrong length");
      m.memberships.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    m.prior_mean = json_vec(j.at("prior_mean"));
    if (m.prior_mean.size() != p) throw Error("prior_mean has wrong length");
    const auto& clusters = j.at("clusters");
    if (static_cast<Eigen::Index>(clusters.size()) != kc) throw Error("cluster count mismatch");
    for (const auto& cl : clusters) {
      m.mean_kernels.push_back(json_kernel(cl.at("kernel")));
      gp::GaussianPosterior hp;
      hp.times = m.config.working_grid;
      hp.mean = json_vec(cl.at("mean"));
      if (hp.mean.size() != p) throw Error("cluster mean has wrong length");
      m.hyper_posteriors.push_back(std::move(hp));
      m.hyper_factors.push_back(json_lower(cl.at("cov_factor"), p));
    }
    m.canonicalize();
    m.individual_kernel = json_kernel(j.at("individual_kernel"));
    m.noise.noise_variance = j.at("noise_variance").get<double>();
    if (j.contains("per_individual")) {
      for (const auto& e : j.at("per_individual")) {
        m.per_individual_kernels.push_back(json_kernel(e));
        m.per_individual_noise.push_back({e.at("noise_variance").get<double>()});
      }
    }
    m.training_log = j.at("training_log").get<std::vector<double>>();
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << model_to_json(model);
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound(path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace growth::magma
