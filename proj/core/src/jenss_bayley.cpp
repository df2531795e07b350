#include "growth/jenss_bayley.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "growth/error.hpp"

namespace growth::baselines {

namespace {

constexpr double kTimeScale = 120.0;  // stage 1 works in u = t / 120
constexpr std::array<double, 5> kDecayStarts = {1.0, 3.0, 6.0, 12.0, 24.0};  // per unit u
constexpr int kMaxLmIterations = 500;
constexpr int kMaxEmIterations = 500;

struct Pooled {
  Eigen::VectorXd u;
  Eigen::VectorXd y;
};

// Scaled parameters: (a, b', c', d, log e').
using Vec5 = Eigen::Matrix<double, 5, 1>;

void residual_and_jacobian(const Pooled& data, const Vec5& p, Eigen::VectorXd& r,
                           Eigen::MatrixXd* jac) {
  const double e = std::exp(p(4));
  const auto n = data.u.size();
  r.resize(n);
  if (jac) jac->resize(n, 5);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = data.u(i);
    const double ex = std::exp(p(3) - e * u);
    r(i) = data.y(i) - (p(0) + p(1) * u + p(2) * u * u - ex);
    if (jac) {
      // Jacobian of the model (not the residual).
      (*jac)(i, 0) = 1.0;
      (*jac)(i, 1) = u;
      (*jac)(i, 2) = u * u;
      (*jac)(i, 3) = -ex;
      (*jac)(i, 4) = ex * u * e;
    }
  }
}

double sse(const Pooled& data, const Vec5& p) {
  Eigen::VectorXd r;
  residual_and_jacobian(data, p, r, nullptr);
  const double s = r.squaredNorm();
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

// Linear least squares in (a, b', c', A) for fixed decay, A = exp(d).
Vec5 linear_start(const Pooled& data, double decay) {
  const auto n = data.u.size();
  Eigen::MatrixXd x(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = data.u(i);
    x(i, 0) = 1.0;
    x(i, 1) = u;
    x(i, 2) = u * u;
    x(i, 3) = -std::exp(-decay * u);
  }
  const Eigen::Vector4d coef = x.colPivHouseholderQr().solve(data.y);
  Vec5 p;
  const double amp = coef(3) > 0.0 ? coef(3) : 1e-3 * std::max(1.0, std::abs(data.y.mean()));
  p << coef(0), coef(1), coef(2), std::log(amp), std::log(decay);
  if (coef(3) <= 0.0) {
    // Refit the polynomial part with the fixed small amplitude.
    Eigen::VectorXd y2 = data.y + amp * x.col(3);
    const Eigen::Vector3d c3 = x.leftCols(3).colPivHouseholderQr().solve(y2);
    p.head<3>() = c3;
  }
  return p;
}

Vec5 levenberg_marquardt(const Pooled& data, Vec5 p, double& best_sse) {
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  double f = sse(data, p);
  double mu = 1e-3;
  for (int it = 0; it < kMaxLmIterations && std::isfinite(f); ++it) {
    residual_and_jacobian(data, p, r, &jac);
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
    const Vec5 jtr = jac.transpose() * r;
    if (jtr.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + f)) break;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      a.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
      const Vec5 step = a.ldlt().solve(jtr);
      const Vec5 trial = p + step;
      const double ft = sse(data, trial);
      if (ft < f) {
        const double rel = (f - ft) / std::max(f, 1e-300);
        p = trial;
        f = ft;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (rel < 1e-15 || step.cwiseAbs().maxCoeff() < 1e-13 * (1.0 + p.cwiseAbs().maxCoeff())) {
          it = kMaxLmIterations;
        }
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) break;
  }
  best_sse = f;
  return p;
}

JenssBayleyParams unscale(const Vec5& p) {
  JenssBayleyParams q;
  q.a = p(0);
  q.b = p(1) / kTimeScale;
  q.c = p(2) / (kTimeScale * kTimeScale);
  q.d = p(3);
  q.e = std::exp(p(4)) / kTimeScale;
  return q;
}

std::optional<double> measure_value(const Observation& o, Measure m) {
  return m == Measure::weight ? o.weight : o.height;
}

// Ridge-penalized (a, b) refit: (Z^T Z + ridge sigma^2 D^-1)^-1 Z^T r.
Eigen::Vector2d shrink_offsets(const JenssBayleyParams& pop, std::span<const double> t,
                               std::span<const double> y, double ridge, double sigma2,
                               const Eigen::Matrix2d& d_inv) {
  Eigen::Matrix2d ztz = Eigen::Matrix2d::Zero();
  Eigen::Vector2d ztr = Eigen::Vector2d::Zero();
  for (std::size_t j = 0; j < t.size(); ++j) {
    const Eigen::Vector2d z(1.0, t[j]);
    ztz += z * z.transpose();
    ztr += z * (y[j] - pop(t[j]));
  }
  const Eigen::Matrix2d a = ztz + ridge * sigma2 * d_inv;
  return a.fullPivLu().solve(ztr);
}

}  // namespace

const char* measure_name(Measure m) { return m == Measure::weight ? "weight" : "height"; }

double JenssBayleyParams::operator()(double t) const {
  return a + b * t + c * t * t - std::exp(d - e * t);
}

JenssBayleyParams fit_population_curve(std::span<const std::vector<double>> times,
                                       std::span<const std::vector<double>> values) {
  Pooled data;
  std::size_t n = 0;
  for (const auto& t : times) n += t.size();
  data.u.resize(static_cast<Eigen::Index>(n));
  data.y.resize(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = 0; j < times[i].size(); ++j, ++k) {
      data.u(k) = times[i][j] / kTimeScale;
      data.y(k) = values[i][j];
    }
  }
  if (n < 5) throw InsufficientPoints(n, 5);

  Vec5 best = Vec5::Zero();
  double best_f = std::numeric_limits<double>::infinity();
  for (double decay : kDecayStarts) {
    double f = 0.0;
    const Vec5 p = levenberg_marquardt(data, linear_start(data, decay), f);
    if (f < best_f) {
      best_f = f;
      best = p;
    }
  }
  if (!std::isfinite(best_f)) {
    throw OptimizationDiverged("Jenss-Bayley population fit produced no finite solution");
  }
  return unscale(best);
}

JenssBayleyModel fit_jenss_bayley(const Cohort& cohort, Measure measure, double ridge) {
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw NonPositiveParam("ridge strength must be finite and >= 0");
  JenssBayleyModel model;
  model.measure = measure;
  model.ridge = ridge;
  const std::string model_name = std::string("jenss_bayley_") + measure_name(measure);

  std::vector<std::string> ids;
  std::vector<std::vector<double>> ts, ys;
  for (const auto& s : cohort.individuals()) {
    std::vector<double> t, y;
    for (const auto& o : s.observations()) {
      if (auto v = measure_value(o, measure)) {
        t.push_back(o.age);
        y.push_back(*v);
      }
    }
    if (t.size() < kMinJenssBayleyPoints) {
      model.report.push_back({s.id(), model_name, "insufficient_points", t.size(),
                              std::numeric_limits<double>::quiet_NaN()});
      continue;
    }
    ids.push_back(s.id());
    ts.push_back(std::move(t));
    ys.push_back(std::move(y));
  }
  if (ids.empty()) throw InsufficientPoints(0, kMinJenssBayleyPoints);

  model.population = fit_population_curve(ts, ys);
  const JenssBayleyParams& pop = model.population;

  // Stage 2: random (a, b) offsets; EM for D and sigma^2.
  std::vector<Eigen::Matrix2d> ztz(ids.size());
  std::vector<Eigen::Vector2d> ztr(ids.size());
  std::vector<double> rtr(ids.size());
  double total_n = 0.0, total_rss = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ztz[i].setZero();
    ztr[i].setZero();
    rtr[i] = 0.0;
    for (std::size_t j = 0; j < ts[i].size(); ++j) {
      const Eigen::Vector2d z(1.0, ts[i][j]);
      const double r = ys[i][j] - pop(ts[i][j]);
      ztz[i] += z * z.transpose();
      ztr[i] += z * r;
      rtr[i] += r * r;
    }
    total_n += static_cast<double>(ts[i].size());
    total_rss += rtr[i];
  }
  const double var_floor = 1e-12;
  double sigma2 = std::max(total_rss / total_n, var_floor);
  // Offsets covariance starts broad relative to the residual scale.
  Eigen::Matrix2d d = Eigen::Matrix2d::Zero();
  d(0, 0) = sigma2;
  d(1, 1) = sigma2 / (kTimeScale * kTimeScale);
  const Eigen::Matrix2d d_floor =
      Eigen::Vector2d(var_floor, var_floor / (kTimeScale * kTimeScale)).asDiagonal();
  for (int it = 0; it < kMaxEmIterations; ++it) {
    const Eigen::Matrix2d d_inv = d.inverse();
    Eigen::Matrix2d d_new = Eigen::Matrix2d::Zero();
    double s_new = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Eigen::Matrix2d v = (ztz[i] / sigma2 + d_inv).inverse();
      const Eigen::Vector2d u = v * ztr[i] / sigma2;
      d_new += u * u.transpose() + v;
      // E||r - Z u||^2 = r'r - 2 u'Z'r + u'Z'Zu + tr(Z'Z V)
      s_new += rtr[i] - 2.0 * u.dot(ztr[i]) + u.dot(ztz[i] * u) + (ztz[i] * v).trace();
    }
    d_new /= static_cast<double>(ids.size());
    d_new = 0.5 * (d_new + d_new.transpose()) + d_floor;
    s_new = std::max(s_new / total_n, var_floor);
    const double change = std::abs(s_new - sigma2) / sigma2 + (d_new - d).norm() / d.norm();
    d = d_new;
    sigma2 = s_new;
    if (change < 1e-10) break;
  }
  model.residual_variance = sigma2;
  model.offset_covariance = d;

  const Eigen::Matrix2d d_inv = d.inverse();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Eigen::Vector2d off = shrink_offsets(pop, ts[i], ys[i], ridge, sigma2, d_inv);
    IndividualOffset o{off(0), off(1), ts[i].size(), 0.0};
    double rss = 0.0;
    for (std::size_t j = 0; j < ts[i].size(); ++j) {
      const double r = ys[i][j] - (pop(ts[i][j]) + o.delta_a + o.delta_b * ts[i][j]);
      rss += r * r;
    }
    o.rmse = std::sqrt(rss / static_cast<double>(ts[i].size()));
    model.individuals.emplace(ids[i], o);
    model.report.push_back({ids[i], model_name, "ok", o.n_points, o.rmse});
  }
  // Report in cohort order regardless of skip interleaving.
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < cohort.size(); ++i) order[cohort[i].id()] = i;
  std::stable_sort(model.report.begin(), model.report.end(),
                   [&](const auto& x, const auto& y) { return order[x.id] < order[y.id]; });
  return model;
}

IndividualOffset JenssBayleyModel::fit_individual(std::span<const double> times,
                                                  std::span<const double> values) const {
  if (times.size() != values.size()) throw std::invalid_argument("times/values size mismatch");
  if (times.size() < kMinJenssBayleyPoints) {
    throw InsufficientPoints(times.size(), kMinJenssBayleyPoints);
  }
  const Eigen::Vector2d off = shrink_offsets(population, times, values, ridge, residual_variance,
                                             offset_covariance.inverse());
  IndividualOffset o{off(0), off(1), times.size(), 0.0};
  double rss = 0.0;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double r = values[j] - (population(times[j]) + o.delta_a + o.delta_b * times[j]);
    rss += r * r;
  }
  o.rmse = std::sqrt(rss / static_cast<double>(times.size()));
  return o;
}

std::vector<double> JenssBayleyModel::predict(const IndividualOffset& o,
                                              std::span<const double> times) const {
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(population(t) + o.delta_a + o.delta_b * t);
  return out;
}

std::vector<double> JenssBayleyModel::predict(const std::string& id,
                                              std::span<const double> times) const {
  auto it = individuals.find(id);
  if (it == individuals.end()) throw UnknownIndividual(id);
  return predict(it->second, times);
}

std::vector<double> bmi_from_curves(std::span<const double> weight,
                                    std::span<const double> height) {
  if (weight.size() != height.size()) throw std::invalid_argument("weight/height size mismatch");
  std::vector<double> out(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const double h = height[i] / 100.0;
    out[i] = weight[i] / (h * h);
  }
  return out;
}

std::vector<double> jb_predict_bmi(const JenssBayleyModel& weight_model,
                                   const JenssBayleyModel& height_model, const std::string& id,
                                   std::span<const double> times,
                                   std::vector<std::string>* warnings) {
  const auto w = weight_model.predict(id, times);
  const auto h = height_model.predict(id, times);
  if (warnings) {
    const bool bad = std::any_of(w.begin(), w.end(), [](double v) { return !(v > 0.0); }) ||
                     std::any_of(h.begin(), h.end(), [](double v) { return !(v > 0.0); });
    if (bad) warnings->push_back(id + ": non-positive fitted weight or height on query range");
  }
  return bmi_from_curves(w, h);
}

std::string format_baseline_report(std::span<const BaselineReportRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "id,model,status,n_points,rmse\n";
  for (const auto& r : rows) {
    os << r.id << ',' << r.model << ',' << r.status << ',' << r.n_points << ',';
    if (std::isfinite(r.rmse)) os << r.rmse;
    os << '\n';
  }
  return os.str();
}

}  // namespace growth::baselines
