#include "growth/magmaclust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "growth/error.hpp"
#include "growth/optimize.hpp"
#include "growth/stats.hpp"

namespace growth::magma {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Box for log-parameters.
constexpr double kMinVariance = 1e-4, kMaxVariance = 1e4;
constexpr double kMinLengthscale = 1.0, kMaxLengthscale = 600.0;
constexpr double kMaxNoise = 1e3;

// Mean-process term evaluated in extended precision. The nugget-regularized
// grid covariance is conditioned near 1e7, so a double evaluation is noisy at
// the 1e-9 level, enough to derail finite-difference checks and line searches.
double mean_process_value_extended(const VectorXd& log_params, const MatrixXd& second_moment,
                                   const std::vector<double>& grid) {
  using Ld = long double;
  using MatL = Eigen::Matrix<Ld, Eigen::Dynamic, Eigen::Dynamic>;
  const auto n = static_cast<Eigen::Index>(grid.size());
  const Ld v = std::exp(static_cast<Ld>(log_params(0)));
  const Ld l = std::exp(static_cast<Ld>(log_params(1)));
  MatL k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Ld d = static_cast<Ld>(grid[i]) - static_cast<Ld>(grid[j]);
      k(i, j) = k(j, i) = v * std::exp(-d * d / (2 * l * l));
    }
    k(i, i) += v * static_cast<Ld>(kMeanNugget);
  }
  const Eigen::LLT<MatL> llt(k);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  const auto lower = llt.matrixL();
  Ld log_det = 0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += 2 * std::log(llt.matrixLLT()(i, i));
  const MatL x = lower.solve(second_moment.cast<Ld>());
  const Ld trace = lower.solve(MatL(x.transpose())).trace();
  return static_cast<double>(-log_det / 2 - trace / 2) - 0.5 * static_cast<double>(n) * kLog2Pi;
}

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check_span(std::span<const double> times, const std::vector<double>& grid,
                const char* what) {
  for (double t : times) {
    if (!(t >= grid.front() && t <= grid.back())) {
      throw TargetOutOfRange(std::string(what) + " age " + std::to_string(t) +
                             " outside working grid [" + std::to_string(grid.front()) + ", " +
                             std::to_string(grid.back()) + "]");
    }
  }
}

// Interpolation weights of one age onto the grid: (index, weight) pairs.
void interp_weights(double t, const std::vector<double>& grid,
                    std::vector<std::pair<std::size_t, double>>& out) {
  out.clear();
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  if (it == grid.begin()) {
    out.emplace_back(0, 1.0);
    return;
  }
  const std::size_t j = static_cast<std::size_t>(it - grid.begin()) - 1;
  if (j + 1 >= grid.size() || t == grid[j]) {
    out.emplace_back(std::min(j, grid.size() - 1), 1.0);
    return;
  }
  const double w = (t - grid[j]) / (grid[j + 1] - grid[j]);
  out.emplace_back(j, 1.0 - w);
  out.emplace_back(j + 1, w);
}

// Per-individual pieces that do not depend on the cluster.
struct IndividualCache {
  gp::Factorization psi;
  MatrixXd g;  // W^T Psi^-1 W  (local)
  VectorXd h;  // W^T Psi^-1 y  (local)
};

MatrixXd individual_cov(const gp::KernelParams& theta, const gp::NoiseParam& noise,
                        const std::vector<double>& ages) {
  MatrixXd psi = gp::kernel_matrix(theta, ages);
  psi.diagonal().array() += noise.noise_variance;
  return psi;
}

MatrixXd local_block(const MatrixXd& m, const std::vector<std::size_t>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = m(idx[i], idx[j]);
  return out;
}

VectorXd local_vec(const VectorXd& v, const std::vector<std::size_t>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

// Second moment of individual i's residual about the cluster mean processes,
// averaged over q: sum_k tau_ik [(y - W m_k)(y - W m_k)^T + W C_k W^T].
MatrixXd residual_second_moment(const VemState& state, const PreparedSeries& s, std::size_t i) {
  const auto n = static_cast<Eigen::Index>(s.ages.size());
  MatrixXd a = MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < state.hyper.size(); ++k) {
    const double tau = state.memberships(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    if (tau == 0.0) continue;
    const VectorXd r = s.values - s.weights * local_vec(state.hyper[k].mean, s.grid_idx);
    const MatrixXd c = s.weights * local_block(state.hyper[k].covariance, s.grid_idx) *
                       s.weights.transpose();
    a.noalias() += tau * (r * r.transpose() + c);
  }
  return a;
}

gp::ValueAndGradient individual_objective_from_moments(const VectorXd& log_params,
                                                       const TrainingData& data,
                                                       const std::vector<MatrixXd>& moments,
                                                       std::span<const std::size_t> subset) {
  const gp::KernelParams theta{std::exp(log_params(0)), std::exp(log_params(1))};
  const double sigma2 = std::exp(log_params(2));
  gp::ValueAndGradient total{0.0, VectorXd::Zero(3)};
  auto add = [&](std::size_t i) {
    const auto& s = data.series[i];
    const auto n = static_cast<Eigen::Index>(s.ages.size());
    MatrixXd k = gp::kernel_matrix(theta, s.ages);
    MatrixXd psi = k;
    psi.diagonal().array() += sigma2;
    const MatrixXd derivs[3] = {k, gp::kernel_dlog_lengthscale(theta, s.ages),
                                sigma2 * MatrixXd::Identity(n, n)};
    const auto r = gp::expected_log_density(psi, moments[i], derivs);
    total.value += r.value;
    total.gradient += r.gradient;
  };
  if (subset.empty()) {
    for (std::size_t i = 0; i < data.series.size(); ++i) add(i);
  } else {
    for (auto i : subset) add(i);
  }
  return total;
}

// ---- k-means initialization ----------------------------------------------

constexpr double kSummaryAges[] = {3.0, 24.0, 72.0, 120.0};

VectorXd coarse_summary(const PreparedSeries& s) {
  VectorXd out(4);
  for (int a = 0; a < 4; ++a) {
    const double t = kSummaryAges[a];
    const auto& x = s.ages;
    if (x.size() == 1 || t <= x.front()) {
      out(a) = s.values(0);
    } else if (t >= x.back()) {
      out(a) = s.values(static_cast<Eigen::Index>(x.size()) - 1);
    } else {
      const auto it = std::upper_bound(x.begin(), x.end(), t);
      const auto j = static_cast<std::size_t>(it - x.begin());
      const double w = (t - x[j - 1]) / (x[j] - x[j - 1]);
      out(a) = (1.0 - w) * s.values(static_cast<Eigen::Index>(j - 1)) +
               w * s.values(static_cast<Eigen::Index>(j));
    }
  }
  return out;
}

std::vector<std::size_t> kmeans(const std::vector<VectorXd>& pts, std::size_t k,
                                std::uint64_t seed) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> best_labels(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  constexpr int kRestarts = 10;
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::mt19937_64 rng(stats::derive_seed(seed, static_cast<std::uint64_t>(restart)));
    std::vector<VectorXd> centers;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers.push_back(pts[pick(rng)]);
    std::vector<double> d2(n);
    while (centers.size() < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) m = std::min(m, (pts[i] - c).squaredNorm());
        d2[i] = m;
        total += m;
      }
      if (total <= 0.0) {
        centers.push_back(pts[pick(rng)]);
        continue;
      }
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      std::size_t chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
      centers.push_back(pts[chosen]);
    }

    std::vector<std::size_t> labels(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
          const double d = (pts[i] - centers[c]).squaredNorm();
          if (d < m) {
            m = d;
            arg = c;
          }
        }
        if (labels[i] != arg || iter == 0) changed = changed || labels[i] != arg;
        labels[i] = arg;
      }
      std::vector<VectorXd> sums(k, VectorXd::Zero(pts[0].size()));
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        sums[labels[i]] += pts[i];
        ++counts[labels[i]];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0) centers[c] = sums[c] / static_cast<double>(counts[c]);
      }
      if (!changed && iter > 0) break;
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += (pts[i] - centers[labels[i]]).squaredNorm();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }

  // Relabel clusters by ascending mean summary so indices are stable.
  std::vector<double> level(k, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> sum(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    sum[best_labels[i]] += pts[i].mean();
    ++counts[best_labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) level[c] = sum[c] / static_cast<double>(counts[c]);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return level[a] < level[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  for (auto& l : best_labels) l = rank[l];
  return best_labels;
}

VectorXd grand_mean_curve(const TrainingData& data) {
  const auto& grid = data.grid;
  const std::size_t p = grid.size();
  std::vector<double> sum(p, 0.0);
  std::vector<std::size_t> count(p, 0);
  for (const auto& s : data.series) {
    for (std::size_t j = 0; j < s.ages.size(); ++j) {
      const double t = s.ages[j];
      auto it = std::lower_bound(grid.begin(), grid.end(), t);
      std::size_t idx = static_cast<std::size_t>(it - grid.begin());
      if (idx == p) idx = p - 1;
      if (idx > 0 && std::abs(grid[idx - 1] - t) <= std::abs(grid[idx] - t)) --idx;
      sum[idx] += s.values(static_cast<Eigen::Index>(j));
      ++count[idx];
    }
  }
  std::vector<std::size_t> filled;
  for (std::size_t j = 0; j < p; ++j)
    if (count[j] > 0) filled.push_back(j);
  VectorXd m(static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    auto it = std::lower_bound(filled.begin(), filled.end(), j);
    if (it == filled.end()) {
      m(j) = sum[filled.back()] / count[filled.back()];
    } else if (*it == j || it == filled.begin()) {
      m(j) = sum[*it] / count[*it];
    } else {
      const std::size_t hi = *it, lo = *(it - 1);
      const double w = (grid[j] - grid[lo]) / (grid[hi] - grid[lo]);
      m(j) = (1.0 - w) * sum[lo] / count[lo] + w * sum[hi] / count[hi];
    }
  }
  return m;
}

VectorXd to_log(const gp::KernelParams& k) {
  VectorXd v(2);
  v << std::log(k.variance), std::log(k.lengthscale);
  return v;
}

}  // namespace

// ---- configuration and data preparation -----------------------------------

std::vector<double> ModelConfig::default_grid() {
  std::vector<double> g(121);
  for (int i = 0; i <= 120; ++i) g[i] = static_cast<double>(i);
  return g;
}

void ModelConfig::validate() const {
  if (n_clusters < 1) throw std::invalid_argument("n_clusters must be >= 1");
  if (working_grid.size() < 2) throw std::invalid_argument("working grid needs >= 2 points");
  for (std::size_t i = 1; i < working_grid.size(); ++i) {
    if (!(working_grid[i] > working_grid[i - 1])) {
      throw std::invalid_argument("working grid must be strictly increasing");
    }
  }
  if (working_grid.front() > 0.0 || working_grid.back() < 120.0) {
    throw std::invalid_argument("working grid must cover [0, 120] months");
  }
  if (max_vem_iters < 1) throw std::invalid_argument("max_vem_iters must be >= 1");
}

MatrixXd interpolation_matrix(std::span<const double> times, const std::vector<double>& grid) {
  MatrixXd w = MatrixXd::Zero(static_cast<Eigen::Index>(times.size()),
                              static_cast<Eigen::Index>(grid.size()));
  std::vector<std::pair<std::size_t, double>> tmp;
  for (std::size_t i = 0; i < times.size(); ++i) {
    interp_weights(times[i], grid, tmp);
    for (auto [j, v] : tmp) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v;
  }
  return w;
}

PreparedSeries prepare_series(std::span<const double> ages, std::span<const double> values,
                              const std::vector<double>& grid) {
  if (ages.size() != values.size()) throw std::invalid_argument("ages/values size mismatch");
  check_span(ages, grid, "observation");
  PreparedSeries s;
  s.ages.assign(ages.begin(), ages.end());
  s.values = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(ages.size());
  for (std::size_t i = 0; i < ages.size(); ++i) {
    interp_weights(ages[i], grid, rows[i]);
    for (auto [j, w] : rows[i]) s.grid_idx.push_back(j);
  }
  std::sort(s.grid_idx.begin(), s.grid_idx.end());
  s.grid_idx.erase(std::unique(s.grid_idx.begin(), s.grid_idx.end()), s.grid_idx.end());
  s.weights = MatrixXd::Zero(static_cast<Eigen::Index>(ages.size()),
                             static_cast<Eigen::Index>(s.grid_idx.size()));
  for (std::size_t i = 0; i < ages.size(); ++i) {
    for (auto [j, w] : rows[i]) {
      const auto col = std::lower_bound(s.grid_idx.begin(), s.grid_idx.end(), j) - s.grid_idx.begin();
      s.weights(static_cast<Eigen::Index>(i), col) += w;
    }
  }
  return s;
}

TrainingData prepare(const Cohort& cohort, const std::vector<double>& grid) {
  if (cohort.size() == 0) throw EmptyCohort();
  TrainingData data;
  data.grid = grid;
  for (const auto& ind : cohort.individuals()) {
    if (ind.empty()) throw std::invalid_argument("individual " + ind.id() + " has no observations");
    const auto ages = ind.ages();
    const auto vals = ind.bmis();
    data.ids.push_back(ind.id());
    data.series.push_back(prepare_series(ages, vals, grid));
  }
  return data;
}

MatrixXd mean_process_covariance(const gp::KernelParams& params, const std::vector<double>& grid) {
  MatrixXd k = gp::kernel_matrix(params, grid);
  k.diagonal().array() += params.variance * kMeanNugget;
  return k;
}

VemState initialize(const TrainingData& data, const ModelConfig& config) {
  config.validate();
  const std::size_t n = data.series.size();
  const std::size_t kc = config.n_clusters;
  VemState st;
  st.config = config;
  st.prior_mean = grand_mean_curve(data);

  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const auto& s : data.series) {
    sum += s.values.sum();
    sum2 += s.values.squaredNorm();
    count += static_cast<std::size_t>(s.values.size());
  }
  const double mean = sum / static_cast<double>(count);
  double var = sum2 / static_cast<double>(count) - mean * mean;
  if (!(var > 1e-6)) var = 1.0;

  st.mean_kernels.assign(kc, gp::KernelParams{var, 24.0});
  const std::size_t n_hyp = config.shared_individual_hypers ? 1 : n;
  st.individual_kernels.assign(n_hyp, gp::KernelParams{var, 24.0});
  st.noises.assign(n_hyp, gp::NoiseParam{std::max(0.1 * var, gp::kNoiseFloor)});
  st.mixing = VectorXd::Constant(static_cast<Eigen::Index>(kc), 1.0 / static_cast<double>(kc));

  st.memberships = MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kc));
  if (kc == 1) {
    st.memberships.setOnes();
  } else {
    std::vector<VectorXd> pts;
    pts.reserve(n);
    for (const auto& s : data.series) pts.push_back(coarse_summary(s));
    const auto labels = kmeans(pts, kc, config.seed);
    for (std::size_t i = 0; i < n; ++i) {
      st.memberships(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
    }
  }
  return st;
}

// ---- E step ----------------------------------------------------------------

void update_hyper_posteriors(VemState& state, const TrainingData& data) {
  const auto& grid = data.grid;
  const auto p = static_cast<Eigen::Index>(grid.size());
  const std::size_t n = data.series.size();
  const std::size_t kc = state.config.n_clusters;

  std::vector<IndividualCache> cache(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.series[i];
    cache[i].psi = gp::safe_factorize(individual_cov(state.theta(i), state.sigma2(i), s.ages));
    const MatrixXd piw = cache[i].psi.solve(s.weights);
    cache[i].g = s.weights.transpose() * piw;
    cache[i].h = piw.transpose() * s.values;
  }

  state.hyper.resize(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    const auto fk = gp::safe_factorize(mean_process_covariance(state.mean_kernels[k], grid));
    MatrixXd lambda = MatrixXd::Zero(p, p);
    VectorXd b = VectorXd::Zero(p);
    for (std::size_t i = 0; i < n; ++i) {
      const double tau = state.memberships(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      if (tau == 0.0) continue;
      const auto& idx = data.series[i].grid_idx;
      for (std::size_t c = 0; c < idx.size(); ++c) {
        b(idx[c]) += tau * cache[i].h(static_cast<Eigen::Index>(c));
        for (std::size_t r = 0; r < idx.size(); ++r) {
          lambda(idx[r], idx[c]) += tau * cache[i].g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
      }
    }
    // C_hat = L (I + L^T Lambda L)^{-1} L^T with K = L L^T.
    const MatrixXd& l = fk.lower;
    MatrixXd m = l.transpose() * lambda * l;
    m.diagonal().array() += 1.0;
    m = 0.5 * (m + m.transpose());
    const auto fm = gp::safe_factorize(m);
    const MatrixXd x = fm.lower.triangularView<Eigen::Lower>().solve(l.transpose());
    HyperPosterior& hp = state.hyper[k];
    hp.covariance = x.transpose() * x;
    hp.log_det = fk.log_det() - fm.log_det();
    hp.mean = state.prior_mean + hp.covariance * (b - lambda * state.prior_mean);
  }
}

void update_memberships(VemState& state, const TrainingData& data) {
  const std::size_t n = data.series.size();
  const std::size_t kc = state.config.n_clusters;
  VectorXd log_pi(static_cast<Eigen::Index>(kc));
  for (std::size_t k = 0; k < kc; ++k) {
    log_pi(k) = state.mixing(k) > 0.0 ? std::log(state.mixing(k)) : kNegInf;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.series[i];
    const auto psi = gp::safe_factorize(individual_cov(state.theta(i), state.sigma2(i), s.ages));
    VectorXd logp(static_cast<Eigen::Index>(kc));
    for (std::size_t k = 0; k < kc; ++k) {
      if (!std::isfinite(log_pi(k))) {
        logp(k) = kNegInf;
        continue;
      }
      const VectorXd mu = s.weights * local_vec(state.hyper[k].mean, s.grid_idx);
      const MatrixXd c = s.weights * local_block(state.hyper[k].covariance, s.grid_idx) *
                         s.weights.transpose();
      logp(k) = log_pi(k) + gp::log_normal_density(s.values, mu, psi) - 0.5 * psi.solve(c).trace();
    }
    const double lse = log_sum_exp(logp);
    for (std::size_t k = 0; k < kc; ++k) {
      state.memberships(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          std::exp(logp(k) - lse);
    }
  }
}

EStepResult e_step(const VemState& state, const TrainingData& data) {
  VemState copy = state;
  update_hyper_posteriors(copy, data);
  update_memberships(copy, data);
  return {std::move(copy.hyper), std::move(copy.memberships)};
}

// ---- M step ----------------------------------------------------------------

gp::ValueAndGradient mean_process_objective(const VectorXd& log_params,
                                            const HyperPosterior& hyper,
                                            const VectorXd& prior_mean,
                                            const std::vector<double>& grid) {
  const gp::KernelParams gamma{std::exp(log_params(0)), std::exp(log_params(1))};
  const MatrixXd k = mean_process_covariance(gamma, grid);
  const VectorXd d = hyper.mean - prior_mean;
  const MatrixXd b = hyper.covariance + d * d.transpose();
  const MatrixXd derivs[2] = {k, gp::kernel_dlog_lengthscale(gamma, grid)};
  auto out = gp::expected_log_density(k, b, derivs);
  const double precise = mean_process_value_extended(log_params, b, grid);
  if (std::isfinite(precise)) out.value = precise;
  return out;
}

gp::ValueAndGradient individual_objective(const VectorXd& log_params, const VemState& state,
                                          const TrainingData& data,
                                          std::span<const std::size_t> subset) {
  std::vector<MatrixXd> moments(data.series.size());
  for (std::size_t i = 0; i < data.series.size(); ++i) {
    if (subset.empty() || std::find(subset.begin(), subset.end(), i) != subset.end()) {
      moments[i] = residual_second_moment(state, data.series[i], i);
    }
  }
  return individual_objective_from_moments(log_params, data, moments, subset);
}

double m_step_objective(const VemState& state, const TrainingData& data) {
  double total = 0.0;
  for (std::size_t k = 0; k < state.hyper.size(); ++k) {
    total += gp::expected_log_density_value(
        mean_process_covariance(state.mean_kernels[k], data.grid),
        state.hyper[k].covariance + (state.hyper[k].mean - state.prior_mean) *
                                        (state.hyper[k].mean - state.prior_mean).transpose());
  }
  for (std::size_t i = 0; i < data.series.size(); ++i) {
    const auto& s = data.series[i];
    total += gp::expected_log_density_value(individual_cov(state.theta(i), state.sigma2(i), s.ages),
                                            residual_second_moment(state, s, i));
    for (std::size_t k = 0; k < state.hyper.size(); ++k) {
      const double tau = state.memberships(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      if (tau > 0.0) total += tau * std::log(state.mixing(k));
    }
  }
  return total;
}

MStepReport m_step(VemState& state, const TrainingData& data) {
  MStepReport report;
  report.objective_before = m_step_objective(state, data);
  const std::size_t n = data.series.size();
  const std::size_t kc = state.config.n_clusters;

  state.mixing = state.memberships.colwise().sum().transpose() / static_cast<double>(n);

  VectorXd lo2(2), hi2(2);
  lo2 << std::log(kMinVariance), std::log(kMinLengthscale);
  hi2 << std::log(kMaxVariance), std::log(kMaxLengthscale);
  for (std::size_t k = 0; k < kc; ++k) {
    if (state.mixing(k) <= 0.0) continue;
    const auto& hp = state.hyper[k];
    auto f = [&](const VectorXd& x) {
      return mean_process_objective(x, hp, state.prior_mean, data.grid);
    };
    const auto r = opt::maximize(f, to_log(state.mean_kernels[k]), lo2, hi2);
    state.mean_kernels[k] = {std::exp(r.x(0)), std::exp(r.x(1))};
  }

  std::vector<MatrixXd> moments(n);
  for (std::size_t i = 0; i < n; ++i) moments[i] = residual_second_moment(state, data.series[i], i);

  VectorXd lo3(3), hi3(3);
  lo3 << std::log(kMinVariance), std::log(kMinLengthscale), std::log(gp::kNoiseFloor);
  hi3 << std::log(kMaxVariance), std::log(kMaxLengthscale), std::log(kMaxNoise);
  auto fit = [&](std::size_t slot, std::span<const std::size_t> subset) {
    VectorXd x0(3);
    x0 << std::log(state.individual_kernels[slot].variance),
        std::log(state.individual_kernels[slot].lengthscale),
        std::log(std::max(state.noises[slot].noise_variance, gp::kNoiseFloor));
    auto f = [&](const VectorXd& x) {
      return individual_objective_from_moments(x, data, moments, subset);
    };
    const auto r = opt::maximize(f, x0, lo3, hi3);
    state.individual_kernels[slot] = {std::exp(r.x(0)), std::exp(r.x(1))};
    state.noises[slot] = {std::exp(r.x(2))};
  };
  if (state.individual_kernels.size() == 1) {
    fit(0, {});
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t one[1] = {i};
      fit(i, one);
    }
  }

  report.objective_after = m_step_objective(state, data);
  return report;
}

double elbo(const VemState& state, const TrainingData& data) {
  const double p = static_cast<double>(data.grid.size());
  double total = m_step_objective(state, data);
  for (const auto& hp : state.hyper) total += 0.5 * hp.log_det + 0.5 * p * (1.0 + kLog2Pi);
  for (Eigen::Index i = 0; i < state.memberships.rows(); ++i) {
    for (Eigen::Index k = 0; k < state.memberships.cols(); ++k) {
      const double tau = state.memberships(i, k);
      if (tau > 0.0) total -= tau * std::log(tau);
    }
  }
  return total;
}

// ---- training --------------------------------------------------------------

std::vector<std::size_t> TrainedModel::map_labels() const {
  std::vector<std::size_t> labels(static_cast<std::size_t>(memberships.rows()), 0);
  for (Eigen::Index i = 0; i < memberships.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < memberships.cols(); ++k) {
      if (memberships(i, k) > memberships(i, best)) best = k;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return labels;
}

std::vector<std::size_t> TrainedModel::occupancy() const {
  std::vector<std::size_t> counts(n_clusters(), 0);
  for (auto l : map_labels()) ++counts[l];
  return counts;
}

void TrainedModel::canonicalize() {
  for (std::size_t k = 0; k < hyper_factors.size(); ++k) {
    hyper_posteriors[k].covariance = hyper_factors[k] * hyper_factors[k].transpose();
  }
}

TrainedModel finalize(const VemState& state, const TrainingData& data,
                      std::vector<double> training_log, int iterations, bool converged) {
  TrainedModel m;
  m.config = state.config;
  m.ids = data.ids;
  m.prior_mean = state.prior_mean;
  m.mixing = state.mixing;
  m.memberships = state.memberships;
  m.mean_kernels = state.mean_kernels;
  for (const auto& hp : state.hyper) {
    const auto f = gp::safe_factorize(0.5 * (hp.covariance + hp.covariance.transpose()));
    m.hyper_factors.push_back(f.lower);
    m.hyper_posteriors.push_back({data.grid, hp.mean, MatrixXd()});
  }
  m.canonicalize();
  if (state.individual_kernels.size() == 1) {
    m.individual_kernel = state.individual_kernels[0];
    m.noise = state.noises[0];
  } else {
    // New individuals use the geometric mean of the fitted parameters.
    double lv = 0.0, ll = 0.0, ln = 0.0;
    for (std::size_t i = 0; i < state.individual_kernels.size(); ++i) {
      lv += std::log(state.individual_kernels[i].variance);
      ll += std::log(state.individual_kernels[i].lengthscale);
      ln += std::log(state.noises[i].noise_variance);
    }
    const double n = static_cast<double>(state.individual_kernels.size());
    m.individual_kernel = {std::exp(lv / n), std::exp(ll / n)};
    m.noise = {std::exp(ln / n)};
    m.per_individual_kernels = state.individual_kernels;
    m.per_individual_noise = state.noises;
  }
  m.training_log = std::move(training_log);
  m.iterations = iterations;
  m.converged = converged;
  return m;
}

TrainedModel train(const Cohort& cohort, const ModelConfig& config) {
  config.validate();
  const TrainingData data = prepare(cohort, config.working_grid);
  VemState state = initialize(data, config);

  std::vector<double> trace;
  bool converged = false;
  int it = 0;
  for (it = 1; it <= config.max_vem_iters; ++it) {
    try {
      update_hyper_posteriors(state, data);
      update_memberships(state, data);
      m_step(state, data);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite("VEM iteration " + std::to_string(it) + ": " + e.what());
    }
    const double value = elbo(state, data);
    const bool small = !trace.empty() &&
                       value - trace.back() < config.vem_tolerance * std::max(1.0, std::abs(value));
    trace.push_back(value);
    if (small) {
      converged = true;
      break;
    }
  }
  // Refresh q under the final hyperparameters so the stored posteriors match.
  update_hyper_posteriors(state, data);
  update_memberships(state, data);
  trace.push_back(elbo(state, data));
  return finalize(state, data, std::move(trace), std::min(it, config.max_vem_iters), converged);
}

// ---- prediction -------------------------------------------------------------

VectorXd MixturePrediction::mean() const {
  VectorXd m = VectorXd::Zero(static_cast<Eigen::Index>(target_times.size()));
  for (std::size_t k = 0; k < per_cluster.size(); ++k) m += weights(k) * per_cluster[k].mean;
  return m;
}

VectorXd MixturePrediction::variance() const {
  const VectorXd mu = mean();
  VectorXd second = VectorXd::Zero(mu.size());
  for (std::size_t k = 0; k < per_cluster.size(); ++k) {
    const auto& pc = per_cluster[k];
    second += weights(k) * (pc.covariance.diagonal() + pc.mean.cwiseAbs2());
  }
  return (second - mu.cwiseAbs2()).cwiseMax(0.0);
}

MixturePrediction predict(const TrainedModel& model, std::span<const double> ages,
                          std::span<const double> values, std::span<const double> target_times,
                          const PredictOptions& options) {
  const auto& grid = model.config.working_grid;
  if (ages.size() != values.size()) throw std::invalid_argument("ages/values size mismatch");
  check_span(target_times, grid, "target");
  check_span(ages, grid, "observation");

  const std::size_t no = ages.size(), nt = target_times.size();
  std::vector<double> joint(ages.begin(), ages.end());
  joint.insert(joint.end(), target_times.begin(), target_times.end());
  const MatrixXd w = interpolation_matrix(joint, grid);
  MatrixXd kind = gp::kernel_matrix(model.individual_kernel, joint);
  if (options.include_noise) {
    for (std::size_t j = no; j < no + nt; ++j) {
      kind(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += model.noise.noise_variance;
    }
  }
  std::vector<std::size_t> obs_idx(no), tgt_idx(nt);
  std::iota(obs_idx.begin(), obs_idx.end(), std::size_t{0});
  std::iota(tgt_idx.begin(), tgt_idx.end(), no);
  const VectorXd y = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(no));

  const std::size_t kc = model.n_clusters();
  MixturePrediction out;
  out.target_times.assign(target_times.begin(), target_times.end());
  VectorXd logw(static_cast<Eigen::Index>(kc));
  for (std::size_t k = 0; k < kc; ++k) {
    const auto& hp = model.hyper_posteriors[k];
    const MatrixXd wl = w * model.hyper_factors[k];
    const VectorXd mean = w * hp.mean;
    const MatrixXd cov = wl * wl.transpose() + kind;
    out.per_cluster.push_back(
        gp::gp_condition(mean, cov, obs_idx, values, model.noise, tgt_idx, joint));

    const double log_pi = model.mixing(k) > 0.0 ? std::log(model.mixing(k)) : kNegInf;
    if (no == 0 || !std::isfinite(log_pi)) {
      logw(k) = log_pi;
      continue;
    }
    MatrixXd coo = cov.topLeftCorner(no, no);
    coo.diagonal().array() += model.noise.noise_variance;
    logw(k) = log_pi + gp::log_normal_density(y, mean.head(no), gp::safe_factorize(coo));
  }
  const double lse = log_sum_exp(logw);
  out.weights = (logw.array() - lse).exp().matrix();
  out.weights /= out.weights.sum();
  return out;
}

MixturePrediction predict(const TrainedModel& model, const GrowthSeries& series,
                          std::span<const double> target_times, const PredictOptions& options) {
  const auto ages = series.ages();
  const auto values = series.bmis();
  return predict(model, ages, values, target_times, options);
}

MatrixXd sample_trajectories(const MixturePrediction& prediction, std::size_t n,
                             std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const auto nt = static_cast<Eigen::Index>(prediction.target_times.size());
  const std::size_t kc = prediction.per_cluster.size();

  // Symmetric square roots handle singular (even zero) covariances exactly.
  std::vector<MatrixXd> roots(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    if (prediction.weights(k) <= 0.0) continue;
    const MatrixXd& c = prediction.per_cluster[k].covariance;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (c + c.transpose()));
    roots[k] = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  std::vector<double> cum(kc);
  double acc = 0.0;
  for (std::size_t k = 0; k < kc; ++k) cum[k] = (acc += prediction.weights(k));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, acc);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd out(static_cast<Eigen::Index>(n), nt);
  VectorXd z(nt);
  for (std::size_t r = 0; r < n; ++r) {
    const double u = unif(rng);
    std::size_t k = 0;
    while (k + 1 < kc && (u >= cum[k] || prediction.weights(k) <= 0.0)) ++k;
    for (Eigen::Index j = 0; j < nt; ++j) z(j) = normal(rng);
    out.row(static_cast<Eigen::Index>(r)) =
        (prediction.per_cluster[k].mean + roots[k] * z).transpose();
  }
  return out;
}

double mixture_quantile(std::span<const double> weights, std::span<const double> means,
                        std::span<const double> sds, double p) {
  auto cdf = [&](double x) {
    double f = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k] <= 0.0) continue;
      if (sds[k] > 0.0) {
        f += weights[k] * stats::normal_cdf((x - means[k]) / sds[k]);
      } else {
        f += weights[k] * (x >= means[k] ? 1.0 : 0.0);
      }
    }
    return f;
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    lo = std::min(lo, means[k] - 12.0 * sds[k] - 1.0);
    hi = std::max(hi, means[k] + 12.0 * sds[k] + 1.0);
  }
  while (hi - lo > kBandTolerance) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

CredibleBands credible_band(const MixturePrediction& prediction, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must be in (0, 1)");
  const double z = stats::central_z(level);
  const auto nt = static_cast<Eigen::Index>(prediction.target_times.size());
  const std::size_t kc = prediction.per_cluster.size();
  CredibleBands bands;
  for (const auto& pc : prediction.per_cluster) {
    const VectorXd sd = pc.sd();
    bands.per_cluster.push_back({pc.mean - z * sd, pc.mean + z * sd});
  }
  bands.mixture.lower.resize(nt);
  bands.mixture.upper.resize(nt);
  std::vector<double> w(kc), m(kc), s(kc);
  for (std::size_t k = 0; k < kc; ++k) w[k] = prediction.weights(k);
  for (Eigen::Index j = 0; j < nt; ++j) {
    for (std::size_t k = 0; k < kc; ++k) {
      m[k] = prediction.per_cluster[k].mean(j);
      s[k] = std::sqrt(std::max(prediction.per_cluster[k].covariance(j, j), 0.0));
    }
    bands.mixture.lower(j) = mixture_quantile(w, m, s, 0.5 * (1.0 - level));
    bands.mixture.upper(j) = mixture_quantile(w, m, s, 0.5 * (1.0 + level));
  }
  return bands;
}

}  // namespace growth::magma
