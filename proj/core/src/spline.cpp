#include "growth/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "growth/error.hpp"

namespace growth::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<double> gcv_lambda_grid() {
  std::vector<double> g(kGcvGridSize);
  for (int i = 0; i < kGcvGridSize; ++i) g[i] = std::pow(10.0, -6.0 + 0.25 * i);
  return g;
}

std::vector<double> cubic_knot_vector(std::span<const double> knots) {
  std::vector<double> kv;
  kv.insert(kv.end(), 3, knots.front());
  kv.insert(kv.end(), knots.begin(), knots.end());
  kv.insert(kv.end(), 3, knots.back());
  return kv;
}

VectorXd bspline_basis(std::span<const double> kv, double t, int deriv) {
  const std::size_t m = kv.size();
  const double lo = kv.front(), hi = kv.back();
  t = std::clamp(t, lo, hi);

  // Degree-0 indicator: half-open intervals, with the last non-empty one
  // closed on the right.
  std::size_t last = 0;
  for (std::size_t i = 0; i + 1 < m; ++i)
    if (kv[i] < kv[i + 1]) last = i;
  std::vector<std::vector<double>> b(4);
  b[0].assign(m - 1, 0.0);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if ((kv[i] <= t && t < kv[i + 1]) || (i == last && t == kv[i + 1])) {
      b[0][i] = 1.0;
      break;
    }
  }
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (int d = 1; d <= 3; ++d) {
    b[d].assign(m - 1 - d, 0.0);
    for (std::size_t i = 0; i + 1 + d < m; ++i) {
      b[d][i] = ratio(t - kv[i], kv[i + d] - kv[i]) * b[d - 1][i] +
                ratio(kv[i + d + 1] - t, kv[i + d + 1] - kv[i + 1]) * b[d - 1][i + 1];
    }
  }

  const std::size_t nb = m - 4;
  VectorXd out = VectorXd::Zero(static_cast<Eigen::Index>(nb));
  if (deriv == 0) {
    for (std::size_t i = 0; i < nb; ++i) out(i) = b[3][i];
  } else if (deriv == 1) {
    for (std::size_t i = 0; i < nb; ++i) {
      out(i) = 3.0 * (ratio(b[2][i], kv[i + 3] - kv[i]) - ratio(b[2][i + 1], kv[i + 4] - kv[i + 1]));
    }
  } else if (deriv == 2) {
    // Derivatives of degree-2 splines expressed through degree-1 ones.
    std::vector<double> d2(m - 3, 0.0);
    for (std::size_t i = 0; i + 3 < m; ++i) {
      d2[i] = 2.0 * (ratio(b[1][i], kv[i + 2] - kv[i]) - ratio(b[1][i + 1], kv[i + 3] - kv[i + 1]));
    }
    for (std::size_t i = 0; i < nb; ++i) {
      out(i) = 3.0 * (ratio(d2[i], kv[i + 3] - kv[i]) - ratio(d2[i + 1], kv[i + 4] - kv[i + 1]));
    }
  } else {
    throw std::invalid_argument("bspline_basis supports deriv 0, 1, 2");
  }
  return out;
}

MatrixXd design_matrix(std::span<const double> kv, std::span<const double> times) {
  const auto nb = static_cast<Eigen::Index>(kv.size() - 4);
  MatrixXd x(static_cast<Eigen::Index>(times.size()), nb);
  for (std::size_t i = 0; i < times.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = bspline_basis(kv, times[i], 0).transpose();
  }
  return x;
}

MatrixXd roughness_penalty(std::span<const double> kv) {
  const auto nb = static_cast<Eigen::Index>(kv.size() - 4);
  MatrixXd omega = MatrixXd::Zero(nb, nb);
  // B'' is linear on each knot interval; 2-point Gauss-Legendre is exact for
  // the quadratic integrand.
  const double g = 1.0 / std::sqrt(3.0);
  for (std::size_t i = 0; i + 1 < kv.size(); ++i) {
    const double a = kv[i], b = kv[i + 1];
    if (!(b > a)) continue;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (double s : {-g, g}) {
      // Evaluate strictly inside the interval so the right basis piece is used.
      const VectorXd d2 = bspline_basis(kv, mid + s * half, 2);
      omega.noalias() += half * d2 * d2.transpose();
    }
  }
  return 0.5 * (omega + omega.transpose());
}

namespace {

struct Prepared {
  std::vector<double> knots;
  std::vector<double> kv;
  MatrixXd x;
  MatrixXd omega;
  VectorXd y;
  double scale = 1.0;
};

Prepared prepare(std::span<const double> ages, std::span<const double> values) {
  if (ages.size() != values.size()) throw std::invalid_argument("ages/values size mismatch");
  std::vector<double> sorted(ages.begin(), ages.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.size() != ages.size() || sorted.size() < kMinSplinePoints) {
    throw InsufficientPoints(sorted.size(), kMinSplinePoints);
  }
  Prepared p;
  p.knots = sorted;
  p.kv = cubic_knot_vector(p.knots);
  p.x = design_matrix(p.kv, ages);
  p.omega = roughness_penalty(p.kv);
  p.y = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  p.scale = (p.x.transpose() * p.x).trace() / p.omega.trace();
  return p;
}

SplineFit solve(const Prepared& p, double lambda) {
  SplineFit f;
  f.knots = p.knots;
  f.knot_vector = p.kv;
  f.lambda = lambda;
  f.lambda_scale = p.scale;
  const double n = static_cast<double>(p.y.size());
  if (lambda > 0.0) {
    const MatrixXd a = p.x.transpose() * p.x + lambda * p.scale * p.omega;
    const Eigen::LDLT<MatrixXd> ldlt(a);
    f.coefficients = ldlt.solve(p.x.transpose() * p.y);
    const double df = (p.x * ldlt.solve(p.x.transpose())).trace();
    const double rss = (p.y - p.x * f.coefficients).squaredNorm();
    const double denom = n - df;
    f.gcv = denom > 1e-8 * n ? n * rss / (denom * denom) : std::numeric_limits<double>::infinity();
    f.rmse = std::sqrt(rss / n);
  } else {
    // min c^T Omega c  subject to  X c = y.
    const auto nb = p.x.cols(), no = p.x.rows();
    MatrixXd kkt = MatrixXd::Zero(nb + no, nb + no);
    kkt.topLeftCorner(nb, nb) = p.omega;
    kkt.topRightCorner(nb, no) = p.x.transpose();
    kkt.bottomLeftCorner(no, nb) = p.x;
    VectorXd rhs = VectorXd::Zero(nb + no);
    rhs.tail(no) = p.y;
    f.coefficients = kkt.fullPivLu().solve(rhs).head(nb);
    f.gcv = std::numeric_limits<double>::infinity();
    f.rmse = std::sqrt((p.y - p.x * f.coefficients).squaredNorm() / n);
  }
  return f;
}

}  // namespace

SplineFit fit_smoothing_spline(std::span<const double> ages, std::span<const double> values,
                               double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  return solve(prepare(ages, values), lambda);
}

SplineFit fit_smoothing_spline(std::span<const double> ages, std::span<const double> values) {
  const Prepared p = prepare(ages, values);
  SplineFit best;
  bool have = false;
  for (double lambda : gcv_lambda_grid()) {
    SplineFit f = solve(p, lambda);
    if (!have || f.gcv < best.gcv) {
      best = std::move(f);
      have = true;
    }
  }
  return best;
}

SplineFit fit_smoothing_spline(const GrowthSeries& series) {
  const auto ages = series.ages();
  const auto values = series.bmis();
  return fit_smoothing_spline(ages, values);
}

std::vector<double> eval_spline(const SplineFit& fit, std::span<const double> times) {
  const double lo = fit.knots.front(), hi = fit.knots.back();
  const double v_lo = bspline_basis(fit.knot_vector, lo, 0).dot(fit.coefficients);
  const double v_hi = bspline_basis(fit.knot_vector, hi, 0).dot(fit.coefficients);
  const double s_lo = bspline_basis(fit.knot_vector, lo, 1).dot(fit.coefficients);
  const double s_hi = bspline_basis(fit.knot_vector, hi, 1).dot(fit.coefficients);
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) {
    if (t < lo) {
      out.push_back(v_lo + s_lo * (t - lo));
    } else if (t > hi) {
      out.push_back(v_hi + s_hi * (t - hi));
    } else {
      out.push_back(bspline_basis(fit.knot_vector, t, 0).dot(fit.coefficients));
    }
  }
  return out;
}

}  // namespace growth::baselines
