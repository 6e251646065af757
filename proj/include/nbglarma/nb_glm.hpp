#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "nbglarma/model.hpp"

namespace nbglarma {

inline constexpr double kAlphaMin = 1e-3;
inline constexpr double kAlphaMax = 1e6;

/// Negative binomial GLM fit (log link, no lagged residuals).
struct GlmFit {
  Vector beta_hat;
  double alpha_hat = 1.0;
  bool converged = false;
  bool alpha_at_bound = false;
  int iterations = 0;
  double loglik = -std::numeric_limits<double>::infinity();
};

namespace detail {

inline constexpr std::int64_t kSeriesLimit = 1000;
inline constexpr double kMaxEtaStep = 5.0;
inline constexpr int kIrlsMaxIter = 100;

/// Per-observation pieces of the alpha profile at fixed means: value (up to
/// terms free of alpha), first and second derivative in alpha. Small counts
/// use finite sums so large-alpha differences keep full precision.
struct AlphaProfile {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline AlphaProfile alpha_profile(const CountSeries& y, const Vector& mu, double alpha) {
  AlphaProfile out;
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    const std::int64_t yi = y[t];
    const double yd = static_cast<double>(yi);
    const double m = mu[t];
    const double am = alpha + m;
    double psi_diff = 0.0;
    double tri_diff = 0.0;
    if (yi <= kSeriesLimit) {
      for (std::int64_t k = 0; k < yi; ++k) {
        const double ak = alpha + static_cast<double>(k);
        out.value += std::log1p((static_cast<double>(k) - m) / am);
        psi_diff += 1.0 / ak;
        tri_diff -= 1.0 / (ak * ak);
      }
    } else {
      out.value += log_gamma(alpha + yd) - log_gamma(alpha) - yd * std::log(am);
      psi_diff = boost::math::digamma(alpha + yd) - boost::math::digamma(alpha);
      tri_diff = boost::math::trigamma(alpha + yd) - boost::math::trigamma(alpha);
    }
    out.value -= alpha * std::log1p(m / alpha);
    out.d1 += psi_diff - std::log1p(m / alpha) + (m - yd) / am;
    out.d2 += tri_diff + 1.0 / alpha - 2.0 / am + (alpha + yd) / (am * am);
  }
  return out;
}

/// Maximizes the alpha profile over log(alpha) within the clamp box.
inline double maximize_alpha(const CountSeries& y, const Vector& mu, double alpha, bool& at_bound) {
  const double lo = std::log(kAlphaMin);
  const double hi = std::log(kAlphaMax);
  double theta = std::clamp(std::log(alpha), lo, hi);
  at_bound = false;
  for (int it = 0; it < 200; ++it) {
    const double a = std::exp(theta);
    const AlphaProfile prof = alpha_profile(y, mu, a);
    const double g = a * prof.d1;
    const double h = a * a * prof.d2 + a * prof.d1;
    double step = h < 0.0 ? -g / h : (g > 0.0 ? 1.0 : -1.0);
    step = std::clamp(step, -3.0, 3.0);
    if ((theta >= hi && step > 0.0) || (theta <= lo && step < 0.0)) {
      at_bound = true;
      break;
    }
    double next = std::clamp(theta + step, lo, hi);
    for (int k = 0; k < 60; ++k) {
      if (alpha_profile(y, mu, std::exp(next)).value >= prof.value - 1e-12 * std::abs(prof.value)) break;
      next = theta + 0.5 * (next - theta);
    }
    const double change = std::abs(next - theta);
    theta = next;
    if (change < 1e-12) break;
  }
  at_bound = at_bound || theta <= lo || theta >= hi;
  return std::exp(theta);
}

inline double moment_alpha(const Vector& y) {
  const double mean = y.mean();
  const double var = y.size() > 1 ? (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1) : 0.0;
  if (var <= mean) return 10.0;
  return std::clamp(mean * mean / (var - mean), kAlphaMin, kAlphaMax);
}

inline double glm_loglik(const CountSeries& y, const Vector& eta, double alpha) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) total += nb_log_pmf(y[t], eta[t], alpha);
  return total;
}

enum class IrlsStatus { Converged, IterationLimit, Failed };

/// Fisher scoring for beta at fixed alpha, with step halving and a cap on how
/// far one step may move the linear predictor.
inline IrlsStatus irls_beta(const CountSeries& y, const Matrix& x, double alpha, Vector& beta, int& iterations) {
  const Vector& yv = y.values();
  Vector eta = x * beta;
  double current = glm_loglik(y, eta, alpha);
  if (!std::isfinite(current)) return IrlsStatus::Failed;
  for (int it = 0; it < kIrlsMaxIter; ++it) {
    ++iterations;
    const Vector mu = eta.unaryExpr([](double v) { return clamped_exp(v); });
    const Vector w = (mu.array() / (1.0 + mu.array() / alpha)).matrix();
    const Vector score = x.transpose() * ((yv - mu).array() / (1.0 + mu.array() / alpha)).matrix();
    const Matrix info = x.transpose() * w.asDiagonal() * x;
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) return IrlsStatus::Failed;
    const Vector step = llt.solve(score);
    if (!step.allFinite()) return IrlsStatus::Failed;
    // keep the linear predictor out of the flat region of the clamped exp
    const double reach = (x * step).lpNorm<Eigen::Infinity>();
    double scale = reach > kMaxEtaStep ? kMaxEtaStep / reach : 1.0;
    Vector candidate;
    double value = current;
    for (int h = 0; h < 40; ++h, scale *= 0.5) {
      candidate = beta + scale * step;
      eta = x * candidate;
      value = glm_loglik(y, eta, alpha);
      if (std::isfinite(value) && value >= current - 1e-12 * std::abs(current)) break;
    }
    if (!std::isfinite(value)) return IrlsStatus::Failed;
    const double change = (candidate - beta).lpNorm<Eigen::Infinity>();
    const double gain = value - current;
    beta = candidate;
    current = value;
    if (change < 1e-11 * (1.0 + beta.lpNorm<Eigen::Infinity>())) return IrlsStatus::Converged;
    if (std::abs(gain) < 1e-13 * (1.0 + std::abs(current))) return IrlsStatus::Converged;
  }
  return IrlsStatus::IterationLimit;
}

}  // namespace detail

/**
 * Negative binomial GLM by alternating Fisher scoring for beta at fixed alpha
 * and Newton in log(alpha) on the profile likelihood at fixed beta. Alpha is
 * kept in [1e-3, 1e6]; `alpha_at_bound` reports an active bound. Running out
 * of iterations yields converged = false rather than an error.
 */
inline GlmFit fit_nb_glm(const CountSeries& y, const DesignMatrix& x) {
  if (y.size() != x.rows()) throw ConfigError("fit_nb_glm: counts and design have different lengths");
  if (x.rows() < x.cols()) throw ConfigError("fit_nb_glm: fewer observations than design columns");
  const Matrix& xm = x.matrix();
  Eigen::ColPivHouseholderQR<Matrix> qr(xm);
  qr.setThreshold(1e-10);
  if (qr.rank() < xm.cols()) throw ConfigError("fit_nb_glm: design matrix is rank deficient");

  const Vector log_y = (y.values().array() + 0.5).log().matrix();
  Vector beta = qr.solve(log_y);
  double alpha = detail::moment_alpha(y.values());

  GlmFit fit;
  bool irls_limited = false;
  for (int round = 1; round <= 50; ++round) {
    fit.iterations = round;
    const Vector beta_prev = beta;
    const double alpha_prev = alpha;
    int irls_iters = 0;
    const auto status = detail::irls_beta(y, xm, alpha, beta, irls_iters);
    if (status == detail::IrlsStatus::Failed) throw NumericError("fit_nb_glm: IRLS diverged");
    irls_limited = status == detail::IrlsStatus::IterationLimit;
    const Vector mu = (xm * beta).unaryExpr([](double v) { return clamped_exp(v); });
    alpha = detail::maximize_alpha(y, mu, alpha, fit.alpha_at_bound);
    if (!irls_limited && (beta - beta_prev).lpNorm<Eigen::Infinity>() < 1e-8 &&
        std::abs(std::log(alpha / alpha_prev)) < 1e-8) {
      fit.converged = true;
      break;
    }
  }
  fit.beta_hat = beta;
  fit.alpha_hat = alpha;
  fit.loglik = detail::glm_loglik(y, xm * beta, alpha);
  return fit;
}

/// Refit on the intercept plus `selected` columns; beta embedded back into p+1 slots.
inline GlmFit reestimate(const CountSeries& y, const DesignMatrix& x, const IndexSet& selected) {
  IndexSet columns{0};
  for (int k : selected) {
    if (k < 0 || k >= x.cols()) throw ConfigError("reestimate: column index out of range: " + std::to_string(k));
    if (k != 0) columns.push_back(k);
  }
  std::sort(columns.begin(), columns.end());
  columns.erase(std::unique(columns.begin(), columns.end()), columns.end());
  GlmFit sub = fit_nb_glm(y, x.select_columns(columns));
  Vector full = Vector::Zero(x.cols());
  for (std::size_t k = 0; k < columns.size(); ++k) full[columns[k]] = sub.beta_hat[static_cast<Eigen::Index>(k)];
  sub.beta_hat = std::move(full);
  return sub;
}

}  // namespace nbglarma
