#pragma once

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

#include "nbglarma/types.hpp"

namespace nbglarma {

/// Bound on |W| inside exponentials. W itself is stored unclamped.
inline constexpr double kExpClamp = 30.0;

inline double clamped_exp(double w) noexcept { return std::exp(std::clamp(w, -kExpClamp, kExpClamp)); }

/// Thread-safe log-gamma (std::lgamma writes the global signgam).
inline double log_gamma(double x) { return boost::math::lgamma(x); }

namespace detail {

/// lgamma(alpha + y) - lgamma(alpha) - y log(alpha), summed term by term when
/// alpha is large enough for the lgamma difference to cancel.
inline double log_rising_excess(double alpha, std::int64_t y) {
  if (alpha > 1e4 && y <= 10000) {
    double sum = 0.0;
    for (std::int64_t k = 1; k < y; ++k) sum += std::log1p(static_cast<double>(k) / alpha);
    return sum;
  }
  const auto yd = static_cast<double>(y);
  return log_gamma(alpha + yd) - log_gamma(alpha) - yd * std::log(alpha);
}

}  // namespace detail

/**
 * Log of the negative binomial pmf with mean exp(w) and shape alpha:
 *
 *   lgamma(alpha + y) - lgamma(alpha) - lgamma(y + 1)
 *     + alpha log(alpha) + y w - (alpha + y) log(alpha + exp(w)),
 *
 * with w clamped to [-30, 30]. Evaluated in the equivalent form
 *   D - lgamma(y + 1) + y w - (alpha + y) log1p(exp(w) / alpha),
 * where D = lgamma(alpha + y) - lgamma(alpha) - y log(alpha).
 */
inline double nb_log_pmf(std::int64_t y, double w, double alpha) {
  const auto yd = static_cast<double>(y);
  const double wc = std::clamp(w, -kExpClamp, kExpClamp);
  return detail::log_rising_excess(alpha, y) - log_gamma(yd + 1.0) + yd * wc -
         (alpha + yd) * std::log1p(std::exp(wc) / alpha);
}

/// Score-type residual (Y exp(-W) - 1) / (1 + exp(W) / alpha).
inline double score_residual(double y, double w, double alpha) noexcept {
  const double ew = clamped_exp(w);
  return (y / ew - 1.0) / (1.0 + ew / alpha);
}

/**
 * Runs the observation-driven recursion
 *   W_t = beta' x_t + sum_{j=1}^{min(q, t-1)} gamma_j E_{t-j},
 * with E_s = 0 for s <= 0.
 */
inline GlarmaState compute_state(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x) {
  check_dimensions(params, y, x);
  const Eigen::Index n = y.size();
  const Eigen::Index q = params.q();
  GlarmaState s;
  s.w = x.matrix() * params.beta;
  s.e.setZero(n);
  s.mu.resize(n);
  const Vector& yv = y.values();
  for (Eigen::Index t = 0; t < n; ++t) {
    const Eigen::Index lags = std::min(q, t);
    double z = 0.0;
    for (Eigen::Index j = 1; j <= lags; ++j) z += params.gamma[j - 1] * s.e[t - j];
    s.w[t] += z;
    if (!std::isfinite(s.w[t])) {
      throw NumericError("compute_state: non-finite W at t=" + std::to_string(t + 1));
    }
    s.mu[t] = clamped_exp(s.w[t]);
    s.e[t] = score_residual(yv[t], s.w[t], params.alpha);
    if (!std::isfinite(s.e[t])) {
      throw NumericError("compute_state: non-finite residual at t=" + std::to_string(t + 1));
    }
  }
  return s;
}

/// Conditional log-likelihood over t = 1..n given a computed state.
inline double log_likelihood(const GlarmaState& state, const CountSeries& y, double alpha) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) total += nb_log_pmf(y[t], state.w[t], alpha);
  return total;
}

inline double log_likelihood(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x) {
  return log_likelihood(compute_state(params, y, x), y, params.alpha);
}

}  // namespace nbglarma
