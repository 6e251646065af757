#pragma once

#include <cmath>
#include <limits>

#include "nbglarma/derivatives.hpp"

namespace nbglarma {

struct NewtonConfig {
  double tol = 1e-6;  // sup-norm of the step
  int max_iter = 100;
  int max_halvings = 30;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("NewtonConfig: tol must be positive");
    if (max_iter < 1) throw ConfigError("NewtonConfig: max_iter must be >= 1");
    if (max_halvings < 1) throw ConfigError("NewtonConfig: max_halvings must be >= 1");
  }
};

struct NewtonResult {
  Vector gamma_hat;
  int iterations = 0;
  bool converged = false;
  double final_step_norm = std::numeric_limits<double>::infinity();
  double loglik = -std::numeric_limits<double>::infinity();
};

namespace detail {

inline double loglik_or_minus_inf(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x) {
  try {
    const double value = log_likelihood(params, y, x);
    return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

/// Solves H d = g for the Newton direction with H shifted to be negative
/// definite when it is not already, so that gamma - d is an ascent direction.
inline Vector newton_direction(const Matrix& hess, const Vector& grad) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hess);
  const double max_diag = hess.diagonal().cwiseAbs().maxCoeff();
  const double ridge = 1e-6 * (1.0 + max_diag);
  const double top = eig.eigenvalues().maxCoeff();
  Matrix shifted = hess;
  if (top > -ridge) shifted.diagonal().array() -= top + ridge;
  Eigen::LDLT<Matrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw NumericError("estimate_gamma: singular gamma-gamma Hessian block");
  Vector d = ldlt.solve(grad);
  if (!d.allFinite()) throw NumericError("estimate_gamma: non-finite Newton direction");
  return d;
}

}  // namespace detail

/**
 * Newton-Raphson on L(beta0, gamma, alpha0) in gamma alone:
 *   gamma_r = gamma_{r-1} - [d2L/dgamma dgamma']^{-1} dL/dgamma.
 * Steps are halved until the log-likelihood does not decrease.
 */
inline NewtonResult estimate_gamma(const Vector& beta0, double alpha0, const Vector& gamma0, const CountSeries& y,
                                   const DesignMatrix& x, const NewtonConfig& cfg = {}) {
  cfg.validate();
  GlarmaParams params{beta0, gamma0, alpha0};
  check_dimensions(params, y, x);

  NewtonResult result;
  double current = log_likelihood(params, y, x);
  if (!std::isfinite(current)) throw NumericError("estimate_gamma: non-finite log-likelihood at gamma0");

  for (int r = 1; r <= cfg.max_iter; ++r) {
    result.iterations = r;
    const DerivativeWorkspace ws = likelihood_derivatives(params, y, x, Block::Gamma);
    const Vector direction = detail::newton_direction(ws.hess, ws.grad);

    double scale = 1.0;
    bool accepted = false;
    Vector candidate;
    double value = current;
    for (int h = 0; h <= cfg.max_halvings; ++h, scale *= 0.5) {
      candidate = params.gamma - scale * direction;
      GlarmaParams trial{params.beta, candidate, params.alpha};
      value = detail::loglik_or_minus_inf(trial, y, x);
      if (value >= current - 1e-8 * std::abs(current)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    result.final_step_norm = (candidate - params.gamma).lpNorm<Eigen::Infinity>();
    params.gamma = candidate;
    current = value;
    if (result.final_step_norm < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.gamma_hat = params.gamma;
  result.loglik = current;
  return result;
}

}  // namespace nbglarma
