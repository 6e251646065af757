#pragma once

#include <numeric>
#include <vector>

#include "nbglarma/model.hpp"

namespace nbglarma {

/// Which parameter block of d/d(delta) to assemble.
enum class Block { Full, Beta, Gamma };

/// Column indices of delta = (beta', gamma') covered by a block.
inline IndexSet block_indices(Block block, Eigen::Index n_beta, Eigen::Index q) {
  IndexSet idx;
  const auto first = block == Block::Gamma ? n_beta : Eigen::Index{0};
  const auto last = block == Block::Beta ? n_beta : n_beta + q;
  idx.resize(static_cast<std::size_t>(last - first));
  std::iota(idx.begin(), idx.end(), static_cast<int>(first));
  return idx;
}

struct DerivativeWorkspace {
  Matrix dW;               // n x d, row t = dW_t / d(delta)
  std::vector<Matrix> d2W;  // n matrices over the requested indices
  Vector grad;
  Matrix hess;
};

namespace detail {

/// Per-t factors shared by the recursions:
///   bracket   B_t = -dE_t/dW_t = E_t + (1 + E_t a_t) / (1 + a_t)
///   curvature C_t = -dB_t/dW_t = E_t + 2 (E_t a_t^2 + Y_t / alpha) / (1 + a_t)^2 + (1 - E_t a_t) / (1 + a_t)
/// with a_t = exp(W_t) / alpha.
struct LagFactors {
  Vector bracket;
  Vector curvature;
};

inline LagFactors lag_factors(const GlarmaState& state, const CountSeries& y, double alpha) {
  const Eigen::Index n = y.size();
  LagFactors f{Vector(n), Vector(n)};
  for (Eigen::Index t = 0; t < n; ++t) {
    const double a = state.mu[t] / alpha;
    const double e = state.e[t];
    const double d = 1.0 + a;
    f.bracket[t] = e + (1.0 + e * a) / d;
    f.curvature[t] = e + 2.0 * (e * a * a + y.values()[t] / alpha) / (d * d) + (1.0 - e * a) / d;
  }
  return f;
}

/// Likelihood weights: gradient weight r_t and Gauss-Newton curvature k_t.
inline void likelihood_weights(const GlarmaState& state, const CountSeries& y, double alpha, Vector& r, Vector& k) {
  const Eigen::Index n = y.size();
  r.resize(n);
  k.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yt = y.values()[t];
    const double ratio = state.mu[t] / (alpha + state.mu[t]);
    r[t] = yt - (alpha + yt) * ratio;
    k[t] = (alpha + yt) * ratio * (1.0 - ratio);
  }
}

inline Matrix first_derivatives(const GlarmaParams& params, const DesignMatrix& x, const GlarmaState& state,
                                const LagFactors& f) {
  const Eigen::Index n = x.rows();
  const Eigen::Index nb = x.cols();
  const Eigen::Index q = params.q();
  Matrix dW(n, nb + q);
  for (Eigen::Index t = 0; t < n; ++t) {
    dW.row(t).head(nb) = x.row(t);
    for (Eigen::Index l = 1; l <= q; ++l) dW(t, nb + l - 1) = t - l >= 0 ? state.e[t - l] : 0.0;
    const Eigen::Index lags = std::min(q, t);
    for (Eigen::Index j = 1; j <= lags; ++j) {
      dW.row(t) -= (params.gamma[j - 1] * f.bracket[t - j]) * dW.row(t - j);
    }
  }
  return dW;
}

/**
 * Streams d2W_t restricted to `idx` for t = 0..n-1 into `sink(t, d2W_t)`.
 *
 * Only the last q matrices are kept. Lead terms appear for every index that
 * is a gamma component: d2W_t/(d gamma_l d b) picks up -B_{t-l} dW_{t-l}/db.
 */
template <class Sink>
void stream_second_derivatives(const GlarmaParams& params, Eigen::Index n_beta, const Matrix& dW,
                               const LagFactors& f, const IndexSet& idx, Sink&& sink) {
  const Eigen::Index n = dW.rows();
  const Eigen::Index q = params.q();
  const auto m = static_cast<Eigen::Index>(idx.size());
  Matrix sub(n, m);
  for (Eigen::Index k = 0; k < m; ++k) sub.col(k) = dW.col(idx[static_cast<std::size_t>(k)]);

  std::vector<Matrix> ring(static_cast<std::size_t>(q), Matrix::Zero(m, m));
  Matrix current(m, m);
  for (Eigen::Index t = 0; t < n; ++t) {
    current.setZero();
    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index l = idx[static_cast<std::size_t>(a)] - n_beta + 1;
      if (l < 1 || t - l < 0) continue;
      const double b = f.bracket[t - l];
      current.row(a) -= b * sub.row(t - l);
      current.col(a) -= b * sub.row(t - l).transpose();
    }
    const Eigen::Index lags = std::min(q, t);
    for (Eigen::Index j = 1; j <= lags; ++j) {
      const Eigen::Index s = t - j;
      const double g = params.gamma[j - 1];
      const Matrix& prev = ring[static_cast<std::size_t>(s % q)];
      current.noalias() -= (g * f.bracket[s]) * prev;
      current.noalias() += (g * f.curvature[s]) * sub.row(s).transpose() * sub.row(s);
    }
    sink(t, static_cast<const Matrix&>(current));
    ring[static_cast<std::size_t>(t % q)] = current;
  }
}

}  // namespace detail

/// Rows dW_t/d(delta) for t = 1..n by the lagged-residual recursion.
inline Matrix w_first_derivatives(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x,
                                  const GlarmaState& state) {
  check_dimensions(params, y, x);
  return detail::first_derivatives(params, x, state, detail::lag_factors(state, y, params.alpha));
}

/// All n second-derivative matrices of W_t over the given delta indices.
inline std::vector<Matrix> w_second_derivatives(const GlarmaParams& params, const CountSeries& y,
                                                const DesignMatrix& x, const GlarmaState& state, const Matrix& dW,
                                                const IndexSet& idx) {
  check_dimensions(params, y, x);
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(y.size()));
  detail::stream_second_derivatives(params, x.cols(), dW, detail::lag_factors(state, y, params.alpha), idx,
                                    [&](Eigen::Index, const Matrix& d2) { out.push_back(d2); });
  return out;
}

inline std::vector<Matrix> w_second_derivatives(const GlarmaParams& params, const CountSeries& y,
                                                const DesignMatrix& x, const GlarmaState& state, const Matrix& dW) {
  return w_second_derivatives(params, y, x, state, dW, block_indices(Block::Full, x.cols(), params.q()));
}

/// dL/d(delta) = sum_t (Y_t - (alpha + Y_t) e^W_t / (alpha + e^W_t)) dW_t/d(delta).
inline Vector likelihood_gradient(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x) {
  const GlarmaState state = compute_state(params, y, x);
  const Matrix dW = w_first_derivatives(params, y, x, state);
  Vector r, k;
  detail::likelihood_weights(state, y, params.alpha, r, k);
  return dW.transpose() * r;
}

/// Gradient and Hessian restricted to a block, sharing one pass over the data.
inline DerivativeWorkspace likelihood_derivatives(const GlarmaParams& params, const CountSeries& y,
                                                  const DesignMatrix& x, Block block = Block::Full) {
  const GlarmaState state = compute_state(params, y, x);
  const auto f = detail::lag_factors(state, y, params.alpha);
  DerivativeWorkspace ws;
  ws.dW = detail::first_derivatives(params, x, state, f);
  Vector r, k;
  detail::likelihood_weights(state, y, params.alpha, r, k);
  const IndexSet idx = block_indices(block, x.cols(), params.q());
  const auto m = static_cast<Eigen::Index>(idx.size());
  Matrix sub(ws.dW.rows(), m);
  for (Eigen::Index c = 0; c < m; ++c) sub.col(c) = ws.dW.col(idx[static_cast<std::size_t>(c)]);

  ws.grad = sub.transpose() * r;
  ws.hess = -(sub.transpose() * k.asDiagonal() * sub);
  detail::stream_second_derivatives(params, x.cols(), ws.dW, f, idx, [&](Eigen::Index t, const Matrix& d2) {
    if (r[t] != 0.0) ws.hess.noalias() += r[t] * d2;
  });
  ws.hess = 0.5 * (ws.hess + ws.hess.transpose()).eval();
  if (!ws.hess.allFinite() || !ws.grad.allFinite()) throw NumericError("likelihood derivatives are not finite");
  return ws;
}

/// d2L / d(delta) d(delta)'.
inline Matrix likelihood_hessian(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x,
                                 Block block = Block::Full) {
  return likelihood_derivatives(params, y, x, block).hess;
}

}  // namespace nbglarma
