#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "nbglarma/rng.hpp"
#include "nbglarma/types.hpp"

namespace nbglarma {

/// Least-squares problem 1/2 ||y_cal - x_cal b||^2. When built from the
/// likelihood, `eigvals` and `u` hold the (clipped) spectrum of -d2L/dbeta2.
struct QuadraticProblem {
  Vector y_cal;
  Matrix x_cal;
  Vector eigvals;
  Matrix u;

  [[nodiscard]] Eigen::Index rows() const noexcept { return x_cal.rows(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return x_cal.cols(); }

  static QuadraticProblem from_design(Matrix x, Vector y) {
    if (x.rows() != y.size()) throw ConfigError("QuadraticProblem: row count mismatch");
    QuadraticProblem qp;
    qp.x_cal = std::move(x);
    qp.y_cal = std::move(y);
    return qp;
  }

  [[nodiscard]] double loss(const Vector& beta) const { return 0.5 * (y_cal - x_cal * beta).squaredNorm(); }
};

struct LassoPath {
  Vector lambdas;
  Matrix betas;  // dim x n_lambda
  Vector cv_mean;
  Vector cv_se;
};

struct CdOptions {
  double tol = 1e-9;  // max_j g_jj * (change in b_j)^2 per sweep, relative to ||y||^2
  int max_sweeps = 300;
  bool homotopy_fallback = true;  // exact path solve when the sweep budget runs out
  std::vector<double>* objective_trace = nullptr;
};

namespace detail {

inline double soft_threshold(double v, double lambda) noexcept {
  if (v > lambda) return v - lambda;
  if (v < -lambda) return v + lambda;
  return 0.0;
}

/// Normal equations of a least-squares problem.
struct Gram {
  Matrix g;  // x'x
  Vector c;  // x'y
  double yy = 0.0;
};

inline Gram make_gram(const Matrix& x, const Vector& y) {
  Gram out;
  out.g.noalias() = x.transpose() * x;
  out.c.noalias() = x.transpose() * y;
  out.yy = y.squaredNorm();
  return out;
}

inline double kkt_violation(const Vector& beta, const Vector& grad, double lambda) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double v = beta[j] != 0.0 ? std::abs(grad[j] - std::copysign(lambda, beta[j]))
                                     : std::max(0.0, std::abs(grad[j]) - lambda);
    worst = std::max(worst, v);
  }
  return worst;
}

/// KKT tolerance: absolute, loosened only where rounding in x'y dominates.
inline double kkt_slack(const Gram& gm) { return std::max(1e-7, 1e-13 * gm.c.cwiseAbs().maxCoeff()); }

inline double gram_objective(const Gram& gm, const Vector& beta, double lambda) {
  return 0.5 * (gm.yy - 2.0 * gm.c.dot(beta) + beta.dot(gm.g * beta)) + lambda * beta.lpNorm<1>();
}

/**
 * Active-set refinement with signs held fixed: moves toward the stationary
 * point of the current support, dropping coordinates that reach zero on the
 * way. Returns true once the result satisfies every KKT condition.
 */
inline bool polish_support(const Gram& gm, double lambda, Vector& beta, Vector& grad) {
  const double slack = kkt_slack(gm);
  for (Eigen::Index round = 0; round <= beta.size(); ++round) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      if (beta[j] != 0.0) support.push_back(j);
    }
    if (support.empty()) return false;
    const auto k = static_cast<Eigen::Index>(support.size());
    Matrix g_ss(k, k);
    Vector rhs(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      rhs[a] = gm.c[support[a]] - std::copysign(lambda, beta[support[a]]);
      for (Eigen::Index b = 0; b < k; ++b) g_ss(a, b) = gm.g(support[a], support[b]);
    }
    Eigen::LDLT<Matrix> ldlt(g_ss);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    const Vector sol = ldlt.solve(rhs);
    if (!sol.allFinite() || (g_ss * sol - rhs).norm() > 1e-8 * std::max(1.0, rhs.norm())) return false;
    double step = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index a = 0; a < k; ++a) {
      const double cur = beta[support[a]];
      if (sol[a] == 0.0 || std::signbit(sol[a]) != std::signbit(cur)) {
        const double t = cur / (cur - sol[a]);
        if (t < step) {
          step = t;
          blocking = a;
        }
      }
    }
    for (Eigen::Index a = 0; a < k; ++a) {
      const Eigen::Index j = support[a];
      beta[j] = a == blocking ? 0.0 : beta[j] + step * (sol[a] - beta[j]);
    }
    grad = gm.c - gm.g * beta;
    if (blocking < 0) return kkt_violation(beta, grad, lambda) <= slack;
  }
  return false;
}

struct CdResult {
  int sweeps = 0;
  bool converged = false;
};

/**
 * Cyclic coordinate descent with covariance updates on a Gram system.
 * `beta` is the warm start and receives the solution. Sweeps over the
 * ever-active set run to convergence, then a full sweep checks for new entrants.
 */
inline CdResult coordinate_descent(const Gram& gm, double lambda, Vector& beta, const CdOptions& opt = {}) {
  const Eigen::Index d = gm.c.size();
  Vector grad = gm.c - gm.g * beta;  // x'(y - x beta)
  const double tol = opt.tol * std::max(gm.yy, std::numeric_limits<double>::min());
  std::vector<char> ever(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) ever[static_cast<std::size_t>(j)] = beta[j] != 0.0;
  double max_change = 0.0;
  bool entered = false;
  auto update = [&](Eigen::Index j) {
    const double gjj = gm.g(j, j);
    if (gjj <= 0.0) {
      beta[j] = 0.0;
      return;
    }
    const double old = beta[j];
    const double next = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
    if (next != old) {
      const double delta = next - old;
      grad.noalias() -= gm.g.col(j) * delta;
      beta[j] = next;
      max_change = std::max(max_change, gjj * delta * delta);
      auto& flag = ever[static_cast<std::size_t>(j)];
      if (!flag) {
        flag = 1;
        entered = true;
      }
    }
  };
  constexpr int kPolishEvery = 50;
  int sweeps = 0;
  bool active_only = false;
  while (sweeps < opt.max_sweeps) {
    ++sweeps;
    max_change = 0.0;
    entered = false;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!active_only || ever[static_cast<std::size_t>(j)]) update(j);
    }
    if (opt.objective_trace) opt.objective_trace->push_back(gram_objective(gm, beta, lambda));
    if (active_only) {
      if (max_change <= tol) {
        active_only = false;
      } else if (sweeps % kPolishEvery == 0 && polish_support(gm, lambda, beta, grad)) {
        return {sweeps, true};
      }
    } else if (!entered && max_change <= tol) {
      return {sweeps, true};
    } else {
      active_only = true;
    }
  }
  return {sweeps, false};
}

/**
 * Exact lasso path by homotopy (LARS with the lasso modification), evaluated
 * at a decreasing grid. Coordinates whose entry would make the active Gram
 * block singular are held out until the active set next shrinks.
 */
inline Matrix homotopy_path(const Gram& gm, const Vector& lambdas) {
  const Eigen::Index d = gm.c.size();
  Matrix out = Matrix::Zero(d, lambdas.size());
  Vector beta = Vector::Zero(d);
  Vector corr = gm.c;
  double lam = gm.c.cwiseAbs().maxCoeff();
  Eigen::Index next = 0;
  while (next < lambdas.size() && lambdas[next] >= lam) ++next;
  if (next == lambdas.size() || !(lam > 0.0)) return out;

  std::vector<Eigen::Index> active;
  std::vector<char> in_active(static_cast<std::size_t>(d), 0);
  std::vector<char> blocked(static_cast<std::size_t>(d), 0);
  Vector sign = Vector::Zero(d);
  auto add = [&](Eigen::Index j) {
    active.push_back(j);
    in_active[static_cast<std::size_t>(j)] = 1;
    sign[j] = corr[j] >= 0.0 ? 1.0 : -1.0;
  };
  Eigen::Index first = 0;
  corr.cwiseAbs().maxCoeff(&first);
  add(first);

  const double scale = std::max(1.0, gm.g.diagonal().cwiseAbs().maxCoeff());
  const auto max_steps = static_cast<long>(50 * (d + 1));
  for (long step = 0; step < max_steps && next < lambdas.size(); ++step) {
    const auto k = static_cast<Eigen::Index>(active.size());
    Matrix g_aa(k, k);
    Vector s_a(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      s_a[a] = sign[active[a]];
      for (Eigen::Index b = 0; b < k; ++b) g_aa(a, b) = gm.g(active[a], active[b]);
    }
    Eigen::LDLT<Matrix> ldlt(g_aa);
    const Vector piv = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(piv.minCoeff() > 1e-12 * scale)) {
      const Eigen::Index last = active.back();
      active.pop_back();
      in_active[static_cast<std::size_t>(last)] = 0;
      blocked[static_cast<std::size_t>(last)] = 1;
      beta[last] = 0.0;
      if (active.empty()) break;
      continue;
    }
    const Vector dir = ldlt.solve(s_a);
    Vector slope = Vector::Zero(d);
    for (Eigen::Index a = 0; a < k; ++a) slope.noalias() += gm.g.col(active[a]) * dir[a];

    double delta = lam - lambdas[next];
    Eigen::Index event = -1;
    bool leaving = false;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (in_active[static_cast<std::size_t>(j)] || blocked[static_cast<std::size_t>(j)]) continue;
      if (slope[j] < 1.0) {
        const double t = (lam - corr[j]) / (1.0 - slope[j]);
        if (t >= 0.0 && t < delta) { delta = t; event = j; leaving = false; }
      }
      if (slope[j] > -1.0) {
        const double t = (lam + corr[j]) / (1.0 + slope[j]);
        if (t >= 0.0 && t < delta) { delta = t; event = j; leaving = false; }
      }
    }
    for (Eigen::Index a = 0; a < k; ++a) {
      const Eigen::Index j = active[a];
      if (dir[a] != 0.0 && std::signbit(dir[a]) != std::signbit(beta[j]) && beta[j] != 0.0) {
        const double t = -beta[j] / dir[a];
        if (t >= 0.0 && t < delta) { delta = t; event = j; leaving = true; }
      }
    }

    for (Eigen::Index a = 0; a < k; ++a) beta[active[a]] += delta * dir[a];
    lam -= delta;
    corr = gm.c - gm.g * beta;
    if (event < 0) {
      lam = lambdas[next];
      // re-solve on the support so the stationarity equations hold to rounding
      Vector rhs(k);
      for (Eigen::Index a = 0; a < k; ++a) rhs[a] = gm.c[active[a]] - lam * sign[active[a]];
      const Vector exact = ldlt.solve(rhs);
      bool consistent = exact.allFinite();
      for (Eigen::Index a = 0; a < k && consistent; ++a) {
        consistent = exact[a] == 0.0 || std::signbit(exact[a]) == std::signbit(sign[active[a]]);
      }
      if (consistent) {
        for (Eigen::Index a = 0; a < k; ++a) beta[active[a]] = exact[a];
        corr = gm.c - gm.g * beta;
      }
      out.col(next) = beta;
      ++next;
      while (next < lambdas.size() && lambdas[next] >= lam) out.col(next++) = beta;
    } else if (leaving) {
      beta[event] = 0.0;
      active.erase(std::find(active.begin(), active.end(), event));
      in_active[static_cast<std::size_t>(event)] = 0;
      std::fill(blocked.begin(), blocked.end(), 0);
      if (active.empty()) {
        corr.cwiseAbs().maxCoeff(&first);
        add(first);
      }
    } else {
      add(event);
    }
  }
  for (; next < lambdas.size(); ++next) out.col(next) = beta;
  return out;
}

/// Checks KKT after coordinate descent and repairs small violations with a
/// support solve. Returns false when only the homotopy can help.
inline bool settle_kkt(const Gram& gm, double lambda, Vector& beta) {
  Vector grad = gm.c - gm.g * beta;
  if (kkt_violation(beta, grad, lambda) <= kkt_slack(gm)) return true;
  Vector polished = beta;
  if (!polish_support(gm, lambda, polished, grad)) return false;
  beta = polished;
  return true;
}

/// Coordinate descent from `beta`, falling back to the exact homotopy when the
/// sweep budget runs out or KKT cannot be met.
inline void solve_lasso(const Gram& gm, double lambda, Vector& beta, const CdOptions& opt) {
  const bool converged = coordinate_descent(gm, lambda, beta, opt).converged;
  if (!opt.homotopy_fallback || (converged && settle_kkt(gm, lambda, beta))) return;
  Vector grid(1);
  grid[0] = lambda;
  beta = homotopy_path(gm, grid).col(0);
}

}  // namespace detail

/// 100 log-spaced values from max_j |x_j'y| down to ratio * that.
inline Vector default_lambda_grid(const QuadraticProblem& qp, int count = 100, double ratio = 1e-4) {
  double lambda_max = (qp.x_cal.transpose() * qp.y_cal).cwiseAbs().maxCoeff();
  if (!(lambda_max > 0.0)) lambda_max = 1.0;
  Vector grid(count);
  for (int i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    grid[i] = lambda_max * std::pow(ratio, frac);
  }
  return grid;
}

/// Solution at a single lambda, starting from zero.
inline Vector lasso_solve(const QuadraticProblem& qp, double lambda, const CdOptions& opt = {}) {
  const auto gm = detail::make_gram(qp.x_cal, qp.y_cal);
  Vector beta = Vector::Zero(qp.dim());
  detail::solve_lasso(gm, lambda, beta, opt);
  return beta;
}

namespace detail {

inline Matrix path_on_gram(const Gram& gm, const Vector& lambdas, const CdOptions& opt) {
  Matrix betas(gm.c.size(), lambdas.size());
  Vector beta = Vector::Zero(gm.c.size());
  for (Eigen::Index i = 0; i < lambdas.size(); ++i) {
    const bool converged = coordinate_descent(gm, lambdas[i], beta, opt).converged;
    if (opt.homotopy_fallback && !(converged && settle_kkt(gm, lambdas[i], beta))) {
      const Vector rest = lambdas.tail(lambdas.size() - i);
      betas.rightCols(rest.size()) = homotopy_path(gm, rest);
      return betas;
    }
    betas.col(i) = beta;
  }
  return betas;
}

inline void check_grid(const Vector& lambdas) {
  for (Eigen::Index i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0.0)) throw ConfigError("lambda grid must be nonnegative");
    if (i > 0 && !(lambdas[i] < lambdas[i - 1])) throw ConfigError("lambda grid must be strictly decreasing");
  }
}

}  // namespace detail

/// argmin 1/2 ||y - x b||^2 + lambda ||b||_1 along a decreasing grid, warm-started.
inline LassoPath lasso_path(const QuadraticProblem& qp, std::optional<Vector> lambdas = std::nullopt,
                            const CdOptions& opt = {}) {
  LassoPath path;
  path.lambdas = lambdas ? *lambdas : default_lambda_grid(qp);
  detail::check_grid(path.lambdas);
  path.betas = detail::path_on_gram(detail::make_gram(qp.x_cal, qp.y_cal), path.lambdas, opt);
  return path;
}

struct CvResult {
  double lambda_cv = 0.0;
  Eigen::Index best_index = 0;
  Vector cv_mean;
  Vector cv_se;
};

namespace detail {

/// Seeded assignment of rows to folds: a shuffled order dealt round-robin.
inline std::vector<int> fold_assignment(Eigen::Index rows, int folds, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kStreamFolds));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(rows));
  for (std::size_t i = 0; i < order.size(); ++i) fold[static_cast<std::size_t>(order[i])] = static_cast<int>(i % folds);
  return fold;
}

}  // namespace detail

/**
 * K-fold cross-validation over the rows of (y_cal, x_cal). Each fold fits the
 * whole grid on the complement and scores ||y_fold - x_fold b(lambda)||^2.
 * lambda_cv minimizes the mean over folds (largest lambda on ties).
 */
inline CvResult cross_validate(const QuadraticProblem& qp, const Vector& lambdas, int folds, std::uint64_t seed,
                               const CdOptions& opt = {}) {
  if (folds < 2 || folds > qp.rows()) throw ConfigError("cross_validate: need 2 <= folds <= rows");
  detail::check_grid(lambdas);
  const auto fold = detail::fold_assignment(qp.rows(), folds, seed);
  const Eigen::Index n_lambda = lambdas.size();
  Matrix errors(folds, n_lambda);
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> in, out;
    for (Eigen::Index r = 0; r < qp.rows(); ++r) (fold[static_cast<std::size_t>(r)] == f ? out : in).push_back(r);
    const Matrix x_in = qp.x_cal(in, Eigen::all);
    const Vector y_in = qp.y_cal(in);
    const Matrix x_out = qp.x_cal(out, Eigen::all);
    const Vector y_out = qp.y_cal(out);
    const Matrix betas = detail::path_on_gram(detail::make_gram(x_in, y_in), lambdas, opt);
    errors.row(f) = ((x_out * betas).colwise() - y_out).colwise().squaredNorm();
  }
  CvResult cv;
  cv.cv_mean = errors.colwise().mean().transpose();
  cv.cv_se.resize(n_lambda);
  for (Eigen::Index i = 0; i < n_lambda; ++i) {
    const double sd = std::sqrt((errors.col(i).array() - cv.cv_mean[i]).square().sum() / (folds - 1));
    cv.cv_se[i] = sd / std::sqrt(static_cast<double>(folds));
  }
  cv.cv_mean.minCoeff(&cv.best_index);
  cv.lambda_cv = lambdas[cv.best_index];
  return cv;
}

}  // namespace nbglarma
