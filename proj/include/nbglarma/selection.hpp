#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <string_view>

#include "nbglarma/derivatives.hpp"
#include "nbglarma/lasso.hpp"
#include "nbglarma/parallel.hpp"

namespace nbglarma {

/// Eigenvalues of -d2L/dbeta2 below this fraction of the largest are raised to it.
inline constexpr double kEigenFloor = 1e-8;

/**
 * Least-squares form of the expansion b -> g'(b - beta0) - 1/2 (b - beta0)' H (b - beta0):
 * with H = U diag(lam) U',
 *   x_cal = lam^{1/2} U',  y_cal = lam^{1/2} U' beta0 + lam^{-1/2} U' g.
 * Eigenvalues below kEigenFloor * max are raised to that floor.
 */
inline QuadraticProblem quadratic_from_expansion(const Vector& beta0, const Vector& grad, const Matrix& curvature) {
  if (grad.size() != beta0.size() || curvature.rows() != beta0.size() || curvature.cols() != beta0.size()) {
    throw ConfigError("quadratic_from_expansion: dimension mismatch");
  }
  if (!curvature.allFinite() || !grad.allFinite()) throw NumericError("build_quadratic: non-finite Hessian");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(curvature);
  if (eig.info() != Eigen::Success) throw NumericError("build_quadratic: eigendecomposition failed");
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw NumericError("build_quadratic: curvature has no positive eigenvalue");

  QuadraticProblem qp;
  qp.u = eig.eigenvectors();
  qp.eigvals = eig.eigenvalues().cwiseMax(kEigenFloor * top);
  const Vector root = qp.eigvals.cwiseSqrt();
  qp.x_cal = root.asDiagonal() * qp.u.transpose();
  qp.y_cal = qp.x_cal * beta0 + root.cwiseInverse().asDiagonal() * (qp.u.transpose() * grad);
  if (!qp.y_cal.allFinite() || !qp.x_cal.allFinite()) throw NumericError("build_quadratic: non-finite problem");
  return qp;
}

/// Expansion of L in beta around beta0 with gamma and alpha held fixed.
inline QuadraticProblem build_quadratic(const Vector& beta0, const Vector& gamma_hat, double alpha0,
                                        const CountSeries& y, const DesignMatrix& x) {
  const GlarmaParams params{beta0, gamma_hat, alpha0};
  const DerivativeWorkspace ws = likelihood_derivatives(params, y, x, Block::Beta);
  return quadratic_from_expansion(beta0, ws.grad, -ws.hess);
}

enum class LambdaRule { SsMin, SsCv };

inline std::string_view to_string(LambdaRule rule) { return rule == LambdaRule::SsMin ? "ss_min" : "ss_cv"; }

inline LambdaRule parse_lambda_rule(std::string_view name) {
  if (name == "ss_min") return LambdaRule::SsMin;
  if (name == "ss_cv") return LambdaRule::SsCv;
  throw ConfigError("unknown lambda rule '" + std::string(name) + "' (expected ss_min or ss_cv)");
}

struct SelectionReport {
  Vector frequencies;
  double threshold = 0.7;
  LambdaRule lambda_rule = LambdaRule::SsCv;
  double lambda_value = 0.0;
  IndexSet selected;
  int n_subsamples = 1000;
  std::uint64_t seed = 0;
};

struct StabilityOptions {
  int n_subsamples = 1000;
  int cv_folds = 10;
  unsigned workers = 1;
  CdOptions cd{};
};

/// Indices whose frequency reaches the threshold.
inline IndexSet threshold_frequencies(const Vector& frequencies, double threshold) {
  IndexSet out;
  for (Eigen::Index i = 0; i < frequencies.size(); ++i) {
    if (frequencies[i] >= threshold) out.push_back(static_cast<int>(i));
  }
  return out;
}

/**
 * Fraction of row-subsamples (size floor(rows/2), without replacement) in
 * which each coefficient is nonzero at a fixed lambda. Subsample s draws from
 * its own seed derive_seed(seed, s), so the result does not depend on
 * scheduling or worker count.
 */
inline Vector subsample_frequencies(const QuadraticProblem& qp, double lambda, int n_subsamples, std::uint64_t seed,
                                    unsigned workers = 1, const CdOptions& cd = {}) {
  if (n_subsamples < 1) throw ConfigError("stability selection needs at least one subsample");
  const Eigen::Index rows = qp.rows();
  const Eigen::Index half = rows / 2;
  if (half < 1) throw ConfigError("stability selection needs at least two rows");
  std::vector<std::vector<char>> hits(static_cast<std::size_t>(n_subsamples));
  parallel_for(static_cast<std::size_t>(n_subsamples), workers, [&](std::size_t s) {
    Rng rng(derive_seed(seed, kStreamSubsample, s));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < half; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, rows - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    order.resize(static_cast<std::size_t>(half));
    std::sort(order.begin(), order.end());
    const Matrix xs = qp.x_cal(order, Eigen::all);
    const Vector ys = qp.y_cal(order);
    const auto gm = detail::make_gram(xs, ys);
    Vector beta = Vector::Zero(qp.dim());
    detail::solve_lasso(gm, lambda, beta, cd);
    auto& h = hits[s];
    h.resize(static_cast<std::size_t>(qp.dim()));
    for (Eigen::Index j = 0; j < qp.dim(); ++j) h[static_cast<std::size_t>(j)] = beta[j] != 0.0;
  });
  Vector counts = Vector::Zero(qp.dim());
  for (const auto& h : hits) {
    for (Eigen::Index j = 0; j < qp.dim(); ++j) counts[j] += h[static_cast<std::size_t>(j)];
  }
  return counts / static_cast<double>(n_subsamples);
}

/// Lambda used by a stability-selection rule on the full problem.
inline double rule_lambda(const QuadraticProblem& qp, LambdaRule rule, std::uint64_t seed,
                          const StabilityOptions& opt = {}) {
  const Vector grid = default_lambda_grid(qp);
  if (rule == LambdaRule::SsMin) return grid[grid.size() - 1];
  const int folds = static_cast<int>(std::min<Eigen::Index>(opt.cv_folds, qp.rows()));
  return cross_validate(qp, grid, folds, seed, opt.cd).lambda_cv;
}

inline SelectionReport stability_select(const QuadraticProblem& qp, LambdaRule rule, double threshold,
                                        std::uint64_t seed, const StabilityOptions& opt = {}) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("stability_select: threshold must lie in (0, 1)");
  if (qp.dim() < 4) throw ConfigError("stability_select: needs p >= 3 covariates");
  SelectionReport report;
  report.threshold = threshold;
  report.lambda_rule = rule;
  report.n_subsamples = opt.n_subsamples;
  report.seed = seed;
  report.lambda_value = rule_lambda(qp, rule, seed, opt);
  report.frequencies = subsample_frequencies(qp, report.lambda_value, opt.n_subsamples, seed, opt.workers, opt.cd);
  report.selected = threshold_frequencies(report.frequencies, threshold);
  return report;
}

}  // namespace nbglarma
