#pragma once

#include <map>
#include <string>
#include <vector>

#include "nbglarma/gamma_newton.hpp"
#include "nbglarma/nb_glm.hpp"
#include "nbglarma/selection.hpp"

namespace nbglarma {

struct PipelineConfig {
  int q = 1;
  LambdaRule lambda_rule = LambdaRule::SsCv;
  double threshold = 0.7;
  int max_outer_iters = 4;
  double gamma_stab_tol = 1e-4;
  std::uint64_t seed = 1;
  NewtonConfig newton{};
  StabilityOptions stability{};

  void validate() const {
    if (q < 1) throw ConfigError("PipelineConfig: q must be >= 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("PipelineConfig: threshold must lie in (0, 1)");
    if (max_outer_iters < 1) throw ConfigError("PipelineConfig: max_outer_iters must be >= 1");
    if (!(gamma_stab_tol > 0.0)) throw ConfigError("PipelineConfig: gamma_stab_tol must be positive");
    newton.validate();
  }
};

/// How (beta0, alpha0) were obtained.
enum class InitMode { FullGlm, InterceptOnly };

struct IterationRecord {
  Vector beta_hat;
  Vector gamma_hat;
  double alpha_hat = 0.0;
  IndexSet selected;
  Vector frequencies;
  double lambda_value = 0.0;
  bool newton_converged = false;
  int newton_iterations = 0;
  double reestimate_loglik = 0.0;
};

struct PipelineResult {
  std::vector<IterationRecord> iterations;
  InitMode init_mode = InitMode::FullGlm;
  Vector beta_hat;
  Vector gamma_hat;
  double alpha_hat = 0.0;
  IndexSet selected;
};

/**
 * Initial (beta0, alpha0): the NB GLM on the full design when it is
 * identifiable (n > p + 1, full column rank, finite fit), else the
 * intercept-only GLM. A full fit that hit its iteration limit is kept.
 */
inline std::pair<GlmFit, InitMode> initial_fit(const CountSeries& y, const DesignMatrix& x) {
  if (x.rows() > x.cols()) {
    try {
      return {fit_nb_glm(y, x), InitMode::FullGlm};
    } catch (const ConfigError&) {
    } catch (const NumericError&) {
    }
  }
  return {reestimate(y, x, {}), InitMode::InterceptOnly};
}

namespace detail {

/// Threshold-independent part of an outer iteration.
struct StageCore {
  NewtonResult newton;
  double lambda_value = 0.0;
  Vector frequencies;
};

using History = std::vector<IndexSet>;

/// Shares Newton / selection / refit work between runs whose selected sets
/// coincide. All randomness is keyed by iteration number, so a shared stage
/// is exactly what an independent run would compute.
class PipelineRunner {
 public:
  PipelineRunner(const CountSeries& y, const DesignMatrix& x, const PipelineConfig& cfg) : y_(y), x_(x), cfg_(cfg) {
    cfg_.validate();
    if (y.size() != x.rows()) throw ConfigError("run_pipeline: counts and design have different lengths");
    if (y.size() <= cfg.q) throw ConfigError("run_pipeline: need n > q observations");
    auto [fit, mode] = initial_fit(y, x);
    init_ = std::move(fit);
    mode_ = mode;
  }

  PipelineResult run(double threshold) {
    PipelineResult result;
    result.init_mode = mode_;
    History history;
    Vector beta = init_.beta_hat;
    double alpha = init_.alpha_hat;
    Vector gamma = Vector::Zero(cfg_.q);
    for (int k = 1; k <= cfg_.max_outer_iters; ++k) {
      const StageCore& core = stage(history, k, beta, gamma, alpha);
      IterationRecord rec;
      rec.gamma_hat = core.newton.gamma_hat;
      rec.newton_converged = core.newton.converged;
      rec.newton_iterations = core.newton.iterations;
      rec.lambda_value = core.lambda_value;
      rec.frequencies = core.frequencies;
      rec.selected = x_.p() == 0 ? IndexSet{} : threshold_frequencies(core.frequencies, threshold);
      history.push_back(rec.selected);
      const GlmFit& refit = reestimated(history);
      rec.beta_hat = refit.beta_hat;
      rec.alpha_hat = refit.alpha_hat;
      rec.reestimate_loglik = refit.loglik;
      const bool stable = k >= 2 && (rec.gamma_hat - gamma).lpNorm<Eigen::Infinity>() < cfg_.gamma_stab_tol;
      beta = rec.beta_hat;
      alpha = rec.alpha_hat;
      gamma = rec.gamma_hat;
      result.iterations.push_back(std::move(rec));
      if (stable) break;
    }
    const IterationRecord& last = result.iterations.back();
    result.beta_hat = last.beta_hat;
    result.gamma_hat = last.gamma_hat;
    result.alpha_hat = last.alpha_hat;
    result.selected = last.selected;
    return result;
  }

  [[nodiscard]] const GlmFit& initial() const noexcept { return init_; }

 private:
  const StageCore& stage(const History& history, int k, const Vector& beta, const Vector& gamma0, double alpha) {
    if (auto it = cores_.find(history); it != cores_.end()) return it->second;
    StageCore core;
    core.newton = estimate_gamma(beta, alpha, gamma0, y_, x_, cfg_.newton);
    if (x_.p() == 0) {
      core.frequencies = Vector::Zero(1);
    } else {
      const std::uint64_t seed = derive_seed(cfg_.seed, kStreamIteration, static_cast<std::uint64_t>(k));
      const QuadraticProblem qp = build_quadratic(beta, core.newton.gamma_hat, alpha, y_, x_);
      if (qp.dim() < 4) throw ConfigError("run_pipeline: stability selection needs p >= 3 covariates");
      core.lambda_value = rule_lambda(qp, cfg_.lambda_rule, seed, cfg_.stability);
      core.frequencies = subsample_frequencies(qp, core.lambda_value, cfg_.stability.n_subsamples, seed,
                                               cfg_.stability.workers, cfg_.stability.cd);
    }
    return cores_.emplace(history, std::move(core)).first->second;
  }

  const GlmFit& reestimated(const History& history) {
    if (auto it = refits_.find(history); it != refits_.end()) return it->second;
    return refits_.emplace(history, reestimate(y_, x_, history.back())).first->second;
  }

  const CountSeries& y_;
  const DesignMatrix& x_;
  PipelineConfig cfg_;
  GlmFit init_;
  InitMode mode_ = InitMode::FullGlm;
  std::map<History, StageCore> cores_;
  std::map<History, GlmFit> refits_;
};

}  // namespace detail

/**
 * Initialization, then up to max_outer_iters rounds of
 * gamma Newton -> quadratic approximation + stability selection -> GLM refit,
 * stopping early once gamma moves less than gamma_stab_tol (sup norm).
 */
inline PipelineResult run_pipeline(const CountSeries& y, const DesignMatrix& x, const PipelineConfig& cfg) {
  detail::PipelineRunner runner(y, x, cfg);
  return runner.run(cfg.threshold);
}

/// One pipeline per threshold; identical to separate run_pipeline calls.
inline std::vector<PipelineResult> run_pipeline_sweep(const CountSeries& y, const DesignMatrix& x,
                                                      const PipelineConfig& cfg, const std::vector<double>& thresholds) {
  detail::PipelineRunner runner(y, x, cfg);
  std::vector<PipelineResult> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("run_pipeline_sweep: thresholds must lie in (0, 1)");
    out.push_back(runner.run(t));
  }
  return out;
}

}  // namespace nbglarma
