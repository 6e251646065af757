#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nbglarma/pipeline.hpp"

namespace nbglarma {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  int n = 1000;
  int p = 100;
  int q = 1;
  Vector gamma_true = Vector::Constant(1, 0.5);
  double alpha_true = 2.0;
  double sparsity = 0.05;
  double f = 0.7;
  double beta_low = -0.64;
  double beta_high = 1.73;
  double intercept = 0.0;
  int n_replicates = 10;
  std::uint64_t seed = 1;
  /// n x p covariates replacing the Fourier basis when set.
  std::optional<Matrix> covariates;

  void validate() const {
    if (n < 1 || p < 1 || q < 1) throw ConfigError("SimConfig: n, p and q must be >= 1");
    if (gamma_true.size() != q) throw ConfigError("SimConfig: gamma_true must have q entries");
    if (!(alpha_true > 0.0)) throw ConfigError("SimConfig: alpha_true must be positive");
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ConfigError("SimConfig: sparsity must lie in [0, 1]");
    if (!(beta_low <= beta_high)) throw ConfigError("SimConfig: empty beta range");
    if (n_replicates < 1) throw ConfigError("SimConfig: n_replicates must be >= 1");
    if (covariates && (covariates->rows() != n || covariates->cols() != p)) {
      throw ConfigError("SimConfig: covariates must be n x p");
    }
  }
};

/// Default gamma for the benchmark settings: 0.5 for q = 1, (0.5, 0.25) for q = 2.
inline Vector default_gamma(int q) {
  Vector g = Vector::Zero(q);
  if (q >= 1) g[0] = 0.5;
  if (q >= 2) g[1] = 0.25;
  return g;
}

/// Intercept plus x_{t,i} = cos(2 pi i t f / n) for i <= floor(p/2), sin(...) above.
inline DesignMatrix fourier_design(int n, int p, double f) {
  if (n < 1 || p < 0) throw ConfigError("fourier_design: need n >= 1 and p >= 0");
  Matrix x(n, p + 1);
  const int half = p / 2;
  for (int t = 1; t <= n; ++t) {
    x(t - 1, 0) = 1.0;
    for (int i = 1; i <= p; ++i) {
      const double arg = 2.0 * std::numbers::pi * i * t * f / n;
      x(t - 1, i) = i <= half ? std::cos(arg) : std::sin(arg);
    }
  }
  return DesignMatrix(std::move(x));
}

inline DesignMatrix simulation_design(const SimConfig& cfg) {
  if (cfg.covariates) return DesignMatrix::with_intercept(*cfg.covariates);
  return fourier_design(cfg.n, cfg.p, cfg.f);
}

/// round(sparsity * p) nonzero coefficients at uniform positions in 1..p,
/// values uniform on [beta_low, beta_high]; beta_0 = cfg.intercept.
inline Vector draw_sparse_beta(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0xbe7a));
  Vector beta = Vector::Zero(cfg.p + 1);
  beta[0] = cfg.intercept;
  const auto k = static_cast<int>(std::lround(cfg.sparsity * cfg.p));
  std::vector<int> positions(static_cast<std::size_t>(cfg.p));
  std::iota(positions.begin(), positions.end(), 1);
  std::shuffle(positions.begin(), positions.end(), rng);
  std::uniform_real_distribution<double> value(cfg.beta_low, cfg.beta_high);
  for (int i = 0; i < k; ++i) beta[positions[static_cast<std::size_t>(i)]] = value(rng);
  return beta;
}

struct SimulatedSeries {
  CountSeries y;
  DesignMatrix x;
};

/**
 * Draws Y_t ~ NB(mu_t, alpha) as a gamma-Poisson mixture along the
 * recursion W_t = beta' x_t + sum_j gamma_j E_{t-j}, E_t = (Y_t - mu_t) / (mu_t + mu_t^2 / alpha).
 */
inline SimulatedSeries simulate_series(const SimConfig& cfg, const Vector& beta_true) {
  cfg.validate();
  DesignMatrix x = simulation_design(cfg);
  if (beta_true.size() != x.cols()) throw ConfigError("simulate_series: beta_true must have p + 1 entries");
  Rng rng(derive_seed(cfg.seed, 0x5e7e));
  const Vector linear = x.matrix() * beta_true;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(cfg.n));
  std::vector<double> e(static_cast<std::size_t>(cfg.n), 0.0);
  for (int t = 0; t < cfg.n; ++t) {
    double w = linear[t];
    for (int j = 1; j <= std::min(cfg.q, t); ++j) w += cfg.gamma_true[j - 1] * e[static_cast<std::size_t>(t - j)];
    const double mu = std::exp(w);
    if (!std::isfinite(mu) || mu > 1e12) {
      throw SimulationError("simulate_series: mean exceeds 1e12 at t=" + std::to_string(t + 1));
    }
    std::gamma_distribution<double> mix(cfg.alpha_true, mu / cfg.alpha_true);
    const double rate = mix(rng);
    std::int64_t yt = 0;
    if (rate > 0.0) yt = std::poisson_distribution<std::int64_t>(rate)(rng);
    counts[static_cast<std::size_t>(t)] = yt;
    e[static_cast<std::size_t>(t)] = (static_cast<double>(yt) - mu) / (mu + mu * mu / cfg.alpha_true);
  }
  return {CountSeries(std::move(counts)), std::move(x)};
}

struct EvalMetrics {
  double tpr = 0.0;
  double fpr = 0.0;
  double threshold_used = 0.0;
  double runtime_seconds = 0.0;
};

/// Support recovery on indices 1..p (the intercept is ignored).
inline EvalMetrics tpr_fpr(const IndexSet& selected, const IndexSet& true_support, int p) {
  std::set<int> truth;
  for (int i : true_support) {
    if (i >= 1 && i <= p) truth.insert(i);
  }
  if (truth.empty()) throw MetricsError("tpr_fpr: empty true support");
  std::set<int> chosen;
  for (int i : selected) {
    if (i >= 1 && i <= p) chosen.insert(i);
  }
  int hits = 0;
  for (int i : chosen) hits += static_cast<int>(truth.count(i));
  const int false_hits = static_cast<int>(chosen.size()) - hits;
  EvalMetrics m;
  m.tpr = static_cast<double>(hits) / static_cast<double>(truth.size());
  const int nulls = p - static_cast<int>(truth.size());
  m.fpr = nulls > 0 ? static_cast<double>(false_hits) / nulls : 0.0;
  return m;
}

inline IndexSet support_of(const Vector& beta, bool skip_intercept = true) {
  IndexSet out;
  for (Eigen::Index i = skip_intercept ? 1 : 0; i < beta.size(); ++i) {
    if (beta[i] != 0.0) out.push_back(static_cast<int>(i));
  }
  return out;
}

enum class Method { SsCv, SsMin, LassoCv, LassoBest };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::SsCv: return "ss_cv";
    case Method::SsMin: return "ss_min";
    case Method::LassoCv: return "lasso_cv";
    case Method::LassoBest: return "lasso_best";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  if (name == "ss_cv") return Method::SsCv;
  if (name == "ss_min") return Method::SsMin;
  if (name == "lasso_cv") return Method::LassoCv;
  if (name == "lasso_best") return Method::LassoBest;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

struct BenchmarkOptions {
  std::vector<Method> methods{Method::SsCv, Method::SsMin, Method::LassoCv, Method::LassoBest};
  std::vector<double> thresholds{0.5, 0.6, 0.7, 0.8, 0.9};
  int max_outer_iters = 4;
  int n_subsamples = 1000;
  unsigned workers = 1;
  bool record_timing = false;
};

struct BenchmarkRow {
  int n = 0;
  int q = 0;
  int p = 0;
  double alpha_true = 0.0;
  double sparsity = 0.0;
  Method method = Method::SsCv;
  double threshold = 0.0;
  int replicate = 0;
  double tpr = std::numeric_limits<double>::quiet_NaN();
  double fpr = std::numeric_limits<double>::quiet_NaN();
  Vector gamma_hat;
  double alpha_hat = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> runtime_s;
  std::string status = "ok";
  /// Per outer iteration gamma estimates (stability-selection methods only).
  std::vector<Vector> gamma_by_iteration;
  std::vector<double> alpha_by_iteration;

  [[nodiscard]] double diff() const { return tpr - fpr; }
};

namespace detail {

struct LassoBaseline {
  Vector gamma_hat;
  double alpha0 = 0.0;
  LassoPath path;
  CvResult cv;
};

/// Plain lasso on the same quadratic problem the pipeline's first iteration builds.
inline LassoBaseline lasso_baseline(const CountSeries& y, const DesignMatrix& x, int q, std::uint64_t seed,
                                    const NewtonConfig& newton = {}) {
  auto [init, mode] = initial_fit(y, x);
  (void)mode;
  LassoBaseline out;
  out.alpha0 = init.alpha_hat;
  const NewtonResult nr = estimate_gamma(init.beta_hat, init.alpha_hat, Vector::Zero(q), y, x, newton);
  out.gamma_hat = nr.gamma_hat;
  const QuadraticProblem qp = build_quadratic(init.beta_hat, nr.gamma_hat, init.alpha_hat, y, x);
  out.path = lasso_path(qp);
  const int folds = static_cast<int>(std::min<Eigen::Index>(10, qp.rows()));
  out.cv = cross_validate(qp, out.path.lambdas, folds, derive_seed(seed, kStreamIteration, 1));
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Rows for one replicate: every method crossed with every threshold. The
/// lasso baselines do not depend on the threshold and repeat across it.
inline std::vector<BenchmarkRow> run_replicate(const SimConfig& cell, int replicate, const BenchmarkOptions& opt) {
  SimConfig cfg = cell;
  cfg.seed = derive_seed(cell.seed, kStreamReplicate, static_cast<std::uint64_t>(replicate));
  std::vector<BenchmarkRow> rows;
  auto make_row = [&](Method m, double threshold) {
    BenchmarkRow row;
    row.n = cfg.n;
    row.q = cfg.q;
    row.p = cfg.p;
    row.alpha_true = cfg.alpha_true;
    row.sparsity = cfg.sparsity;
    row.method = m;
    row.threshold = threshold;
    row.replicate = replicate;
    row.gamma_hat = Vector::Constant(cfg.q, std::numeric_limits<double>::quiet_NaN());
    return row;
  };
  auto fail_all = [&](Method m, const std::string& why) {
    for (double t : opt.thresholds) {
      auto row = make_row(m, t);
      row.status = "error: " + why;
      rows.push_back(std::move(row));
    }
  };

  Vector beta_true;
  std::optional<SimulatedSeries> data;
  try {
    beta_true = draw_sparse_beta(cfg);
    data = simulate_series(cfg, beta_true);
  } catch (const std::exception& ex) {
    for (Method m : opt.methods) fail_all(m, ex.what());
    return rows;
  }
  const IndexSet truth = support_of(beta_true);
  const CountSeries& y = data->y;
  const DesignMatrix& x = data->x;

  std::optional<detail::LassoBaseline> baseline;
  for (Method m : opt.methods) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if (m == Method::SsCv || m == Method::SsMin) {
        PipelineConfig pc;
        pc.q = cfg.q;
        pc.lambda_rule = m == Method::SsCv ? LambdaRule::SsCv : LambdaRule::SsMin;
        pc.max_outer_iters = opt.max_outer_iters;
        pc.seed = cfg.seed;
        pc.stability.n_subsamples = opt.n_subsamples;
        // a failed refit at one threshold leaves the others intact
        detail::PipelineRunner runner(y, x, pc);
        for (double t : opt.thresholds) {
          auto row = make_row(m, t);
          const auto t0 = std::chrono::steady_clock::now();
          try {
            const auto result = runner.run(t);
            const auto metrics = tpr_fpr(result.selected, truth, cfg.p);
            row.tpr = metrics.tpr;
            row.fpr = metrics.fpr;
            row.gamma_hat = result.gamma_hat;
            row.alpha_hat = result.alpha_hat;
            for (const auto& rec : result.iterations) {
              row.gamma_by_iteration.push_back(rec.gamma_hat);
              row.alpha_by_iteration.push_back(rec.alpha_hat);
            }
            if (opt.record_timing) row.runtime_s = detail::seconds_since(t0);
          } catch (const std::exception& ex) {
            row.status = std::string("error: ") + ex.what();
          }
          rows.push_back(std::move(row));
        }
      } else {
        if (!baseline) baseline = detail::lasso_baseline(y, x, cfg.q, cfg.seed);
        Eigen::Index pick = baseline->cv.best_index;
        if (m == Method::LassoBest) {
          double best = -std::numeric_limits<double>::infinity();
          for (Eigen::Index i = 0; i < baseline->path.lambdas.size(); ++i) {
            const auto mt = tpr_fpr(support_of(baseline->path.betas.col(i)), truth, cfg.p);
            if (mt.tpr - mt.fpr > best) {
              best = mt.tpr - mt.fpr;
              pick = i;
            }
          }
        }
        const auto metrics = tpr_fpr(support_of(baseline->path.betas.col(pick)), truth, cfg.p);
        const double elapsed = detail::seconds_since(start);
        for (double t : opt.thresholds) {
          auto row = make_row(m, t);
          row.tpr = metrics.tpr;
          row.fpr = metrics.fpr;
          row.gamma_hat = baseline->gamma_hat;
          row.alpha_hat = baseline->alpha0;
          if (opt.record_timing) row.runtime_s = elapsed;
          rows.push_back(std::move(row));
        }
      }
    } catch (const std::exception& ex) {
      fail_all(m, ex.what());
    }
  }
  return rows;
}

/// All replicates of one (n, q, ...) cell; replicates run on the worker pool.
inline std::vector<BenchmarkRow> run_benchmark(const SimConfig& cfg, const BenchmarkOptions& opt) {
  cfg.validate();
  for (double t : opt.thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("run_benchmark: thresholds must lie in (0, 1)");
  }
  std::vector<std::vector<BenchmarkRow>> per(static_cast<std::size_t>(cfg.n_replicates));
  parallel_for(per.size(), opt.workers, [&](std::size_t r) { per[r] = run_replicate(cfg, static_cast<int>(r), opt); });
  std::vector<BenchmarkRow> rows;
  for (auto& block : per) {
    for (auto& row : block) rows.push_back(std::move(row));
  }
  return rows;
}

struct SummaryRow {
  int n = 0;
  int q = 0;
  Method method = Method::SsCv;
  double threshold = 0.0;
  int replicates_ok = 0;
  double tpr_mean = 0.0, tpr_sd = 0.0;
  double fpr_mean = 0.0, fpr_sd = 0.0;
  double diff_mean = 0.0, diff_sd = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double a : v) ss += (a - mean) * (a - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

}  // namespace detail

/// Mean and sd over replicates for every (n, q, method, threshold).
inline std::vector<SummaryRow> summarize_by_threshold(const std::vector<BenchmarkRow>& rows) {
  using Key = std::tuple<int, int, int, double>;
  std::map<Key, std::vector<const BenchmarkRow*>> groups;
  for (const auto& r : rows) groups[{r.n, r.q, static_cast<int>(r.method), r.threshold}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups) {
    SummaryRow s;
    s.n = std::get<0>(key);
    s.q = std::get<1>(key);
    s.method = static_cast<Method>(std::get<2>(key));
    s.threshold = std::get<3>(key);
    std::vector<double> tpr, fpr, diff;
    for (const auto* r : members) {
      if (r->status != "ok") continue;
      tpr.push_back(r->tpr);
      fpr.push_back(r->fpr);
      diff.push_back(r->diff());
    }
    s.replicates_ok = static_cast<int>(tpr.size());
    std::tie(s.tpr_mean, s.tpr_sd) = detail::mean_sd(tpr);
    std::tie(s.fpr_mean, s.fpr_sd) = detail::mean_sd(fpr);
    std::tie(s.diff_mean, s.diff_sd) = detail::mean_sd(diff);
    out.push_back(s);
  }
  return out;
}

/// One row per (n, q, method): the threshold with the largest mean TPR - FPR.
inline std::vector<SummaryRow> summarize_best(const std::vector<BenchmarkRow>& rows) {
  std::map<std::tuple<int, int, int>, SummaryRow> best;
  for (const auto& s : summarize_by_threshold(rows)) {
    const auto key = std::make_tuple(s.n, s.q, static_cast<int>(s.method));
    auto it = best.find(key);
    if (it == best.end() || s.diff_mean > it->second.diff_mean) best[key] = s;
  }
  std::vector<SummaryRow> out;
  for (auto& [key, s] : best) out.push_back(s);
  return out;
}

}  // namespace nbglarma
