#include <gtest/gtest.h>

#include "test_support.hpp"

namespace nb = nbglarma;

namespace {

struct Data {
  nb::CountSeries y;
  nb::DesignMatrix x;
  nb::IndexSet support;
};

Data strong_signal(std::uint64_t seed) {
  auto x = nb::fourier_design(500, 20, 0.7);
  nb::Vector beta = nb::Vector::Zero(21);
  beta[0] = 1.0;
  beta[3] = 0.8;
  beta[12] = -0.6;
  beta[17] = 0.7;
  const nb::GlarmaParams truth{beta, nb::Vector::Zero(1), 2.0};
  auto y = nb::testing::sample_counts(truth, x, seed);
  return {std::move(y), std::move(x), {3, 12, 17}};
}

nb::PipelineConfig small_config(nb::LambdaRule rule) {
  nb::PipelineConfig cfg;
  cfg.q = 1;
  cfg.lambda_rule = rule;
  cfg.threshold = 0.7;
  cfg.seed = 5;
  cfg.stability.n_subsamples = 200;
  return cfg;
}

}  // namespace

TEST(Pipeline, StrongSignalRecoveredAtFirstIterationAndKept) {
  const auto d = strong_signal(1);
  const auto res = nb::run_pipeline(d.y, d.x, small_config(nb::LambdaRule::SsMin));
  ASSERT_FALSE(res.iterations.empty());
  EXPECT_EQ(res.iterations[0].selected, d.support);
  for (const auto& rec : res.iterations) EXPECT_EQ(rec.selected, d.support);
  EXPECT_EQ(res.init_mode, nb::InitMode::FullGlm);
}

TEST(Pipeline, FinalValuesAreLastIteration) {
  const auto d = strong_signal(2);
  const auto res = nb::run_pipeline(d.y, d.x, small_config(nb::LambdaRule::SsCv));
  ASSERT_GE(res.iterations.size(), 1u);
  ASSERT_LE(res.iterations.size(), 4u);
  const auto& last = res.iterations.back();
  EXPECT_EQ(res.beta_hat, last.beta_hat);
  EXPECT_EQ(res.gamma_hat, last.gamma_hat);
  EXPECT_EQ(res.alpha_hat, last.alpha_hat);
  EXPECT_EQ(res.selected, last.selected);
  for (const auto& rec : res.iterations) {
    EXPECT_TRUE(std::isfinite(rec.reestimate_loglik));
    for (int k : rec.selected) EXPECT_TRUE(k >= 0 && k <= 20);
  }
}

TEST(Pipeline, SingleIterationIsThreeStageProcedure) {
  const auto d = strong_signal(3);
  auto cfg = small_config(nb::LambdaRule::SsCv);
  cfg.max_outer_iters = 1;
  const auto res = nb::run_pipeline(d.y, d.x, cfg);
  ASSERT_EQ(res.iterations.size(), 1u);

  const auto init = nb::fit_nb_glm(d.y, d.x);
  const auto newton = nb::estimate_gamma(init.beta_hat, init.alpha_hat, nb::Vector::Zero(1), d.y, d.x);
  const auto qp = nb::build_quadratic(init.beta_hat, newton.gamma_hat, init.alpha_hat, d.y, d.x);
  const auto report = nb::stability_select(qp, nb::LambdaRule::SsCv, 0.7,
                                           nb::derive_seed(cfg.seed, nb::kStreamIteration, 1), cfg.stability);
  const auto refit = nb::reestimate(d.y, d.x, report.selected);
  EXPECT_EQ(res.gamma_hat, newton.gamma_hat);
  EXPECT_EQ(res.selected, report.selected);
  EXPECT_EQ(res.iterations[0].frequencies, report.frequencies);
  EXPECT_EQ(res.beta_hat, refit.beta_hat);
  EXPECT_EQ(res.alpha_hat, refit.alpha_hat);
}

TEST(Pipeline, DeterministicAndSweepMatchesSeparateRuns) {
  const auto d = strong_signal(4);
  const auto cfg = small_config(nb::LambdaRule::SsCv);
  const std::vector<double> thresholds{0.5, 0.7, 0.9};
  const auto sweep = nb::run_pipeline_sweep(d.y, d.x, cfg, thresholds);
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    auto one = cfg;
    one.threshold = thresholds[i];
    const auto a = nb::run_pipeline(d.y, d.x, one);
    const auto b = nb::run_pipeline(d.y, d.x, one);
    EXPECT_EQ(a.selected, b.selected);
    EXPECT_EQ(a.beta_hat, b.beta_hat);
    EXPECT_EQ(a.selected, sweep[i].selected);
    EXPECT_EQ(a.gamma_hat, sweep[i].gamma_hat);
    EXPECT_EQ(a.alpha_hat, sweep[i].alpha_hat);
    ASSERT_EQ(a.iterations.size(), sweep[i].iterations.size());
  }
}

TEST(Pipeline, WideDesignFallsBackToInterceptOnlyStart) {
  nb::SimConfig sim;
  sim.n = 15;
  sim.p = 95;
  sim.seed = 3;
  const auto beta = nb::draw_sparse_beta(sim);
  const auto data = nb::simulate_series(sim, beta);
  auto cfg = small_config(nb::LambdaRule::SsCv);
  const auto res = nb::run_pipeline(data.y, data.x, cfg);
  EXPECT_EQ(res.init_mode, nb::InitMode::InterceptOnly);
  EXPECT_TRUE(std::isfinite(res.alpha_hat));
}

TEST(Pipeline, RejectsInvalidInput) {
  const auto d = strong_signal(5);
  auto cfg = small_config(nb::LambdaRule::SsCv);
  cfg.threshold = 1.0;
  EXPECT_THROW(nb::run_pipeline(d.y, d.x, cfg), nb::ConfigError);
  cfg = small_config(nb::LambdaRule::SsCv);
  EXPECT_THROW(nb::run_pipeline(d.y, d.x.select_columns({0, 1, 2}), cfg), nb::ConfigError);
  EXPECT_THROW(nb::run_pipeline(nb::CountSeries({1}), nb::DesignMatrix(nb::Matrix::Ones(1, 1)), cfg), nb::ConfigError);
}
