#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

namespace nb = nbglarma;

namespace {

struct Moments {
  double mean, var, var_se;
};

Moments moments(const nb::CountSeries& y) {
  const auto& v = y.values();
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double m2 = (v.array() - mean).square().mean();
  const double m4 = (v.array() - mean).pow(4).mean();
  return {mean, m2 * n / (n - 1), std::sqrt((m4 - m2 * m2) / n)};
}

nb::SimConfig intercept_only(double m, double alpha, int n, std::uint64_t seed) {
  nb::SimConfig cfg;
  cfg.n = n;
  cfg.p = 1;
  cfg.q = 1;
  cfg.gamma_true = nb::Vector::Zero(1);
  cfg.alpha_true = alpha;
  cfg.sparsity = 0.0;
  cfg.intercept = std::log(m);
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(FourierDesign, KnownEntries) {
  const auto x = nb::fourier_design(100, 4, 0.7);
  EXPECT_NEAR(x.matrix()(99, 1), std::cos(2.0 * std::numbers::pi * 0.7), 1e-14);
  EXPECT_NEAR(x.matrix()(99, 1), -0.309017, 1e-6);
  EXPECT_TRUE((x.matrix().col(0).array() == 1.0).all());
  const auto s = nb::fourier_design(10, 4, 1.0);
  for (int i = 3; i <= 4; ++i) EXPECT_NEAR(s.matrix()(9, i), 0.0, 1e-13);
}

TEST(FourierDesign, ColumnNormsMatchDirectLoop) {
  const int n = 150, p = 100;
  const double f = 0.7;
  const auto x = nb::fourier_design(n, p, f);
  for (int i = 0; i <= p; ++i) {
    double ss = 0.0;
    for (int t = 1; t <= n; ++t) {
      double v = 1.0;
      if (i >= 1) {
        const double arg = 2.0 * std::numbers::pi * i * t * f / n;
        v = i <= p / 2 ? std::cos(arg) : std::sin(arg);
      }
      ss += v * v;
    }
    EXPECT_NEAR(x.matrix().col(i).norm(), std::sqrt(ss), 1e-12) << i;
  }
}

TEST(SimulateSeries, NegativeBinomialMoments) {
  const double m = 3.0, alpha = 2.0;
  const auto cfg = intercept_only(m, alpha, 100000, 11);
  const auto data = nb::simulate_series(cfg, nb::draw_sparse_beta(cfg));
  const auto mo = moments(data.y);
  const double var = m + m * m / alpha;
  EXPECT_LE(std::abs(mo.mean - m), 3.0 * std::sqrt(var / 100000.0));
  EXPECT_LE(std::abs(mo.var - var), 3.0 * mo.var_se);
}

TEST(SimulateSeries, PoissonLimitDispersion) {
  const double m = 4.0;
  const auto cfg = intercept_only(m, 1e8, 100000, 12);
  const auto data = nb::simulate_series(cfg, nb::draw_sparse_beta(cfg));
  const auto mo = moments(data.y);
  // delta method for var / mean under Poisson sampling
  const double se = std::sqrt((1.0 / m + 2.0) / 100000.0);
  EXPECT_LE(std::abs(mo.var / mo.mean - 1.0), 3.0 * se);
}

TEST(SimulateSeries, DeterministicGivenSeed) {
  nb::SimConfig cfg;
  cfg.n = 300;
  cfg.seed = 21;
  const auto beta = nb::draw_sparse_beta(cfg);
  EXPECT_EQ(nb::simulate_series(cfg, beta).y.counts(), nb::simulate_series(cfg, beta).y.counts());
  cfg.seed = 22;
  EXPECT_NE(nb::draw_sparse_beta(cfg), beta);
}

TEST(SimulateSeries, OverflowIsSimulationError) {
  auto cfg = intercept_only(1.0, 2.0, 10, 1);
  cfg.intercept = 30.0;
  EXPECT_THROW(nb::simulate_series(cfg, nb::draw_sparse_beta(cfg)), nb::SimulationError);
}

TEST(DrawSparseBeta, CountRangeAndZeroSparsity) {
  nb::SimConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto beta = nb::draw_sparse_beta(cfg);
    ASSERT_EQ(beta.size(), 101);
    EXPECT_EQ(beta[0], 0.0);
    const auto support = nb::support_of(beta);
    EXPECT_EQ(support.size(), 5u);
    for (int k : support) {
      EXPECT_GE(beta[k], -0.64);
      EXPECT_LE(beta[k], 1.73);
    }
    EXPECT_EQ(beta, nb::draw_sparse_beta(cfg));
  }
  cfg.sparsity = 0.0;
  EXPECT_TRUE(nb::support_of(nb::draw_sparse_beta(cfg)).empty());
}

TEST(TprFpr, HandExamples) {
  auto m = nb::tpr_fpr({1, 3}, {1, 2}, 4);
  EXPECT_DOUBLE_EQ(m.tpr, 0.5);
  EXPECT_DOUBLE_EQ(m.fpr, 0.5);
  m = nb::tpr_fpr({1, 2}, {1, 2}, 4);
  EXPECT_DOUBLE_EQ(m.tpr, 1.0);
  EXPECT_DOUBLE_EQ(m.fpr, 0.0);
  m = nb::tpr_fpr({}, {1, 2}, 4);
  EXPECT_DOUBLE_EQ(m.tpr, 0.0);
  EXPECT_DOUBLE_EQ(m.fpr, 0.0);
  EXPECT_THROW(nb::tpr_fpr({1}, {}, 4), nb::MetricsError);
}

TEST(TprFpr, MatchesBruteForceOnRandomPairs) {
  nb::Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = std::uniform_int_distribution<int>(2, 40)(rng);
    std::bernoulli_distribution in_truth(0.2), in_sel(0.3);
    std::vector<bool> t(static_cast<std::size_t>(p + 1)), s(static_cast<std::size_t>(p + 1));
    nb::IndexSet truth, sel;
    for (int i = 1; i <= p; ++i) {
      t[static_cast<std::size_t>(i)] = in_truth(rng);
      s[static_cast<std::size_t>(i)] = in_sel(rng);
      if (t[static_cast<std::size_t>(i)]) truth.push_back(i);
      if (s[static_cast<std::size_t>(i)]) sel.push_back(i);
    }
    if (truth.empty()) {
      EXPECT_THROW(nb::tpr_fpr(sel, truth, p), nb::MetricsError);
      continue;
    }
    int tp = 0, fp = 0, pos = 0, neg = 0;
    for (int i = 1; i <= p; ++i) {
      const bool ti = t[static_cast<std::size_t>(i)], si = s[static_cast<std::size_t>(i)];
      pos += ti;
      neg += !ti;
      tp += ti && si;
      fp += !ti && si;
    }
    const auto m = nb::tpr_fpr(sel, truth, p);
    EXPECT_DOUBLE_EQ(m.tpr, static_cast<double>(tp) / pos);
    EXPECT_DOUBLE_EQ(m.fpr, neg ? static_cast<double>(fp) / neg : 0.0);
  }
}

TEST(RunBenchmark, RowsCompleteAndReproducible) {
  nb::SimConfig cfg;
  cfg.n = 120;
  cfg.p = 12;
  cfg.sparsity = 0.25;
  cfg.intercept = 1.0;
  cfg.n_replicates = 2;
  cfg.seed = 8;
  nb::BenchmarkOptions opt;
  opt.thresholds = {0.5, 0.7};
  opt.n_subsamples = 40;
  opt.max_outer_iters = 2;
  const auto rows = nb::run_benchmark(cfg, opt);
  ASSERT_EQ(rows.size(), 4u * 2u * 2u);
  std::set<std::tuple<int, double, int>> keys;
  for (const auto& r : rows) {
    keys.insert({static_cast<int>(r.method), r.threshold, r.replicate});
    EXPECT_FALSE(r.runtime_s.has_value());
    EXPECT_FALSE(r.status.empty());
  }
  EXPECT_EQ(keys.size(), rows.size());

  const auto again = nb::run_benchmark(cfg, opt);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].status, again[i].status);
    if (rows[i].status != "ok") continue;
    EXPECT_EQ(rows[i].tpr, again[i].tpr);
    EXPECT_EQ(rows[i].fpr, again[i].fpr);
    EXPECT_EQ(rows[i].alpha_hat, again[i].alpha_hat);
  }

  const auto summary = nb::summarize_by_threshold(rows);
  EXPECT_EQ(summary.size(), 8u);
  EXPECT_EQ(nb::summarize_best(rows).size(), 4u);
}

TEST(RunBenchmark, FailedReplicateKeepsItsRows) {
  nb::SimConfig cfg;
  cfg.n = 50;
  cfg.p = 8;
  cfg.intercept = 40.0;
  cfg.n_replicates = 1;
  nb::BenchmarkOptions opt;
  opt.thresholds = {0.6};
  const auto rows = nb::run_benchmark(cfg, opt);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_EQ(r.status.rfind("error", 0), 0u);
}
