#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "factordiff/backtest.hpp"
#include "test_util.hpp"

using namespace factordiff;

namespace {

Panel small_panel(int T = 12, int N = 6, int K = 4, std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.T = T;
  s.N = N;
  s.K = K;
  s.k_true = 2;
  s.seed = seed;
  return generate_synthetic(s);
}

ConditionalModel small_model(int k, std::uint64_t seed = 1) {
  DenoiserConfig cfg{.embed_dim = 8, .heads = 2, .layers = 1, .k = k, .max_steps = 10};
  return {cfg, testutil::random_params(cfg, seed, 0.1), linear_schedule(10, 1e-4, 0.05), 0.05};
}

BacktestSettings small_settings() {
  BacktestSettings b;
  b.samples = 16;
  b.window = 6;
  b.sample_seed = 5;
  return b;
}

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(static_cast<std::size_t>(hi - lo));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

}  // namespace

TEST(Metrics, HandComputed) {
  const std::vector<double> r{0.01, 0.03, -0.01, 0.05};
  const auto m = compute_metrics(r);
  EXPECT_NEAR(m.mean_return, 0.02, 1e-15);
  const double sd = std::sqrt((0.0001 + 0.0001 + 0.0009 + 0.0009) / 3.0);
  EXPECT_NEAR(m.volatility, sd, 1e-15);
  ASSERT_TRUE(m.sharpe_annualized);
  EXPECT_NEAR(*m.sharpe_annualized, std::sqrt(12.0) * 0.02 / sd, 1e-12);
}

TEST(Metrics, SharpeOfUnitRatio) {
  // mean 1, sample std 2
  const std::vector<double> r{-1.0, 3.0};
  const auto m = compute_metrics(r);
  EXPECT_NEAR(m.volatility, 2.0 * std::sqrt(2.0), 1e-15);
  const std::vector<double> q{0.0, 1.0, 2.0};  // mean 1, std 1
  EXPECT_NEAR(*compute_metrics(q).sharpe_annualized, std::sqrt(12.0), 1e-12);
  const std::vector<double> half{-0.5, 0.5, 1.5};  // mean 0.5, std 1
  EXPECT_NEAR(*compute_metrics(half).sharpe_annualized, std::sqrt(12.0) * 0.5, 1e-12);
}

TEST(Metrics, ZeroVolatilityHasNoSharpe) {
  const std::vector<double> r{0.01, 0.01, 0.01};
  const auto m = compute_metrics(r);
  EXPECT_EQ(m.volatility, 0.0);
  EXPECT_FALSE(m.sharpe_annualized);
  const std::vector<double> one{0.02};
  EXPECT_FALSE(compute_metrics(one).sharpe_annualized);
}

TEST(Metrics, Compounding) {
  const Eigen::VectorXd w = compound(Eigen::Vector2d(0.1, -0.1));
  EXPECT_NEAR(w[0], 1.1, 1e-15);
  EXPECT_NEAR(w[1], 0.99, 1e-15);
}

TEST(Hhi, Cases) {
  EXPECT_NEAR(hhi({Eigen::Vector3d(0.5, 0.3, 0.2)}), 0.38, 1e-15);
  EXPECT_NEAR(hhi(equal_weight(8)), 1.0 / 8.0, 1e-15);
  EXPECT_EQ(hhi({Eigen::Vector3d(0, 1, 0)}), 1.0);
}

TEST(TopAssets, OrderAndTies) {
  BacktestResult r;
  r.assets = {"D", "A", "C", "B"};
  auto& w = r[StrategyId::DiffusionMVO].weights;
  w.resize(2, 4);
  w << 0.1, 0.3, 0.3, 0.3,  //
      0.3, 0.3, 0.1, 0.3;
  // averages: D 0.2, A 0.3, C 0.2, B 0.3
  EXPECT_EQ(top_assets_by_average_allocation(r, StrategyId::DiffusionMVO, 4),
            (std::vector<std::string>{"A", "B", "C", "D"}));
  EXPECT_EQ(top_assets_by_average_allocation(r, StrategyId::DiffusionMVO, 1), std::vector<std::string>{"A"});
  EXPECT_THROW(top_assets_by_average_allocation(r, StrategyId::DiffusionMVO, 5), DomainError);
}

TEST(Backtest, RecomputableFromWeights) {
  const Panel p = small_panel();
  const auto months = range(8, 12);
  const auto res = run_backtest(p, months, small_model(4), small_settings());
  ASSERT_EQ(res.months.size(), 4u);
  for (auto s : kStrategies) {
    const auto& rec = res[s];
    std::vector<double> realized;
    for (int r = 0; r < 4; ++r) {
      const Eigen::VectorXd w = rec.weights.row(r).transpose();
      EXPECT_TRUE(PortfolioWeights{w}.valid());
      const double v = w.dot(p.returns().row(months[static_cast<std::size_t>(r)]).transpose());
      EXPECT_NEAR(rec.realized[r], v, 1e-12);
      realized.push_back(v);
    }
    const auto m = compute_metrics(realized);
    EXPECT_NEAR(rec.metrics.mean_return, m.mean_return, 1e-12);
    EXPECT_NEAR(rec.metrics.volatility, m.volatility, 1e-12);
    double wealth = 1.0;
    for (int r = 0; r < 4; ++r) {
      wealth *= 1.0 + realized[static_cast<std::size_t>(r)];
      EXPECT_NEAR(rec.cumulative[r], wealth, 1e-12);
    }
  }
  for (int r = 0; r < 4; ++r)
    EXPECT_NEAR(res[StrategyId::EW].realized[r], p.returns().row(months[static_cast<std::size_t>(r)]).mean(), 1e-15);
}

TEST(Backtest, FutureDataCannotChangeDecisions) {
  const Panel p = small_panel();
  const auto months = range(8, 12);
  const auto base = run_backtest(p, months, small_model(4), small_settings());

  // Overwrite everything from month 10 on (characteristics of months > 10, returns of rows >= 10).
  std::vector<Eigen::MatrixXd> chars = p.characteristics();
  Eigen::MatrixXd rets = p.returns();
  for (int t = 10; t < p.num_months(); ++t) {
    rets.row(t).setConstant(1e3);
    if (t > 10) chars[static_cast<std::size_t>(t)].setConstant(-7.0);
  }
  const Panel poisoned(p.months(), p.assets(), p.characteristic_names(), chars, rets);
  const auto after = run_backtest(poisoned, months, small_model(4), small_settings());
  for (auto s : kStrategies)
    for (int r = 0; r <= 2; ++r)  // decision months 8, 9, 10
      EXPECT_EQ(after[s].weights.row(r), base[s].weights.row(r)) << strategy_name(s) << " row " << r;
}

TEST(Backtest, EmpFallsBackToEqualWeightWithShortHistory) {
  const Panel p = small_panel();
  const std::vector<int> months{0, 1, 2};
  const auto res = run_backtest(p, months, small_model(4), small_settings());
  const Eigen::RowVectorXd ew = Eigen::RowVectorXd::Constant(p.num_assets(), 1.0 / p.num_assets());
  EXPECT_EQ(res[StrategyId::Emp].weights.row(0), ew);
  EXPECT_EQ(res[StrategyId::Emp].weights.row(1), ew);
  EXPECT_EQ(res[StrategyId::ShrEmp].weights.row(1), ew);
  // month 2 has two realized months behind it and is estimated from them
  const Eigen::MatrixXd hist = p.returns().topRows(2);
  const auto m = empirical_moments(hist);
  const double floor = 1e-8 * m.sigma.trace() / p.num_assets();
  const auto direct = solve_mvo(m.mu, psd_repair(m.sigma, floor), small_settings().mvo);
  EXPECT_EQ(res[StrategyId::Emp].weights.row(2), direct.weights.w.transpose());
}

TEST(Backtest, Deterministic) {
  const Panel p = small_panel();
  const auto months = range(9, 12);
  const auto a = run_backtest(p, months, small_model(4), small_settings());
  const auto b = run_backtest(p, months, small_model(4), small_settings());
  for (auto s : kStrategies) EXPECT_EQ(a[s].weights, b[s].weights);
}

TEST(Backtest, InputErrors) {
  const Panel p = small_panel();
  const std::vector<int> bad{11, 10};
  EXPECT_THROW(run_backtest(p, bad, small_model(4), small_settings()), DomainError);
  const std::vector<int> ok{10};
  EXPECT_THROW(run_backtest(p, ok, small_model(3), small_settings()), ShapeError);
  EXPECT_THROW(run_backtest(p, std::vector<int>{}, small_model(4), small_settings()), DomainError);
}

TEST(Ablation, FullSetMatchesDirectRun) {
  const Panel p = small_panel(16, 5, 3);
  AblationSettings s{linear_schedule(10, 1e-4, 0.05),
                     {.embed_dim = 8, .heads = 2, .layers = 1, .k = 1, .max_steps = 10},
                     {},
                     small_settings(),
                     1};
  s.training.epochs = 3;
  s.training.train_fraction = 0.75;
  const std::vector<int> ks{3};
  const std::vector<std::uint64_t> seeds{4};
  const auto abl = run_ablation(p, ks, s, seeds);
  ASSERT_EQ(abl.entries.size(), 1u);
  ASSERT_TRUE(abl.entries[0].ok) << abl.entries[0].error;
  EXPECT_FALSE(abl.partial());

  DenoiserConfig d = s.denoiser;
  d.k = 3;
  TrainConfig t = s.training;
  t.seed = 4;
  auto report = train(p, s.schedule, d, t);
  BacktestSettings b = s.backtest;
  b.sample_seed = 4;
  const auto direct = run_backtest(p, report.split.test, {d, report.final_params, s.schedule, report.return_scale}, b);
  EXPECT_EQ(abl.entries[0].result[StrategyId::DiffusionMVO].weights, direct[StrategyId::DiffusionMVO].weights);
  EXPECT_NEAR(abl.entries[0].ew_mean_hhi, 1.0 / 5.0, 1e-15);
  EXPECT_GE(abl.entries[0].mean_hhi, 1.0 / 5.0 - 1e-12);
  EXPECT_LE(abl.entries[0].mean_hhi, 1.0);
}

TEST(Ablation, ParallelMatchesSerial) {
  const Panel p = small_panel(16, 5, 3);
  AblationSettings s{linear_schedule(10, 1e-4, 0.05),
                     {.embed_dim = 8, .heads = 2, .layers = 1, .k = 1, .max_steps = 10},
                     {},
                     small_settings(),
                     1};
  s.training.epochs = 2;
  s.training.train_fraction = 0.75;
  const std::vector<int> ks{1, 2, 3};
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto serial = run_ablation(p, ks, s, seeds);
  s.jobs = 3;
  const auto parallel = run_ablation(p, ks, s, seeds);
  ASSERT_EQ(serial.entries.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(serial.entries[i].k, parallel.entries[i].k);
    EXPECT_EQ(serial.entries[i].result[StrategyId::DiffusionMVO].weights,
              parallel.entries[i].result[StrategyId::DiffusionMVO].weights);
  }
}

TEST(Ablation, FailedCellIsRecorded) {
  const Panel p = small_panel(16, 5, 3);
  AblationSettings s{linear_schedule(10, 1e-4, 0.05),
                     {.embed_dim = 8, .heads = 2, .layers = 1, .k = 1, .max_steps = 10},
                     {},
                     small_settings(),
                     1};
  s.training.epochs = 2;
  s.training.learning_rate = 1e300;
  const std::vector<int> ks{2};
  const std::vector<std::uint64_t> seeds{0};
  const auto r = run_ablation(p, ks, s, seeds);
  EXPECT_TRUE(r.partial());
  EXPECT_FALSE(r.entries[0].ok);
  EXPECT_FALSE(r.entries[0].error.empty());
  EXPECT_THROW(run_ablation(p, std::vector<int>{4}, s, seeds), DomainError);
}
