#pragma once

// Walk-forward evaluation of the diffusion portfolio against the EW, Emp and
// ShrEmp baselines, summary metrics, and the factor-count ablation harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "factordiff/denoiser.hpp"
#include "factordiff/diffusion.hpp"
#include "factordiff/moments.hpp"
#include "factordiff/panel.hpp"
#include "factordiff/portfolio.hpp"
#include "factordiff/random.hpp"
#include "factordiff/training.hpp"

namespace factordiff {

enum class StrategyId { DiffusionMVO = 0, EW = 1, Emp = 2, ShrEmp = 3 };

inline constexpr std::array<StrategyId, 4> kStrategies{StrategyId::DiffusionMVO, StrategyId::EW, StrategyId::Emp,
                                                       StrategyId::ShrEmp};

constexpr std::string_view strategy_name(StrategyId s) {
  switch (s) {
    case StrategyId::DiffusionMVO: return "DiffusionMVO";
    case StrategyId::EW: return "EW";
    case StrategyId::Emp: return "Emp";
    case StrategyId::ShrEmp: return "ShrEmp";
  }
  return "?";
}

/// A trained denoiser together with everything needed to sample returns from it.
struct ConditionalModel {
  DenoiserConfig config;
  DenoiserParams params;
  NoiseSchedule schedule;
  double return_scale = 1.0;
};

/// S x N draws of next-month returns given one month's N x k characteristics.
inline Eigen::MatrixXd sample_returns(const ConditionalModel& model, const Eigen::MatrixXd& characteristics, int draws,
                                      std::uint64_t seed) {
  if (model.schedule.steps() > model.config.max_steps)
    throw ShapeError("schedule has more steps than the denoiser's max_steps");
  auto predictor = [&](const Eigen::MatrixXd& x, int step, const Eigen::MatrixXd& c) {
    return forward_batch(model.params, x, step, c, model.config);
  };
  return sample(predictor, characteristics, model.schedule, draws, seed) * model.return_scale;
}

struct BacktestSettings {
  int samples = 200;
  int window = 24;
  double shrinkage = 0.5;
  double psd_floor = 1e-8;  // eigenvalue floor relative to trace / N before optimizing
  MvoConfig mvo;
  std::uint64_t sample_seed = 0;

  void validate() const {
    if (samples < 2) throw DomainError("samples must be >= 2");
    if (window < 2) throw DomainError("window must be >= 2");
    if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw DomainError("shrinkage must lie in [0, 1]");
    if (!(psd_floor >= 0.0)) throw DomainError("psd_floor must be non-negative");
    mvo.validate();
  }
};

struct StrategyMetrics {
  double mean_return = 0.0;  // per month
  double volatility = 0.0;   // per month, sample standard deviation (divisor n - 1)
  std::optional<double> sharpe_annualized;  // empty when volatility is zero or undefined
};

inline StrategyMetrics compute_metrics(std::span<const double> realized) {
  StrategyMetrics m;
  const auto n = static_cast<double>(realized.size());
  if (realized.empty()) return m;
  double sum = 0.0;
  for (double r : realized) sum += r;
  m.mean_return = sum / n;
  if (realized.size() < 2) return m;
  double ss = 0.0;
  for (double r : realized) ss += (r - m.mean_return) * (r - m.mean_return);
  m.volatility = std::sqrt(ss / (n - 1.0));
  if (m.volatility > 0.0) m.sharpe_annualized = std::sqrt(12.0) * m.mean_return / m.volatility;
  return m;
}

inline Eigen::VectorXd compound(const Eigen::VectorXd& realized) {
  Eigen::VectorXd wealth(realized.size());
  double w = 1.0;
  for (Eigen::Index t = 0; t < realized.size(); ++t) {
    w *= 1.0 + realized[t];
    wealth[t] = w;
  }
  return wealth;
}

struct StrategyRecord {
  Eigen::MatrixXd weights;      // test months x N
  Eigen::VectorXd realized;     // w_t . R_{t+1}
  Eigen::VectorXd cumulative;   // compounded wealth
  std::vector<char> converged;  // optimizer status per month (always 1 for EW)
  StrategyMetrics metrics;
};

struct BacktestResult {
  std::vector<int> month_indices;   // panel rows evaluated
  std::vector<std::string> months;  // their labels
  std::vector<std::string> assets;
  std::array<StrategyRecord, 4> strategies;

  const StrategyRecord& operator[](StrategyId s) const { return strategies[static_cast<std::size_t>(s)]; }
  StrategyRecord& operator[](StrategyId s) { return strategies[static_cast<std::size_t>(s)]; }

  bool all_converged(StrategyId s) const {
    const auto& c = (*this)[s].converged;
    return std::all_of(c.begin(), c.end(), [](char v) { return v != 0; });
  }

  struct Row {
    std::string month;
    StrategyId strategy;
    PortfolioWeights weights;
    double realized_return;
  };

  /// One row per (month, strategy), months outermost.
  std::vector<Row> per_month() const {
    std::vector<Row> rows;
    for (std::size_t t = 0; t < months.size(); ++t)
      for (auto s : kStrategies) {
        const auto& rec = (*this)[s];
        const auto ti = static_cast<Eigen::Index>(t);
        rows.push_back({months[t], s, {rec.weights.row(ti).transpose()}, rec.realized[ti]});
      }
    return rows;
  }
};

/// Herfindahl index sum_i w_i^2.
inline double hhi(const PortfolioWeights& w) { return w.w.squaredNorm(); }

inline double mean_hhi(const StrategyRecord& rec) {
  if (rec.weights.rows() == 0) return 0.0;
  return rec.weights.rowwise().squaredNorm().mean();
}

/// Assets ordered by time-averaged weight, descending, ties by identifier.
inline std::vector<std::string> top_assets_by_average_allocation(const BacktestResult& result, StrategyId strategy,
                                                                 int count) {
  const auto& w = result[strategy].weights;
  const auto n = static_cast<int>(result.assets.size());
  if (count < 1 || count > n) throw DomainError("top_assets: count must lie in [1, N]");
  const Eigen::VectorXd avg = w.colwise().mean().transpose();
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (avg[a] != avg[b]) return avg[a] > avg[b];
    return result.assets[static_cast<std::size_t>(a)] < result.assets[static_cast<std::size_t>(b)];
  });
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(result.assets[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  return out;
}

namespace detail {

inline MvoSolution allocate(const MomentEstimate& m, double psd_floor, const MvoConfig& mvo,
                            const PortfolioWeights& previous) {
  const double floor = psd_floor * std::max(0.0, m.sigma.trace()) / static_cast<double>(m.sigma.rows());
  const Eigen::MatrixXd sigma = psd_repair(m.sigma, floor);
  if (mvo.cost_coeff > 0.0) return solve_mvo_with_costs(m.mu, sigma, previous, mvo);
  return solve_mvo(m.mu, sigma, mvo);
}

}  // namespace detail

/// Walk-forward backtest over `test_months` (panel row indices, increasing).
///
/// For decision month t only characteristics of month t and returns realized up
/// to month t (panel rows < t) are used; row t's returns are the outcome. Emp and
/// ShrEmp use the trailing `window` realized months, or as many as exist (at
/// least two; with fewer they hold equal weights).
inline BacktestResult run_backtest(const Panel& panel, std::span<const int> test_months, const ConditionalModel& model,
                                   const BacktestSettings& settings) {
  settings.validate();
  if (model.config.k != panel.num_characteristics())
    throw ShapeError("model expects k=" + std::to_string(model.config.k) + " characteristics, panel has " +
                     std::to_string(panel.num_characteristics()));
  if (test_months.empty()) throw DomainError("run_backtest: no test months");
  for (std::size_t i = 0; i < test_months.size(); ++i) {
    if (test_months[i] < 0 || test_months[i] >= panel.num_months()) throw DomainError("test month out of range");
    if (i > 0 && test_months[i] <= test_months[i - 1]) throw DomainError("test months must be increasing");
  }
  const int N = panel.num_assets();
  const auto M = static_cast<Eigen::Index>(test_months.size());
  BacktestResult res;
  res.assets = panel.assets();
  for (auto& rec : res.strategies) {
    rec.weights.resize(M, N);
    rec.realized.resize(M);
  }
  const PortfolioWeights ew = equal_weight(N);
  std::array<PortfolioWeights, 4> previous{ew, ew, ew, ew};

  for (Eigen::Index r = 0; r < M; ++r) {
    const int t = test_months[static_cast<std::size_t>(r)];
    res.month_indices.push_back(t);
    res.months.push_back(panel.months()[static_cast<std::size_t>(t)]);

    std::array<PortfolioWeights, 4> chosen;
    std::array<char, 4> ok{1, 1, 1, 1};

    const Eigen::MatrixXd draws = sample_returns(model, panel.characteristics(t), settings.samples,
                                                 derive_seed(settings.sample_seed, {static_cast<std::uint64_t>(t)}));
    auto diffusion = detail::allocate(estimate_moments(draws), settings.psd_floor, settings.mvo,
                                      previous[static_cast<std::size_t>(StrategyId::DiffusionMVO)]);
    chosen[0] = diffusion.weights;
    ok[0] = diffusion.converged;

    chosen[1] = ew;

    const int first = std::max(0, t - settings.window);
    if (t - first >= 2) {
      const Eigen::MatrixXd history = panel.returns().middleRows(first, t - first);
      const MomentEstimate emp = empirical_moments(history);
      auto e = detail::allocate(emp, settings.psd_floor, settings.mvo,
                                previous[static_cast<std::size_t>(StrategyId::Emp)]);
      chosen[2] = e.weights;
      ok[2] = e.converged;
      const MomentEstimate shr{emp.mu, shrink_covariance(emp.sigma, settings.shrinkage)};
      auto s = detail::allocate(shr, settings.psd_floor, settings.mvo,
                                previous[static_cast<std::size_t>(StrategyId::ShrEmp)]);
      chosen[3] = s.weights;
      ok[3] = s.converged;
    } else {
      chosen[2] = ew;
      chosen[3] = ew;
    }

    const Eigen::VectorXd outcome = panel.returns().row(t).transpose();
    for (auto s : kStrategies) {
      const auto si = static_cast<std::size_t>(s);
      auto& rec = res.strategies[si];
      rec.weights.row(r) = chosen[si].w.transpose();
      rec.realized[r] = chosen[si].w.dot(outcome);
      rec.converged.push_back(ok[si]);
      previous[si] = chosen[si];
    }
  }
  for (auto& rec : res.strategies) {
    rec.cumulative = compound(rec.realized);
    rec.metrics = compute_metrics(std::span<const double>(rec.realized.data(), static_cast<std::size_t>(M)));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ablation over the number of conditioning characteristics.

struct AblationSettings {
  NoiseSchedule schedule;
  DenoiserConfig denoiser;  // k is replaced per job
  TrainConfig training;     // seed is replaced per job
  BacktestSettings backtest;  // sample_seed is replaced per job
  int jobs = 1;
};

struct AblationEntry {
  int k = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  BacktestResult result;
  double mean_hhi = 0.0;     // diffusion strategy
  double ew_mean_hhi = 0.0;  // reference column, 1/N
  bool converged = false;
  std::vector<double> loss_curve;
};

struct AblationResult {
  std::vector<AblationEntry> entries;  // seeds outermost, k in list order

  bool partial() const {
    return std::any_of(entries.begin(), entries.end(), [](const AblationEntry& e) { return !e.ok; });
  }
};

/// Runs `count` independent jobs on up to `jobs` threads. Each job writes only its own slot.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  for (auto& th : pool) th.join();
}

/// One ablation cell: select k characteristics, train from scratch and backtest.
/// The factor subset, training randomness and sampling randomness all derive from
/// `seed`, and are shared across k so cells differ only in the conditioning set.
inline AblationEntry run_ablation_cell(const Panel& panel, int k, std::uint64_t seed, const AblationSettings& s) {
  AblationEntry e;
  e.k = k;
  e.seed = seed;
  const Panel selected = select_factors(panel, k, seed);
  DenoiserConfig dcfg = s.denoiser;
  dcfg.k = k;
  dcfg.max_steps = std::max(dcfg.max_steps, s.schedule.steps());
  TrainConfig tcfg = s.training;
  tcfg.seed = seed;
  auto report = train(selected, s.schedule, dcfg, tcfg);
  BacktestSettings bcfg = s.backtest;
  bcfg.sample_seed = seed;
  const ConditionalModel model{dcfg, std::move(report.final_params), s.schedule, report.return_scale};
  e.result = run_backtest(selected, report.split.test, model, bcfg);
  e.loss_curve = std::move(report.loss_curve);
  e.mean_hhi = mean_hhi(e.result[StrategyId::DiffusionMVO]);
  e.ew_mean_hhi = mean_hhi(e.result[StrategyId::EW]);
  e.converged = e.result.all_converged(StrategyId::DiffusionMVO);
  e.ok = true;
  return e;
}

inline AblationResult run_ablation(const Panel& panel, std::span<const int> k_list, const AblationSettings& settings,
                                   std::span<const std::uint64_t> seeds) {
  for (int k : k_list)
    if (k < 1 || k > panel.num_characteristics())
      throw DomainError("ablation k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(panel.num_characteristics()) + "]");
  AblationResult out;
  for (auto seed : seeds)
    for (int k : k_list) {
      AblationEntry e;
      e.k = k;
      e.seed = seed;
      out.entries.push_back(std::move(e));
    }
  parallel_for(out.entries.size(), settings.jobs, [&](std::size_t i) {
    const int k = out.entries[i].k;
    const auto seed = out.entries[i].seed;
    try {
      out.entries[i] = run_ablation_cell(panel, k, seed, settings);
    } catch (const std::exception& ex) {
      out.entries[i].ok = false;
      out.entries[i].error = ex.what();
    }
  });
  return out;
}

}  // namespace factordiff
