// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset (e.g. `acceptance 1 4 7`).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "factordiff/factordiff.hpp"
#include "test_util.hpp"

using namespace factordiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Brute-force simplex grids (N <= 4). Points have coordinates i / steps.

template <class F>
void for_each_grid_point(int n, int steps, F&& f) {
  std::array<double, 4> w{};
  const double h = 1.0 / steps;
  if (n == 1) {
    w[0] = 1.0;
    f(w);
    return;
  }
  for (int a = 0; a <= steps; ++a) {
    w[0] = a * h;
    if (n == 2) {
      w[1] = (steps - a) * h;
      f(w);
      continue;
    }
    for (int b = 0; b <= steps - a; ++b) {
      w[1] = b * h;
      if (n == 3) {
        w[2] = (steps - a - b) * h;
        f(w);
        continue;
      }
      for (int c = 0; c <= steps - a - b; ++c) {
        w[2] = c * h;
        w[3] = (steps - a - b - c) * h;
        f(w);
      }
    }
  }
}

Eigen::VectorXd to_vector(const std::array<double, 4>& w, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = w[static_cast<std::size_t>(i)];
  return v;
}

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const std::array<DenoiserConfig, 3> configs{{
      {.embed_dim = 4, .heads = 1, .layers = 1, .k = 1, .max_steps = 10},
      {.embed_dim = 4, .heads = 2, .layers = 2, .k = 3, .max_steps = 10},
      {.embed_dim = 6, .heads = 3, .layers = 1, .k = 2, .max_steps = 10},
  }};
  const std::array<int, 3> assets{3, 4, 2};
  const auto schedule = linear_schedule(10, 1e-4, 0.05);
  double worst = 0.0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const auto& cfg = configs[c];
    RandomStream rs(100 + c, {1});
    std::vector<TrainingItem> batch;
    for (int b = 0; b < 2; ++b) {
      TrainingItem it;
      it.x0 = rs.normal_vector(assets[c]);
      it.epsilon = rs.normal_vector(assets[c]);
      it.step = 1 + static_cast<int>(rs.below(10));
      it.conditioning = testutil::normal_matrix(rs, assets[c], cfg.k);
      batch.push_back(std::move(it));
    }
    const auto p = testutil::random_params(cfg, 200 + c, 0.5);
    const auto analytic = loss_and_gradients(p, batch, schedule, cfg).grad;
    const auto n = static_cast<std::uint64_t>(p.flat.size());
    for (int probe = 0; probe < 100; ++probe) {
      const auto i = static_cast<Eigen::Index>(rs.below(n));
      const double fd = testutil::central_difference_at(p, i, batch, schedule, cfg, 1e-5);
      worst = std::max(worst, testutil::gradient_relative_error(analytic[i], fd));
    }
  }
  return {worst < 1e-4, "max relative error " + num(worst)};
}

Outcome criterion_diffusion() {
  const auto schedule = linear_schedule(50, 1e-4, 0.05);
  const int draws = 10000;
  const Eigen::Vector3d x0(0.5, -1.0, 2.0);
  RandomStream rs(7, {2});
  bool ok = true;
  double worst_z = 0.0;
  for (int step : {1, 10, 25, 50}) {
    const double ab = schedule.alpha_bar(step);
    Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> xs;
    for (int s = 0; s < draws; ++s) {
      const Eigen::Vector3d eps(rs.normal(), rs.normal(), rs.normal());
      const Eigen::Vector3d x = q_sample(x0, step, schedule, eps);
      sum += x;
      xs.push_back(x);
    }
    const Eigen::Vector3d mean = sum / draws;
    for (const auto& x : xs) sq += (x - mean).cwiseAbs2();
    const Eigen::Vector3d var = sq / (draws - 1);
    const double v = 1.0 - ab;
    for (int i = 0; i < 3; ++i) {
      // standard errors of the sample mean and (Gaussian) sample variance
      const double zm = std::abs(mean[i] - std::sqrt(ab) * x0[i]) / std::sqrt(v / draws);
      const double zv = std::abs(var[i] - v) / (v * std::sqrt(2.0 / (draws - 1)));
      worst_z = std::max({worst_z, zm, zv});
      ok = ok && zm < 3.0 && zv < 3.0;
    }
  }
  double inversion = 0.0;
  for (double beta : {1e-4, 0.02, 0.3}) {
    const auto one = linear_schedule(1, beta, beta);
    const Eigen::VectorXd x = testutil::normal_matrix(8, 1, 3).col(0);
    const Eigen::VectorXd eps = testutil::normal_matrix(8, 1, 4).col(0);
    const Eigen::VectorXd noisy = q_sample(x, 1, one, eps);
    const Eigen::VectorXd back = reverse_step(noisy, 1, eps, one, Eigen::VectorXd::Zero(8));
    inversion = std::max(inversion, (back - x).cwiseAbs().maxCoeff());
  }
  ok = ok && inversion < 1e-10;
  return {ok, "worst |z| " + num(worst_z, 3) + ", inversion error " + num(inversion)};
}

Outcome criterion_equivariance() {
  const DenoiserConfig cfg{.embed_dim = 16, .heads = 4, .layers = 2, .k = 5, .max_steps = 50};
  const auto p = testutil::random_params(cfg, 31, 0.3);
  RandomStream rs(32, {3});
  const int N = 12;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = rs.normal_vector(N);
    const auto c = testutil::normal_matrix(rs, N, cfg.k);
    const auto perm = rs.permutation(N);
    const int step = 1 + static_cast<int>(rs.below(50));
    Eigen::VectorXd px(N);
    Eigen::MatrixXd pc(N, cfg.k);
    for (int i = 0; i < N; ++i) {
      px[i] = x[perm[static_cast<std::size_t>(i)]];
      pc.row(i) = c.row(perm[static_cast<std::size_t>(i)]);
    }
    const auto y = forward(p, x, step, c, cfg);
    const auto py = forward(p, px, step, pc, cfg);
    for (int i = 0; i < N; ++i) worst = std::max(worst, std::abs(py[i] - y[perm[static_cast<std::size_t>(i)]]));
  }
  return {worst < 1e-9, "max discrepancy " + num(worst)};
}

Outcome criterion_mvo() {
  RandomStream rs(41, {4});
  MvoConfig cfg;
  double worst_gap = -std::numeric_limits<double>::infinity(), worst_kkt = 0.0;
  bool ok = true;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + inst % 3;
    Eigen::VectorXd mu(n);
    for (int i = 0; i < n; ++i) mu[i] = 0.02 * rs.normal();
    const Eigen::MatrixXd a = testutil::normal_matrix(rs, n, n + 2);
    const Eigen::MatrixXd sigma = 0.01 * a * a.transpose() / (n + 2);
    const auto sol = solve_mvo(mu, sigma, cfg);
    double best = -std::numeric_limits<double>::infinity();
    for_each_grid_point(n, 1000, [&](const std::array<double, 4>& w) {
      double lin = 0.0, quad = 0.0;
      for (int i = 0; i < n; ++i) {
        lin += mu[i] * w[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) quad += w[static_cast<std::size_t>(i)] * sigma(i, j) * w[static_cast<std::size_t>(j)];
      }
      best = std::max(best, lin - 0.5 * cfg.gamma * quad);
    });
    worst_gap = std::max(worst_gap, best - sol.objective);
    const double kkt = kkt_residual(mu, sigma, cfg.gamma, sol.weights.w, cfg.tol);
    worst_kkt = std::max(worst_kkt, kkt);
    ok = ok && sol.objective >= best - 1e-6 && kkt <= cfg.tol && sol.weights.valid();
  }
  double sym = 0.0;
  for (int n : {2, 3, 4, 7}) {
    for (double var : {0.01, 0.09}) {
      const Eigen::MatrixXd sigma = var * (0.7 * Eigen::MatrixXd::Identity(n, n) + 0.3 * Eigen::MatrixXd::Ones(n, n));
      const auto sol = solve_mvo(Eigen::VectorXd::Constant(n, 0.01), sigma, cfg);
      sym = std::max(sym, (sol.weights.w.array() - 1.0 / n).abs().maxCoeff());
    }
  }
  ok = ok && sym < 1e-8;
  return {ok, "grid - solver " + num(worst_gap) + ", max KKT " + num(worst_kkt) + ", symmetric deviation " + num(sym)};
}

Outcome criterion_projection() {
  RandomStream rs(51, {5});
  bool ok = true;
  double worst_dist = 0.0, worst_gap = -std::numeric_limits<double>::infinity();
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 2 + inst % 3;
    const int steps = n == 4 ? 300 : 1000;
    const double h = 1.0 / steps;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rs.normal();
    const Eigen::VectorXd p = project_simplex(v);
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd arg;
    for_each_grid_point(n, steps, [&](const std::array<double, 4>& w) {
      double d = 0.0;
      for (int i = 0; i < n; ++i) d += (w[static_cast<std::size_t>(i)] - v[i]) * (w[static_cast<std::size_t>(i)] - v[i]);
      if (d < best) {
        best = d;
        arg = to_vector(w, n);
      }
    });
    // The projection must beat every grid point and sit within one grid cell of the best one.
    const double mine = (p - v).squaredNorm();
    const double dist = (p - arg).cwiseAbs().maxCoeff();
    worst_gap = std::max(worst_gap, mine - best);
    worst_dist = std::max(worst_dist, dist);
    ok = ok && mine <= best + 1e-12 && dist <= h + 1e-12 && p.minCoeff() >= 0.0 &&
         std::abs(p.sum() - 1.0) < 1e-12 && project_simplex(p) == p;
  }
  return {ok, "max distance to grid optimum " + num(worst_dist) + " (grid cell <= 1/300), idempotence exact"};
}

Outcome criterion_moments() {
  bool ok = true;
  const Eigen::MatrixXd a = testutil::normal_matrix(6, 6, 61);
  const Eigen::MatrixXd s = a * a.transpose();
  ok = ok && shrink_covariance(s, 0.0) == s;
  const Eigen::MatrixXd target = (s.trace() / 6.0) * Eigen::MatrixXd::Identity(6, 6);
  const double one = (shrink_covariance(s, 1.0) - target).cwiseAbs().maxCoeff();
  double trace = 0.0;
  for (double d : {0.1, 0.3, 0.5, 0.8}) trace = std::max(trace, std::abs(shrink_covariance(s, d).trace() - s.trace()));
  Eigen::MatrixXd two(2, 2);
  two << 0, 0, 2, 2;
  const auto m = estimate_moments(two);
  Eigen::Matrix2d expected;
  expected << 2, 2, 2, 2;
  ok = ok && one < 1e-12 && trace < 1e-12 && m.mu == Eigen::Vector2d(1, 1) && m.sigma == Eigen::MatrixXd(expected);
  return {ok, "delta=1 error " + num(one) + ", trace drift " + num(trace) + ", two-point covariance exact"};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(csv::read_file(path));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

Outcome criterion_backtest() {
  SyntheticSpec spec;
  spec.T = 30;
  spec.N = 8;
  spec.K = 6;
  spec.k_true = 3;
  spec.seed = 71;
  const Panel panel = generate_synthetic(spec);
  const DenoiserConfig dcfg{.embed_dim = 8, .heads = 2, .layers = 1, .k = 6, .max_steps = 20};
  const ConditionalModel model{dcfg, testutil::random_params(dcfg, 72, 0.2), linear_schedule(20, 1e-4, 0.05), 0.05};
  BacktestSettings settings;
  settings.samples = 32;
  settings.window = 12;
  std::vector<int> months(8);
  std::iota(months.begin(), months.end(), 22);
  const auto base = run_backtest(panel, months, model, settings);

  // Poisoned future: for each decision month t, corrupt returns of rows >= t and
  // characteristics of months > t; the month-t weights must not move.
  bool lookahead_ok = true;
  for (std::size_t r = 0; r < months.size(); ++r) {
    const int t = months[r];
    std::vector<Eigen::MatrixXd> chars = panel.characteristics();
    Eigen::MatrixXd rets = panel.returns();
    for (int u = t; u < panel.num_months(); ++u) {
      rets.row(u).setConstant(5.0);
      if (u > t) chars[static_cast<std::size_t>(u)].setConstant(-9.0);
    }
    const Panel poisoned(panel.months(), panel.assets(), panel.characteristic_names(), chars, rets);
    const std::vector<int> upto(months.begin(), months.begin() + static_cast<std::ptrdiff_t>(r) + 1);
    const auto res = run_backtest(poisoned, upto, model, settings);
    for (auto s : kStrategies)
      lookahead_ok = lookahead_ok && res[s].weights.row(static_cast<Eigen::Index>(r)) ==
                                         base[s].weights.row(static_cast<Eigen::Index>(r));
  }

  // Recompute realized returns and metrics from the written tables.
  const auto dir = testutil::temp_dir("acceptance_tables");
  report::write_backtest_tables(base, dir);
  double worst = 0.0;
  const auto metrics = read_csv(dir / "metrics.csv");
  const auto table = read_csv(dir / "backtest.csv");
  for (auto s : kStrategies) {
    const auto weights = read_csv(dir / ("weights_" + std::string(strategy_name(s)) + ".csv"));
    std::vector<double> realized;
    for (std::size_t r = 0; r < months.size(); ++r) {
      double v = 0.0;
      for (int i = 0; i < panel.num_assets(); ++i)
        v += std::stod(weights[r + 1][static_cast<std::size_t>(i) + 1]) * panel.returns()(months[r], i);
      realized.push_back(v);
      for (const auto& row : table)
        if (row[0] == panel.months()[static_cast<std::size_t>(months[r])] && row[1] == strategy_name(s))
          worst = std::max(worst, std::abs(std::stod(row[2]) - v));
    }
    const auto m = compute_metrics(realized);
    for (const auto& row : metrics)
      if (row[0] == strategy_name(s)) {
        worst = std::max(worst, std::abs(std::stod(row[1]) - m.mean_return));
        worst = std::max(worst, std::abs(std::stod(row[2]) - m.volatility));
        if (m.sharpe_annualized) worst = std::max(worst, std::abs(std::stod(row[3]) - *m.sharpe_annualized));
      }
  }

  // mean 0.01, sample std 0.02
  const double d = 0.02 / std::sqrt(2.0);
  const std::vector<double> pair{0.01 - d, 0.01 + d};
  const auto pm = compute_metrics(pair);
  const bool sharpe_ok = pm.sharpe_annualized && std::abs(*pm.sharpe_annualized - 1.7320508075688772) < 1e-12;
  return {lookahead_ok && worst < 1e-12 && sharpe_ok,
          std::string("look-ahead ") + (lookahead_ok ? "clean" : "LEAK") + ", table recompute error " + num(worst) +
              ", Sharpe(mean 0.01, vol 0.02) = " + (pm.sharpe_annualized ? num(*pm.sharpe_annualized, 10) : "NA")};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FACTORDIFF_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_determinism() {
  const std::string config = std::string(FACTORDIFF_SOURCE_DIR) + "/configs/default.json";
  std::map<std::string, std::string> first;
  for (int run = 0; run < 2; ++run) {
    const auto dir = testutil::temp_dir("acceptance_e2e_" + std::to_string(run));
    const std::string common = "--config " + config + " --out " + dir.string();
    if (run_cli("synth " + common) != 0) return {false, "synth failed"};
    if (run_cli("train " + common + " " + (dir / "panel.csv").string()) != 0) return {false, "train failed"};
    if (run_cli("backtest " + common + " " + (dir / "panel.csv").string() + " " + (dir / "model.json").string()) != 0)
      return {false, "backtest failed"};
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".csv" || e.path().extension() == ".json")
        files[e.path().filename().string()] = csv::read_file(e.path());
    if (run == 0) {
      first = files;
    } else {
      for (const auto& [name, bytes] : first) {
        auto it = files.find(name);
        if (it == files.end() || it->second != bytes) return {false, name + " differs between runs"};
      }
      return {files.size() == first.size(), std::to_string(first.size()) + " files byte-identical"};
    }
  }
  return {false, "unreachable"};
}

// ---------------------------------------------------------------------------
// Factor-count ablation (criteria 9 and 10)

struct AblationSetup {
  SyntheticSpec data;
  AblationSettings settings;
  std::vector<int> k_list{1, 3, 5, 10, 20, 30};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

AblationSetup ablation_setup() {
  AblationSetup a;
  a.data.T = 60;
  a.data.N = 20;
  a.data.K = 30;
  a.data.k_true = 5;
  a.data.signal_scale = 0.01;
  a.data.noise_scale = 0.05;
  a.settings.schedule = linear_schedule(50, 1e-4, 0.05);
  a.settings.denoiser = {.embed_dim = 32, .heads = 4, .layers = 2, .k = 1, .max_steps = 50};
  // long training on 15 months so that wide conditioning sets can overfit
  a.settings.training.epochs = 400;
  a.settings.training.train_fraction = 0.25;
  a.settings.backtest.samples = 200;
  return a;
}

Panel ablation_panel(const AblationSetup& a, std::uint64_t seed) {
  SyntheticSpec s = a.data;
  s.seed = 1000 + seed;
  return generate_synthetic(s);
}

struct AblationRun {
  std::map<std::uint64_t, std::map<int, double>> sharpe;  // seed -> k -> Sharpe
  std::map<std::uint64_t, std::map<int, double>> hhi;
  int interior_k = -1;  // argmax of the seed-averaged Sharpe
  double sd_at_k = 0.0;
  bool complete = true;
};

AblationRun& ablation_cache() {
  static AblationRun run;
  static bool done = false;
  if (done) return run;
  done = true;
  const auto a = ablation_setup();
  for (auto seed : a.seeds) {
    const Panel panel = ablation_panel(a, seed);
    const std::vector<std::uint64_t> one{seed};
    const auto result = run_ablation(panel, a.k_list, a.settings, one);
    for (const auto& e : result.entries) {
      if (!e.ok || !e.result[StrategyId::DiffusionMVO].metrics.sharpe_annualized) {
        run.complete = false;
        continue;
      }
      run.sharpe[seed][e.k] = *e.result[StrategyId::DiffusionMVO].metrics.sharpe_annualized;
      run.hhi[seed][e.k] = e.mean_hhi;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (int k : a.k_list) {
    std::vector<double> v;
    for (auto& [seed, m] : run.sharpe)
      if (m.count(k)) v.push_back(m[k]);
    if (v.size() < 2) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (mean > best) {
      best = mean;
      run.interior_k = k;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      run.sd_at_k = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return run;
}

Outcome criterion_bias_variance() {
  const auto a = ablation_setup();
  auto& run = ablation_cache();
  if (!run.complete) return {false, "some ablation cells failed"};
  int interior = 0, concentrated = 0;
  std::string argmaxes;
  for (auto seed : a.seeds) {
    auto& s = run.sharpe[seed];
    const int best = std::max_element(s.begin(), s.end(), [](auto& x, auto& y) { return x.second < y.second; })->first;
    argmaxes += (argmaxes.empty() ? "" : ",") + std::to_string(best);
    if (best != a.k_list.front() && best != a.k_list.back()) ++interior;
    if (run.hhi[seed][a.k_list.back()] > run.hhi[seed][a.k_list.front()]) ++concentrated;
  }
  return {interior >= 4 && concentrated >= 4, "(a) interior argmax in " + std::to_string(interior) +
                                                  "/5 seeds (argmax k per seed: " + argmaxes + "); (b) HHI(k=30) > HHI(k=1) in " +
                                                  std::to_string(concentrated) + "/5 seeds"};
}

Outcome criterion_sample_count() {
  const auto a = ablation_setup();
  auto& run = ablation_cache();
  const int k = run.interior_k;
  if (k < 0) return {false, "no ablation optimum available"};
  const bool interior = k != a.k_list.front() && k != a.k_list.back();
  double worst = 0.0;
  for (auto seed : a.seeds) {
    AblationSettings s = a.settings;
    s.backtest.samples = 1000;
    const auto e = run_ablation_cell(ablation_panel(a, seed), k, seed, s);
    const auto sharpe = e.result[StrategyId::DiffusionMVO].metrics.sharpe_annualized;
    if (!sharpe) return {false, "undefined Sharpe at S=1000"};
    worst = std::max(worst, std::abs(*sharpe - run.sharpe[seed][k]));
  }
  return {interior && worst < run.sd_at_k,
          "k=" + std::to_string(k) + (interior ? "" : " (not interior)") + ": max |Sharpe(S=1000) - Sharpe(S=200)| " +
              num(worst, 3) + " vs across-seed sd " + num(run.sd_at_k, 3)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", criterion_gradients},
      {"diffusion closed forms", criterion_diffusion},
      {"permutation equivariance", criterion_equivariance},
      {"MVO oracle equivalence", criterion_mvo},
      {"simplex projection oracle", criterion_projection},
      {"shrinkage and moments algebra", criterion_moments},
      {"backtest integrity", criterion_backtest},
      {"end-to-end determinism", criterion_determinism},
      {"bias-variance in k", criterion_bias_variance},
      {"sample-count robustness", criterion_sample_count},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << " -- "
              << o.detail << " [" << num(secs, 3) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
