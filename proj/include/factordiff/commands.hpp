#pragma once

// The four pipeline commands behind the command-line tool. Each returns a
// process exit code; messages go to the supplied streams.

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "factordiff/backtest.hpp"
#include "factordiff/checkpoint.hpp"
#include "factordiff/config.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/panel.hpp"
#include "factordiff/report.hpp"
#include "factordiff/training.hpp"

namespace factordiff {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitNumeric = 3, kExitPartial = 4 };

/// Maps the library's error types onto exit codes.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const OrderingError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

/// Writes a synthetic panel file with `synthetic.months` months (months x assets rows).
/// Loading it yields months - 1 panel rows, since the last month only supplies returns.
inline int cmd_synth(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_file, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.synthetic.T < 2) throw ConfigError("synthetic.months", "must be >= 2");
    SyntheticSpec spec = cfg.synthetic;
    spec.T -= 1;
    const auto path = out_file.value_or(std::filesystem::path(cfg.output_dir) / "panel.csv");
    write_raw_panel(generate_synthetic_raw(spec), path);
    out << "wrote " << path.string() << " (" << cfg.synthetic.T << " months, " << spec.N << " assets, " << spec.K
        << " characteristics)\n";
    return kExitOk;
  });
}

/// Trains on the leading months and writes model.json and loss_curve.csv.
inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& panel_path, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    Panel panel = load_panel(panel_path, cfg.preprocess);
    const int K = panel.num_characteristics();
    if (cfg.factors) {
      if (*cfg.factors > K)
        throw ConfigError("denoiser.factors",
                          "k=" + std::to_string(*cfg.factors) + " exceeds the panel's K=" + std::to_string(K));
      panel = select_factors(panel, *cfg.factors, cfg.training.seed);
    }
    DenoiserConfig dcfg = cfg.denoiser;
    dcfg.k = panel.num_characteristics();
    const auto schedule = cfg.diffusion.schedule();
    try {
      (void)split_panel(panel, cfg.training.train_fraction);
    } catch (const DomainError& e) {
      throw ConfigError("training.train_fraction", e.what());
    }
    auto report = train(panel, schedule, dcfg, cfg.training);
    Checkpoint c{{dcfg, std::move(report.final_params), schedule, report.return_scale},
                 cfg.training.seed,
                 cfg.training.train_fraction,
                 panel.characteristic_names()};
    const std::filesystem::path dir(cfg.output_dir);
    csv::write_file(dir / "loss_curve.csv", report::loss_curve_csv(report.loss_curve));
    save_checkpoint(c, dir / "model.json");
    out << "final loss " << csv::format_double(report.loss_curve.back()) << "\n";
    out << "wrote " << (dir / "model.json").string() << "\n";
    return kExitOk;
  });
}

/// Walk-forward backtest of a checkpoint over the panel's test months.
inline int cmd_backtest(const RunConfig& cfg, const std::filesystem::path& panel_path,
                        const std::filesystem::path& checkpoint_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Panel full = load_panel(panel_path, cfg.preprocess);
    const Checkpoint c = load_checkpoint(checkpoint_path);
    for (const auto& name : c.characteristic_names) {
      const auto& have = full.characteristic_names();
      if (std::find(have.begin(), have.end(), name) == have.end())
        throw ConfigError("checkpoint.characteristics", "model uses characteristic '" + name +
                                                            "' which the panel lacks (model k=" +
                                                            std::to_string(c.model.config.k) + ", panel K=" +
                                                            std::to_string(full.num_characteristics()) + ")");
    }
    const Panel panel = select_named(full, c.characteristic_names);
    MonthSplit split;
    try {
      split = split_panel(panel, c.train_fraction);
    } catch (const DomainError& e) {
      throw ConfigError("checkpoint.train_fraction", e.what());
    }
    const auto result = run_backtest(panel, split.test, c.model, cfg.backtest);
    const std::filesystem::path dir(cfg.output_dir);
    report::write_backtest_tables(result, dir);
    csv::write_file(dir / "cumulative.svg", report::cumulative_svg(result));
    csv::write_file(dir / "heatmap.svg", report::heatmap_svg(result));
    for (auto s : kStrategies) {
      const auto& m = result[s].metrics;
      out << strategy_name(s) << ": mean " << csv::format_double(m.mean_return) << " vol "
          << csv::format_double(m.volatility) << " sharpe " << report::optional_number(m.sharpe_annualized) << "\n";
    }
    return kExitOk;
  });
}

/// Factor-count sweep. Exit code 4 when some cells failed (their rows are flagged).
inline int cmd_ablate(const RunConfig& cfg, const std::filesystem::path& panel_path, std::ostream& out,
                      std::ostream& err) {
  return guarded(err, [&] {
    const Panel panel = load_panel(panel_path, cfg.preprocess);
    const auto k_list = cfg.k_list_for(panel.num_characteristics());
    AblationSettings s{cfg.diffusion.schedule(), cfg.denoiser, cfg.training, cfg.backtest, cfg.jobs};
    const auto result = run_ablation(panel, k_list, s, cfg.seeds);
    const std::filesystem::path dir(cfg.output_dir);
    csv::write_file(dir / "ablation.csv", report::ablation_csv(result));
    csv::write_file(dir / "ablation_summary.svg", report::ablation_summary_svg(result));
    for (const auto& e : result.entries) {
      const std::string tag = "k" + std::to_string(e.k) + "_seed" + std::to_string(e.seed);
      if (!e.ok) {
        err << tag << " failed: " << e.error << "\n";
        continue;
      }
      const auto cell = dir / tag;
      report::write_backtest_tables(e.result, cell);
      csv::write_file(cell / "loss_curve.csv", report::loss_curve_csv(e.loss_curve));
      csv::write_file(cell / "cumulative.svg", report::cumulative_svg(e.result, "Cumulative wealth (k=" +
                                                                                    std::to_string(e.k) + ")"));
      csv::write_file(cell / "heatmap.svg",
                      report::heatmap_svg(e.result, StrategyId::DiffusionMVO,
                                          "Weights heatmap (k=" + std::to_string(e.k) + ")"));
      out << tag << ": sharpe "
          << report::optional_number(e.result[StrategyId::DiffusionMVO].metrics.sharpe_annualized) << " mean_hhi "
          << csv::format_double(e.mean_hhi) << "\n";
    }
    return result.partial() ? kExitPartial : kExitOk;
  });
}

}  // namespace factordiff
