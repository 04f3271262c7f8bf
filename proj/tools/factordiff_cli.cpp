#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "factordiff/commands.hpp"

using namespace factordiff;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (comments allowed)");
  cmd->add_option("--seed", c.seed, "override every seed in the configuration");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--jobs", c.jobs, "maximum worker threads")->check(CLI::PositiveNumber);
}

// Loads the config and applies command-line overrides; nullopt after printing a config error.
std::optional<RunConfig> resolve(const Common& c) {
  std::optional<RunConfig> cfg;
  guarded(std::cerr, [&] {
    RunConfig r = c.config.empty() ? parse_config("{}") : load_config(c.config);
    if (c.seed) r.override_seed(*c.seed);
    if (c.out) r.output_dir = *c.out;
    if (c.jobs) r.jobs = *c.jobs;
    cfg = std::move(r);
    return kExitOk;
  });
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion factor model: synthesize panels, train, backtest, ablate"};
  app.require_subcommand(1);

  Common synth_opts, train_opts, backtest_opts, ablate_opts;
  std::string synth_file, train_panel, backtest_panel, backtest_model, ablate_panel;

  auto* synth = app.add_subcommand("synth", "write a synthetic panel CSV");
  add_common(synth, synth_opts);
  synth->add_option("panel", synth_file, "output file (default <out>/panel.csv)");

  auto* train = app.add_subcommand("train", "train the denoiser on the leading months of a panel");
  add_common(train, train_opts);
  train->add_option("panel", train_panel, "panel CSV")->required();

  auto* backtest = app.add_subcommand("backtest", "walk-forward backtest of a trained model");
  add_common(backtest, backtest_opts);
  backtest->add_option("panel", backtest_panel, "panel CSV")->required();
  backtest->add_option("model", backtest_model, "checkpoint written by train")->required();

  auto* ablate = app.add_subcommand("ablate", "sweep the number of characteristics");
  add_common(ablate, ablate_opts);
  ablate->add_option("panel", ablate_panel, "panel CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (synth->parsed()) {
    auto cfg = resolve(synth_opts);
    if (!cfg) return kExitConfig;
    std::optional<std::filesystem::path> file;
    if (!synth_file.empty()) file = synth_file;
    return cmd_synth(*cfg, file, std::cout, std::cerr);
  }
  if (train->parsed()) {
    auto cfg = resolve(train_opts);
    if (!cfg) return kExitConfig;
    return cmd_train(*cfg, train_panel, std::cout, std::cerr);
  }
  if (backtest->parsed()) {
    auto cfg = resolve(backtest_opts);
    if (!cfg) return kExitConfig;
    return cmd_backtest(*cfg, backtest_panel, backtest_model, std::cout, std::cerr);
  }
  auto cfg = resolve(ablate_opts);
  if (!cfg) return kExitConfig;
  return cmd_ablate(*cfg, ablate_panel, std::cout, std::cerr);
}
