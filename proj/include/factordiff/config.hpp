#pragma once

// Run configuration: one JSON document (comments allowed) with nested sections.
// Unknown keys and invariant violations are reported as ConfigError carrying the
// dotted path of the offending field, before any computation starts.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factordiff/backtest.hpp"
#include "factordiff/csv.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/diffusion.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/panel.hpp"
#include "factordiff/portfolio.hpp"
#include "factordiff/training.hpp"

namespace factordiff {

struct DiffusionConfig {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.05;

  NoiseSchedule schedule() const { return linear_schedule(steps, beta_start, beta_end); }
};

/// Ablation grid used when the config does not list one.
inline const std::vector<int> kDefaultKList{1, 3, 6, 11, 18, 30, 48, 75, 115, 170, 240, 300, 350};

struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string output_dir = "out";
  PreprocessSpec preprocess;
  SyntheticSpec synthetic;
  DiffusionConfig diffusion;
  DenoiserConfig denoiser;            // k and max_steps are filled in from the data and schedule
  std::optional<int> factors;         // characteristics used by `train`; all when unset
  TrainConfig training;
  MvoConfig portfolio;
  BacktestSettings backtest;
  std::vector<int> k_list = kDefaultKList;
  bool k_list_explicit = false;
  std::vector<std::uint64_t> seeds{0};

  /// k_list restricted to [1, K]; the default grid is clipped, explicit lists must already fit.
  std::vector<int> k_list_for(int K) const {
    std::vector<int> out;
    for (int k : k_list)
      if (k <= K) out.push_back(k);
      else if (k_list_explicit)
        throw ConfigError("ablation.k_list", "k=" + std::to_string(k) + " exceeds the panel's K=" + std::to_string(K));
    if (out.empty()) throw ConfigError("ablation.k_list", "no entry is <= K=" + std::to_string(K));
    return out;
  }

  /// Applies `--seed`: every seeded component follows the override.
  void override_seed(std::uint64_t s) {
    seed = s;
    synthetic.seed = s;
    training.seed = s;
    backtest.sample_seed = s;
  }
};

namespace detail {

/// Walks one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const auto* v = find(key);
    if (!v) return;
    out = convert<T>(*v, field(key));
  }

  std::optional<Section> child(const std::string& key) {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    return Section(*v, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

  template <class T>
  static T convert(const nlohmann::json& v, const std::string& field) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(field, "expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw ConfigError(field, "integer out of range");
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError(field, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], field + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Runs a validate() method and re-raises its complaint under `field`.
template <class F>
void check(const std::string& field, F&& validate) {
  try {
    validate();
  } catch (const DomainError& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  RunConfig c;
  detail::Section root(j, "");
  root.get("seed", c.seed);
  root.get("jobs", c.jobs);
  root.get("output_dir", c.output_dir);

  bool seed_synthetic = true, seed_training = true, seed_sampling = true;
  if (auto s = root.child("preprocess")) {
    s->get("winsor_low", c.preprocess.winsor_low_q);
    s->get("winsor_high", c.preprocess.winsor_high_q);
    s->get("clip_bound", c.preprocess.clip_bound);
    s->get("assets", c.preprocess.target_N);
    s->finish();
  }
  if (auto s = root.child("synthetic")) {
    s->get("months", c.synthetic.T);
    s->get("assets", c.synthetic.N);
    s->get("characteristics", c.synthetic.K);
    s->get("k_true", c.synthetic.k_true);
    s->get("signal_scale", c.synthetic.signal_scale);
    s->get("noise_scale", c.synthetic.noise_scale);
    std::string g = "linear";
    s->get("nonlinearity", g);
    if (g == "linear") c.synthetic.nonlinearity = Nonlinearity::linear;
    else if (g == "tanh") c.synthetic.nonlinearity = Nonlinearity::tanh_saturating;
    else throw ConfigError(s->field("nonlinearity"), "expected \"linear\" or \"tanh\"");
    if (s->find("seed")) {
      s->get("seed", c.synthetic.seed);
      seed_synthetic = false;
    }
    s->finish();
  }
  if (auto s = root.child("diffusion")) {
    s->get("steps", c.diffusion.steps);
    s->get("beta_start", c.diffusion.beta_start);
    s->get("beta_end", c.diffusion.beta_end);
    s->finish();
  }
  if (auto s = root.child("denoiser")) {
    s->get("embed_dim", c.denoiser.embed_dim);
    s->get("heads", c.denoiser.heads);
    s->get("layers", c.denoiser.layers);
    if (s->find("factors")) {
      int k = 0;
      s->get("factors", k);
      c.factors = k;
    }
    s->finish();
  }
  if (auto s = root.child("training")) {
    s->get("learning_rate", c.training.learning_rate);
    s->get("epochs", c.training.epochs);
    s->get("batch_months", c.training.batch_months);
    s->get("train_fraction", c.training.train_fraction);
    if (s->find("seed")) {
      s->get("seed", c.training.seed);
      seed_training = false;
    }
    s->finish();
  }
  if (auto s = root.child("portfolio")) {
    s->get("gamma", c.portfolio.gamma);
    s->get("tol", c.portfolio.tol);
    s->get("max_iters", c.portfolio.max_iters);
    s->get("cost_coeff", c.portfolio.cost_coeff);
    s->finish();
  }
  if (auto s = root.child("backtest")) {
    s->get("samples", c.backtest.samples);
    s->get("window", c.backtest.window);
    s->get("shrinkage", c.backtest.shrinkage);
    s->get("psd_floor", c.backtest.psd_floor);
    if (s->find("sample_seed")) {
      s->get("sample_seed", c.backtest.sample_seed);
      seed_sampling = false;
    }
    s->finish();
  }
  if (auto s = root.child("ablation")) {
    if (s->find("k_list")) {
      s->get("k_list", c.k_list);
      c.k_list_explicit = true;
    }
    s->get("seeds", c.seeds);
    s->finish();
  }
  root.finish();

  if (seed_synthetic) c.synthetic.seed = c.seed;
  if (seed_training) c.training.seed = c.seed;
  if (seed_sampling) c.backtest.sample_seed = c.seed;
  c.backtest.mvo = c.portfolio;

  if (c.jobs < 1) throw ConfigError("jobs", "must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  detail::check("preprocess", [&] { c.preprocess.validate(); });
  if (c.synthetic.k_true > c.synthetic.K)
    throw ConfigError("synthetic.k_true", "k_true=" + std::to_string(c.synthetic.k_true) + " exceeds characteristics=" +
                                              std::to_string(c.synthetic.K));
  detail::check("synthetic", [&] { c.synthetic.validate(); });
  detail::check("diffusion", [&] { (void)c.diffusion.schedule(); });
  c.denoiser.max_steps = c.diffusion.steps;
  detail::check("denoiser", [&] { c.denoiser.validate(); });
  if (c.factors && *c.factors < 1) throw ConfigError("denoiser.factors", "must be >= 1");
  detail::check("training", [&] { c.training.validate(); });
  detail::check("portfolio", [&] { c.portfolio.validate(); });
  detail::check("backtest", [&] { c.backtest.validate(); });
  if (c.k_list.empty()) throw ConfigError("ablation.k_list", "must not be empty");
  for (std::size_t i = 0; i < c.k_list.size(); ++i)
    if (c.k_list[i] < 1) throw ConfigError("ablation.k_list[" + std::to_string(i) + "]", "must be >= 1");
  if (c.seeds.empty()) throw ConfigError("ablation.seeds", "must not be empty");
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = csv::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError("<file>", e.what());
  }
  return parse_config(text);
}

}  // namespace factordiff
