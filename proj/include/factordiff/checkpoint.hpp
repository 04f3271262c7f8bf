#pragma once

// Trained-model checkpoint stored as JSON. Doubles are written in shortest
// round-trip form, so save -> load reproduces the parameter vector bit for bit.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "factordiff/backtest.hpp"
#include "factordiff/csv.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/diffusion.hpp"
#include "factordiff/errors.hpp"

namespace factordiff {

struct Checkpoint {
  ConditionalModel model;
  std::uint64_t training_seed = 0;
  double train_fraction = 0.8;
  std::vector<std::string> characteristic_names;  // columns the model was trained on, in order
};

inline constexpr const char* kCheckpointFormat = "factordiff-checkpoint-1";

inline std::string checkpoint_json(const Checkpoint& c) {
  using nlohmann::json;
  const auto& m = c.model;
  json j;
  j["format"] = kCheckpointFormat;
  j["denoiser"] = {{"embed_dim", m.config.embed_dim},
                   {"heads", m.config.heads},
                   {"layers", m.config.layers},
                   {"k", m.config.k},
                   {"max_steps", m.config.max_steps}};
  j["schedule"]["betas"] = std::vector<double>(m.schedule.betas().data(), m.schedule.betas().data() + m.schedule.steps());
  j["training_seed"] = c.training_seed;
  j["train_fraction"] = c.train_fraction;
  j["return_scale"] = m.return_scale;
  j["characteristics"] = c.characteristic_names;
  json layout = json::array();
  for (const auto& s : m.params.layout)
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  j["layout"] = std::move(layout);
  j["parameters"] = std::vector<double>(m.params.flat.data(), m.params.flat.data() + m.params.flat.size());
  return j.dump(1) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto end = std::min(text.size(), static_cast<std::size_t>(e.byte));
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(end), '\n'));
    throw ParseError("checkpoint is not valid JSON", line);
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ShapeError("unrecognized checkpoint format");
    Checkpoint c;
    const auto& d = j.at("denoiser");
    c.model.config.embed_dim = d.at("embed_dim").get<int>();
    c.model.config.heads = d.at("heads").get<int>();
    c.model.config.layers = d.at("layers").get<int>();
    c.model.config.k = d.at("k").get<int>();
    c.model.config.max_steps = d.at("max_steps").get<int>();
    c.model.config.validate();
    const auto betas = j.at("schedule").at("betas").get<std::vector<double>>();
    c.model.schedule = NoiseSchedule(Eigen::Map<const Eigen::VectorXd>(betas.data(), static_cast<Eigen::Index>(betas.size())));
    c.training_seed = j.at("training_seed").get<std::uint64_t>();
    c.train_fraction = j.at("train_fraction").get<double>();
    c.model.return_scale = j.at("return_scale").get<double>();
    c.characteristic_names = j.at("characteristics").get<std::vector<std::string>>();
    for (const auto& s : j.at("layout"))
      c.model.params.layout.push_back(
          {s.at("name").get<std::string>(), s.at("offset").get<Eigen::Index>(), s.at("rows").get<Eigen::Index>(),
           s.at("cols").get<Eigen::Index>()});
    const auto flat = j.at("parameters").get<std::vector<double>>();
    c.model.params.flat = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    if (c.model.params.layout != parameter_layout(c.model.config))
      throw ShapeError("checkpoint layout does not match its denoiser configuration");
    if (c.model.params.flat.size() != static_cast<Eigen::Index>(
                                          detail::build_architecture(c.model.config).size))
      throw ShapeError("checkpoint parameter count does not match its layout");
    if (static_cast<int>(c.characteristic_names.size()) != c.model.config.k)
      throw ShapeError("checkpoint lists " + std::to_string(c.characteristic_names.size()) +
                       " characteristics but k=" + std::to_string(c.model.config.k));
    return c;
  } catch (const json::exception& e) {
    throw ShapeError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  csv::write_file(path, checkpoint_json(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(csv::read_file(path)); }

}  // namespace factordiff
