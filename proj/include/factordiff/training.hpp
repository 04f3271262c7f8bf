#pragma once

// Adam training of the denoiser on the noise-prediction loss.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "factordiff/denoiser.hpp"
#include "factordiff/diffusion.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/panel.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 50;
  int batch_months = 8;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be >= 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw DomainError("adam_beta1 must lie in (0, 1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw DomainError("adam_beta2 must lie in (0, 1)");
    if (!(adam_epsilon > 0.0)) throw DomainError("adam_epsilon must be positive");
    if (epochs < 1) throw DomainError("epochs must be positive");
    if (batch_months < 1) throw DomainError("batch_months must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train_fraction must lie in (0, 1)");
  }
};

struct MonthSplit {
  std::vector<int> train;
  std::vector<int> test;
};

/// Chronological split: the first floor(fraction * T) months train, the rest test.
inline MonthSplit split_panel(int months, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train_fraction must lie in (0, 1)");
  const int n_train = static_cast<int>(std::floor(train_fraction * months));
  if (n_train < 1 || n_train >= months)
    throw DomainError("split of " + std::to_string(months) + " months at fraction " + std::to_string(train_fraction) +
                      " leaves an empty train or test set");
  MonthSplit s;
  s.train.resize(static_cast<std::size_t>(n_train));
  s.test.resize(static_cast<std::size_t>(months - n_train));
  std::iota(s.train.begin(), s.train.end(), 0);
  std::iota(s.test.begin(), s.test.end(), n_train);
  return s;
}

inline MonthSplit split_panel(const Panel& panel, double train_fraction) {
  return split_panel(panel.num_months(), train_fraction);
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected first and second moments.
inline void adam_update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state, const TrainConfig& cfg) {
  state.t += 1;
  state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad;
  state.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  theta.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.adam_epsilon);
}

struct TrainReport {
  std::vector<double> loss_curve;  // per-epoch mean minibatch loss
  DenoiserParams final_params;
  MonthSplit split;
  double return_scale = 1.0;  // the model sees returns / return_scale
};

/// Pooled standard deviation of the training returns; the model works in these units.
inline double return_scale_of(const Panel& panel) {
  const Eigen::MatrixXd& r = panel.returns();
  const double mean = r.mean();
  const double sd = std::sqrt((r.array() - mean).square().mean());
  return sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
}

/// Fits the denoiser on every month of `train_panel` (callers pass only training months).
/// Each epoch shuffles the months and walks them in minibatches of batch_months; every
/// item draws its own uniform diffusion step and fresh Gaussian noise.
inline TrainReport fit(const Panel& train_panel, const NoiseSchedule& schedule, const DenoiserConfig& dconfig,
                       const TrainConfig& tconfig, const std::function<void(int, double)>& on_epoch = {}) {
  tconfig.validate();
  dconfig.validate();
  if (train_panel.num_characteristics() != dconfig.k)
    throw ShapeError("panel has " + std::to_string(train_panel.num_characteristics()) +
                     " characteristics but the denoiser expects k=" + std::to_string(dconfig.k));
  if (schedule.steps() > dconfig.max_steps) throw ShapeError("schedule has more steps than the denoiser's max_steps");

  TrainReport report;
  report.return_scale = return_scale_of(train_panel);
  report.final_params = init_params(dconfig, tconfig.seed);
  DenoiserParams& params = report.final_params;
  AdamState adam(params.flat.size());

  const int months = train_panel.num_months();
  const int D = schedule.steps();
  const Eigen::Index N = train_panel.num_assets();
  long update = 0;
  for (int epoch = 0; epoch < tconfig.epochs; ++epoch) {
    auto order = RandomStream(tconfig.seed, StreamTag::training_shuffle, {static_cast<std::uint64_t>(epoch)})
                     .permutation(months);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < months; start += tconfig.batch_months, ++update) {
      const int stop = std::min(months, start + tconfig.batch_months);
      std::vector<TrainingItem> batch;
      for (int b = start; b < stop; ++b) {
        const int t = order[static_cast<std::size_t>(b)];
        RandomStream rs(tconfig.seed, StreamTag::training_noise,
                        {static_cast<std::uint64_t>(update), static_cast<std::uint64_t>(b - start)});
        TrainingItem item;
        item.x0 = train_panel.returns().row(t).transpose() / report.return_scale;
        item.step = 1 + static_cast<int>(rs.below(static_cast<std::uint64_t>(D)));
        item.epsilon = rs.normal_vector(N);
        item.conditioning = train_panel.characteristics(t);
        batch.push_back(std::move(item));
      }
      LossGradient lg;
      try {
        lg = loss_and_gradients(params, batch, schedule, dconfig);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at update " + std::to_string(update) + ": " + e.what());
      }
      adam_update(params.flat, lg.grad, adam, tconfig);
      epoch_loss += lg.loss;
      ++batches;
    }
    report.loss_curve.push_back(epoch_loss / batches);
    if (on_epoch) on_epoch(epoch, report.loss_curve.back());
  }
  return report;
}

/// Splits the panel chronologically and trains on the leading months only.
inline TrainReport train(const Panel& panel, const NoiseSchedule& schedule, const DenoiserConfig& dconfig,
                         const TrainConfig& tconfig, const std::function<void(int, double)>& on_epoch = {}) {
  tconfig.validate();
  auto split = split_panel(panel, tconfig.train_fraction);
  auto report = fit(slice_months(panel, split.train), schedule, dconfig, tconfig, on_epoch);
  report.split = std::move(split);
  return report;
}

}  // namespace factordiff
