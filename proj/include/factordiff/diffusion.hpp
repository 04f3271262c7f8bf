#pragma once

// DDPM noise schedule, forward noising and ancestral reverse sampling.
//
// Steps are 1-based: step d in [1, D] uses beta_d, alpha_d = 1 - beta_d and
// alpha_bar_d = prod_{j <= d} alpha_j. The reverse transition uses the
// variance choice sigma_d^2 = beta_d and injects no noise at d = 1.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "factordiff/errors.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  explicit NoiseSchedule(Eigen::VectorXd betas) : betas_(std::move(betas)) {
    const Eigen::Index D = betas_.size();
    if (D < 1) throw DomainError("noise schedule needs at least one step");
    for (Eigen::Index d = 0; d < D; ++d) {
      if (!(betas_[d] > 0.0 && betas_[d] < 1.0)) throw DomainError("every beta must lie in (0, 1)");
      if (d > 0 && betas_[d] < betas_[d - 1]) throw DomainError("betas must be non-decreasing");
    }
    alphas_ = 1.0 - betas_.array();
    alpha_bars_.resize(D);
    double running = 1.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      running *= alphas_[d];
      alpha_bars_[d] = running;
    }
  }

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int step) const { return betas_[index(step)]; }
  double alpha(int step) const { return alphas_[index(step)]; }
  double alpha_bar(int step) const { return alpha_bars_[index(step)]; }

  const Eigen::VectorXd& betas() const noexcept { return betas_; }
  const Eigen::VectorXd& alphas() const noexcept { return alphas_; }
  const Eigen::VectorXd& alpha_bars() const noexcept { return alpha_bars_; }

  void check_step(int step) const {
    if (step < 1 || step > steps())
      throw DomainError("diffusion step " + std::to_string(step) + " outside [1, " + std::to_string(steps()) + "]");
  }

 private:
  Eigen::Index index(int step) const {
    check_step(step);
    return step - 1;
  }

  Eigen::VectorXd betas_;
  Eigen::VectorXd alphas_;
  Eigen::VectorXd alpha_bars_;
};

/// Betas spaced linearly from beta_start to beta_end inclusive.
inline NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw DomainError("steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw DomainError("need 0 < beta_start <= beta_end < 1");
  Eigen::VectorXd betas(steps);
  for (int d = 0; d < steps; ++d) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(d) / static_cast<double>(steps - 1);
    betas[d] = beta_start + frac * (beta_end - beta_start);
  }
  if (steps > 1) betas[steps - 1] = beta_end;
  return NoiseSchedule(std::move(betas));
}

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * epsilon. Works row-wise on batches.
template <class Derived, class DerivedEps>
Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime> q_sample(
    const Eigen::MatrixBase<Derived>& x0, int step, const NoiseSchedule& schedule,
    const Eigen::MatrixBase<DerivedEps>& epsilon) {
  if (x0.rows() != epsilon.rows() || x0.cols() != epsilon.cols()) throw ShapeError("q_sample: x0 and epsilon differ in shape");
  const double ab = schedule.alpha_bar(step);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * epsilon;
}

/// One ancestral step x_d -> x_{d-1}:
/// (x_d - beta_d / sqrt(1 - alpha_bar_d) * eps_hat) / sqrt(alpha_d) + sqrt(beta_d) * z.
/// At d = 1 the caller must pass z = 0.
template <class DX, class DE, class DZ>
Eigen::Matrix<double, DX::RowsAtCompileTime, DX::ColsAtCompileTime> reverse_step(
    const Eigen::MatrixBase<DX>& x_d, int step, const Eigen::MatrixBase<DE>& predicted_epsilon,
    const NoiseSchedule& schedule, const Eigen::MatrixBase<DZ>& z) {
  schedule.check_step(step);
  if (x_d.rows() != predicted_epsilon.rows() || x_d.cols() != predicted_epsilon.cols() || x_d.rows() != z.rows() ||
      x_d.cols() != z.cols())
    throw ShapeError("reverse_step: argument shapes differ");
  const double beta = schedule.beta(step);
  const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(step));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(step));
  if (step == 1) {
    if (!(z.array() == 0.0).all()) throw ContractViolation("reverse_step: z must be zero at step 1");
    return inv_sqrt_alpha * (x_d - coef * predicted_epsilon);
  }
  return inv_sqrt_alpha * (x_d - coef * predicted_epsilon) + std::sqrt(beta) * z;
}

/// A batched conditional noise predictor: (S x N noisy returns, step, N x k characteristics) -> S x N.
template <class F>
concept NoisePredictor = requires(F& f, const Eigen::MatrixXd& x, int step, const Eigen::MatrixXd& c) {
  { f(x, step, c) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Gaussian used for draw `draw` at reverse step `step` (step 0 is the initial x_D).
inline Eigen::RowVectorXd sampling_noise(std::uint64_t seed, int draw, int step, Eigen::Index n) {
  RandomStream rs(seed, StreamTag::sampling, {static_cast<std::uint64_t>(draw), static_cast<std::uint64_t>(step)});
  return rs.normal_vector(n).transpose();
}

/// Ancestral sampling of `draws` independent rows from the learned conditional law.
/// Row s starts from its own Gaussian and only ever uses the streams (seed, s, .),
/// so the result does not depend on how rows are batched or ordered.
template <NoisePredictor Predictor>
Eigen::MatrixXd sample(Predictor&& predict, const Eigen::MatrixXd& conditioning, const NoiseSchedule& schedule,
                       int draws, std::uint64_t seed) {
  if (draws < 1) throw DomainError("sample: draws must be positive");
  const Eigen::Index n = conditioning.rows();
  const int D = schedule.steps();
  Eigen::MatrixXd x(draws, n);
  for (int s = 0; s < draws; ++s) x.row(s) = sampling_noise(seed, s, 0, n);
  Eigen::MatrixXd z(draws, n);
  for (int d = D; d >= 1; --d) {
    Eigen::MatrixXd eps = predict(x, d, conditioning);
    if (eps.rows() != draws || eps.cols() != n) throw ShapeError("sample: predictor returned the wrong shape");
    if (!eps.allFinite()) throw NumericError("sample: denoiser returned non-finite values at step " + std::to_string(d));
    if (d > 1) {
      for (int s = 0; s < draws; ++s) z.row(s) = sampling_noise(seed, s, d, n);
    } else {
      z.setZero();
    }
    x = reverse_step(x, d, eps, schedule, z);
  }
  return x;
}

}  // namespace factordiff
