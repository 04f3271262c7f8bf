#pragma once

// Long-only mean-variance allocation and the baseline portfolios.
//
// The optimizer maximizes  w'mu - (gamma/2) w'Sigma w  [- c ||w - w_prev||_1]
// over the probability simplex by projected (proximal) gradient ascent with the
// fixed step 1 / (gamma * lambda_max(Sigma) + eps), starting from equal weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "factordiff/errors.hpp"
#include "factordiff/moments.hpp"

namespace factordiff {

/// Long-only, fully invested weights.
struct PortfolioWeights {
  Eigen::VectorXd w;

  Eigen::Index size() const noexcept { return w.size(); }
  double operator[](Eigen::Index i) const { return w[i]; }

  /// Entries >= -1e-10 and summing to 1 within 1e-8.
  bool valid() const {
    return w.size() > 0 && w.allFinite() && w.minCoeff() >= -1e-10 && std::abs(w.sum() - 1.0) <= 1e-8;
  }
};

struct MvoConfig {
  double gamma = 100.0;
  double tol = 1e-9;
  int max_iters = 200000;
  double cost_coeff = 0.0;

  void validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("gamma must be positive");
    if (!(tol > 0.0)) throw DomainError("tol must be positive");
    if (max_iters < 1) throw DomainError("max_iters must be positive");
    if (!(cost_coeff >= 0.0) || !std::isfinite(cost_coeff)) throw DomainError("cost_coeff must be non-negative");
  }
};

struct MvoSolution {
  PortfolioWeights weights;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  /// Smooth problem: KKT residual. With trading costs: norm of the proximal gradient mapping.
  double residual = 0.0;
  std::vector<double> objective_trace;  // filled when requested; entry 0 is the starting point
};

/// Euclidean projection onto {w >= 0, sum w = 1} by sorting and thresholding.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n < 1) throw DomainError("project_simplex: empty vector");
  // Feasible points are their own projection. Thresholding them anyway would
  // shift the zeros by the rounding error of the sum.
  if (v.minCoeff() >= 0.0 && std::abs(v.sum() - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(n))
    return v;
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0).matrix();
}

/// argmin over the simplex of 0.5 ||w - v||^2 + lambda ||w - anchor||_1.
///
/// For a multiplier tau on the budget, each coordinate is the soft-threshold of
/// v_i - tau towards anchor_i, clamped at zero; the total is non-increasing in tau,
/// so tau is bracketed, bisected, and finished with an exact solve on the final
/// linear piece.
inline Eigen::VectorXd prox_simplex_l1(const Eigen::VectorXd& v, const Eigen::VectorXd& anchor, double lambda) {
  if (lambda == 0.0) return project_simplex(v);
  const Eigen::Index n = v.size();
  auto coord = [&](Eigen::Index i, double tau) {
    const double a = v[i] - tau;
    double w;
    if (a > anchor[i] + lambda) {
      w = a - lambda;
    } else if (a < anchor[i] - lambda) {
      w = a + lambda;
    } else {
      w = anchor[i];
    }
    return std::max(0.0, w);
  };
  auto total = [&](double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += coord(i, tau);
    return s;
  };
  double lo = (v - anchor).minCoeff() - lambda - 1.0;  // every coordinate >= anchor + 1
  double hi = v.maxCoeff() + lambda;                    // every coordinate clamps to 0
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (total(mid) >= 1.0 ? lo : hi) = mid;
  }
  double tau = 0.5 * (lo + hi);
  int moving = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = v[i] - tau;
    const bool sloped = a > anchor[i] + lambda || a < anchor[i] - lambda;
    if (sloped && coord(i, tau) > 0.0) ++moving;
  }
  if (moving > 0) {
    const double refined = tau + (total(tau) - 1.0) / moving;
    if (refined >= lo && refined <= hi) tau = refined;
  }
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = coord(i, tau);
  return w;
}

inline double mvo_objective(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, double gamma,
                            const Eigen::VectorXd& w) {
  return w.dot(mu) - 0.5 * gamma * w.dot(sigma * w);
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from a fixed
/// non-symmetric start vector (at most 100 iterations, relative tolerance 1e-10).
inline double power_iteration_lambda_max(const Eigen::MatrixXd& sigma) {
  const Eigen::Index n = sigma.rows();
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd next = sigma * v;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    const double est = v.dot(next);
    v = next / norm;
    if (std::abs(est - lambda) <= 1e-10 * std::abs(est)) {
      lambda = est;
      break;
    }
    lambda = est;
  }
  return lambda;
}

/// Largest violation of the KKT conditions of the smooth problem at w: with
/// g = mu - gamma Sigma w and nu the mean of g over the support {w_i > tol},
/// max( max_support |g_i - nu|, max_off (g_i - nu)_+ ).
inline double kkt_residual(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, double gamma,
                           const Eigen::VectorXd& w, double tol) {
  const Eigen::VectorXd g = mu - gamma * (sigma * w);
  double nu = 0.0;
  int support = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > tol) {
      nu += g[i];
      ++support;
    }
  if (support == 0) return std::numeric_limits<double>::infinity();
  nu /= support;
  double r = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    r = std::max(r, w[i] > tol ? std::abs(g[i] - nu) : std::max(0.0, g[i] - nu));
  return r;
}

namespace detail {

inline void check_mvo_inputs(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  const Eigen::Index n = mu.size();
  if (n < 1) throw DomainError("mvo: empty problem");
  if (sigma.rows() != n || sigma.cols() != n) throw ShapeError("mvo: sigma must be N x N with N = size(mu)");
  if (!mu.allFinite() || !sigma.allFinite()) throw DomainError("mvo: non-finite inputs");
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (max_asymmetry(sigma) > 1e-10 * scale) throw DomainError("mvo: sigma is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale) throw DomainError("mvo: sigma is not positive semidefinite");
}

inline MvoSolution solve(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, const Eigen::VectorXd* previous,
                         const MvoConfig& cfg, bool record_trace) {
  cfg.validate();
  check_mvo_inputs(mu, sigma);
  const Eigen::Index n = mu.size();
  const double cost = previous ? cfg.cost_coeff : 0.0;
  if (previous && (previous->size() != n)) throw ShapeError("mvo: previous weights have the wrong size");
  MvoSolution sol;
  auto objective = [&](const Eigen::VectorXd& w) {
    double f = mvo_objective(mu, sigma, cfg.gamma, w);
    if (cost > 0.0) f -= cost * (w - *previous).lpNorm<1>();
    return f;
  };
  auto finish = [&](Eigen::VectorXd w, bool converged, int iters, double residual) {
    sol.weights.w = std::move(w);
    sol.converged = converged;
    sol.iterations = iters;
    sol.objective = objective(sol.weights.w);
    sol.residual = residual;
    return sol;
  };

  if (n == 1) {
    if (record_trace) sol.objective_trace.push_back(objective(Eigen::VectorXd::Ones(1)));
    return finish(Eigen::VectorXd::Ones(1), true, 0, 0.0);
  }
  const double lambda_max = power_iteration_lambda_max(sigma);
  if (lambda_max <= 0.0 && cost == 0.0) {
    // Linear objective: the optimum is the vertex of the largest expected return.
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (mu[i] > mu[best]) best = i;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    w[best] = 1.0;
    if (record_trace) sol.objective_trace.push_back(objective(w));
    return finish(std::move(w), true, 0, 0.0);
  }

  constexpr double kStepEps = 1e-8;
  double lipschitz = cfg.gamma * std::max(lambda_max, 0.0) + kStepEps;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  double f = objective(w);
  if (record_trace) sol.objective_trace.push_back(f);
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double step = 1.0 / lipschitz;
    const Eigen::VectorXd g = mu - cfg.gamma * (sigma * w);
    const Eigen::VectorXd v = w + step * g;
    Eigen::VectorXd next = cost > 0.0 ? prox_simplex_l1(v, *previous, step * cost) : project_simplex(v);
    const double f_next = objective(next);
    // The power-iteration estimate can fall short of lambda_max; a decrease means the
    // step was too long, so shrink it and retry from the same point.
    if (f_next < f - 1e-14 * std::max(1.0, std::abs(f)) && lipschitz < 1e300) {
      lipschitz *= 2.0;
      continue;
    }
    const double mapping = (next - w).norm() / step;
    w = std::move(next);
    f = f_next;
    if (record_trace) sol.objective_trace.push_back(f);
    residual = cost > 0.0 ? mapping : kkt_residual(mu, sigma, cfg.gamma, w, cfg.tol);
    if (mapping <= cfg.tol && residual <= cfg.tol) return finish(w, true, it, residual);
  }
  return finish(w, false, cfg.max_iters, residual);
}

}  // namespace detail

inline MvoSolution solve_mvo(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, const MvoConfig& config,
                             bool record_trace = false) {
  return detail::solve(mu, sigma, nullptr, config, record_trace);
}

inline MvoSolution solve_mvo_with_costs(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                                        const PortfolioWeights& previous, const MvoConfig& config,
                                        bool record_trace = false) {
  if (!previous.valid()) throw DomainError("solve_mvo_with_costs: previous weights are not on the simplex");
  return detail::solve(mu, sigma, &previous.w, config, record_trace);
}

inline PortfolioWeights equal_weight(int n) {
  if (n < 1) throw DomainError("equal_weight: N must be positive");
  return {Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n))};
}

/// Moments of the trailing window of realized returns (rows are months).
inline MomentEstimate empirical_moments(const Eigen::MatrixXd& history) {
  if (history.rows() < 2) throw DomainError("empirical_moments: window must hold at least two months");
  return estimate_moments(history);
}

}  // namespace factordiff
