#pragma once

// Mean / covariance estimation from Monte Carlo draws, PSD repair and
// scaled-identity covariance shrinkage.

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "factordiff/errors.hpp"

namespace factordiff {

struct MomentEstimate {
  Eigen::VectorXd mu;     // N, decimal per month
  Eigen::MatrixXd sigma;  // N x N, decimal^2 per month
};

inline double max_asymmetry(const Eigen::MatrixXd& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

/// Raises every eigenvalue below `floor` to `floor`. Matrices already meeting the
/// floor (to 1e-12) are returned untouched.
inline Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& sigma, double floor) {
  if (sigma.rows() != sigma.cols()) throw ShapeError("psd_repair: matrix is not square");
  if (!(floor >= 0.0)) throw DomainError("psd_repair: floor must be non-negative");
  if (sigma.size() == 0) return sigma;
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (max_asymmetry(sigma) > 1e-10 * scale) throw DomainError("psd_repair: matrix is not symmetric");
  const Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("psd_repair: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() >= floor - 1e-12) return sigma;
  const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd out = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

/// Column means and the (S - 1)-divisor sample covariance, symmetrized and
/// cleared of negative rounding eigenvalues.
inline MomentEstimate estimate_moments(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw DomainError("estimate_moments: need at least two samples");
  MomentEstimate m;
  m.mu = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - m.mu.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
  m.sigma = psd_repair(cov, 0.0);
  return m;
}

/// (1 - delta) * sigma + delta * (trace(sigma) / N) * I.
inline Eigen::MatrixXd shrink_covariance(const Eigen::MatrixXd& sigma, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw DomainError("shrink_covariance: delta must lie in [0, 1]");
  if (sigma.rows() != sigma.cols()) throw ShapeError("shrink_covariance: matrix is not square");
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (max_asymmetry(sigma) > 1e-10 * scale) throw DomainError("shrink_covariance: matrix is not symmetric");
  const auto n = sigma.rows();
  const double target = sigma.trace() / static_cast<double>(n);
  Eigen::MatrixXd out = (1.0 - delta) * sigma;
  out.diagonal().array() += delta * target;
  return out;
}

}  // namespace factordiff
