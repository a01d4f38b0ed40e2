#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rio4d/types.hpp"

namespace rio4d {

struct GncParams {
  double sigma_r = 0.05;     ///< Doppler accuracy, m/s
  double mu_divisor = 1.4;   ///< annealing factor for the control parameter
  int max_iterations = 100;

  void validate() const
  {
    if (!(sigma_r > 0.0) || !(mu_divisor > 1.0) || max_iterations < 1) {
      throw std::invalid_argument("gnc: require sigma_r > 0, mu_divisor > 1, max_iterations >= 1");
    }
  }
};

struct EgoVelocityEstimate {
  Vec3 velocity = Vec3::Zero();      ///< radar velocity in the radar frame
  Mat3 covariance = Mat3::Identity();
  std::vector<bool> inlier_mask;     ///< r_i^2 < cbar^2 at the returned velocity
  std::vector<double> weights;       ///< final GNC weights
  int iterations = 0;                ///< graduation steps performed
};

inline double doppler_prediction(const Vec3& rho, const Vec3& v)
{
  const double range = rho.norm();
  if (!(range > 0.0)) {
    throw std::invalid_argument("doppler_prediction: zero-norm bearing");
  }
  return rho.dot(v) / range;
}

struct VelocityLsqSolution {
  Vec3 velocity = Vec3::Zero();
  Mat3 information = Mat3::Zero();  ///< weighted normal matrix sum w_i d_i d_i^T
};

inline constexpr double kMinNormalEigenvalue = 1e-6;

/// Minimizes sum_i w_i (v_i^d - d_i^T v)^2 with d_i the unit bearing.
inline VelocityLsqSolution weighted_lsq_velocity(std::span<const RadarPoint> points,
                                                 std::span<const double> weights)
{
  if (points.size() != weights.size()) {
    throw std::invalid_argument("weighted_lsq_velocity: size mismatch");
  }
  Mat3 normal = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double range = points[i].position.norm();
    if (!(range > 0.0)) {
      continue;
    }
    const Vec3 d = points[i].position / range;
    normal.noalias() += weights[i] * d * d.transpose();
    rhs += weights[i] * points[i].doppler * d;
  }
  const double min_eig = Eigen::SelfAdjointEigenSolver<Mat3>(normal, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (!(min_eig >= kMinNormalEigenvalue)) {
    throw DegenerateGeometry("ego velocity: bearing directions do not span 3D");
  }
  return {normal.ldlt().solve(rhs), normal};
}

inline double doppler_residual(const RadarPoint& pt, const Vec3& v)
{
  const double range = pt.position.norm();
  if (!(range > 0.0)) {
    return 0.0;
  }
  return pt.doppler - pt.position.dot(v) / range;
}

/// Geman-McClure GNC weight (mu cbar^2 / (r^2 + mu cbar^2))^2.
inline double gnc_weight(double residual, double mu, double cbar_sq)
{
  const double m = mu * cbar_sq;
  const double w = m / (residual * residual + m);
  return w * w;
}

namespace detail {

inline Mat3 floored_covariance(const Mat3& information, double sigma_r)
{
  constexpr double kFloor = 1e-4 * 1e-4;
  const Mat3 cov = sigma_r * sigma_r * information.inverse();
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (cov + cov.transpose()));
  const Vec3 lambda = es.eigenvalues().cwiseMax(kFloor);
  return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Robust single-scan ego-velocity by graduated non-convexity.
///
/// Starts from the unit-weight least-squares fit with mu = 4 r_max^2 / cbar^2,
/// cbar = 2 sigma_r, then alternates reweighting, weighted solve and
/// mu <- mu / divisor until mu < 1. The covariance is sigma_r^2 times the
/// inverse of the last weighted normal matrix.
inline EgoVelocityEstimate estimate_ego_velocity_gnc(const RadarScan& scan, const GncParams& params)
{
  params.validate();
  const auto& pts = scan.points;
  const auto n = pts.size();
  if (n < 3) {
    throw InsufficientPoints("ego velocity: need at least 3 points");
  }

  const double cbar = 2.0 * params.sigma_r;
  const double cbar_sq = cbar * cbar;

  std::vector<double> weights(n, 1.0);
  VelocityLsqSolution sol = weighted_lsq_velocity(pts, weights);

  double r_max_sq = 0.0;
  for (const auto& p : pts) {
    const double r = doppler_residual(p, sol.velocity);
    r_max_sq = std::max(r_max_sq, r * r);
  }

  double mu = 4.0 * r_max_sq / cbar_sq;
  int iterations = 0;
  if (mu > 1.0) {
    while (true) {
      for (std::size_t i = 0; i < n; ++i) {
        weights[i] = gnc_weight(doppler_residual(pts[i], sol.velocity), mu, cbar_sq);
      }
      sol = weighted_lsq_velocity(pts, weights);
      mu /= params.mu_divisor;
      ++iterations;
      if (mu < 1.0 || iterations >= params.max_iterations) {
        break;
      }
    }
  }

  EgoVelocityEstimate est;
  est.velocity = sol.velocity;
  est.covariance = detail::floored_covariance(sol.information, params.sigma_r);
  est.weights = std::move(weights);
  est.iterations = iterations;
  est.inlier_mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = doppler_residual(pts[i], est.velocity);
    est.inlier_mask[i] = r * r < cbar_sq;
  }
  return est;
}

/// Points of `scan` flagged in `mask`.
inline RadarScan select_points(const RadarScan& scan, const std::vector<bool>& mask)
{
  RadarScan out;
  out.timestamp = scan.timestamp;
  for (std::size_t i = 0; i < scan.points.size() && i < mask.size(); ++i) {
    if (mask[i]) {
      out.points.push_back(scan.points[i]);
    }
  }
  return out;
}

}  // namespace rio4d
