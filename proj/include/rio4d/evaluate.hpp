#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Geometry>

#include "rio4d/dataset.hpp"

namespace rio4d {

struct TrajectoryMetrics {
  double ape_translation_rmse = 0.0;  ///< m, after SE(3) alignment
  double ape_rotation_rmse = 0.0;     ///< deg
  double rpe_translation = 0.0;       ///< percent of segment length
  double rpe_rotation = 0.0;          ///< deg per m
  double closure_horizontal = 0.0;    ///< m
  double closure_vertical = 0.0;      ///< m, absolute
  bool closure_valid = false;         ///< reference starts and ends at the same pose
  std::size_t matched = 0;            ///< associated pose pairs
  std::size_t rpe_segments = 0;
};

struct EvaluateConfig {
  double max_time_difference = 0.05;  ///< s
  double rpe_segment_length = 1.0;    ///< m
  double closure_tolerance = 0.05;    ///< m, reference start/end gap that counts as closed
};

struct PosePair {
  RigidTransform est;
  RigidTransform ref;
};

/// Associates each estimate pose with the nearest reference timestamp.
inline std::vector<PosePair> associate(const TrajectoryEstimate& est, const TrajectoryEstimate& ref, double max_dt)
{
  std::vector<PosePair> out;
  if (ref.empty()) {
    return out;
  }
  for (const auto& e : est.poses) {
    const auto it = std::lower_bound(ref.poses.begin(), ref.poses.end(), e.timestamp,
                                     [](const TimedPose& p, double t) { return p.timestamp < t; });
    const TimedPose* best = nullptr;
    double best_dt = max_dt;
    for (auto c = (it == ref.poses.begin() ? it : std::prev(it)); c != ref.poses.end() && c <= it; ++c) {
      const double dt = std::abs(c->timestamp - e.timestamp);
      if (dt <= best_dt) {
        best_dt = dt;
        best = &*c;
      }
    }
    if (best != nullptr) {
      out.push_back({e.pose, best->pose});
    }
  }
  return out;
}

/// Rigid alignment (no scale) mapping estimate positions onto reference positions.
inline RigidTransform align_se3(const std::vector<PosePair>& pairs)
{
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = pairs[static_cast<std::size_t>(i)].est.translation;
    dst.col(i) = pairs[static_cast<std::size_t>(i)].ref.translation;
  }
  const Vec3 mu_s = src.rowwise().mean();
  const Vec3 mu_d = dst.rowwise().mean();
  const Eigen::Matrix3Xd cs = src.colwise() - mu_s;
  // Spread too small to fix a rotation: translate only.
  if (n < 3 || cs.squaredNorm() < 1e-12) {
    return {Mat3::Identity(), mu_d - mu_s};
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  return {T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>()};
}

/// APE after alignment, RPE over fixed-length segments of the reference,
/// and closure error of the estimate relative to the reference closure.
inline TrajectoryMetrics evaluate(const TrajectoryEstimate& est, const TrajectoryEstimate& ref,
                                  const EvaluateConfig& cfg = {})
{
  const auto pairs = associate(est, ref, cfg.max_time_difference);
  if (pairs.empty()) {
    throw NoOverlap("evaluate: no estimate pose within " + std::to_string(cfg.max_time_difference) +
                    " s of a reference pose");
  }
  TrajectoryMetrics m;
  m.matched = pairs.size();

  const RigidTransform align = align_se3(pairs);
  double se_t = 0.0;
  double se_r = 0.0;
  for (const auto& p : pairs) {
    const RigidTransform a = align * p.est;
    se_t += (a.translation - p.ref.translation).squaredNorm();
    const double ang = rotation_angle(p.ref.rotation.transpose() * a.rotation) * kRad2Deg;
    se_r += ang * ang;
  }
  m.ape_translation_rmse = std::sqrt(se_t / static_cast<double>(pairs.size()));
  m.ape_rotation_rmse = std::sqrt(se_r / static_cast<double>(pairs.size()));

  // RPE: from each pose, the first later pose at least one segment length
  // further along the reference path.
  std::vector<double> dist(pairs.size(), 0.0);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    dist[i] = dist[i - 1] + (pairs[i].ref.translation - pairs[i - 1].ref.translation).norm();
  }
  double rpe_t = 0.0;
  double rpe_r = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    j = std::max(j, i + 1);
    while (j < pairs.size() && dist[j] - dist[i] < cfg.rpe_segment_length) {
      ++j;
    }
    if (j >= pairs.size()) {
      break;
    }
    const double len = dist[j] - dist[i];
    const RigidTransform d_ref = pairs[i].ref.inverse() * pairs[j].ref;
    const RigidTransform d_est = pairs[i].est.inverse() * pairs[j].est;
    const RigidTransform err = d_ref.inverse() * d_est;
    const double et = err.translation.norm() / len * 100.0;
    const double er = rotation_angle(err.rotation) * kRad2Deg / len;
    rpe_t += et * et;
    rpe_r += er * er;
    ++m.rpe_segments;
  }
  if (m.rpe_segments > 0) {
    m.rpe_translation = std::sqrt(rpe_t / static_cast<double>(m.rpe_segments));
    m.rpe_rotation = std::sqrt(rpe_r / static_cast<double>(m.rpe_segments));
  }

  // Closure: estimate displacement first -> last minus the reference
  // displacement expressed in the estimate frame via the first poses.
  const PosePair& first = pairs.front();
  const PosePair& last = pairs.back();
  const Mat3 ref_to_est = first.est.rotation * first.ref.rotation.transpose();
  const Vec3 d_ref = last.ref.translation - first.ref.translation;
  const Vec3 c = (last.est.translation - first.est.translation) - ref_to_est * d_ref;
  m.closure_horizontal = std::hypot(c.x(), c.y());
  m.closure_vertical = std::abs(c.z());
  m.closure_valid = d_ref.norm() < cfg.closure_tolerance;
  return m;
}

}  // namespace rio4d
