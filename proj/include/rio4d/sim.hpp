#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rio4d/dataset.hpp"
#include "rio4d/filter.hpp"
#include "rio4d/trajectory.hpp"

namespace rio4d {

// ---------------------------------------------------------------------------
// World description
// ---------------------------------------------------------------------------

enum class PrimitiveKind { Plane, Cluster, Poles, Clusters, Points };

/// Declarative world element expanded into static points.
struct WorldPrimitive {
  PrimitiveKind kind = PrimitiveKind::Points;
  Vec3 origin = Vec3::Zero();  ///< plane corner / cluster center / region min
  Vec3 edge_u = Vec3::Zero();  ///< plane edge
  Vec3 edge_v = Vec3::Zero();  ///< plane edge
  Vec3 extent = Vec3::Zero();  ///< region size for Poles / Clusters
  int count = 0;               ///< points (Plane, Cluster) or objects (Poles, Clusters)
  int points_per_object = 10;
  double sigma = 0.2;          ///< cluster spread, m
  double height = 3.0;         ///< pole height, m
  std::vector<Vec3> points;    ///< explicit points (Points)
};

struct Mover {
  Vec3 start = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double size = 1.0;
  int points = 20;
};

struct RadarModel {
  double azimuth_fov = 60.0 * kDeg2Rad;    ///< half angle
  double elevation_fov = 20.0 * kDeg2Rad;  ///< half angle
  double min_range = 0.5;
  double max_range = 100.0;
  std::size_t max_points = 600;
  double range_sigma = 0.3;
  double doppler_sigma = 0.05;
  double angle_sigma = 0.0;
  double ghost_fraction = 0.0;
  double ghost_doppler_span = 3.0;  ///< ghosts get uniform Doppler in +-span
};

struct ImuModel {
  NoiseParams noise;                   ///< true sensor densities
  Vec3 accel_bias = Vec3::Zero();      ///< initial accelerometer bias
  Vec3 gyro_bias = Vec3::Zero();       ///< initial gyro bias
  bool noiseless = false;
};

struct Scenario {
  std::string name = "scenario";
  TrajectorySpec trajectory;
  std::vector<WorldPrimitive> world;
  std::vector<Mover> movers;
  double imu_rate = 200.0;
  double radar_rate = 15.0;
  RadarModel radar;
  ImuModel imu;
  RigidTransform extrinsic = RigidTransform({Mat3::Identity(), Vec3(0.3, 0.0, 0.2)});  ///< radar in IMU frame
  double gravity = 9.81;
  bool closed_loop = false;  ///< trajectory ends where it starts
  std::uint64_t seed = 1;
};

enum class PointLabel : std::uint8_t { Static, Mover, Ghost };

struct LabeledScan {
  RadarScan scan;
  std::vector<PointLabel> labels;
};

namespace detail {

/// Independent RNG stream derived from the scenario seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Vec3 gaussian3(std::mt19937_64& rng) { return {gaussian(rng), gaussian(rng), gaussian(rng)}; }

}  // namespace detail

struct WorldPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
};

/// Expands the world primitives into static points (deterministic in seed).
inline std::vector<WorldPoint> build_world(const Scenario& sc)
{
  auto rng = detail::make_rng(sc.seed, 1);
  std::vector<WorldPoint> pts;
  auto add = [&](const Vec3& p) { pts.push_back({p, detail::uniform(rng, 0.1, 1.0)}); };

  for (const auto& prim : sc.world) {
    switch (prim.kind) {
      case PrimitiveKind::Points:
        for (const auto& p : prim.points) {
          add(p);
        }
        break;
      case PrimitiveKind::Plane:
        for (int i = 0; i < prim.count; ++i) {
          add(prim.origin + detail::uniform(rng, 0.0, 1.0) * prim.edge_u + detail::uniform(rng, 0.0, 1.0) * prim.edge_v);
        }
        break;
      case PrimitiveKind::Cluster:
        for (int i = 0; i < prim.count; ++i) {
          add(prim.origin + prim.sigma * detail::gaussian3(rng));
        }
        break;
      case PrimitiveKind::Poles:
        for (int i = 0; i < prim.count; ++i) {
          const Vec3 base = prim.origin + Vec3(detail::uniform(rng, 0.0, 1.0) * prim.extent.x(),
                                               detail::uniform(rng, 0.0, 1.0) * prim.extent.y(),
                                               detail::uniform(rng, 0.0, 1.0) * prim.extent.z());
          for (int j = 0; j < prim.points_per_object; ++j) {
            add(base + Vec3(prim.sigma * detail::gaussian(rng), prim.sigma * detail::gaussian(rng),
                            detail::uniform(rng, 0.0, prim.height)));
          }
        }
        break;
      case PrimitiveKind::Clusters:
        for (int i = 0; i < prim.count; ++i) {
          const Vec3 center = prim.origin + Vec3(detail::uniform(rng, 0.0, 1.0) * prim.extent.x(),
                                                 detail::uniform(rng, 0.0, 1.0) * prim.extent.y(),
                                                 detail::uniform(rng, 0.0, 1.0) * prim.extent.z());
          for (int j = 0; j < prim.points_per_object; ++j) {
            add(center + prim.sigma * detail::gaussian3(rng));
          }
        }
        break;
    }
  }
  return pts;
}

/// Ground-truth kinematics of the IMU frame.
inline KinematicState truth_pose(const Scenario& sc, double t) { return Trajectory(sc.trajectory).evaluate(t); }

/// Radar velocity in the radar frame given IMU kinematics (lever arm included).
inline Vec3 radar_velocity(const KinematicState& k, const RigidTransform& extrinsic)
{
  return extrinsic.rotation.transpose() *
         (k.pose.rotation.transpose() * k.velocity + skew(k.angular_rate) * extrinsic.translation);
}

/// Simulator driving IMU sampling and radar rendering from one scenario.
class Simulator {
 public:
  explicit Simulator(Scenario sc) : sc_(std::move(sc)), traj_(sc_.trajectory), world_(build_world(sc_)) {}

  const Scenario& scenario() const { return sc_; }
  const Trajectory& trajectory() const { return traj_; }
  const std::vector<WorldPoint>& world() const { return world_; }

  /// IMU stream at imu_rate over the trajectory duration:
  /// a_m = R^T (a - g) + b_a + n_a, w_m = w + b_w + n_w.
  std::vector<ImuSample> sample_imu() const
  {
    auto rng = detail::make_rng(sc_.seed, 2);
    const Vec3 g(0.0, 0.0, -sc_.gravity);
    const double dt = 1.0 / sc_.imu_rate;
    const auto n = static_cast<std::size_t>(std::floor(traj_.duration() * sc_.imu_rate + 1e-9)) + 1;
    const auto& nz = sc_.imu.noise;
    Vec3 ba = sc_.imu.accel_bias;
    Vec3 bg = sc_.imu.gyro_bias;
    std::vector<ImuSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const KinematicState k = traj_.evaluate(t);
      ImuSample s;
      s.timestamp = t;
      s.accel = k.pose.rotation.transpose() * (k.acceleration - g) + ba;
      s.gyro = k.angular_rate + bg;
      if (!sc_.imu.noiseless) {
        s.accel += nz.accel_noise / std::sqrt(dt) * detail::gaussian3(rng);
        s.gyro += nz.gyro_noise / std::sqrt(dt) * detail::gaussian3(rng);
        ba += nz.accel_bias_walk * std::sqrt(dt) * detail::gaussian3(rng);
        bg += nz.gyro_bias_walk * std::sqrt(dt) * detail::gaussian3(rng);
      }
      out.push_back(s);
    }
    return out;
  }

  std::vector<double> radar_times() const
  {
    std::vector<double> times;
    const double dt = 1.0 / sc_.radar_rate;
    const auto n = static_cast<std::size_t>(std::floor(traj_.duration() * sc_.radar_rate + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) {
      times.push_back(static_cast<double>(i) * dt);
    }
    return times;
  }

  /// Renders the scan at time t. `index` selects the noise stream so scans
  /// can be rendered independently and in any order.
  LabeledScan render_scan(double t, std::uint64_t index) const
  {
    auto rng = detail::make_rng(sc_.seed, 1000 + index);
    const RadarModel& rm = sc_.radar;
    const KinematicState k = traj_.evaluate(t);
    const RigidTransform T_gr = k.pose * sc_.extrinsic;
    const RigidTransform T_rg = T_gr.inverse();
    const Vec3 v_radar = radar_velocity(k, sc_.extrinsic);

    struct Candidate {
      Vec3 p;
      double doppler;
      double intensity;
      PointLabel label;
    };
    std::vector<Candidate> cand;

    auto visible = [&](const Vec3& p) {
      const double r = p.norm();
      if (r < rm.min_range || r > rm.max_range) {
        return false;
      }
      const double az = std::atan2(p.y(), p.x());
      const double el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
      return std::abs(az) <= rm.azimuth_fov && std::abs(el) <= rm.elevation_fov;
    };

    for (const auto& wp : world_) {
      const Vec3 p = T_rg * wp.position;
      if (visible(p)) {
        cand.push_back({p, p.normalized().dot(v_radar), wp.intensity, PointLabel::Static});
      }
    }

    auto mover_rng = detail::make_rng(sc_.seed, 3);
    for (const auto& m : sc_.movers) {
      const Vec3 v_rel = v_radar - T_rg.rotation * m.velocity;
      for (int j = 0; j < m.points; ++j) {
        const Vec3 offset = Vec3(detail::uniform(mover_rng, -0.5, 0.5), detail::uniform(mover_rng, -0.5, 0.5),
                                 detail::uniform(mover_rng, 0.0, 1.0)) *
                            m.size;
        const Vec3 p = T_rg * (m.start + m.velocity * t + offset);
        if (visible(p)) {
          cand.push_back({p, p.normalized().dot(v_rel), 0.8, PointLabel::Mover});
        }
      }
    }

    if (cand.size() > rm.max_points) {
      // Partial Fisher-Yates: uniform random subset.
      for (std::size_t i = 0; i < rm.max_points; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cand.size() - 1);
        std::swap(cand[i], cand[pick(rng)]);
      }
      cand.resize(rm.max_points);
    }

    LabeledScan out;
    out.scan.timestamp = t;
    out.scan.points.reserve(cand.size());
    out.labels.reserve(cand.size());
    for (auto& c : cand) {
      if (rm.ghost_fraction > 0.0 && detail::uniform(rng, 0.0, 1.0) < rm.ghost_fraction) {
        c.p *= detail::uniform(rng, 1.3, 2.0);
        c.doppler = detail::uniform(rng, -rm.ghost_doppler_span, rm.ghost_doppler_span);
        c.intensity *= 0.3;
        c.label = PointLabel::Ghost;
      }
      Vec3 p = c.p;
      double doppler = c.doppler;
      if (rm.range_sigma > 0.0 || rm.angle_sigma > 0.0) {
        double r = p.norm();
        double az = std::atan2(p.y(), p.x());
        double el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
        r += rm.range_sigma * detail::gaussian(rng);
        az += rm.angle_sigma * detail::gaussian(rng);
        el += rm.angle_sigma * detail::gaussian(rng);
        r = std::max(r, 0.05);
        p = r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      }
      if (rm.doppler_sigma > 0.0) {
        doppler += rm.doppler_sigma * detail::gaussian(rng);
      }
      out.scan.points.push_back({p, doppler, c.intensity});
      out.labels.push_back(c.label);
    }
    return out;
  }

  /// Complete dataset: IMU stream, radar scans, ground truth at radar times.
  /// Scans are rounded to the float32 storage precision.
  Dataset generate() const
  {
    Dataset ds;
    ds.name = sc_.name;
    ds.imu = sample_imu();
    ds.extrinsic = sc_.extrinsic;
    ds.closed_loop = sc_.closed_loop;
    const auto times = radar_times();
    for (std::size_t i = 0; i < times.size(); ++i) {
      ds.scans.push_back(io::quantize(render_scan(times[i], i).scan));
      ds.groundtruth.poses.push_back({times[i], traj_.evaluate(times[i]).pose});
    }
    return ds;
  }

 private:
  Scenario sc_;
  Trajectory traj_;
  std::vector<WorldPoint> world_;
};

}  // namespace rio4d
