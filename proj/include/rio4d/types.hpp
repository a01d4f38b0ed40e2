#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rio4d/manifold.hpp"

namespace rio4d {

/// One radar detection in the radar frame.
///
/// `doppler` is the projection of the radar's own velocity onto the unit
/// bearing of the point, i.e. the negated range rate. For a static point
/// doppler = bearing . v_radar, so a scan of static points yields +v_radar.
struct RadarPoint {
  Vec3 position = Vec3::Zero();
  double doppler = 0.0;
  double intensity = 0.0;
};

struct RadarScan {
  double timestamp = 0.0;
  std::vector<RadarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct ImuSample {
  double timestamp = 0.0;
  Vec3 accel = Vec3::Zero();  ///< specific force, m/s^2
  Vec3 gyro = Vec3::Zero();   ///< angular rate, rad/s
};

/// Linear interpolation between two IMU samples at time t.
inline ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t)
{
  const double span = b.timestamp - a.timestamp;
  const double s = span > 0.0 ? (t - a.timestamp) / span : 0.0;
  return {t, a.accel + s * (b.accel - a.accel), a.gyro + s * (b.gyro - a.gyro)};
}

// Error types shared across modules.

class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientPoints : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularCovariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotConverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoOverlap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rio4d
