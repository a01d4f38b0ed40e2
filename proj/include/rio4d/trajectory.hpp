#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rio4d/manifold.hpp"

namespace rio4d {

/// Kinematic truth at one instant. Velocity and acceleration are in the
/// world frame; angular rate is in the body frame.
struct KinematicState {
  RigidTransform pose;
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Vec3 angular_rate = Vec3::Zero();
};

enum class PathKind { Static, ConstantTwist, Circle, FigureEight, Loop, BSpline };

/// Geometric path parameterized by nominal time s, traversed with a smooth
/// start/stop time warp so the platform is at rest at both ends.
struct TrajectorySpec {
  PathKind kind = PathKind::Static;
  Vec3 origin = Vec3::Zero();    ///< start position (Static, ConstantTwist) or path center
  double yaw = 0.0;              ///< initial yaw (Static, ConstantTwist), rad
  Vec3 body_velocity = Vec3::Zero();  ///< ConstantTwist, m/s
  Vec3 body_rate = Vec3::Zero();      ///< ConstantTwist, rad/s
  double radius = 10.0;          ///< Circle
  double size_x = 20.0;          ///< FigureEight / Loop half extent along x
  double size_y = 10.0;          ///< FigureEight / Loop extent along y
  double height = 0.0;           ///< Loop: peak height gain
  double angular_rate = 0.1;     ///< rad/s of the periodic parameter
  double cycles = 1.0;           ///< periods traversed (periodic paths)
  double motion_duration = 10.0; ///< Static / ConstantTwist / BSpline nominal length, s
  std::vector<Vec3> control_points;  ///< BSpline, uniform knots over motion_duration
  double hold_start = 1.0;       ///< s at rest before motion
  double ramp = 2.0;             ///< s to accelerate to nominal rate (0 = step)
  double hold_end = 1.0;         ///< s at rest after motion
};

namespace detail {

struct PathPoint {
  Vec3 f = Vec3::Zero();
  Vec3 df = Vec3::Zero();
  Vec3 ddf = Vec3::Zero();
};

inline double smoothstep5(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
inline double smoothstep5_dot(double u) { return 30.0 * u * u * (1.0 - u) * (1.0 - u); }
inline double smoothstep5_int(double u) { return u * u * u * u * (2.5 + u * (-3.0 + u)); }

struct TimeWarp {
  double s = 0.0;
  double s_dot = 0.0;
  double s_ddot = 0.0;
};

}  // namespace detail

class Trajectory {
 public:
  explicit Trajectory(TrajectorySpec spec) : spec_(std::move(spec))
  {
    if (spec_.ramp < 0.0 || spec_.hold_start < 0.0 || spec_.hold_end < 0.0) {
      throw std::invalid_argument("trajectory: negative timing");
    }
    if (spec_.kind == PathKind::BSpline && spec_.control_points.size() < 4) {
      throw std::invalid_argument("trajectory: bspline needs at least 4 control points");
    }
    s_total_ = path_length_parameter();
    if (spec_.kind != PathKind::Static && s_total_ < spec_.ramp) {
      throw std::invalid_argument("trajectory: motion shorter than ramp");
    }
  }

  const TrajectorySpec& spec() const { return spec_; }

  double duration() const
  {
    if (spec_.kind == PathKind::Static) {
      return spec_.hold_start + spec_.motion_duration + spec_.hold_end;
    }
    return spec_.hold_start + s_total_ + spec_.ramp + spec_.hold_end;
  }

  /// Start of motion (end of the initial rest period).
  double motion_start() const { return spec_.hold_start; }

  KinematicState evaluate(double t) const
  {
    if (t < -1e-9 || t > duration() + 1e-9) {
      throw std::out_of_range("trajectory: time outside [0, duration]");
    }
    const detail::TimeWarp w = warp(t);
    if (spec_.kind == PathKind::Static) {
      KinematicState k;
      k.pose = {yaw_rotation(spec_.yaw), spec_.origin};
      return k;
    }
    if (spec_.kind == PathKind::ConstantTwist) {
      return evaluate_twist(w);
    }
    const detail::PathPoint pp = path(w.s);
    KinematicState k;
    const double h2 = pp.df.x() * pp.df.x() + pp.df.y() * pp.df.y();
    const double yaw = std::atan2(pp.df.y(), pp.df.x());
    const double dyaw_ds = h2 > 1e-12 ? (pp.df.x() * pp.ddf.y() - pp.df.y() * pp.ddf.x()) / h2 : 0.0;
    k.pose = {yaw_rotation(yaw), pp.f};
    k.velocity = pp.df * w.s_dot;
    k.acceleration = pp.ddf * w.s_dot * w.s_dot + pp.df * w.s_ddot;
    k.angular_rate = Vec3(0.0, 0.0, dyaw_ds * w.s_dot);
    return k;
  }

  /// Arc length of the traversed path, numerically integrated.
  double path_length(double step = 0.01) const
  {
    double len = 0.0;
    const double T = duration();
    for (double t = 0.0; t < T; t += step) {
      len += evaluate(std::min(t, T)).velocity.norm() * std::min(step, T - t);
    }
    return len;
  }

 private:
  static Mat3 yaw_rotation(double yaw) { return so3_exp(Vec3(0.0, 0.0, yaw)); }

  double path_length_parameter() const
  {
    switch (spec_.kind) {
      case PathKind::Static:
        return 0.0;
      case PathKind::ConstantTwist:
      case PathKind::BSpline:
        return spec_.motion_duration;
      case PathKind::Circle:
      case PathKind::FigureEight:
      case PathKind::Loop:
        return spec_.cycles * 2.0 * kPi / spec_.angular_rate;
    }
    return 0.0;
  }

  detail::TimeWarp warp(double t) const
  {
    detail::TimeWarp w;
    const double tau = spec_.ramp;
    const double t0 = spec_.hold_start;
    const double t_stop = t0 + s_total_ + tau;  // end of motion
    if (t <= t0) {
      return w;
    }
    if (t >= t_stop) {
      w.s = s_total_;
      return w;
    }
    if (tau <= 0.0) {
      w.s = t - t0;
      w.s_dot = 1.0;
      return w;
    }
    if (t < t0 + tau) {
      const double u = (t - t0) / tau;
      w.s = tau * detail::smoothstep5_int(u);
      w.s_dot = detail::smoothstep5(u);
      w.s_ddot = detail::smoothstep5_dot(u) / tau;
    } else if (t > t_stop - tau) {
      const double u = (t_stop - t) / tau;
      w.s = s_total_ - tau * detail::smoothstep5_int(u);
      w.s_dot = detail::smoothstep5(u);
      w.s_ddot = -detail::smoothstep5_dot(u) / tau;
    } else {
      w.s = tau * 0.5 + (t - t0 - tau);
      w.s_dot = 1.0;
    }
    return w;
  }

  KinematicState evaluate_twist(const detail::TimeWarp& w) const
  {
    const Mat3 R0 = yaw_rotation(spec_.yaw);
    const Vec3 phi = spec_.body_rate * w.s;
    const Mat3 R = R0 * so3_exp(phi);
    KinematicState k;
    // p(s) = p0 + R0 * integral_0^s exp(sigma w) d sigma * v = p0 + s R0 A(s w) v.
    k.pose = {R, spec_.origin + w.s * (R0 * (jacobian_A(phi) * spec_.body_velocity))};
    const Vec3 df = R * spec_.body_velocity;
    const Vec3 ddf = R * skew(spec_.body_rate) * spec_.body_velocity;
    k.velocity = df * w.s_dot;
    k.acceleration = ddf * w.s_dot * w.s_dot + df * w.s_ddot;
    k.angular_rate = spec_.body_rate * w.s_dot;
    return k;
  }

  detail::PathPoint path(double s) const
  {
    detail::PathPoint p;
    const double w = spec_.angular_rate;
    const Vec3& c = spec_.origin;
    switch (spec_.kind) {
      case PathKind::Circle: {
        // Starts at c + (0, -r, 0) heading +x, counter-clockwise.
        const double a = w * s - kPi / 2.0;
        const double r = spec_.radius;
        p.f = c + Vec3(r * std::cos(a), r * std::sin(a), 0.0);
        p.df = Vec3(-r * w * std::sin(a), r * w * std::cos(a), 0.0);
        p.ddf = Vec3(-r * w * w * std::cos(a), -r * w * w * std::sin(a), 0.0);
        break;
      }
      case PathKind::FigureEight: {
        const double a = spec_.size_x;
        const double b = spec_.size_y;
        const double th = w * s;
        p.f = c + Vec3(a * std::sin(th), 0.5 * b * std::sin(2.0 * th), 0.0);
        p.df = Vec3(a * w * std::cos(th), b * w * std::cos(2.0 * th), 0.0);
        p.ddf = Vec3(-a * w * w * std::sin(th), -2.0 * b * w * w * std::sin(2.0 * th), 0.0);
        break;
      }
      case PathKind::Loop: {
        // Closed oval through c with a smooth hill of height h.
        const double a = spec_.size_x;
        const double b = spec_.size_y;
        const double h = spec_.height;
        const double th = w * s;
        p.f = c + Vec3(a * std::sin(th), b * (1.0 - std::cos(th)), 0.5 * h * (1.0 - std::cos(2.0 * th)));
        p.df = Vec3(a * w * std::cos(th), b * w * std::sin(th), h * w * std::sin(2.0 * th));
        p.ddf = Vec3(-a * w * w * std::sin(th), b * w * w * std::cos(th), 2.0 * h * w * w * std::cos(2.0 * th));
        break;
      }
      case PathKind::BSpline:
        p = bspline(s);
        break;
      default:
        break;
    }
    return p;
  }

  /// Uniform cubic B-spline (C2) over the control points.
  detail::PathPoint bspline(double s) const
  {
    const auto& cp = spec_.control_points;
    const int segments = static_cast<int>(cp.size()) - 3;
    const double dt = spec_.motion_duration / segments;
    double u = s / dt;
    int i = std::clamp(static_cast<int>(std::floor(u)), 0, segments - 1);
    u -= i;
    const double u2 = u * u;
    const double u3 = u2 * u;
    const double b0 = (1 - u) * (1 - u) * (1 - u) / 6.0;
    const double b1 = (3 * u3 - 6 * u2 + 4) / 6.0;
    const double b2 = (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0;
    const double b3 = u3 / 6.0;
    const double d0 = -0.5 * (1 - u) * (1 - u);
    const double d1 = 1.5 * u2 - 2 * u;
    const double d2 = -1.5 * u2 + u + 0.5;
    const double d3 = 0.5 * u2;
    const double e0 = 1 - u;
    const double e1 = 3 * u - 2;
    const double e2 = -3 * u + 1;
    const double e3 = u;
    detail::PathPoint p;
    p.f = b0 * cp[i] + b1 * cp[i + 1] + b2 * cp[i + 2] + b3 * cp[i + 3];
    p.df = (d0 * cp[i] + d1 * cp[i + 1] + d2 * cp[i + 2] + d3 * cp[i + 3]) / dt;
    p.ddf = (e0 * cp[i] + e1 * cp[i + 1] + e2 * cp[i + 2] + e3 * cp[i + 3]) / (dt * dt);
    return p;
  }

  TrajectorySpec spec_;
  double s_total_ = 0.0;
};

}  // namespace rio4d
