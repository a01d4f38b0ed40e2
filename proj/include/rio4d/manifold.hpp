#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

namespace rio4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDeg2Rad = kPi / 180.0;
inline constexpr double kRad2Deg = 180.0 / kPi;

inline Mat3 skew(const Vec3& v)
{
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m)
{
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

/// Rodrigues exponential. Second-order Taylor expansion below 1e-7 rad.
inline Mat3 so3_exp(const Vec3& phi)
{
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-7) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  return Mat3::Identity() + (s / theta) * K + ((1.0 - c) / (theta * theta)) * K * K;
}

/// Principal logarithm, |result| <= pi.
inline Vec3 so3_log(const Mat3& R)
{
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 w = vee(R);  // sin(theta) * axis
  const double s = w.norm();

  if (c > -0.99) {
    const double theta = std::atan2(s, c);
    if (s < 1e-10) {
      return w;  // theta ~ 0, first-order
    }
    return (theta / s) * w;
  }

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part, whose top eigenvector is the rotation axis.
  const Mat3 sym = 0.5 * (R + R.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  Vec3 axis = es.eigenvectors().col(2);
  double signed_s = axis.dot(w);
  if (signed_s < 0.0) {
    axis = -axis;
    signed_s = -signed_s;
  }
  const double theta = std::atan2(signed_s, c);
  return theta * axis;
}

/// A(phi) = I + (1-cos t)/t^2 [phi]x + (t - sin t)/t^3 [phi]x^2, t = |phi|.
///
/// This is the left Jacobian of SO(3); its transpose A(phi)^T is the right
/// Jacobian, i.e. log(exp(phi)^T exp(phi + d)) ~= A(phi)^T d.
/// Taylor fallback below 1e-5 rad.
inline Mat3 jacobian_A(const Vec3& phi)
{
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-5) {
    return Mat3::Identity() + 0.5 * K + (1.0 / 6.0) * K * K;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * K +
         ((theta - std::sin(theta)) / (t2 * theta)) * K * K;
}

inline Mat3 jacobian_A_inv(const Vec3& phi)
{
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-5) {
    return Mat3::Identity() - 0.5 * K + (1.0 / 12.0) * K * K;
  }
  const double t2 = theta * theta;
  const double coeff = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * K + coeff * K * K;
}

inline Mat3 right_jacobian(const Vec3& phi) { return jacobian_A(phi).transpose(); }
inline Mat3 right_jacobian_inv(const Vec3& phi) { return jacobian_A_inv(phi).transpose(); }

/// Re-orthonormalize a nearly orthonormal matrix.
inline Mat3 normalize_rotation(const Mat3& R)
{
  return Eigen::Quaterniond(R).normalized().toRotationMatrix();
}

/// Rigid transform x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static RigidTransform identity() { return {}; }

  static RigidTransform from_quaternion(const Eigen::Quaterniond& q, const Vec3& t)
  {
    return {q.normalized().toRotationMatrix(), t};
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }

  RigidTransform inverse() const
  {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform operator*(const RigidTransform& o) const
  {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }

  Eigen::Matrix4d matrix() const
  {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Right-multiplicative retraction on SE(3) with decoupled rotation and
/// translation: (R, t) (+) [rho, omega] = (R exp(omega), t + R rho).
inline RigidTransform retract(const RigidTransform& T, const Vec6& xi)
{
  return {T.rotation * so3_exp(xi.tail<3>()), T.translation + T.rotation * xi.head<3>()};
}

/// Inverse of retract: T1 = retract(T2, local(T1, T2)).
inline Vec6 local(const RigidTransform& T1, const RigidTransform& T2)
{
  Vec6 xi;
  xi.head<3>() = T2.rotation.transpose() * (T1.translation - T2.translation);
  xi.tail<3>() = so3_log(T2.rotation.transpose() * T1.rotation);
  return xi;
}

inline double rotation_angle(const Mat3& R) { return so3_log(R).norm(); }

// ---------------------------------------------------------------------------
// Estimator state
// ---------------------------------------------------------------------------

inline constexpr int kStateDim = 24;
using ErrorVector = Eigen::Matrix<double, kStateDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;

/// Error-state block offsets: p, v, R, b_a, b_w, R_ext, l_ext, g.
namespace block {
inline constexpr int kPos = 0;
inline constexpr int kVel = 3;
inline constexpr int kRot = 6;
inline constexpr int kBiasAcc = 9;
inline constexpr int kBiasGyro = 12;
inline constexpr int kExtRot = 15;
inline constexpr int kExtPos = 18;
inline constexpr int kGravity = 21;
}  // namespace block

/// Nominal navigation state. The global frame is the IMU frame at start-up.
struct NavState {
  Vec3 p = Vec3::Zero();          ///< IMU position in global frame
  Vec3 v = Vec3::Zero();          ///< IMU velocity in global frame
  Mat3 R = Mat3::Identity();      ///< IMU attitude in global frame
  Vec3 ba = Vec3::Zero();         ///< accelerometer bias
  Vec3 bg = Vec3::Zero();         ///< gyro bias
  Mat3 R_ext = Mat3::Identity();  ///< radar attitude in IMU frame
  Vec3 l_ext = Vec3::Zero();      ///< radar position in IMU frame
  Vec3 g = Vec3(0.0, 0.0, -9.81); ///< gravity in global frame

  RigidTransform imu_pose() const { return {R, p}; }
  RigidTransform extrinsic() const { return {R_ext, l_ext}; }
  RigidTransform radar_pose() const { return imu_pose() * extrinsic(); }
};

inline NavState boxplus(const NavState& x, const ErrorVector& dx)
{
  using namespace block;
  NavState out = x;
  out.p += dx.segment<3>(kPos);
  out.v += dx.segment<3>(kVel);
  out.R = x.R * so3_exp(dx.segment<3>(kRot));
  out.ba += dx.segment<3>(kBiasAcc);
  out.bg += dx.segment<3>(kBiasGyro);
  out.R_ext = x.R_ext * so3_exp(dx.segment<3>(kExtRot));
  out.l_ext += dx.segment<3>(kExtPos);
  out.g += dx.segment<3>(kGravity);
  return out;
}

/// x1 (-) x2, with rotation blocks log(R2^T R1) so that
/// boxminus(boxplus(x, dx), x) == dx.
inline ErrorVector boxminus(const NavState& x1, const NavState& x2)
{
  using namespace block;
  ErrorVector dx;
  dx.segment<3>(kPos) = x1.p - x2.p;
  dx.segment<3>(kVel) = x1.v - x2.v;
  dx.segment<3>(kRot) = so3_log(x2.R.transpose() * x1.R);
  dx.segment<3>(kBiasAcc) = x1.ba - x2.ba;
  dx.segment<3>(kBiasGyro) = x1.bg - x2.bg;
  dx.segment<3>(kExtRot) = so3_log(x2.R_ext.transpose() * x1.R_ext);
  dx.segment<3>(kExtPos) = x1.l_ext - x2.l_ext;
  dx.segment<3>(kGravity) = x1.g - x2.g;
  return dx;
}

}  // namespace rio4d
