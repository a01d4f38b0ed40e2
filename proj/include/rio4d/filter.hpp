#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rio4d/egovel.hpp"
#include "rio4d/kdtree.hpp"
#include "rio4d/manifold.hpp"
#include "rio4d/submap.hpp"
#include "rio4d/types.hpp"

namespace rio4d {

using ErrorCovariance = StateMatrix;
using MeasurementJacobian = Eigen::Matrix<double, 3, kStateDim>;

/// Continuous-time IMU noise densities.
struct NoiseParams {
  double accel_noise = 2e-3;       ///< m/s^2/sqrt(Hz)
  double gyro_noise = 2e-4;        ///< rad/s/sqrt(Hz)
  double accel_bias_walk = 1e-4;   ///< m/s^3/sqrt(Hz)
  double gyro_bias_walk = 1e-5;    ///< rad/s^2/sqrt(Hz)

  void validate() const
  {
    if (!(accel_noise > 0.0) || !(gyro_noise > 0.0) || !(accel_bias_walk > 0.0) || !(gyro_bias_walk > 0.0)) {
      throw std::invalid_argument("noise densities must be positive");
    }
  }
};

/// Chi-square 0.95 quantile with 3 degrees of freedom.
inline constexpr double kChi2Dof3P95 = 7.814727903251178;

struct FilterConfig {
  NoiseParams noise;
  double velocity_gate = kChi2Dof3P95;
  int max_iterations = 5;         ///< iterated scan update limit
  double tolerance = 1e-4;        ///< |dp| + |dtheta| convergence threshold
  int num_neighbors = 5;          ///< map neighbors per scan point
  double max_match_distance = 2.0;
  double range_sigma = 0.3;       ///< fallback scan-point spread, m
  double covariance_floor = 1e-6; ///< eigenvalue floor of the match covariance, m^2
  double point_noise = 256.0;     ///< variance of a whitened point residual (inflates for correlated points)
};

inline void symmetrize(StateMatrix& P) { P = 0.5 * (P + P.transpose()).eval(); }

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Nominal-state propagation over one IMU interval. The position step carries
/// the second-order acceleration term so constant inputs integrate exactly.
inline NavState propagate_state(const NavState& x, const ImuSample& u, double dt)
{
  const Vec3 acc = x.R * (u.accel - x.ba) + x.g;
  NavState out = x;
  out.p = x.p + x.v * dt + 0.5 * acc * dt * dt;
  out.v = x.v + acc * dt;
  out.R = x.R * so3_exp((u.gyro - x.bg) * dt);
  return out;
}

/// Error-state transition matrix of propagate_state.
inline StateMatrix propagation_jacobian(const NavState& x, const ImuSample& u, double dt)
{
  using namespace block;
  const Vec3 a = u.accel - x.ba;
  const Vec3 w_dt = (u.gyro - x.bg) * dt;
  const Mat3 Ra_x = x.R * skew(a);
  const double half_dt2 = 0.5 * dt * dt;

  StateMatrix F = StateMatrix::Identity();
  F.block<3, 3>(kPos, kVel) = Mat3::Identity() * dt;
  F.block<3, 3>(kPos, kRot) = -Ra_x * half_dt2;
  F.block<3, 3>(kPos, kBiasAcc) = -x.R * half_dt2;
  F.block<3, 3>(kPos, kGravity) = Mat3::Identity() * half_dt2;
  F.block<3, 3>(kVel, kRot) = -Ra_x * dt;
  F.block<3, 3>(kVel, kBiasAcc) = -x.R * dt;
  F.block<3, 3>(kVel, kGravity) = Mat3::Identity() * dt;
  F.block<3, 3>(kRot, kRot) = so3_exp(-w_dt);
  F.block<3, 3>(kRot, kBiasGyro) = -jacobian_A(w_dt).transpose() * dt;
  return F;
}

/// Discrete process noise F_w Q F_w^T for one IMU interval.
inline StateMatrix process_noise(const NavState& x, const ImuSample& u, double dt, const NoiseParams& noise)
{
  using namespace block;
  Eigen::Matrix<double, kStateDim, 12> Fw = Eigen::Matrix<double, kStateDim, 12>::Zero();
  Fw.block<3, 3>(kPos, 0) = -x.R * (0.5 * dt * dt);
  Fw.block<3, 3>(kVel, 0) = -x.R * dt;
  Fw.block<3, 3>(kRot, 3) = -jacobian_A((u.gyro - x.bg) * dt).transpose() * dt;
  Fw.block<3, 3>(kBiasAcc, 6) = Mat3::Identity() * dt;
  Fw.block<3, 3>(kBiasGyro, 9) = Mat3::Identity() * dt;

  Eigen::Matrix<double, 12, 1> q;
  q << Vec3::Constant(noise.accel_noise * noise.accel_noise / dt),
      Vec3::Constant(noise.gyro_noise * noise.gyro_noise / dt),
      Vec3::Constant(noise.accel_bias_walk * noise.accel_bias_walk / dt),
      Vec3::Constant(noise.gyro_bias_walk * noise.gyro_bias_walk / dt);
  return Fw * q.asDiagonal() * Fw.transpose();
}

struct FilterEstimate {
  NavState state;
  ErrorCovariance cov = ErrorCovariance::Zero();
};

inline FilterEstimate propagate(const NavState& x, const ErrorCovariance& P, const ImuSample& u, double dt,
                                const NoiseParams& noise)
{
  if (!(dt > 0.0 && dt < 0.1)) {
    throw std::invalid_argument("propagate: dt must lie in (0, 0.1) s");
  }
  const StateMatrix F = propagation_jacobian(x, u, dt);
  FilterEstimate out;
  out.state = propagate_state(x, u, dt);
  out.cov = F * P * F.transpose() + process_noise(x, u, dt, noise);
  symmetrize(out.cov);
  return out;
}

/// Constant-velocity prediction used when inertial data are disabled:
/// position advances by v dt, attitude is held.
inline FilterEstimate propagate_constant_velocity(const NavState& x, const ErrorCovariance& P, double dt,
                                                  double accel_sigma, double gyro_sigma)
{
  using namespace block;
  StateMatrix F = StateMatrix::Identity();
  F.block<3, 3>(kPos, kVel) = Mat3::Identity() * dt;
  StateMatrix Q = StateMatrix::Zero();
  Q.block<3, 3>(kVel, kVel) = Mat3::Identity() * accel_sigma * accel_sigma * dt;
  Q.block<3, 3>(kRot, kRot) = Mat3::Identity() * gyro_sigma * gyro_sigma * dt;
  FilterEstimate out;
  out.state = x;
  out.state.p += x.v * dt;
  out.cov = F * P * F.transpose() + Q;
  symmetrize(out.cov);
  return out;
}

// ---------------------------------------------------------------------------
// Ego-velocity update
// ---------------------------------------------------------------------------

/// Radar velocity in the radar frame predicted from the state.
inline Vec3 predicted_radar_velocity(const NavState& x, const Vec3& omega_m)
{
  return x.R_ext.transpose() * (x.R.transpose() * x.v + skew(omega_m - x.bg) * x.l_ext);
}

inline MeasurementJacobian velocity_jacobian(const NavState& x, const Vec3& omega_m)
{
  using namespace block;
  const Mat3 RextT = x.R_ext.transpose();
  const Vec3 body_v = x.R.transpose() * x.v;
  const Vec3 w = omega_m - x.bg;
  MeasurementJacobian H = MeasurementJacobian::Zero();
  H.block<3, 3>(0, kVel) = RextT * x.R.transpose();
  H.block<3, 3>(0, kRot) = RextT * skew(body_v);
  H.block<3, 3>(0, kBiasGyro) = RextT * skew(x.l_ext);
  H.block<3, 3>(0, kExtRot) = skew(RextT * (body_v + skew(w) * x.l_ext));
  H.block<3, 3>(0, kExtPos) = RextT * skew(w);
  return H;
}

struct VelocityUpdateResult {
  NavState state;
  ErrorCovariance cov = ErrorCovariance::Zero();
  bool accepted = false;
  double mahalanobis_sq = 0.0;
};

/// Kalman update with the radar ego-velocity, gated by the chi-square test.
inline VelocityUpdateResult update_velocity(const NavState& x, const ErrorCovariance& P,
                                            const Vec3& measured_velocity, const Mat3& measurement_cov,
                                            const Vec3& omega_m, double gate = kChi2Dof3P95)
{
  const Vec3 r = predicted_radar_velocity(x, omega_m) - measured_velocity;
  const MeasurementJacobian H = velocity_jacobian(x, omega_m);
  const Mat3 S = H * P * H.transpose() + measurement_cov;
  const Eigen::LDLT<Mat3> S_ldlt(S);
  const double d2 = r.dot(S_ldlt.solve(r));

  VelocityUpdateResult out{x, P, false, d2};
  if (!std::isfinite(d2) || d2 > gate) {
    return out;
  }
  const Eigen::Matrix<double, kStateDim, 3> K = P * H.transpose() * S.inverse();
  out.state = boxplus(x, -K * r);
  out.cov = (StateMatrix::Identity() - K * H) * P;
  symmetrize(out.cov);
  out.accepted = true;
  return out;
}

inline VelocityUpdateResult update_velocity(const NavState& x, const ErrorCovariance& P, const EgoVelocityEstimate& est,
                                            const Vec3& omega_m, double gate = kChi2Dof3P95)
{
  return update_velocity(x, P, est.velocity, est.covariance, omega_m, gate);
}

// ---------------------------------------------------------------------------
// Scan-to-submap update
// ---------------------------------------------------------------------------

struct WeightedNeighbor {
  Vec3 position = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

struct PointResidual {
  Vec3 r = Vec3::Zero();
  MeasurementJacobian H = MeasurementJacobian::Zero();
  Mat3 G = Mat3::Identity();
};

/// G = (C)^(-1/2) by symmetric eigendecomposition, eigenvalues floored.
inline Mat3 inverse_sqrt_spd(const Mat3& C, double floor)
{
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (C + C.transpose()));
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
    throw SingularCovariance("match covariance is not finite");
  }
  const Vec3 inv_sqrt = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

/// Whitened distance between the neighbor centroid and the transformed
/// scan point `a` (radar frame), with its Jacobian w.r.t. the error state.
inline PointResidual point_residual(const NavState& x, const Vec3& a, const Mat3& scan_cov,
                                    std::span<const WeightedNeighbor> neighbors, double covariance_floor = 1e-6)
{
  using namespace block;
  if (neighbors.empty()) {
    throw std::invalid_argument("point_residual: no neighbors");
  }
  Vec3 centroid = Vec3::Zero();
  Mat3 map_cov = Mat3::Zero();
  for (const auto& n : neighbors) {
    centroid += n.position;
    map_cov += n.cov;
  }
  const double count = static_cast<double>(neighbors.size());
  centroid /= count;
  map_cov /= count;

  const Mat3 R_gr = x.R * x.R_ext;
  const Vec3 q = x.R_ext * a + x.l_ext;  // point in IMU frame
  const Vec3 p_global = x.R * q + x.p;

  PointResidual out;
  out.G = inverse_sqrt_spd(map_cov + R_gr * scan_cov * R_gr.transpose(), covariance_floor);
  out.r = out.G * (centroid - p_global);
  out.H.block<3, 3>(0, kPos) = -out.G;
  out.H.block<3, 3>(0, kRot) = out.G * x.R * skew(q);
  out.H.block<3, 3>(0, kExtRot) = out.G * R_gr * skew(a);
  out.H.block<3, 3>(0, kExtPos) = -out.G * x.R;
  return out;
}

/// Covariances of the `k`-point neighborhoods of every scan point, computed
/// within the scan itself. Scans with fewer than `k` points get an isotropic
/// range-accuracy covariance.
inline std::vector<Mat3> scan_point_covariances(std::span<const Vec3> pts, std::size_t k, double range_sigma)
{
  std::vector<Mat3> out(pts.size(), Mat3::Identity() * range_sigma * range_sigma);
  if (pts.size() < k) {
    return out;
  }
  KdTree tree;
  std::vector<std::uint32_t> ids(pts.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<std::uint32_t>(i);
  }
  tree.build(std::vector<Vec3>(pts.begin(), pts.end()), ids);
  std::vector<Vec3> nb;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    nb.clear();
    for (const auto& n : tree.knn(pts[i], k)) {
      nb.push_back(pts[n.id]);
    }
    out[i] = local_covariance(nb).cov;
  }
  return out;
}

enum class ScanUpdateStatus { Converged, MaxIterations, NoMatches };

struct ScanMatchReport {
  ScanUpdateStatus status = ScanUpdateStatus::NoMatches;
  int iterations = 0;
  std::size_t matches = 0;        ///< matches used in the last iteration
  double last_increment = 0.0;
  double residual_sq = 0.0;       ///< sum |r_p|^2 in the last iteration
};

struct ScanUpdateResult {
  NavState state;
  ErrorCovariance cov = ErrorCovariance::Zero();
  ScanMatchReport report;
};

/// Block-diagonal J^k of (x^k (+) dx) (-) x_prior w.r.t. dx, and its inverse.
inline StateMatrix iteration_jacobian(const ErrorVector& dx, bool inverse)
{
  using namespace block;
  StateMatrix J = StateMatrix::Identity();
  const Vec3 d_rot = dx.segment<3>(kRot);
  const Vec3 d_ext = dx.segment<3>(kExtRot);
  // J = A(d)^-T, J^-1 = A(d)^T.
  J.block<3, 3>(kRot, kRot) = inverse ? jacobian_A(d_rot).transpose() : jacobian_A_inv(d_rot).transpose();
  J.block<3, 3>(kExtRot, kExtRot) = inverse ? jacobian_A(d_ext).transpose() : jacobian_A_inv(d_ext).transpose();
  return J;
}

namespace detail {

struct StackedSystem {
  StateMatrix HtH = StateMatrix::Zero();
  ErrorVector Htr = ErrorVector::Zero();
  std::size_t matches = 0;
  double residual_sq = 0.0;
};

inline StackedSystem build_scan_system(const NavState& x, std::span<const Vec3> pts, std::span<const Mat3> scan_covs,
                                       const Submap& submap, const FilterConfig& cfg)
{
  StackedSystem sys;
  const RigidTransform T = x.radar_pose();
  std::vector<WeightedNeighbor> nb;
  nb.reserve(static_cast<std::size_t>(cfg.num_neighbors));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 q = T * pts[i];
    const auto found = submap.knn(q, static_cast<std::size_t>(cfg.num_neighbors));
    if (found.empty()) {
      continue;
    }
    Vec3 centroid = Vec3::Zero();
    for (const auto& f : found) {
      centroid += f.point.position;
    }
    centroid /= static_cast<double>(found.size());
    if ((centroid - q).norm() > cfg.max_match_distance) {
      continue;
    }
    nb.clear();
    for (const auto& f : found) {
      nb.push_back({f.point.position, submap.neighborhood_covariance(f.id, static_cast<std::size_t>(cfg.num_neighbors))});
    }
    const PointResidual pr = point_residual(x, pts[i], scan_covs[i], nb, cfg.covariance_floor);
    sys.HtH.noalias() += pr.H.transpose() * pr.H / cfg.point_noise;
    sys.Htr.noalias() += pr.H.transpose() * pr.r / cfg.point_noise;
    sys.residual_sq += pr.r.squaredNorm();
    ++sys.matches;
  }
  return sys;
}

}  // namespace detail

/// Iterated MAP update against the submap. Each iteration re-associates
/// neighbors at the current iterate, then applies
///   x^{k+1} = x^k (+) [-K r - (I - K H) J^-1 (x^k (-) x_prior)]
/// with P^k = J^-1 P J^-T and per-point noise R_p = point_noise * I
/// (residuals are already whitened). The gain uses the push-through form
/// K = P^k (I + H^T H P^k)^-1 H^T, valid for singular P^k.
inline ScanUpdateResult update_scan_to_submap(const NavState& prior, const ErrorCovariance& P_prior,
                                              std::span<const Vec3> scan_points, const Submap& submap,
                                              const FilterConfig& cfg)
{
  using namespace block;
  ScanUpdateResult out{prior, P_prior, {}};
  if (scan_points.empty() || submap.empty()) {
    return out;
  }
  const auto scan_covs =
      scan_point_covariances(scan_points, static_cast<std::size_t>(cfg.num_neighbors), cfg.range_sigma);

  NavState xk = prior;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const detail::StackedSystem sys = detail::build_scan_system(xk, scan_points, scan_covs, submap, cfg);
    if (sys.matches == 0) {
      if (iter == 0) {
        return out;  // NoMatches: prior passes through
      }
      break;
    }
    const ErrorVector dx = boxminus(xk, prior);
    const StateMatrix J_inv = iteration_jacobian(dx, true);
    const StateMatrix Pk = J_inv * P_prior * J_inv.transpose();

    const StateMatrix M = (StateMatrix::Identity() + sys.HtH * Pk).partialPivLu().inverse();
    const StateMatrix PM = Pk * M;
    const StateMatrix KH = PM * sys.HtH;
    const ErrorVector Kr = PM * sys.Htr;
    const ErrorVector step = -Kr - (StateMatrix::Identity() - KH) * J_inv * dx;

    xk = boxplus(xk, step);
    const double increment = step.segment<3>(kPos).norm() + step.segment<3>(kRot).norm();

    out.report.iterations = iter + 1;
    out.report.matches = sys.matches;
    out.report.residual_sq = sys.residual_sq;
    out.report.last_increment = increment;
    out.state = xk;
    out.cov = (StateMatrix::Identity() - KH) * Pk;
    symmetrize(out.cov);

    if (increment < cfg.tolerance) {
      out.report.status = ScanUpdateStatus::Converged;
      return out;
    }
    out.report.status = ScanUpdateStatus::MaxIterations;
  }
  return out;
}

inline ScanUpdateResult update_scan_to_submap(const NavState& prior, const ErrorCovariance& P_prior,
                                              const RadarScan& scan, const Submap& submap, const FilterConfig& cfg)
{
  std::vector<Vec3> pts;
  pts.reserve(scan.points.size());
  for (const auto& p : scan.points) {
    pts.push_back(p.position);
  }
  return update_scan_to_submap(prior, P_prior, pts, submap, cfg);
}

}  // namespace rio4d
