#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rio4d/dataset.hpp"
#include "rio4d/egovel.hpp"
#include "rio4d/evaluate.hpp"
#include "rio4d/filter.hpp"
#include "rio4d/loop.hpp"
#include "rio4d/preprocess.hpp"
#include "rio4d/submap.hpp"

namespace rio4d {

enum class ScanMatchMode { Submap, LastScans };

struct InitConfig {
  double duration = 1.0;           ///< s of IMU data assumed static at start
  bool estimate_gyro_bias = true;  ///< mean gyro over the window
  double gravity = 9.81;
  double sigma_velocity = 0.05;
  double sigma_attitude = 0.5 * kDeg2Rad;
  double sigma_accel_bias = 0.05;
  double sigma_gyro_bias = 2e-3;
  double sigma_extrinsic_rotation = 0.0;     ///< 0 locks the extrinsic rotation
  double sigma_extrinsic_translation = 0.0;  ///< 0 locks the lever arm
};

struct KeyframeConfig {
  double translation = 1.0;          ///< m
  double rotation = 10.0 * kDeg2Rad; ///< rad
};

struct BackendConfig {
  ScanContextConfig scan_context{20, 60, 80.0, 2.0};
  LoopDetectorConfig detector;
  GicpConfig gicp;
  PoseGraphConfig graph;
  double min_fitness = 0.5;
  double max_correction = 20.0;       ///< m, loop vs odometry relative translation
  int aggregate_neighbors = 2;        ///< candidate keyframes on each side merged for GICP
  double odometry_sigma_translation = 0.1;
  double odometry_sigma_rotation = 1.0 * kDeg2Rad;
  std::size_t queue_capacity = 64;
};

struct PipelineConfig {
  RelaxationFilterParams relaxation;
  GncParams gnc;
  FilterConfig filter;
  SubmapConfig submap;
  InitConfig init;
  KeyframeConfig keyframe;
  BackendConfig backend;
  std::optional<RigidTransform> extrinsic;  ///< overrides the dataset calibration

  bool use_velocity_update = true;
  bool use_scan_update = true;
  bool use_imu = true;
  ScanMatchMode scan_match_mode = ScanMatchMode::Submap;
  int last_k_scans = 5;
  bool use_loop_closure = false;

  double cv_accel_sigma = 2.0;  ///< constant-velocity mode process noise, m/s^2
  double cv_gyro_sigma = 0.2;   ///< rad/s

  void validate() const
  {
    if (!use_velocity_update && !use_scan_update) {
      throw ConfigError("at least one of use_velocity_update / use_scan_update must be set");
    }
    if (scan_match_mode == ScanMatchMode::LastScans && last_k_scans < 1) {
      throw ConfigError("last_k_scans must be >= 1");
    }
    try {
      relaxation.validate();
      gnc.validate();
      filter.noise.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (filter.max_iterations < 1 || !(filter.tolerance > 0.0) || filter.num_neighbors < 1 ||
        !(filter.point_noise > 0.0) || !(filter.covariance_floor > 0.0)) {
      throw ConfigError(
          "filter: require max_iterations >= 1, tolerance > 0, num_neighbors >= 1, point_noise > 0, "
          "covariance_floor > 0");
    }
    if (!(submap.voxel_size > 0.0) || submap.max_points_per_voxel < 1 || !(submap.prune_radius > 0.0) ||
        submap.prune_every < 1) {
      throw ConfigError("submap: require voxel_size > 0, max_points_per_voxel >= 1, prune_radius > 0, prune_every >= 1");
    }
    if (!(init.duration >= 0.0) || !(init.gravity > 0.0)) {
      throw ConfigError("init: require duration >= 0 and gravity > 0");
    }
    if (!(keyframe.translation > 0.0) || !(keyframe.rotation > 0.0)) {
      throw ConfigError("keyframe thresholds must be positive");
    }
    if (backend.queue_capacity < 1) {
      throw ConfigError("backend queue capacity must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct StageTiming {
  double sum_ms = 0.0;
  double max_ms = 0.0;
  std::size_t count = 0;

  void add(double ms)
  {
    sum_ms += ms;
    max_ms = std::max(max_ms, ms);
    ++count;
  }
  double mean_ms() const { return count > 0 ? sum_ms / static_cast<double>(count) : 0.0; }
};

/// Per-scan wall-clock statistics of the frontend stages.
struct TimingReport {
  StageTiming predict;
  StageTiming ego_velocity;
  StageTiming scan_to_submap;
  StageTiming total;

  std::string format() const
  {
    std::string out = "stage            mean_ms    max_ms   count\n";
    const std::pair<const char*, const StageTiming*> rows[] = {
        {"imu_predict", &predict}, {"ego_vel_update", &ego_velocity}, {"scan_to_submap", &scan_to_submap},
        {"total", &total}};
    char buf[128];
    for (const auto& [name, s] : rows) {
      std::snprintf(buf, sizeof(buf), "%-14s %9.3f %9.3f %7zu\n", name, s->mean_ms(), s->max_ms, s->count);
      out += buf;
    }
    return out;
  }
};

namespace detail {

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const
  {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// IMU sample linearly interpolated at t, clamped to the stream ends.
inline ImuSample imu_at(const std::vector<ImuSample>& imu, double t)
{
  if (t <= imu.front().timestamp) {
    ImuSample s = imu.front();
    s.timestamp = t;
    return s;
  }
  if (t >= imu.back().timestamp) {
    ImuSample s = imu.back();
    s.timestamp = t;
    return s;
  }
  const auto it = std::upper_bound(imu.begin(), imu.end(), t,
                                   [](double v, const ImuSample& s) { return v < s.timestamp; });
  return interpolate(*std::prev(it), *it, t);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frontend
// ---------------------------------------------------------------------------

/// Outcome of processing one radar scan.
struct FrameResult {
  double timestamp = 0.0;
  RigidTransform imu_pose;
  RigidTransform radar_pose;
  std::vector<Vec3> static_points;  ///< radar frame, after filtering and outlier removal
  bool ego_velocity_valid = false;
  bool velocity_accepted = false;
  double velocity_mahalanobis_sq = 0.0;  ///< gate statistic of the velocity update
  ScanMatchReport scan_report;
};

/// Gravity-aligned initial state from a window of static IMU data. Yaw is 0.
inline FilterEstimate static_initialization(const std::vector<ImuSample>& imu, double t0,
                                            const RigidTransform& extrinsic, const InitConfig& cfg)
{
  using namespace block;
  FilterEstimate est;
  est.state.R_ext = extrinsic.rotation;
  est.state.l_ext = extrinsic.translation;
  est.state.g = Vec3(0.0, 0.0, -cfg.gravity);

  Vec3 acc = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
  int n = 0;
  for (const auto& s : imu) {
    if (s.timestamp < t0 - 1e-9) {
      continue;
    }
    if (s.timestamp > t0 + cfg.duration + 1e-9) {
      break;
    }
    acc += s.accel;
    gyro += s.gyro;
    ++n;
  }
  if (n > 0 && acc.norm() > 1e-6) {
    acc /= n;
    gyro /= n;
    // Specific force at rest points along +z of the gravity-aligned frame.
    const Mat3 R_tilt = Eigen::Quaterniond::FromTwoVectors(acc, Vec3::UnitZ()).toRotationMatrix();
    const double yaw = std::atan2(R_tilt(1, 0), R_tilt(0, 0));
    est.state.R = so3_exp(Vec3(0.0, 0.0, -yaw)) * R_tilt;
    if (cfg.estimate_gyro_bias) {
      est.state.bg = gyro;
    }
  }

  auto set = [&](int blk, double sigma) { est.cov.block<3, 3>(blk, blk) = Mat3::Identity() * sigma * sigma; };
  est.cov.setZero();
  set(kVel, cfg.sigma_velocity);
  set(kRot, cfg.sigma_attitude);
  est.cov(kRot + 2, kRot + 2) = 1e-12;  // yaw is gauge
  set(kBiasAcc, cfg.sigma_accel_bias);
  set(kBiasGyro, cfg.sigma_gyro_bias);
  set(kExtRot, cfg.sigma_extrinsic_rotation);
  set(kExtPos, cfg.sigma_extrinsic_translation);
  return est;
}

/// Sequential radar-inertial filter: predict, ego-velocity update,
/// scan-to-submap update and map insertion for each scan.
class Frontend {
 public:
  Frontend(PipelineConfig cfg, const RigidTransform& extrinsic)
      : cfg_(std::move(cfg)), extrinsic_(extrinsic), submap_(cfg_.submap)
  {
    cfg_.validate();
  }

  void initialize(const FilterEstimate& x0, double t0)
  {
    est_ = x0;
    t_prev_ = t0;
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }
  const FilterEstimate& estimate() const { return est_; }
  const Submap& submap() const { return submap_; }
  Submap& submap() { return submap_; }
  const TimingReport& timing() const { return timing_; }
  const PipelineConfig& config() const { return cfg_; }

  FrameResult process(const RadarScan& scan, const std::vector<ImuSample>& imu)
  {
    if (!initialized_) {
      throw std::logic_error("frontend: process before initialize");
    }
    const detail::StopWatch total;
    FrameResult out;
    out.timestamp = scan.timestamp;

    {
      const detail::StopWatch sw;
      predict(scan.timestamp, imu);
      timing_.predict.add(sw.elapsed_ms());
    }

    Vec3 omega = est_.state.bg;
    if (cfg_.use_imu && !imu.empty()) {
      omega = detail::imu_at(imu, scan.timestamp).gyro;
    }

    RadarScan points;
    {
      const detail::StopWatch sw;
      points = relaxation_filter(scan, cfg_.relaxation);
      try {
        const EgoVelocityEstimate ev = estimate_ego_velocity_gnc(points, cfg_.gnc);
        out.ego_velocity_valid = true;
        points = select_points(points, ev.inlier_mask);
        if (cfg_.use_velocity_update) {
          const auto vu = update_velocity(est_.state, est_.cov, ev, omega, cfg_.filter.velocity_gate);
          out.velocity_accepted = vu.accepted;
          out.velocity_mahalanobis_sq = vu.mahalanobis_sq;
          est_.state = vu.state;
          est_.cov = vu.cov;
        }
      } catch (const DegenerateGeometry&) {
        // keep all filtered points, skip the velocity update
      } catch (const InsufficientPoints&) {
      }
      timing_.ego_velocity.add(sw.elapsed_ms());
    }

    out.static_points.reserve(points.points.size());
    for (const auto& p : points.points) {
      out.static_points.push_back(p.position);
    }

    {
      const detail::StopWatch sw;
      if (cfg_.use_scan_update && !out.static_points.empty()) {
        const Submap* target = &submap_;
        Submap recent(cfg_.submap);
        if (cfg_.scan_match_mode == ScanMatchMode::LastScans) {
          for (const auto& s : recent_scans_) {
            recent.insert_points(s);
          }
          target = &recent;
        }
        if (!target->empty()) {
          const auto su = update_scan_to_submap(est_.state, est_.cov, out.static_points, *target, cfg_.filter);
          out.scan_report = su.report;
          est_.state = su.state;
          est_.cov = su.cov;
        }
      }
      timing_.scan_to_submap.add(sw.elapsed_ms());
    }

    out.imu_pose = est_.state.imu_pose();
    out.radar_pose = est_.state.radar_pose();
    insert(out);
    timing_.total.add(total.elapsed_ms());
    return out;
  }

 private:
  void predict(double t, const std::vector<ImuSample>& imu)
  {
    if (!(t > t_prev_)) {
      return;
    }
    if (!cfg_.use_imu || imu.empty()) {
      const double dt = t - t_prev_;
      est_ = propagate_constant_velocity(est_.state, est_.cov, dt, cfg_.cv_accel_sigma, cfg_.cv_gyro_sigma);
      t_prev_ = t;
      return;
    }
    // Breakpoints at every IMU sample inside (t_prev, t]; each interval uses
    // the mean of its two end samples.
    std::vector<double> knots{t_prev_};
    auto it = std::upper_bound(imu.begin(), imu.end(), t_prev_,
                               [](double v, const ImuSample& s) { return v < s.timestamp; });
    for (; it != imu.end() && it->timestamp < t; ++it) {
      knots.push_back(it->timestamp);
    }
    knots.push_back(t);
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double span = knots[i + 1] - knots[i];
      if (span < 1e-9) {
        continue;
      }
      const int pieces = static_cast<int>(std::ceil(span / 0.05));
      const double dt = span / pieces;
      for (int k = 0; k < pieces; ++k) {
        const double ta = knots[i] + k * dt;
        const ImuSample a = detail::imu_at(imu, ta);
        const ImuSample b = detail::imu_at(imu, ta + dt);
        const ImuSample u{ta, 0.5 * (a.accel + b.accel), 0.5 * (a.gyro + b.gyro)};
        est_ = propagate(est_.state, est_.cov, u, dt, cfg_.filter.noise);
      }
    }
    t_prev_ = t;
  }

  void insert(const FrameResult& f)
  {
    std::vector<Vec3> global;
    global.reserve(f.static_points.size());
    for (const auto& p : f.static_points) {
      global.push_back(f.radar_pose * p);
    }
    if (cfg_.scan_match_mode == ScanMatchMode::LastScans) {
      recent_scans_.push_back(std::move(global));
      while (static_cast<int>(recent_scans_.size()) > cfg_.last_k_scans) {
        recent_scans_.pop_front();
      }
    } else {
      submap_.insert_points(global, static_cast<int>(frame_count_));
      if ((frame_count_ + 1) % static_cast<std::size_t>(cfg_.submap.prune_every) == 0) {
        submap_.prune(f.imu_pose.translation, cfg_.submap.prune_radius);
      }
    }
    ++frame_count_;
  }

  PipelineConfig cfg_;
  RigidTransform extrinsic_;
  Submap submap_;
  std::deque<std::vector<Vec3>> recent_scans_;
  FilterEstimate est_;
  double t_prev_ = 0.0;
  bool initialized_ = false;
  std::size_t frame_count_ = 0;
  TimingReport timing_;
};

// ---------------------------------------------------------------------------
// Odometry
// ---------------------------------------------------------------------------

struct OdometryResult {
  TrajectoryEstimate trajectory;  ///< IMU poses at scan times
  Submap map;
  TimingReport timing;
  std::size_t velocity_rejections = 0;
  std::size_t scans_without_matches = 0;
};

inline RigidTransform resolve_extrinsic(const Dataset& ds, const PipelineConfig& cfg)
{
  if (cfg.extrinsic) {
    return *cfg.extrinsic;
  }
  if (ds.extrinsic) {
    return *ds.extrinsic;
  }
  return RigidTransform::identity();
}

using FrameCallback = std::function<void(std::size_t index, const FrameResult&)>;

inline OdometryResult run_odometry(const Dataset& ds, const PipelineConfig& cfg, const FrameCallback& on_frame = {})
{
  cfg.validate();
  const RigidTransform extrinsic = resolve_extrinsic(ds, cfg);
  Frontend fe(cfg, extrinsic);
  OdometryResult res{{}, Submap(cfg.submap), {}, 0, 0};
  if (ds.scans.empty()) {
    res.map = std::move(fe.submap());
    return res;
  }
  const double t0 = ds.scans.front().timestamp;
  fe.initialize(static_initialization(ds.imu, t0, extrinsic, cfg.init), t0);
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    const auto& scan = ds.scans[i];
    if (!res.trajectory.empty() && !(scan.timestamp > res.trajectory.poses.back().timestamp)) {
      continue;  // duplicate timestamp
    }
    const FrameResult f = fe.process(scan, ds.imu);
    if (f.ego_velocity_valid && cfg.use_velocity_update && !f.velocity_accepted) {
      ++res.velocity_rejections;
    }
    if (cfg.use_scan_update && f.scan_report.status == ScanUpdateStatus::NoMatches && i > 0) {
      ++res.scans_without_matches;
    }
    res.trajectory.poses.push_back({f.timestamp, f.imu_pose});
    if (on_frame) {
      on_frame(i, f);
    }
  }
  res.timing = fe.timing();
  res.map = std::move(fe.submap());
  return res;
}

// ---------------------------------------------------------------------------
// SLAM backend
// ---------------------------------------------------------------------------

struct Keyframe {
  int id = 0;
  std::size_t frame_index = 0;
  double timestamp = 0.0;
  RigidTransform radar_pose;      ///< odometry estimate
  std::vector<Vec3> cloud;        ///< radar frame, aggregated since the previous keyframe
};

struct LoopEdgeInfo {
  int from = 0;  ///< candidate (older) keyframe
  int to = 0;    ///< query keyframe
  double fitness = 0.0;
  double descriptor_distance = 0.0;
};

/// Bounded blocking queue; push blocks while full.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item)
  {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  /// Blocks until an item is available; empty optional once closed and drained.
  std::optional<T> pop()
  {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) {
      return std::nullopt;
    }
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close()
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

/// Place recognition, loop verification and pose-graph optimization over
/// keyframes. Keyframes are processed strictly in arrival order.
class LoopBackend {
 public:
  explicit LoopBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {}

  void add_keyframe(Keyframe kf)
  {
    const int id = static_cast<int>(keyframes_.size());
    kf.id = id;
    graph_.add_node(kf.radar_pose);
    if (id > 0) {
      const auto& prev = keyframes_.back();
      add_odometry_edge(id - 1, id, prev.radar_pose.inverse() * kf.radar_pose);
    }
    RadarScan cloud_scan;
    for (const auto& p : kf.cloud) {
      cloud_scan.points.push_back({p, 0.0, 0.0});
    }
    std::optional<ScanContextDescriptor> desc;
    if (!cloud_scan.empty()) {
      desc = make_descriptor(cloud_scan, cfg_.scan_context);
    }
    keyframes_.push_back(std::move(kf));

    if (desc) {
      if (const auto cand = detect_loop(id, *desc, database_, cfg_.detector)) {
        try_close_loop(*cand, id);
      }
      database_.push_back({id, *desc});
    }
  }

  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<LoopEdgeInfo>& loops() const { return loops_; }

  /// Optimized keyframe radar poses, or the odometry poses when no loop was accepted.
  std::vector<RigidTransform> poses() const
  {
    if (!optimized_) {
      std::vector<RigidTransform> out;
      for (const auto& kf : keyframes_) {
        out.push_back(kf.radar_pose);
      }
      return out;
    }
    return optimized_->poses;
  }

  bool has_correction() const { return optimized_.has_value(); }

  /// Re-optimizes with all keyframes received so far (nodes after the last
  /// loop start from their odometry poses chained onto the last optimum).
  void finalize()
  {
    if (!loops_.empty()) {
      optimize();
    }
  }

 private:
  void add_odometry_edge(int a, int b, const RigidTransform& z)
  {
    Mat6 info = Mat6::Zero();
    info.topLeftCorner<3, 3>() =
        Mat3::Identity() / (cfg_.odometry_sigma_translation * cfg_.odometry_sigma_translation);
    info.bottomRightCorner<3, 3>() = Mat3::Identity() / (cfg_.odometry_sigma_rotation * cfg_.odometry_sigma_rotation);
    graph_.add_edge({a, b, z, info, false});
  }

  void try_close_loop(const LoopCandidate& cand, int query)
  {
    const auto& q = keyframes_[static_cast<std::size_t>(query)];
    const auto& c = keyframes_[static_cast<std::size_t>(cand.id)];
    std::vector<Vec3> target;
    const RigidTransform c_inv = c.radar_pose.inverse();
    const int lo = std::max(0, cand.id - cfg_.aggregate_neighbors);
    const int hi = std::min(static_cast<int>(keyframes_.size()) - 1, cand.id + cfg_.aggregate_neighbors);
    for (int k = lo; k <= hi; ++k) {
      if (std::abs(k - query) < cfg_.detector.min_gap) {
        continue;
      }
      const auto& kf = keyframes_[static_cast<std::size_t>(k)];
      const RigidTransform to_c = c_inv * kf.radar_pose;
      for (const auto& p : kf.cloud) {
        target.push_back(to_c * p);
      }
    }
    if (q.cloud.size() < 10 || target.size() < 10) {
      return;
    }
    const RigidTransform init(so3_exp(Vec3(0.0, 0.0, cand.yaw)), Vec3::Zero());
    GicpResult reg;
    try {
      reg = relative_pose_gicp(q.cloud, target, init, cfg_.gicp);
    } catch (const NotConverged&) {
      return;
    }
    const RigidTransform odo = c_inv * q.radar_pose;
    const double correction = (reg.transform.translation - odo.translation).norm();
    if (reg.fitness < cfg_.min_fitness || correction > cfg_.max_correction) {
      return;
    }
    Mat6 info = 0.5 * (reg.information + reg.information.transpose());
    graph_.add_edge({cand.id, query, reg.transform, info, true});
    loops_.push_back({cand.id, query, reg.fitness, cand.distance});
    optimize();
  }

  void optimize()
  {
    // Warm start: previous optimum, with later nodes chained by odometry.
    if (optimized_) {
      const auto& prev = optimized_->poses;
      for (std::size_t k = 0; k < graph_.size(); ++k) {
        if (k < prev.size()) {
          graph_.set_pose(static_cast<int>(k), prev[k]);
        } else {
          const RigidTransform rel = keyframes_[k - 1].radar_pose.inverse() * keyframes_[k].radar_pose;
          graph_.set_pose(static_cast<int>(k), graph_.nodes()[k - 1] * rel);
        }
      }
    }
    optimized_ = optimize_pose_graph(graph_, cfg_.graph);
  }

  BackendConfig cfg_;
  std::vector<Keyframe> keyframes_;
  std::vector<KeyframeDescriptor> database_;
  PoseGraph graph_;
  std::vector<LoopEdgeInfo> loops_;
  std::optional<PoseGraphResult> optimized_;
};

struct SlamResult {
  TrajectoryEstimate trajectory;           ///< corrected IMU poses at scan times
  TrajectoryEstimate odometry;             ///< pre-optimization poses
  std::vector<Vec3> global_map;
  std::vector<LoopEdgeInfo> loops;
  std::size_t keyframes = 0;
  TimingReport timing;
};

/// Odometry with keyframing and an asynchronous loop-closure backend. The
/// frontend never waits on optimization results; corrections are applied to
/// the trajectory afterwards as world-frame transforms per keyframe span.
inline SlamResult run_slam(const Dataset& ds, const PipelineConfig& cfg)
{
  cfg.validate();
  LoopBackend backend(cfg.backend);
  BoundedQueue<Keyframe> queue(cfg.backend.queue_capacity);
  std::thread worker([&] {
    while (auto kf = queue.pop()) {
      backend.add_keyframe(std::move(*kf));
    }
  });

  std::vector<std::size_t> frame_keyframe;  // keyframe index governing each frame
  std::vector<RigidTransform> kf_poses;     // frontend copies of keyframe radar poses
  std::vector<std::pair<RigidTransform, std::vector<Vec3>>> pending;  // frames since last keyframe
  std::optional<RigidTransform> last_kf;
  const std::size_t n_scans = ds.scans.size();

  auto emit = [&](std::size_t index, const FrameResult& f) {
    Keyframe kf;
    kf.frame_index = index;
    kf.timestamp = f.timestamp;
    kf.radar_pose = f.radar_pose;
    const RigidTransform inv = f.radar_pose.inverse();
    for (const auto& [pose, pts] : pending) {
      const RigidTransform rel = inv * pose;
      for (const auto& p : pts) {
        kf.cloud.push_back(rel * p);
      }
    }
    pending.clear();
    kf_poses.push_back(f.radar_pose);
    last_kf = f.radar_pose;
    queue.push(std::move(kf));
  };

  OdometryResult odo;
  try {
    odo = run_odometry(ds, cfg, [&](std::size_t index, const FrameResult& f) {
      pending.emplace_back(f.radar_pose, f.static_points);
      bool is_kf = !last_kf.has_value() || index + 1 == n_scans;
      if (!is_kf) {
        const RigidTransform d = last_kf->inverse() * f.radar_pose;
        is_kf = d.translation.norm() >= cfg.keyframe.translation || rotation_angle(d.rotation) >= cfg.keyframe.rotation;
      }
      if (is_kf) {
        emit(index, f);
      }
      frame_keyframe.push_back(kf_poses.empty() ? 0 : kf_poses.size() - 1);
    });
  } catch (...) {
    queue.close();
    worker.join();
    throw;
  }
  queue.close();
  worker.join();
  backend.finalize();

  SlamResult res;
  res.odometry = odo.trajectory;
  res.timing = odo.timing;
  res.loops = backend.loops();
  res.keyframes = backend.keyframes().size();

  if (!backend.has_correction()) {
    res.trajectory = odo.trajectory;
  } else {
    const auto opt = backend.poses();
    res.trajectory = odo.trajectory;
    for (std::size_t i = 0; i < res.trajectory.poses.size() && i < frame_keyframe.size(); ++i) {
      const std::size_t k = frame_keyframe[i];
      const RigidTransform corr = opt[k] * kf_poses[k].inverse();
      res.trajectory.poses[i].pose = corr * res.trajectory.poses[i].pose;
      res.trajectory.poses[i].pose.rotation = normalize_rotation(res.trajectory.poses[i].pose.rotation);
    }
  }

  // Global map from keyframe clouds at their final poses.
  Submap global(cfg.submap);
  const auto final_poses = backend.poses();
  for (std::size_t k = 0; k < backend.keyframes().size(); ++k) {
    std::vector<Vec3> pts;
    for (const auto& p : backend.keyframes()[k].cloud) {
      pts.push_back(final_poses[k] * p);
    }
    global.insert_points(pts, static_cast<int>(k));
  }
  for (const auto& mp : global.points()) {
    res.global_map.push_back(mp.position);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::vector<Vec3> map_points(const Submap& map)
{
  std::vector<Vec3> out;
  for (const auto& p : map.points()) {
    out.push_back(p.position);
  }
  return out;
}

inline void export_map(const std::vector<Vec3>& points, const std::filesystem::path& path)
{
  io::write_point_cloud(path, points);
}

inline void export_map(const Submap& map, const std::filesystem::path& path) { export_map(map_points(map), path); }

}  // namespace rio4d
