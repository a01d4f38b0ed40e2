#pragma once

#include <filesystem>
#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"

#include "rio4d/pipeline.hpp"
#include "rio4d/sim.hpp"

// JSON (de)serialization of pipeline configurations and simulator scenarios.
// Missing keys keep their defaults; unknown keys are rejected.

namespace rio4d {

using Json = nlohmann::json;

namespace config_detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
  if (!j.is_object()) {
    throw ConfigError(where + ": expected an object");
  }
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void get(const Json& j, const char* key, T& out, const std::string& where)
{
  if (!j.contains(key)) {
    return;
  }
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void get_vec(const Json& j, const char* key, Vec3& out, const std::string& where)
{
  if (!j.contains(key)) {
    return;
  }
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number()) {
    throw ConfigError(where + "." + key + ": expected [x, y, z]");
  }
  out = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

inline Json vec(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline void get_deg(const Json& j, const char* key, double& rad, const std::string& where)
{
  if (j.contains(key)) {
    double deg = rad * kRad2Deg;
    get(j, key, deg, where);
    rad = deg * kDeg2Rad;
  }
}

/// {"translation": [x,y,z], "rpy_deg": [r,p,y]} with R = Rz(y) Ry(p) Rx(r).
inline RigidTransform transform_from(const Json& j, const std::string& where)
{
  check_keys(j, {"translation", "rpy_deg"}, where);
  Vec3 t = Vec3::Zero();
  Vec3 rpy = Vec3::Zero();
  get_vec(j, "translation", t, where);
  get_vec(j, "rpy_deg", rpy, where);
  rpy *= kDeg2Rad;
  const Mat3 R = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                     .toRotationMatrix();
  return {R, t};
}

inline Json transform_to(const RigidTransform& T)
{
  const Vec3 ypr = T.rotation.eulerAngles(2, 1, 0);
  return {{"translation", vec(T.translation)}, {"rpy_deg", vec(Vec3(ypr.z(), ypr.y(), ypr.x()) * kRad2Deg)}};
}

}  // namespace config_detail

// ---------------------------------------------------------------------------
// PipelineConfig
// ---------------------------------------------------------------------------

inline Json to_json(const PipelineConfig& c)
{
  using config_detail::vec;
  Json j;
  j["relaxation"] = {{"neighbor_radius", c.relaxation.neighbor_radius},
                     {"min_neighbors", c.relaxation.min_neighbors},
                     {"std_threshold", c.relaxation.std_threshold}};
  j["gnc"] = {{"sigma_r", c.gnc.sigma_r}, {"mu_divisor", c.gnc.mu_divisor}, {"max_iterations", c.gnc.max_iterations}};
  j["noise"] = {{"accel_noise", c.filter.noise.accel_noise},
                {"gyro_noise", c.filter.noise.gyro_noise},
                {"accel_bias_walk", c.filter.noise.accel_bias_walk},
                {"gyro_bias_walk", c.filter.noise.gyro_bias_walk}};
  j["filter"] = {{"velocity_gate", c.filter.velocity_gate},
                 {"max_iterations", c.filter.max_iterations},
                 {"tolerance", c.filter.tolerance},
                 {"num_neighbors", c.filter.num_neighbors},
                 {"max_match_distance", c.filter.max_match_distance},
                 {"range_sigma", c.filter.range_sigma},
                 {"covariance_floor", c.filter.covariance_floor},
                 {"point_noise", c.filter.point_noise}};
  j["submap"] = {{"voxel_size", c.submap.voxel_size},
                 {"max_points_per_voxel", c.submap.max_points_per_voxel},
                 {"prune_radius", c.submap.prune_radius},
                 {"prune_every", c.submap.prune_every}};
  j["init"] = {{"duration", c.init.duration},
               {"estimate_gyro_bias", c.init.estimate_gyro_bias},
               {"gravity", c.init.gravity},
               {"sigma_velocity", c.init.sigma_velocity},
               {"sigma_attitude_deg", c.init.sigma_attitude * kRad2Deg},
               {"sigma_accel_bias", c.init.sigma_accel_bias},
               {"sigma_gyro_bias", c.init.sigma_gyro_bias},
               {"sigma_extrinsic_rotation_deg", c.init.sigma_extrinsic_rotation * kRad2Deg},
               {"sigma_extrinsic_translation", c.init.sigma_extrinsic_translation}};
  j["keyframe"] = {{"translation", c.keyframe.translation}, {"rotation_deg", c.keyframe.rotation * kRad2Deg}};
  const auto& b = c.backend;
  j["loop"] = {{"rings", b.scan_context.rings},
               {"sectors", b.scan_context.sectors},
               {"max_range", b.scan_context.max_range},
               {"height_offset", b.scan_context.height_offset},
               {"threshold", b.detector.threshold},
               {"min_gap", b.detector.min_gap},
               {"shortlist", b.detector.shortlist},
               {"gicp_neighbors", b.gicp.num_neighbors},
               {"gicp_max_iterations", b.gicp.max_iterations},
               {"gicp_tolerance", b.gicp.tolerance},
               {"gicp_max_correspondence", b.gicp.max_correspondence_distance},
               {"gicp_min_correspondence", b.gicp.min_correspondence_distance},
               {"gicp_inlier_distance", b.gicp.inlier_distance},
               {"graph_max_iterations", b.graph.max_iterations},
               {"graph_tolerance", b.graph.tolerance},
               {"min_fitness", b.min_fitness},
               {"max_correction", b.max_correction},
               {"aggregate_neighbors", b.aggregate_neighbors},
               {"odometry_sigma_translation", b.odometry_sigma_translation},
               {"odometry_sigma_rotation_deg", b.odometry_sigma_rotation * kRad2Deg},
               {"queue_capacity", b.queue_capacity}};
  j["use_velocity_update"] = c.use_velocity_update;
  j["use_scan_update"] = c.use_scan_update;
  j["use_imu"] = c.use_imu;
  j["scan_match_mode"] = c.scan_match_mode == ScanMatchMode::Submap ? "submap" : "last_k_scans";
  j["last_k_scans"] = c.last_k_scans;
  j["use_loop_closure"] = c.use_loop_closure;
  j["cv_accel_sigma"] = c.cv_accel_sigma;
  j["cv_gyro_sigma"] = c.cv_gyro_sigma;
  if (c.extrinsic) {
    j["extrinsic"] = config_detail::transform_to(*c.extrinsic);
  }
  return j;
}

inline PipelineConfig pipeline_config_from_json(const Json& j)
{
  using namespace config_detail;
  PipelineConfig c;
  check_keys(j,
             {"relaxation", "gnc", "noise", "filter", "submap", "init", "keyframe", "loop", "use_velocity_update",
              "use_scan_update", "use_imu", "scan_match_mode", "last_k_scans", "use_loop_closure", "cv_accel_sigma",
              "cv_gyro_sigma", "extrinsic"},
             "config");
  if (j.contains("relaxation")) {
    const auto& s = j["relaxation"];
    check_keys(s, {"neighbor_radius", "min_neighbors", "std_threshold"}, "relaxation");
    get(s, "neighbor_radius", c.relaxation.neighbor_radius, "relaxation");
    get(s, "min_neighbors", c.relaxation.min_neighbors, "relaxation");
    get(s, "std_threshold", c.relaxation.std_threshold, "relaxation");
  }
  if (j.contains("gnc")) {
    const auto& s = j["gnc"];
    check_keys(s, {"sigma_r", "mu_divisor", "max_iterations"}, "gnc");
    get(s, "sigma_r", c.gnc.sigma_r, "gnc");
    get(s, "mu_divisor", c.gnc.mu_divisor, "gnc");
    get(s, "max_iterations", c.gnc.max_iterations, "gnc");
  }
  if (j.contains("noise")) {
    const auto& s = j["noise"];
    check_keys(s, {"accel_noise", "gyro_noise", "accel_bias_walk", "gyro_bias_walk"}, "noise");
    get(s, "accel_noise", c.filter.noise.accel_noise, "noise");
    get(s, "gyro_noise", c.filter.noise.gyro_noise, "noise");
    get(s, "accel_bias_walk", c.filter.noise.accel_bias_walk, "noise");
    get(s, "gyro_bias_walk", c.filter.noise.gyro_bias_walk, "noise");
  }
  if (j.contains("filter")) {
    const auto& s = j["filter"];
    check_keys(s,
               {"velocity_gate", "max_iterations", "tolerance", "num_neighbors", "max_match_distance", "range_sigma",
                "covariance_floor", "point_noise"},
               "filter");
    get(s, "velocity_gate", c.filter.velocity_gate, "filter");
    get(s, "max_iterations", c.filter.max_iterations, "filter");
    get(s, "tolerance", c.filter.tolerance, "filter");
    get(s, "num_neighbors", c.filter.num_neighbors, "filter");
    get(s, "max_match_distance", c.filter.max_match_distance, "filter");
    get(s, "range_sigma", c.filter.range_sigma, "filter");
    get(s, "covariance_floor", c.filter.covariance_floor, "filter");
    get(s, "point_noise", c.filter.point_noise, "filter");
  }
  if (j.contains("submap")) {
    const auto& s = j["submap"];
    check_keys(s, {"voxel_size", "max_points_per_voxel", "prune_radius", "prune_every"}, "submap");
    get(s, "voxel_size", c.submap.voxel_size, "submap");
    get(s, "max_points_per_voxel", c.submap.max_points_per_voxel, "submap");
    get(s, "prune_radius", c.submap.prune_radius, "submap");
    get(s, "prune_every", c.submap.prune_every, "submap");
  }
  if (j.contains("init")) {
    const auto& s = j["init"];
    check_keys(s,
               {"duration", "estimate_gyro_bias", "gravity", "sigma_velocity", "sigma_attitude_deg",
                "sigma_accel_bias", "sigma_gyro_bias", "sigma_extrinsic_rotation_deg", "sigma_extrinsic_translation"},
               "init");
    get(s, "duration", c.init.duration, "init");
    get(s, "estimate_gyro_bias", c.init.estimate_gyro_bias, "init");
    get(s, "gravity", c.init.gravity, "init");
    get(s, "sigma_velocity", c.init.sigma_velocity, "init");
    get_deg(s, "sigma_attitude_deg", c.init.sigma_attitude, "init");
    get(s, "sigma_accel_bias", c.init.sigma_accel_bias, "init");
    get(s, "sigma_gyro_bias", c.init.sigma_gyro_bias, "init");
    get_deg(s, "sigma_extrinsic_rotation_deg", c.init.sigma_extrinsic_rotation, "init");
    get(s, "sigma_extrinsic_translation", c.init.sigma_extrinsic_translation, "init");
  }
  if (j.contains("keyframe")) {
    const auto& s = j["keyframe"];
    check_keys(s, {"translation", "rotation_deg"}, "keyframe");
    get(s, "translation", c.keyframe.translation, "keyframe");
    get_deg(s, "rotation_deg", c.keyframe.rotation, "keyframe");
  }
  if (j.contains("loop")) {
    const auto& s = j["loop"];
    auto& b = c.backend;
    check_keys(s,
               {"rings", "sectors", "max_range", "height_offset", "threshold", "min_gap", "shortlist",
                "gicp_neighbors", "gicp_max_iterations", "gicp_tolerance", "gicp_max_correspondence",
                "gicp_min_correspondence", "gicp_inlier_distance", "graph_max_iterations", "graph_tolerance",
                "min_fitness", "max_correction", "aggregate_neighbors", "odometry_sigma_translation", "odometry_sigma_rotation_deg", "queue_capacity"},
               "loop");
    get(s, "rings", b.scan_context.rings, "loop");
    get(s, "sectors", b.scan_context.sectors, "loop");
    get(s, "max_range", b.scan_context.max_range, "loop");
    get(s, "height_offset", b.scan_context.height_offset, "loop");
    get(s, "threshold", b.detector.threshold, "loop");
    get(s, "min_gap", b.detector.min_gap, "loop");
    get(s, "shortlist", b.detector.shortlist, "loop");
    get(s, "gicp_neighbors", b.gicp.num_neighbors, "loop");
    get(s, "gicp_max_iterations", b.gicp.max_iterations, "loop");
    get(s, "gicp_tolerance", b.gicp.tolerance, "loop");
    get(s, "gicp_max_correspondence", b.gicp.max_correspondence_distance, "loop");
    get(s, "gicp_min_correspondence", b.gicp.min_correspondence_distance, "loop");
    get(s, "gicp_inlier_distance", b.gicp.inlier_distance, "loop");
    get(s, "graph_max_iterations", b.graph.max_iterations, "loop");
    get(s, "graph_tolerance", b.graph.tolerance, "loop");
    get(s, "min_fitness", b.min_fitness, "loop");
    get(s, "max_correction", b.max_correction, "loop");
    get(s, "aggregate_neighbors", b.aggregate_neighbors, "loop");
    get(s, "odometry_sigma_translation", b.odometry_sigma_translation, "loop");
    get_deg(s, "odometry_sigma_rotation_deg", b.odometry_sigma_rotation, "loop");
    get(s, "queue_capacity", b.queue_capacity, "loop");
  }
  get(j, "use_velocity_update", c.use_velocity_update, "config");
  get(j, "use_scan_update", c.use_scan_update, "config");
  get(j, "use_imu", c.use_imu, "config");
  if (j.contains("scan_match_mode")) {
    std::string mode;
    get(j, "scan_match_mode", mode, "config");
    if (mode == "submap") {
      c.scan_match_mode = ScanMatchMode::Submap;
    } else if (mode == "last_k_scans") {
      c.scan_match_mode = ScanMatchMode::LastScans;
    } else {
      throw ConfigError("config.scan_match_mode: expected 'submap' or 'last_k_scans'");
    }
  }
  get(j, "last_k_scans", c.last_k_scans, "config");
  get(j, "use_loop_closure", c.use_loop_closure, "config");
  get(j, "cv_accel_sigma", c.cv_accel_sigma, "config");
  get(j, "cv_gyro_sigma", c.cv_gyro_sigma, "config");
  if (j.contains("extrinsic")) {
    c.extrinsic = transform_from(j["extrinsic"], "extrinsic");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

inline const char* path_kind_name(PathKind k)
{
  switch (k) {
    case PathKind::Static: return "static";
    case PathKind::ConstantTwist: return "constant_twist";
    case PathKind::Circle: return "circle";
    case PathKind::FigureEight: return "figure_eight";
    case PathKind::Loop: return "loop";
    case PathKind::BSpline: return "bspline";
  }
  return "static";
}

inline const char* primitive_kind_name(PrimitiveKind k)
{
  switch (k) {
    case PrimitiveKind::Plane: return "plane";
    case PrimitiveKind::Cluster: return "cluster";
    case PrimitiveKind::Poles: return "poles";
    case PrimitiveKind::Clusters: return "clusters";
    case PrimitiveKind::Points: return "points";
  }
  return "points";
}

inline Json to_json(const Scenario& sc)
{
  using config_detail::vec;
  Json j;
  j["name"] = sc.name;
  j["seed"] = sc.seed;
  j["imu_rate"] = sc.imu_rate;
  j["radar_rate"] = sc.radar_rate;
  j["gravity"] = sc.gravity;
  j["closed_loop"] = sc.closed_loop;
  j["extrinsic"] = config_detail::transform_to(sc.extrinsic);
  const auto& t = sc.trajectory;
  Json tj = {{"kind", path_kind_name(t.kind)},
             {"origin", vec(t.origin)},
             {"yaw_deg", t.yaw * kRad2Deg},
             {"body_velocity", vec(t.body_velocity)},
             {"body_rate", vec(t.body_rate)},
             {"radius", t.radius},
             {"size_x", t.size_x},
             {"size_y", t.size_y},
             {"height", t.height},
             {"angular_rate", t.angular_rate},
             {"cycles", t.cycles},
             {"motion_duration", t.motion_duration},
             {"hold_start", t.hold_start},
             {"ramp", t.ramp},
             {"hold_end", t.hold_end}};
  tj["control_points"] = Json::array();
  for (const auto& p : t.control_points) {
    tj["control_points"].push_back(vec(p));
  }
  j["trajectory"] = tj;
  j["world"] = Json::array();
  for (const auto& w : sc.world) {
    Json wj = {{"kind", primitive_kind_name(w.kind)}, {"origin", vec(w.origin)}, {"edge_u", vec(w.edge_u)},
               {"edge_v", vec(w.edge_v)},             {"extent", vec(w.extent)}, {"count", w.count},
               {"points_per_object", w.points_per_object}, {"sigma", w.sigma}, {"height", w.height}};
    wj["points"] = Json::array();
    for (const auto& p : w.points) {
      wj["points"].push_back(vec(p));
    }
    j["world"].push_back(wj);
  }
  j["movers"] = Json::array();
  for (const auto& m : sc.movers) {
    j["movers"].push_back(
        {{"start", vec(m.start)}, {"velocity", vec(m.velocity)}, {"size", m.size}, {"points", m.points}});
  }
  const auto& r = sc.radar;
  j["radar"] = {{"azimuth_fov_deg", r.azimuth_fov * kRad2Deg},
                {"elevation_fov_deg", r.elevation_fov * kRad2Deg},
                {"min_range", r.min_range},
                {"max_range", r.max_range},
                {"max_points", r.max_points},
                {"range_sigma", r.range_sigma},
                {"doppler_sigma", r.doppler_sigma},
                {"angle_sigma_deg", r.angle_sigma * kRad2Deg},
                {"ghost_fraction", r.ghost_fraction},
                {"ghost_doppler_span", r.ghost_doppler_span}};
  j["imu"] = {{"accel_noise", sc.imu.noise.accel_noise},
              {"gyro_noise", sc.imu.noise.gyro_noise},
              {"accel_bias_walk", sc.imu.noise.accel_bias_walk},
              {"gyro_bias_walk", sc.imu.noise.gyro_bias_walk},
              {"accel_bias", vec(sc.imu.accel_bias)},
              {"gyro_bias", vec(sc.imu.gyro_bias)},
              {"noiseless", sc.imu.noiseless}};
  return j;
}

inline Scenario scenario_from_json(const Json& j)
{
  using namespace config_detail;
  Scenario sc;
  check_keys(j,
             {"name", "seed", "imu_rate", "radar_rate", "gravity", "closed_loop", "extrinsic", "trajectory", "world",
              "movers", "radar", "imu"},
             "scenario");
  get(j, "name", sc.name, "scenario");
  get(j, "seed", sc.seed, "scenario");
  get(j, "imu_rate", sc.imu_rate, "scenario");
  get(j, "radar_rate", sc.radar_rate, "scenario");
  get(j, "gravity", sc.gravity, "scenario");
  get(j, "closed_loop", sc.closed_loop, "scenario");
  if (j.contains("extrinsic")) {
    sc.extrinsic = transform_from(j["extrinsic"], "scenario.extrinsic");
  }
  if (j.contains("trajectory")) {
    const auto& s = j["trajectory"];
    const std::string w = "trajectory";
    check_keys(s,
               {"kind", "origin", "yaw_deg", "body_velocity", "body_rate", "radius", "size_x", "size_y", "height",
                "angular_rate", "cycles", "motion_duration", "control_points", "hold_start", "ramp", "hold_end"},
               w);
    auto& t = sc.trajectory;
    std::string kind = path_kind_name(t.kind);
    get(s, "kind", kind, w);
    const std::pair<const char*, PathKind> kinds[] = {{"static", PathKind::Static},
                                                      {"constant_twist", PathKind::ConstantTwist},
                                                      {"circle", PathKind::Circle},
                                                      {"figure_eight", PathKind::FigureEight},
                                                      {"loop", PathKind::Loop},
                                                      {"bspline", PathKind::BSpline}};
    bool found = false;
    for (const auto& [name, k] : kinds) {
      if (kind == name) {
        t.kind = k;
        found = true;
      }
    }
    if (!found) {
      throw ConfigError("trajectory.kind: unknown '" + kind + "'");
    }
    get_vec(s, "origin", t.origin, w);
    get_deg(s, "yaw_deg", t.yaw, w);
    get_vec(s, "body_velocity", t.body_velocity, w);
    get_vec(s, "body_rate", t.body_rate, w);
    get(s, "radius", t.radius, w);
    get(s, "size_x", t.size_x, w);
    get(s, "size_y", t.size_y, w);
    get(s, "height", t.height, w);
    get(s, "angular_rate", t.angular_rate, w);
    get(s, "cycles", t.cycles, w);
    get(s, "motion_duration", t.motion_duration, w);
    get(s, "hold_start", t.hold_start, w);
    get(s, "ramp", t.ramp, w);
    get(s, "hold_end", t.hold_end, w);
    if (s.contains("control_points")) {
      t.control_points.clear();
      for (const auto& p : s["control_points"]) {
        Json holder = {{"p", p}};
        Vec3 v;
        get_vec(holder, "p", v, w + ".control_points");
        t.control_points.push_back(v);
      }
    }
  }
  if (j.contains("world")) {
    for (const auto& s : j["world"]) {
      const std::string w = "world";
      check_keys(s,
                 {"kind", "origin", "edge_u", "edge_v", "extent", "count", "points_per_object", "sigma", "height",
                  "points"},
                 w);
      WorldPrimitive p;
      std::string kind = "points";
      get(s, "kind", kind, w);
      const std::pair<const char*, PrimitiveKind> kinds[] = {{"plane", PrimitiveKind::Plane},
                                                             {"cluster", PrimitiveKind::Cluster},
                                                             {"poles", PrimitiveKind::Poles},
                                                             {"clusters", PrimitiveKind::Clusters},
                                                             {"points", PrimitiveKind::Points}};
      bool found = false;
      for (const auto& [name, k] : kinds) {
        if (kind == name) {
          p.kind = k;
          found = true;
        }
      }
      if (!found) {
        throw ConfigError("world.kind: unknown '" + kind + "'");
      }
      get_vec(s, "origin", p.origin, w);
      get_vec(s, "edge_u", p.edge_u, w);
      get_vec(s, "edge_v", p.edge_v, w);
      get_vec(s, "extent", p.extent, w);
      get(s, "count", p.count, w);
      get(s, "points_per_object", p.points_per_object, w);
      get(s, "sigma", p.sigma, w);
      get(s, "height", p.height, w);
      if (s.contains("points")) {
        for (const auto& q : s["points"]) {
          Json holder = {{"p", q}};
          Vec3 v;
          get_vec(holder, "p", v, w + ".points");
          p.points.push_back(v);
        }
      }
      sc.world.push_back(p);
    }
  }
  if (j.contains("movers")) {
    for (const auto& s : j["movers"]) {
      check_keys(s, {"start", "velocity", "size", "points"}, "movers");
      Mover m;
      get_vec(s, "start", m.start, "movers");
      get_vec(s, "velocity", m.velocity, "movers");
      get(s, "size", m.size, "movers");
      get(s, "points", m.points, "movers");
      sc.movers.push_back(m);
    }
  }
  if (j.contains("radar")) {
    const auto& s = j["radar"];
    check_keys(s,
               {"azimuth_fov_deg", "elevation_fov_deg", "min_range", "max_range", "max_points", "range_sigma",
                "doppler_sigma", "angle_sigma_deg", "ghost_fraction", "ghost_doppler_span"},
               "radar");
    auto& r = sc.radar;
    get_deg(s, "azimuth_fov_deg", r.azimuth_fov, "radar");
    get_deg(s, "elevation_fov_deg", r.elevation_fov, "radar");
    get(s, "min_range", r.min_range, "radar");
    get(s, "max_range", r.max_range, "radar");
    get(s, "max_points", r.max_points, "radar");
    get(s, "range_sigma", r.range_sigma, "radar");
    get(s, "doppler_sigma", r.doppler_sigma, "radar");
    get_deg(s, "angle_sigma_deg", r.angle_sigma, "radar");
    get(s, "ghost_fraction", r.ghost_fraction, "radar");
    get(s, "ghost_doppler_span", r.ghost_doppler_span, "radar");
  }
  if (j.contains("imu")) {
    const auto& s = j["imu"];
    check_keys(s,
               {"accel_noise", "gyro_noise", "accel_bias_walk", "gyro_bias_walk", "accel_bias", "gyro_bias",
                "noiseless"},
               "imu");
    get(s, "accel_noise", sc.imu.noise.accel_noise, "imu");
    get(s, "gyro_noise", sc.imu.noise.gyro_noise, "imu");
    get(s, "accel_bias_walk", sc.imu.noise.accel_bias_walk, "imu");
    get(s, "gyro_bias_walk", sc.imu.noise.gyro_bias_walk, "imu");
    get_vec(s, "accel_bias", sc.imu.accel_bias, "imu");
    get_vec(s, "gyro_bias", sc.imu.gyro_bias, "imu");
    get(s, "noiseless", sc.imu.noiseless, "imu");
  }
  if (!(sc.imu_rate > 0.0) || !(sc.radar_rate > 0.0)) {
    throw ConfigError("scenario: rates must be positive");
  }
  try {
    Trajectory check(sc.trajectory);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return sc;
}

inline Json load_json(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path)
{
  return pipeline_config_from_json(load_json(path));
}

inline Scenario load_scenario(const std::filesystem::path& path) { return scenario_from_json(load_json(path)); }

}  // namespace rio4d
