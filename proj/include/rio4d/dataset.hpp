#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rio4d/types.hpp"

namespace rio4d {

struct TimedPose {
  double timestamp = 0.0;
  RigidTransform pose;
};

/// Poses at radar rate with strictly increasing timestamps.
struct TrajectoryEstimate {
  std::vector<TimedPose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
};

/// Time-sorted sensor streams plus optional calibration and reference.
struct Dataset {
  std::string name;
  std::vector<ImuSample> imu;
  std::vector<RadarScan> scans;
  std::optional<RigidTransform> extrinsic;  ///< radar in IMU frame
  TrajectoryEstimate groundtruth;           ///< IMU poses, may be empty
  bool closed_loop = false;                 ///< recording starts and ends at the same pose
};

enum class DatasetFormat { Native, ColoRadar };

namespace io {

namespace fs = std::filesystem;

inline void put_u32(std::string& buf, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
}

inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p)
{
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

/// Shortest text that round-trips a double exactly.
inline std::string format_exact(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Rounds every stored scan field through float32, the on-disk precision.
inline RadarScan quantize(const RadarScan& scan)
{
  RadarScan out = scan;
  for (auto& p : out.points) {
    p.position = p.position.cast<float>().cast<double>();
    p.doppler = static_cast<double>(static_cast<float>(p.doppler));
    p.intensity = static_cast<double>(static_cast<float>(p.intensity));
  }
  return out;
}

inline std::string encode_scan(const RadarScan& scan)
{
  std::string buf;
  buf.reserve(4 + scan.points.size() * 20);
  put_u32(buf, static_cast<std::uint32_t>(scan.points.size()));
  for (const auto& p : scan.points) {
    put_f32(buf, static_cast<float>(p.position.x()));
    put_f32(buf, static_cast<float>(p.position.y()));
    put_f32(buf, static_cast<float>(p.position.z()));
    put_f32(buf, static_cast<float>(p.doppler));
    put_f32(buf, static_cast<float>(p.intensity));
  }
  return buf;
}

inline RadarScan decode_scan(const std::string& bytes, double timestamp, std::size_t index, const std::string& name)
{
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  auto fail = [&](std::size_t offset, const std::string& what) {
    throw ParseError("scan " + std::to_string(index) + " (" + name + "): " + what + " at byte offset " +
                     std::to_string(offset));
  };
  if (bytes.size() < 4) {
    fail(bytes.size(), "truncated point count");
  }
  const std::uint32_t count = get_u32(data);
  const std::size_t expected = 4 + static_cast<std::size_t>(count) * 20;
  if (bytes.size() < expected) {
    const std::size_t complete = (bytes.size() - 4) / 20;
    fail(4 + complete * 20, "truncated point record " + std::to_string(complete) + " of " + std::to_string(count));
  }
  if (bytes.size() > expected) {
    fail(expected, "trailing bytes");
  }
  RadarScan scan;
  scan.timestamp = timestamp;
  scan.points.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const unsigned char* p = data + 4 + static_cast<std::size_t>(i) * 20;
    auto& pt = scan.points[i];
    pt.position = Vec3(get_f32(p), get_f32(p + 4), get_f32(p + 8));
    pt.doppler = get_f32(p + 12);
    pt.intensity = get_f32(p + 16);
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Trajectory text table: timestamp tx ty tz qx qy qz qw
// ---------------------------------------------------------------------------

inline std::string format_trajectory(const TrajectoryEstimate& traj, const std::vector<std::string>& comments = {})
{
  std::ostringstream out;
  for (const auto& c : comments) {
    std::istringstream lines(c);
    std::string line;
    while (std::getline(lines, line)) {
      out << "# " << line << '\n';
    }
  }
  char buf[256];
  for (const auto& tp : traj.poses) {
    const auto q = tp.pose.quaternion();
    const Vec3& t = tp.pose.translation;
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", tp.timestamp, t.x(), t.y(), t.z(),
                  q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
  return out.str();
}

inline void write_trajectory(const fs::path& path, const TrajectoryEstimate& traj,
                             const std::vector<std::string>& comments = {})
{
  write_file(path, format_trajectory(traj, comments));
}

inline TrajectoryEstimate parse_trajectory(const std::string& text, const std::string& name = "trajectory")
{
  TrajectoryEstimate traj;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) {
        throw ParseError(name + ": malformed pose line at byte offset " + std::to_string(line_offset));
      }
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!traj.poses.empty() && !(v[0] > traj.poses.back().timestamp)) {
      throw ParseError(name + ": timestamps not increasing at byte offset " + std::to_string(line_offset));
    }
    traj.poses.push_back({v[0], RigidTransform::from_quaternion(q, Vec3(v[1], v[2], v[3]))});
  }
  return traj;
}

inline TrajectoryEstimate read_trajectory(const fs::path& path)
{
  return parse_trajectory(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Point cloud export: binary little-endian PLY with float x, y, z.
// ---------------------------------------------------------------------------

inline void write_point_cloud(const fs::path& path, const std::vector<Vec3>& points)
{
  std::string buf = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  buf.reserve(buf.size() + points.size() * 12);
  for (const auto& p : points) {
    put_f32(buf, static_cast<float>(p.x()));
    put_f32(buf, static_cast<float>(p.y()));
    put_f32(buf, static_cast<float>(p.z()));
  }
  write_file(path, buf);
}

inline std::vector<Vec3> read_point_cloud(const fs::path& path)
{
  const std::string bytes = read_file(path);
  const std::string end_tag = "end_header\n";
  const auto end = bytes.find(end_tag);
  if (bytes.rfind("ply\n", 0) != 0 || end == std::string::npos) {
    throw ParseError(path.string() + ": not a PLY file at byte offset 0");
  }
  std::istringstream header(bytes.substr(0, end));
  std::string line;
  std::size_t count = 0;
  bool saw_format = false;
  while (std::getline(header, line)) {
    if (line.rfind("format ", 0) == 0) {
      if (line != "format binary_little_endian 1.0") {
        throw ParseError(path.string() + ": unsupported PLY format '" + line + "'");
      }
      saw_format = true;
    } else if (line.rfind("element vertex ", 0) == 0) {
      count = std::stoull(line.substr(15));
    }
  }
  if (!saw_format) {
    throw ParseError(path.string() + ": missing PLY format line");
  }
  const std::size_t body = end + end_tag.size();
  if (bytes.size() < body + count * 12) {
    throw ParseError(path.string() + ": truncated vertex data at byte offset " + std::to_string(bytes.size()));
  }
  std::vector<Vec3> pts(count);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + body;
  for (std::size_t i = 0; i < count; ++i) {
    pts[i] = Vec3(get_f32(data + 12 * i), get_f32(data + 12 * i + 4), get_f32(data + 12 * i + 8));
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Native dataset directory
//
//   index.txt        "<timestamp> <relative scan path>" per scan
//   scans/*.bin      u32 count, then count x (f32 x, y, z, doppler, intensity), LE
//   imu.txt          "timestamp ax ay az gx gy gz"
//   meta.json        name, closed_loop, extrinsic (optional)
//   groundtruth.txt  trajectory table (optional)
// ---------------------------------------------------------------------------

inline nlohmann::json transform_to_json(const RigidTransform& T)
{
  const auto q = T.quaternion();
  return {{"translation", {T.translation.x(), T.translation.y(), T.translation.z()}},
          {"quaternion_xyzw", {q.x(), q.y(), q.z(), q.w()}}};
}

inline RigidTransform transform_from_json(const nlohmann::json& j)
{
  const auto t = j.at("translation").get<std::vector<double>>();
  const auto q = j.at("quaternion_xyzw").get<std::vector<double>>();
  if (t.size() != 3 || q.size() != 4) {
    throw ParseError("transform: expected 3 translation and 4 quaternion values");
  }
  return RigidTransform::from_quaternion(Eigen::Quaterniond(q[3], q[0], q[1], q[2]), Vec3(t[0], t[1], t[2]));
}

inline void write_native(const fs::path& dir, const Dataset& ds)
{
  fs::create_directories(dir / "scans");
  std::string index = "# timestamp scan_file\n";
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scans/%06zu.bin", i);
    index += format_exact(ds.scans[i].timestamp) + " " + name + "\n";
    write_file(dir / name, encode_scan(ds.scans[i]));
  }
  write_file(dir / "index.txt", index);

  std::string imu = "# timestamp ax ay az gx gy gz\n";
  for (const auto& s : ds.imu) {
    imu += format_exact(s.timestamp);
    for (int k = 0; k < 3; ++k) {
      imu += " " + format_exact(s.accel[k]);
    }
    for (int k = 0; k < 3; ++k) {
      imu += " " + format_exact(s.gyro[k]);
    }
    imu += "\n";
  }
  write_file(dir / "imu.txt", imu);

  nlohmann::json meta = {{"name", ds.name}, {"closed_loop", ds.closed_loop}, {"format", "rio4d-native-1"}};
  if (ds.extrinsic) {
    meta["extrinsic"] = transform_to_json(*ds.extrinsic);
  }
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  if (!ds.groundtruth.empty()) {
    write_trajectory(dir / "groundtruth.txt", ds.groundtruth);
  }
}

inline std::vector<ImuSample> parse_imu_table(const std::string& text, const std::string& name)
{
  std::vector<ImuSample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream ls(line);
    ImuSample s;
    if (!(ls >> s.timestamp >> s.accel.x() >> s.accel.y() >> s.accel.z() >> s.gyro.x() >> s.gyro.y() >>
          s.gyro.z())) {
      throw ParseError(name + ": malformed IMU record at byte offset " + std::to_string(line_offset));
    }
    if (!out.empty() && s.timestamp < out.back().timestamp) {
      throw ParseError(name + ": out-of-order timestamp at byte offset " + std::to_string(line_offset));
    }
    out.push_back(s);
  }
  return out;
}

inline Dataset read_native(const fs::path& dir)
{
  Dataset ds;
  const std::string index = read_file(dir / "index.txt");
  std::istringstream in(index);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream ls(line);
    double t = 0.0;
    std::string file;
    if (!(ls >> t >> file)) {
      throw ParseError("index.txt: malformed entry at byte offset " + std::to_string(line_offset));
    }
    if (!ds.scans.empty() && t < ds.scans.back().timestamp) {
      throw ParseError("index.txt: out-of-order timestamp at byte offset " + std::to_string(line_offset));
    }
    ds.scans.push_back(decode_scan(read_file(dir / file), t, ds.scans.size(), file));
  }
  ds.imu = parse_imu_table(read_file(dir / "imu.txt"), "imu.txt");
  if (fs::exists(dir / "meta.json")) {
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("meta.json: " + std::string(e.what()) + " (byte offset " + std::to_string(e.byte) + ")");
    }
    ds.name = meta.value("name", dir.filename().string());
    ds.closed_loop = meta.value("closed_loop", false);
    if (meta.contains("extrinsic")) {
      ds.extrinsic = transform_from_json(meta["extrinsic"]);
    }
  } else {
    ds.name = dir.filename().string();
  }
  if (fs::exists(dir / "groundtruth.txt")) {
    ds.groundtruth = read_trajectory(dir / "groundtruth.txt");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// ColoRadar sequence directory (read-only)
//
//   <seq>/imu/imu_data.txt                 "ax ay az gx gy gz" per line
//   <seq>/imu/timestamps.txt
//   <seq>/single_chip/pointclouds/data/radar_pointcloud_<i>.bin
//                                          f32 x, y, z, intensity, doppler
//   <seq>/single_chip/pointclouds/timestamps.txt
//   <calib>/transforms/base_to_imu.txt     "x y z" / "qx qy qz qw"
//   <calib>/transforms/base_to_single_chip.txt
//   <seq>/groundtruth/groundtruth_poses.txt (optional) "x y z qx qy qz qw"
//   <seq>/groundtruth/timestamps.txt
// ---------------------------------------------------------------------------

inline std::vector<double> read_timestamps(const fs::path& path)
{
  std::vector<double> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream ls(line);
    double t = 0.0;
    if (!(ls >> t)) {
      throw ParseError(path.string() + ": malformed timestamp at byte offset " + std::to_string(line_offset));
    }
    if (!out.empty() && t < out.back()) {
      throw ParseError(path.string() + ": out-of-order timestamp at byte offset " + std::to_string(line_offset));
    }
    out.push_back(t);
  }
  return out;
}

inline RigidTransform read_coloradar_transform(const fs::path& path)
{
  std::istringstream in(read_file(path));
  double x, y, z, qx, qy, qz, qw;
  if (!(in >> x >> y >> z >> qx >> qy >> qz >> qw)) {
    throw ParseError(path.string() + ": expected 'x y z' and 'qx qy qz qw'");
  }
  return RigidTransform::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(x, y, z));
}

/// ColoRadar stores the target's radial velocity; set `negate_doppler` to map
/// it onto the ego-velocity projection convention used here.
inline Dataset read_coloradar(const fs::path& seq, const fs::path& calib_dir, bool negate_doppler = true)
{
  Dataset ds;
  ds.name = seq.filename().string();

  const auto imu_times = read_timestamps(seq / "imu" / "timestamps.txt");
  {
    std::istringstream in(read_file(seq / "imu" / "imu_data.txt"));
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      const std::size_t line_offset = offset;
      offset += line.size() + 1;
      if (line.find_first_not_of(" \t\r") == std::string::npos) {
        continue;
      }
      std::istringstream ls(line);
      ImuSample s;
      if (!(ls >> s.accel.x() >> s.accel.y() >> s.accel.z() >> s.gyro.x() >> s.gyro.y() >> s.gyro.z())) {
        throw ParseError("imu_data.txt: malformed record at byte offset " + std::to_string(line_offset));
      }
      if (ds.imu.size() >= imu_times.size()) {
        throw ParseError("imu_data.txt: more records than timestamps at byte offset " + std::to_string(line_offset));
      }
      s.timestamp = imu_times[ds.imu.size()];
      ds.imu.push_back(s);
    }
    if (ds.imu.size() != imu_times.size()) {
      throw ParseError("imu_data.txt: " + std::to_string(ds.imu.size()) + " records for " +
                       std::to_string(imu_times.size()) + " timestamps");
    }
  }

  const fs::path pc_dir = seq / "single_chip" / "pointclouds";
  const auto scan_times = read_timestamps(pc_dir / "timestamps.txt");
  for (std::size_t i = 0; i < scan_times.size(); ++i) {
    const fs::path file = pc_dir / "data" / ("radar_pointcloud_" + std::to_string(i) + ".bin");
    const std::string bytes = read_file(file);
    if (bytes.size() % 20 != 0) {
      throw ParseError("scan " + std::to_string(i) + " (" + file.filename().string() +
                       "): truncated point record at byte offset " + std::to_string(bytes.size() - bytes.size() % 20));
    }
    RadarScan scan;
    scan.timestamp = scan_times[i];
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t k = 0; k < bytes.size() / 20; ++k) {
      const unsigned char* p = data + 20 * k;
      RadarPoint pt;
      pt.position = Vec3(get_f32(p), get_f32(p + 4), get_f32(p + 8));
      pt.intensity = get_f32(p + 12);
      pt.doppler = get_f32(p + 16) * (negate_doppler ? -1.0 : 1.0);
      scan.points.push_back(pt);
    }
    ds.scans.push_back(std::move(scan));
  }

  const fs::path tf = calib_dir / "transforms";
  if (fs::exists(tf / "base_to_imu.txt") && fs::exists(tf / "base_to_single_chip.txt")) {
    const RigidTransform base_imu = read_coloradar_transform(tf / "base_to_imu.txt");
    const RigidTransform base_radar = read_coloradar_transform(tf / "base_to_single_chip.txt");
    ds.extrinsic = base_imu.inverse() * base_radar;
  }

  const fs::path gt = seq / "groundtruth";
  if (fs::exists(gt / "groundtruth_poses.txt") && fs::exists(gt / "timestamps.txt")) {
    const auto times = read_timestamps(gt / "timestamps.txt");
    std::istringstream in(read_file(gt / "groundtruth_poses.txt"));
    for (const double t : times) {
      double x, y, z, qx, qy, qz, qw;
      if (!(in >> x >> y >> z >> qx >> qy >> qz >> qw)) {
        throw ParseError("groundtruth_poses.txt: fewer poses than timestamps");
      }
      if (!ds.groundtruth.poses.empty() && !(t > ds.groundtruth.poses.back().timestamp)) {
        continue;
      }
      ds.groundtruth.poses.push_back({t, RigidTransform::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(x, y, z))});
    }
  }
  return ds;
}

inline Dataset read_dataset(const fs::path& path, DatasetFormat format, const fs::path& calib_dir = {})
{
  if (!fs::exists(path)) {
    throw ParseError("dataset path does not exist: " + path.string());
  }
  if (format == DatasetFormat::Native) {
    return read_native(path);
  }
  return read_coloradar(path, calib_dir.empty() ? path.parent_path() / "calib" : calib_dir);
}

}  // namespace io
}  // namespace rio4d
