// Loop closure, simulator, dataset I/O, evaluation, configuration, the
// pipeline drivers and the command-line tool.
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "rio4d/rio4d.hpp"

namespace fs = std::filesystem;
using namespace rio4d;
namespace oc = rio4d::oracle;

namespace {

const fs::path kFixtures = RIO4D_FIXTURE_DIR;

fs::path scratch_dir(const std::string& name)
{
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "rio4d_tests" / (std::string(info->name()) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Short straight drive through the loop-fixture world.
Scenario short_drive(double seconds = 4.0)
{
  Scenario sc = load_scenario(kFixtures / "loop_200m.json");
  sc.name = "short_drive";
  sc.trajectory = TrajectorySpec{};
  sc.trajectory.kind = PathKind::ConstantTwist;
  sc.trajectory.body_velocity = Vec3(2.0, 0.0, 0.0);
  sc.trajectory.body_rate = Vec3(0.0, 0.0, 0.05);
  sc.trajectory.motion_duration = seconds;
  sc.trajectory.hold_start = 1.0;
  sc.trajectory.ramp = 1.0;
  sc.trajectory.hold_end = 0.5;
  sc.closed_loop = false;
  sc.radar.max_points = 300;
  return sc;
}

RadarScan points_to_scan(const std::vector<Vec3>& pts)
{
  RadarScan s;
  for (const auto& p : pts) {
    s.points.push_back({p, 0.0, 1.0});
  }
  return s;
}

TrajectoryEstimate circle_trajectory(std::size_t n)
{
  TrajectoryEstimate t;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 0.1 * static_cast<double>(i);
    const Mat3 R = so3_exp(Vec3(0.0, 0.0, a));
    t.poses.push_back({0.1 * static_cast<double>(i), {R, Vec3(5.0 * std::sin(a), 5.0 - 5.0 * std::cos(a), 0.2 * a)}});
  }
  return t;
}

int run_cli(const std::string& args, const fs::path& log)
{
  const std::string cmd = std::string("\"") + RIO4D_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scan context
// ---------------------------------------------------------------------------

TEST(ScanContext, OneSectorRotationShiftsByOne)
{
  // Points at sector centers so a rotation by one sector width keeps them
  // inside bins.
  const ScanContextConfig cfg{20, 60, 80.0, 2.0};
  const double width = 2.0 * kPi / cfg.sectors;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> sector(0, cfg.sectors - 1);
  std::uniform_int_distribution<int> ring(0, cfg.rings - 1);
  std::uniform_real_distribution<double> height(0.0, 3.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) {
    const double az = -kPi + (sector(rng) + 0.5) * width;
    const double r = (ring(rng) + 0.5) * cfg.max_range / cfg.rings;
    pts.emplace_back(r * std::cos(az), r * std::sin(az), height(rng));
  }
  const Mat3 R = so3_exp(Vec3(0.0, 0.0, width));
  std::vector<Vec3> rotated;
  for (const auto& p : pts) {
    rotated.push_back(R * p);
  }
  const auto a = make_descriptor(points_to_scan(pts), cfg);
  const auto b = make_descriptor(points_to_scan(rotated), cfg);
  const auto m = descriptor_distance(a, b);
  EXPECT_NEAR(m.distance, 0.0, 1e-9);
  EXPECT_EQ(m.shift, 1);
}

TEST(ScanContext, ColumnShiftIsRecovered)
{
  std::mt19937_64 rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) {
    pts.push_back(oc::random_vec(rng, 20.0));
  }
  const auto a = make_descriptor(points_to_scan(pts));
  const auto b = shift_columns(a, 5);
  const auto m = descriptor_distance(a, b);
  EXPECT_NEAR(m.distance, 0.0, 1e-12);
  EXPECT_EQ(m.shift, 5);
  EXPECT_NEAR(descriptor_distance(a, a).distance, 0.0, 1e-12);
  EXPECT_EQ(descriptor_distance(a, a).shift, 0);
}

TEST(ScanContext, DistanceIsSymmetricAndBounded)
{
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pa;
    std::vector<Vec3> pb;
    for (int i = 0; i < 150; ++i) {
      pa.push_back(oc::random_vec(rng, 25.0));
      pb.push_back(oc::random_vec(rng, 25.0));
    }
    const auto a = make_descriptor(points_to_scan(pa));
    const auto b = make_descriptor(points_to_scan(pb));
    const double ab = descriptor_distance(a, b).distance;
    EXPECT_NEAR(ab, descriptor_distance(b, a).distance, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(ScanContext, Errors)
{
  EXPECT_THROW(make_descriptor(RadarScan{}), std::invalid_argument);
  RadarScan one;
  one.points.push_back({Vec3(1.0, 0.0, 0.0), 0.0, 0.0});
  EXPECT_THROW(make_descriptor(one, {0, 60, 80.0, 0.0}), std::invalid_argument);
  const auto a = make_descriptor(one, {10, 30, 80.0, 0.0});
  const auto b = make_descriptor(one, {20, 60, 80.0, 0.0});
  EXPECT_THROW(descriptor_distance(a, b), std::invalid_argument);
}

TEST(ScanContext, DetectLoopHonorsGapAndThreshold)
{
  std::mt19937_64 rng(9);
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) {
    pts.push_back(oc::random_vec(rng, 20.0));
  }
  const auto q = make_descriptor(points_to_scan(pts));
  std::vector<KeyframeDescriptor> db{{0, shift_columns(q, 3)}, {95, q}};
  const auto hit = detect_loop(100, q, db);
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->id, 0);  // id 95 lies inside the exclusion gap
  EXPECT_EQ(hit->shift, 3);
  LoopDetectorConfig strict;
  strict.threshold = 0.0;
  EXPECT_FALSE(detect_loop(100, q, db, strict).has_value());
}

// ---------------------------------------------------------------------------
// GICP and pose graph
// ---------------------------------------------------------------------------

TEST(Gicp, RecoversExactTransform)
{
  std::mt19937_64 rng(21);
  const auto room = oc::synthetic_room(rng);
  const RigidTransform T(so3_exp(Vec3(0.0, 0.0, 4.0 * kDeg2Rad)), Vec3(0.4, -0.3, 0.05));
  const RigidTransform inv = T.inverse();
  std::vector<Vec3> source;
  for (const auto& p : room) {
    source.push_back(inv * p);
  }
  const auto res = relative_pose_gicp(source, room, RigidTransform::identity());
  EXPECT_LT((res.transform.translation - T.translation).norm(), 1e-3);
  EXPECT_LT(so3_log(res.transform.rotation * T.rotation.transpose()).norm() / kDeg2Rad, 0.01);
  EXPECT_GT(res.fitness, 0.99);
  EXPECT_TRUE(res.information.isApprox(res.information.transpose(), 1e-9));
}

TEST(Gicp, DisjointCloudsDoNotConverge)
{
  std::mt19937_64 rng(22);
  const auto room = oc::synthetic_room(rng);
  std::vector<Vec3> far;
  for (const auto& p : room) {
    far.push_back(p + Vec3(500.0, 0.0, 0.0));
  }
  bool rejected = false;
  try {
    rejected = relative_pose_gicp(far, room, RigidTransform::identity()).fitness < 0.5;
  } catch (const NotConverged&) {
    rejected = true;
  }
  EXPECT_TRUE(rejected);
}

TEST(Gicp, InvalidInput)
{
  const std::vector<Vec3> empty;
  const std::vector<Vec3> one{Vec3::Zero()};
  EXPECT_THROW(relative_pose_gicp(empty, one, RigidTransform::identity()), std::invalid_argument);
  GicpConfig bad;
  bad.min_correspondence_distance = 10.0;
  EXPECT_THROW(relative_pose_gicp(one, one, RigidTransform::identity(), bad), std::invalid_argument);
}

TEST(PoseGraph, EdgeResidualVanishesAtMeasurement)
{
  std::mt19937_64 rng(31);
  const RigidTransform a(oc::random_rotation(rng), oc::random_vec(rng, 5.0));
  const RigidTransform b(oc::random_rotation(rng), oc::random_vec(rng, 5.0));
  EXPECT_LT(edge_residual(a, b, a.inverse() * b).norm(), 1e-12);
}

TEST(PoseGraph, OptimizationReducesCostAndClosesLoop)
{
  // Square loop with drifting odometry and one exact loop edge.
  std::mt19937_64 rng(32);
  std::vector<RigidTransform> truth;
  for (int i = 0; i < 20; ++i) {
    const double a = 2.0 * kPi * i / 20.0;
    truth.push_back({so3_exp(Vec3(0.0, 0.0, a + kPi / 2.0)), Vec3(10.0 * std::cos(a), 10.0 * std::sin(a), 0.0)});
  }
  PoseGraph g;
  RigidTransform drift = truth[0];
  g.add_node(drift);
  for (int i = 1; i < 20; ++i) {
    RigidTransform rel = truth[i - 1].inverse() * truth[i];
    rel.translation += Vec3(0.05, 0.02, 0.01);
    rel.rotation = rel.rotation * so3_exp(Vec3(0.0, 0.0, 0.01));
    drift = drift * rel;
    g.add_node(drift);
    g.add_edge({i - 1, i, rel, Mat6::Identity(), false});
  }
  g.add_edge({19, 0, truth[19].inverse() * truth[0], 100.0 * Mat6::Identity(), true});
  const auto res = optimize_pose_graph(g);
  ASSERT_GE(res.cost_history.size(), 2u);
  for (std::size_t i = 1; i < res.cost_history.size(); ++i) {
    EXPECT_LE(res.cost_history[i], res.cost_history[i - 1] * (1.0 + 1e-12));
  }
  EXPECT_LT(res.cost_history.back(), 0.1 * res.cost_history.front());
  EXPECT_TRUE(res.converged);
  const double before = (g.nodes()[19].translation - truth[19].translation).norm();
  const double after = (res.poses[19].translation - truth[19].translation).norm();
  EXPECT_LT(after, 0.25 * before);
  // Node 0 is the gauge.
  EXPECT_LT((res.poses[0].translation - truth[0].translation).norm(), 1e-12);
}

TEST(PoseGraph, RejectsBadEdges)
{
  PoseGraph g;
  g.add_node(RigidTransform::identity());
  g.add_node(RigidTransform::identity());
  EXPECT_THROW(g.add_edge({0, 2, {}, Mat6::Identity(), false}), std::invalid_argument);
  EXPECT_THROW(g.add_edge({1, 1, {}, Mat6::Identity(), false}), std::invalid_argument);
  Mat6 asym = Mat6::Identity();
  asym(0, 1) = 1.0;
  EXPECT_THROW(g.add_edge({0, 1, {}, asym, false}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

TEST(Simulator, SameSeedSameData)
{
  const Scenario sc = short_drive(2.0);
  const Dataset a = Simulator(sc).generate();
  const Dataset b = Simulator(sc).generate();
  ASSERT_EQ(a.scans.size(), b.scans.size());
  EXPECT_EQ(io::encode_scan(a.scans[5]), io::encode_scan(b.scans[5]));
  ASSERT_EQ(a.imu.size(), b.imu.size());
  EXPECT_EQ(a.imu[100].accel, b.imu[100].accel);

  Scenario other = sc;
  other.seed = sc.seed + 1;
  const Dataset c = Simulator(other).generate();
  EXPECT_NE(io::encode_scan(a.scans[5]), io::encode_scan(c.scans[5]));
}

TEST(Simulator, ImuAtRestMeasuresGravityReaction)
{
  Scenario sc;
  sc.imu.noiseless = true;
  sc.trajectory.kind = PathKind::Static;
  sc.trajectory.motion_duration = 2.0;
  const auto imu = Simulator(sc).sample_imu();
  ASSERT_FALSE(imu.empty());
  for (const auto& s : imu) {
    EXPECT_LT((s.accel - Vec3(0.0, 0.0, sc.gravity)).norm(), 1e-9);
    EXPECT_LT(s.gyro.norm(), 1e-12);
  }
  EXPECT_NEAR(imu[1].timestamp - imu[0].timestamp, 1.0 / sc.imu_rate, 1e-12);
}

TEST(Simulator, LoopScenarioIsClosed)
{
  const Scenario sc = load_scenario(kFixtures / "loop_200m.json");
  const Trajectory traj(sc.trajectory);
  const auto start = traj.evaluate(0.0);
  const auto end = traj.evaluate(traj.duration());
  EXPECT_LT((start.pose.translation - end.pose.translation).norm(), 1e-6);
  EXPECT_LT(so3_log(start.pose.rotation.transpose() * end.pose.rotation).norm(), 1e-6);
  EXPECT_LT(end.velocity.norm(), 1e-6);
  EXPECT_TRUE(sc.closed_loop);
}

TEST(Simulator, StaticPointsSatisfyDopplerModel)
{
  Scenario sc = short_drive(2.0);
  sc.radar.max_points = 1000;
  const Simulator sim(sc);
  const double t = 2.5;
  const auto k = sim.trajectory().evaluate(t);
  const Vec3 v = radar_velocity(k, sc.extrinsic);
  // Simulated scans with all noise on go through the same radar model; the
  // noiseless ego-velocity must sit inside the robust estimate's spread.
  const Dataset ds = sim.generate();
  const auto& scan = ds.scans[static_cast<std::size_t>(std::round((t - ds.scans.front().timestamp) * sc.radar_rate))];
  const auto k2 = sim.trajectory().evaluate(scan.timestamp);
  const auto est = estimate_ego_velocity_gnc(scan, GncParams{});
  EXPECT_LT((est.velocity - radar_velocity(k2, sc.extrinsic)).norm(), 0.1);
  EXPECT_GT(v.norm(), 0.5);
}

// ---------------------------------------------------------------------------
// Dataset I/O
// ---------------------------------------------------------------------------

TEST(Dataset, NativeRoundTripIsBitIdentical)
{
  const Dataset ds = Simulator(short_drive(2.0)).generate();
  const auto dir = scratch_dir("native");
  io::write_native(dir, ds);
  const Dataset back = io::read_native(dir);
  ASSERT_EQ(back.scans.size(), ds.scans.size());
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    EXPECT_EQ(back.scans[i].timestamp, ds.scans[i].timestamp);
    EXPECT_EQ(io::encode_scan(back.scans[i]), io::encode_scan(ds.scans[i]));
    for (std::size_t j = 0; j < ds.scans[i].size(); ++j) {
      EXPECT_EQ(back.scans[i].points[j].position, ds.scans[i].points[j].position);
    }
  }
  ASSERT_EQ(back.imu.size(), ds.imu.size());
  for (std::size_t i = 0; i < ds.imu.size(); ++i) {
    EXPECT_EQ(back.imu[i].timestamp, ds.imu[i].timestamp);
    EXPECT_EQ(back.imu[i].accel, ds.imu[i].accel);
    EXPECT_EQ(back.imu[i].gyro, ds.imu[i].gyro);
  }
  ASSERT_TRUE(back.extrinsic.has_value());
  EXPECT_EQ(back.extrinsic->translation, ds.extrinsic->translation);
  EXPECT_EQ(back.groundtruth.size(), ds.groundtruth.size());
  EXPECT_EQ(io::format_trajectory(back.groundtruth), io::format_trajectory(ds.groundtruth));
  EXPECT_EQ(back.name, ds.name);
}

TEST(Dataset, TruncatedScanNamesIndexAndOffset)
{
  RadarScan s;
  for (int i = 0; i < 4; ++i) {
    s.points.push_back({Vec3(i, 1.0, 2.0), 0.5, 1.0});
  }
  std::string blob = io::encode_scan(s);
  blob.resize(blob.size() - 7);
  try {
    io::decode_scan(blob, 1.0, 7, "scans/000007.bin");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("scan 7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("record 3 of 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 64"), std::string::npos) << msg;
  }
  EXPECT_THROW(io::decode_scan(io::encode_scan(s) + "x", 1.0, 0, "x"), ParseError);
  EXPECT_THROW(io::decode_scan("ab", 1.0, 0, "x"), ParseError);
}

TEST(Dataset, TruncatedFileOnDiskIsReported)
{
  const Dataset ds = Simulator(short_drive(1.0)).generate();
  const auto dir = scratch_dir("truncated");
  io::write_native(dir, ds);
  const fs::path victim = dir / "scans" / "000003.bin";
  fs::resize_file(victim, fs::file_size(victim) - 3);
  try {
    io::read_native(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("scan 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, OutOfOrderTimestampsRejected)
{
  const Dataset ds = Simulator(short_drive(1.0)).generate();
  const auto dir = scratch_dir("order");
  io::write_native(dir, ds);
  std::ofstream(dir / "index.txt") << "# timestamp scan_file\n2.0 scans/000000.bin\n1.0 scans/000001.bin\n";
  EXPECT_THROW(io::read_native(dir), ParseError);

  EXPECT_THROW(io::parse_imu_table("1.0 0 0 9.81 0 0 0\n0.5 0 0 9.81 0 0 0\n", "imu"), ParseError);
  EXPECT_THROW(io::parse_imu_table("1.0 0 0 9.81\n", "imu"), ParseError);
}

TEST(Dataset, TrajectoryTextRoundTrip)
{
  const auto t = circle_trajectory(30);
  const std::string text = io::format_trajectory(t, {"a comment"});
  EXPECT_EQ(text.rfind("# a comment", 0), 0u);
  const auto back = io::parse_trajectory(text);
  ASSERT_EQ(back.size(), t.size());
  EXPECT_EQ(io::format_trajectory(back), io::format_trajectory(t));
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_LT((back.poses[i].pose.translation - t.poses[i].pose.translation).norm(), 1e-8);
    EXPECT_LT(so3_log(back.poses[i].pose.rotation.transpose() * t.poses[i].pose.rotation).norm(), 1e-8);
  }
  EXPECT_THROW(io::parse_trajectory("0 1 2 3\n"), ParseError);
}

TEST(Dataset, MissingDirectoryIsParseError)
{
  EXPECT_THROW(io::read_native(fs::temp_directory_path() / "rio4d_tests" / "does_not_exist"), ParseError);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

TEST(Evaluate, IdenticalTrajectoriesScoreZero)
{
  const auto t = circle_trajectory(60);
  const auto m = evaluate(t, t);
  EXPECT_EQ(m.matched, t.size());
  EXPECT_LT(m.ape_translation_rmse, 1e-9);
  EXPECT_LT(m.ape_rotation_rmse, 1e-9);
  EXPECT_LT(m.rpe_translation, 1e-9);
  EXPECT_LT(m.closure_horizontal, 1e-12);
  EXPECT_LT(m.closure_vertical, 1e-12);
}

TEST(Evaluate, RigidOffsetIsAlignedAway)
{
  const auto ref = circle_trajectory(60);
  const RigidTransform T(so3_exp(Vec3(0.1, -0.2, 0.7)), Vec3(3.0, -4.0, 1.5));
  TrajectoryEstimate est = ref;
  for (auto& p : est.poses) {
    p.pose = T * p.pose;
  }
  const auto m = evaluate(est, ref);
  EXPECT_LT(m.ape_translation_rmse, 1e-6);
  EXPECT_LT(m.ape_rotation_rmse, 1e-6);
  EXPECT_LT(m.closure_horizontal, 1e-9);
  EXPECT_LT(m.closure_vertical, 1e-9);
}

TEST(Evaluate, FinalVerticalOffsetIsVerticalClosure)
{
  const auto ref = circle_trajectory(60);
  TrajectoryEstimate est = ref;
  est.poses.back().pose.translation.z() += 1.0;
  const auto m = evaluate(est, ref);
  EXPECT_NEAR(m.closure_vertical, 1.0, 1e-12);
  EXPECT_NEAR(m.closure_horizontal, 0.0, 1e-12);
  EXPECT_FALSE(m.closure_valid);
}

TEST(Evaluate, ClosedReferenceMarksClosureValid)
{
  TrajectoryEstimate ref;
  for (int i = 0; i <= 63; ++i) {
    const double a = 0.1 * i;
    ref.poses.push_back({0.1 * i, {so3_exp(Vec3(0.0, 0.0, a)), Vec3(std::sin(a), 1.0 - std::cos(a), 0.0)}});
  }
  ref.poses.back().pose = ref.poses.front().pose;
  TrajectoryEstimate est = ref;
  est.poses.back().pose.translation += Vec3(0.3, 0.4, -0.2);
  const auto m = evaluate(est, ref);
  EXPECT_TRUE(m.closure_valid);
  EXPECT_NEAR(m.closure_horizontal, 0.5, 1e-12);
  EXPECT_NEAR(m.closure_vertical, 0.2, 1e-12);
}

TEST(Evaluate, AssociationToleratesJitter)
{
  const auto ref = circle_trajectory(40);
  TrajectoryEstimate est = ref;
  for (std::size_t i = 0; i < est.size(); ++i) {
    est.poses[i].timestamp += (i % 2 == 0 ? 0.01 : -0.01);
  }
  EXPECT_EQ(associate(est, ref, 0.05).size(), ref.size());
  EXPECT_TRUE(associate(est, ref, 0.005).empty());
}

TEST(Evaluate, DisjointTimesThrowNoOverlap)
{
  const auto ref = circle_trajectory(30);
  TrajectoryEstimate est = ref;
  for (auto& p : est.poses) {
    p.timestamp += 100.0;
  }
  EXPECT_THROW(evaluate(est, ref), NoOverlap);
  EXPECT_THROW(evaluate(TrajectoryEstimate{}, ref), NoOverlap);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, PipelineRoundTrip)
{
  PipelineConfig c;
  c.use_scan_update = false;
  c.scan_match_mode = ScanMatchMode::LastScans;
  c.last_k_scans = 7;
  c.filter.point_noise = 12.5;
  c.backend.detector.threshold = 0.2;
  c.extrinsic = RigidTransform(so3_exp(Vec3(0.0, 0.0, 0.3)), Vec3(0.1, 0.2, 0.3));
  const Json j = to_json(c);
  const PipelineConfig back = pipeline_config_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_FALSE(back.use_scan_update);
  EXPECT_EQ(back.last_k_scans, 7);
  EXPECT_DOUBLE_EQ(back.filter.point_noise, 12.5);
  ASSERT_TRUE(back.extrinsic.has_value());
  EXPECT_LT((back.extrinsic->translation - Vec3(0.1, 0.2, 0.3)).norm(), 1e-12);
}

TEST(Config, ScenarioRoundTrip)
{
  const Scenario sc = load_scenario(kFixtures / "loop_200m.json");
  const Json j = to_json(sc);
  EXPECT_EQ(to_json(scenario_from_json(j)).dump(), j.dump());
}

TEST(Config, UnknownKeysAndBadValuesRejected)
{
  EXPECT_THROW(pipeline_config_from_json(Json{{"use_scan_updte", false}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(Json{{"filter", {{"bogus", 1}}}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(Json{{"use_scan_update", "yes"}}), ConfigError);
  EXPECT_THROW(scenario_from_json(Json{{"trajectory", {{"kind", "spiral"}}}}), ConfigError);
  // Partial configs fall back to defaults.
  const auto c = pipeline_config_from_json(Json{{"use_scan_update", false}});
  EXPECT_FALSE(c.use_scan_update);
  EXPECT_TRUE(c.use_velocity_update);
}

TEST(Config, MalformedFileIsConfigError)
{
  const auto dir = scratch_dir("cfg");
  std::ofstream(dir / "bad.json") << "{ \"use_imu\": tru";
  EXPECT_THROW(load_pipeline_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_pipeline_config(dir / "missing.json"), ConfigError);
}

// ---------------------------------------------------------------------------
// Pipeline drivers
// ---------------------------------------------------------------------------

TEST(Pipeline, ValidateRejectsInconsistentConfigs)
{
  PipelineConfig c;
  c.use_velocity_update = false;
  c.use_scan_update = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.scan_match_mode = ScanMatchMode::LastScans;
  c.last_k_scans = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.filter.point_noise = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.gnc.sigma_r = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(PipelineConfig{}.validate());
}

TEST(Pipeline, EmptyDatasetGivesEmptyTrajectory)
{
  Dataset ds;
  ds.extrinsic = RigidTransform::identity();
  const auto odo = run_odometry(ds, PipelineConfig{});
  EXPECT_TRUE(odo.trajectory.empty());
  EXPECT_EQ(odo.map.size(), 0u);
  const auto slam = run_slam(ds, PipelineConfig{});
  EXPECT_TRUE(slam.trajectory.empty());
  EXPECT_TRUE(slam.loops.empty());
}

TEST(Pipeline, OdometryTracksShortDrive)
{
  const Dataset ds = Simulator(short_drive(4.0)).generate();
  std::size_t frames = 0;
  const auto res = run_odometry(ds, PipelineConfig{}, [&](std::size_t, const FrameResult&) { ++frames; });
  ASSERT_EQ(res.trajectory.size(), ds.scans.size());
  EXPECT_EQ(frames, ds.scans.size());
  for (std::size_t i = 1; i < res.trajectory.size(); ++i) {
    EXPECT_GT(res.trajectory.poses[i].timestamp, res.trajectory.poses[i - 1].timestamp);
  }
  const auto m = evaluate(res.trajectory, ds.groundtruth);
  EXPECT_LT(m.ape_translation_rmse, 0.1);
  EXPECT_GT(res.map.size(), 0u);
  EXPECT_EQ(res.timing.total.count, ds.scans.size());
}

TEST(Pipeline, SlamWithoutLoopsEqualsOdometry)
{
  const Dataset ds = Simulator(short_drive(4.0)).generate();
  PipelineConfig cfg;
  cfg.use_loop_closure = true;
  cfg.backend.detector.threshold = 0.0;
  const auto slam = run_slam(ds, cfg);
  EXPECT_TRUE(slam.loops.empty());
  ASSERT_EQ(slam.trajectory.size(), slam.odometry.size());
  for (std::size_t i = 0; i < slam.trajectory.size(); ++i) {
    EXPECT_LT((slam.trajectory.poses[i].pose.translation - slam.odometry.poses[i].pose.translation).norm(), 1e-9);
  }
  const auto odo = run_odometry(ds, PipelineConfig{});
  EXPECT_EQ(io::format_trajectory(odo.trajectory), io::format_trajectory(slam.odometry));
  EXPECT_GT(slam.keyframes, 0u);
}

TEST(Pipeline, ExtrinsicResolution)
{
  Dataset ds;
  const RigidTransform calib(Mat3::Identity(), Vec3(0.3, 0.0, 0.2));
  const RigidTransform over(so3_exp(Vec3(0.0, 0.0, 0.1)), Vec3(0.1, 0.0, 0.0));
  PipelineConfig cfg;
  EXPECT_EQ(resolve_extrinsic(ds, cfg).translation, Vec3::Zero());
  ds.extrinsic = calib;
  EXPECT_EQ(resolve_extrinsic(ds, cfg).translation, calib.translation);
  cfg.extrinsic = over;
  EXPECT_EQ(resolve_extrinsic(ds, cfg).translation, over.translation);
}

// ---------------------------------------------------------------------------
// Map export
// ---------------------------------------------------------------------------

TEST(ExportMap, EmptyMapWritesValidFile)
{
  const auto dir = scratch_dir("ply");
  export_map(std::vector<Vec3>{}, dir / "empty.ply");
  EXPECT_TRUE(io::read_point_cloud(dir / "empty.ply").empty());
}

TEST(ExportMap, RoundTripPreservesPointsAndCount)
{
  const auto dir = scratch_dir("ply");
  std::mt19937_64 rng(41);
  Submap map(SubmapConfig{0.2, 10, 500, 100});
  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i) {
    pts.push_back(oc::random_vec(rng, 10.0));
  }
  map.insert_points(pts);
  export_map(map, dir / "map.ply");
  const auto back = io::read_point_cloud(dir / "map.ply");
  const auto expected = map_points(map);
  ASSERT_EQ(back.size(), map.size());
  ASSERT_EQ(back.size(), expected.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_LT((back[i] - expected[i]).cwiseAbs().maxCoeff(), 1e-5 * (1.0 + expected[i].norm()));
  }
}

TEST(ExportMap, CorruptFileIsParseError)
{
  const auto dir = scratch_dir("ply");
  std::ofstream(dir / "bad.ply") << "ply\nformat binary_little_endian 1.0\nelement vertex 10\n"
                                    "property float x\nproperty float y\nproperty float z\nend_header\nabc";
  EXPECT_THROW(io::read_point_cloud(dir / "bad.ply"), ParseError);
}

// ---------------------------------------------------------------------------
// Command-line tool
// ---------------------------------------------------------------------------

TEST(Cli, SimulateOdometryEvaluateExport)
{
  const auto dir = scratch_dir("cli");
  std::ofstream(dir / "scenario.json") << to_json(short_drive(3.0)).dump(2);
  ASSERT_EQ(run_cli("simulate --config \"" + (dir / "scenario.json").string() + "\" --output \"" +
                        (dir / "data").string() + "\" --seed 4",
                    dir / "sim.log"),
            0);
  ASSERT_TRUE(fs::exists(dir / "data" / "index.txt"));
  const std::string data = " --dataset \"" + (dir / "data").string() + "\"";
  ASSERT_EQ(run_cli("odometry" + data + " --output \"" + (dir / "run").string() + "\"", dir / "odo.log"), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "trajectory.txt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "timing.txt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "run" / "map.ply"));
  EXPECT_EQ(run_cli("evaluate" + data + " --trajectory \"" + (dir / "run" / "trajectory.txt").string() + "\"",
                    dir / "eval.log"),
            0);
  EXPECT_EQ(run_cli("export-map" + data + " --output \"" + (dir / "map.ply").string() + "\"", dir / "exp.log"), 0);
  EXPECT_FALSE(io::read_point_cloud(dir / "map.ply").empty());

  // Seed override is honored and recorded.
  const Json sc = load_json(dir / "data" / "scenario.json");
  EXPECT_EQ(sc.at("seed").get<std::uint64_t>(), 4u);
}

TEST(Cli, ExitCodes)
{
  const auto dir = scratch_dir("cli_codes");
  std::ofstream(dir / "bad.json") << "{\"no_such_option\": 1}";
  const Dataset ds = Simulator(short_drive(1.0)).generate();
  io::write_native(dir / "data", ds);
  const std::string data = " --dataset \"" + (dir / "data").string() + "\"";

  EXPECT_EQ(run_cli("--help", dir / "help.log"), 0);
  EXPECT_EQ(run_cli("odometry" + data + " --config \"" + (dir / "bad.json").string() + "\" --output \"" +
                        (dir / "out").string() + "\"",
                    dir / "cfg.log"),
            1);
  EXPECT_EQ(run_cli("odometry --output \"" + (dir / "out").string() + "\"", dir / "nodata.log"), 1);
  EXPECT_EQ(run_cli("odometry --dataset \"" + (dir / "missing").string() + "\" --output \"" + (dir / "out").string() +
                        "\"",
                    dir / "missing.log"),
            2);
  fs::resize_file(dir / "data" / "scans" / "000002.bin", 5);
  EXPECT_EQ(run_cli("odometry" + data + " --output \"" + (dir / "out").string() + "\"", dir / "corrupt.log"), 2);
  std::ifstream log(dir / "corrupt.log");
  std::stringstream text;
  text << log.rdbuf();
  EXPECT_NE(text.str().find("scan 2"), std::string::npos) << text.str();
}
