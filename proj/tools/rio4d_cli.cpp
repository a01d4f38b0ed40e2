// rio4d command-line front end: simulate, odometry, slam, evaluate, export-map.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "rio4d/rio4d.hpp"

namespace fs = std::filesystem;
using namespace rio4d;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kEstimationError = 3 };

struct CommonArgs {
  std::string config;
  std::string dataset;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::string format = "native";
  std::string calib;
};

PipelineConfig load_config(const CommonArgs& a)
{
  return a.config.empty() ? PipelineConfig{} : load_pipeline_config(a.config);
}

Dataset load_dataset(const CommonArgs& a)
{
  if (a.dataset.empty()) {
    throw ConfigError("--dataset is required");
  }
  const DatasetFormat fmt = a.format == "coloradar" ? DatasetFormat::ColoRadar : DatasetFormat::Native;
  return io::read_dataset(a.dataset, fmt, a.calib);
}

std::string metrics_text(const TrajectoryMetrics& m)
{
  Json j = {{"ape_translation_rmse_m", m.ape_translation_rmse},
            {"ape_rotation_rmse_deg", m.ape_rotation_rmse},
            {"rpe_translation_percent", m.rpe_translation},
            {"rpe_rotation_deg_per_m", m.rpe_rotation},
            {"closure_horizontal_m", m.closure_horizontal},
            {"closure_vertical_m", m.closure_vertical},
            {"closure_valid", m.closure_valid},
            {"matched_poses", m.matched},
            {"rpe_segments", m.rpe_segments}};
  return j.dump(2) + "\n";
}

std::vector<std::string> header(const std::string& verb, const CommonArgs& a, const PipelineConfig& cfg)
{
  Json h = {{"verb", verb}, {"dataset", a.dataset}, {"format", a.format}};
  if (a.seed) {
    h["seed"] = *a.seed;
  }
  return {"rio4d " + h.dump(), "config " + to_json(cfg).dump(), "timestamp tx ty tz qx qy qz qw"};
}

void write_run_outputs(const fs::path& out, const std::string& verb, const CommonArgs& a, const PipelineConfig& cfg,
                       const Dataset& ds, const TrajectoryEstimate& traj, const TimingReport& timing)
{
  fs::create_directories(out);
  io::write_trajectory(out / "trajectory.txt", traj, header(verb, a, cfg));
  io::write_file(out / "timing.txt", timing.format());
  std::cerr << timing.format();
  if (!ds.groundtruth.empty() && !traj.empty()) {
    io::write_file(out / "metrics.json", metrics_text(evaluate(traj, ds.groundtruth)));
  }
}

int cmd_simulate(const CommonArgs& a)
{
  if (a.config.empty() || a.output.empty()) {
    throw ConfigError("simulate requires --config <scenario.json> and --output <dir>");
  }
  Scenario sc = load_scenario(a.config);
  if (a.seed) {
    sc.seed = *a.seed;
  }
  const Dataset ds = Simulator(sc).generate();
  io::write_native(a.output, ds);
  io::write_file(fs::path(a.output) / "scenario.json", to_json(sc).dump(2) + "\n");
  std::cerr << "wrote " << ds.scans.size() << " scans, " << ds.imu.size() << " IMU samples to " << a.output << "\n";
  return kOk;
}

int cmd_odometry(const CommonArgs& a)
{
  if (a.output.empty()) {
    throw ConfigError("odometry requires --output <dir>");
  }
  const PipelineConfig cfg = load_config(a);
  const Dataset ds = load_dataset(a);
  const OdometryResult res = run_odometry(ds, cfg);
  write_run_outputs(a.output, "odometry", a, cfg, ds, res.trajectory, res.timing);
  export_map(res.map, fs::path(a.output) / "map.ply");
  return kOk;
}

int cmd_slam(const CommonArgs& a)
{
  if (a.output.empty()) {
    throw ConfigError("slam requires --output <dir>");
  }
  PipelineConfig cfg = load_config(a);
  cfg.use_loop_closure = true;
  const Dataset ds = load_dataset(a);
  const SlamResult res = run_slam(ds, cfg);
  write_run_outputs(a.output, "slam", a, cfg, ds, res.trajectory, res.timing);
  io::write_trajectory(fs::path(a.output) / "odometry.txt", res.odometry, header("slam-odometry", a, cfg));
  export_map(res.global_map, fs::path(a.output) / "map.ply");
  std::cerr << res.keyframes << " keyframes, " << res.loops.size() << " loop edges\n";
  return kOk;
}

int cmd_evaluate(const CommonArgs& a, const std::string& trajectory)
{
  if (a.dataset.empty()) {
    throw ConfigError("evaluate requires --dataset <dir> holding groundtruth.txt");
  }
  const fs::path ref_path = fs::is_directory(a.dataset) ? fs::path(a.dataset) / "groundtruth.txt" : fs::path(a.dataset);
  fs::path est_path = trajectory;
  if (est_path.empty()) {
    if (a.output.empty()) {
      throw ConfigError("evaluate requires --trajectory or --output <run dir>");
    }
    est_path = fs::path(a.output) / "trajectory.txt";
  }
  const auto ref = io::read_trajectory(ref_path);
  const auto est = io::read_trajectory(est_path);
  const std::string text = metrics_text(evaluate(est, ref));
  if (!a.output.empty()) {
    fs::create_directories(a.output);
    io::write_file(fs::path(a.output) / "metrics.json", text);
  }
  std::cout << text;
  return kOk;
}

int cmd_export_map(const CommonArgs& a)
{
  if (a.output.empty()) {
    throw ConfigError("export-map requires --output <file.ply>");
  }
  const PipelineConfig cfg = load_config(a);
  const Dataset ds = load_dataset(a);
  if (cfg.use_loop_closure) {
    export_map(run_slam(ds, cfg).global_map, a.output);
  } else {
    export_map(run_odometry(ds, cfg).map, a.output);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"4D radar-inertial odometry and mapping"};
  app.require_subcommand(1);
  CommonArgs args;
  std::string trajectory;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "JSON config (pipeline) or scenario (simulate)");
    sub->add_option("--dataset", args.dataset, "dataset directory");
    sub->add_option("--output", args.output, "output directory or file");
    sub->add_option("--seed", args.seed, "random seed");
    sub->add_option("--format", args.format, "dataset format")->check(CLI::IsMember({"native", "coloradar"}));
    sub->add_option("--calib", args.calib, "ColoRadar calibration directory");
  };
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset from a scenario");
  auto* odo = app.add_subcommand("odometry", "run radar-inertial odometry");
  auto* slam = app.add_subcommand("slam", "run odometry with loop closure");
  auto* eval = app.add_subcommand("evaluate", "compare a trajectory against ground truth");
  auto* exp = app.add_subcommand("export-map", "run the pipeline and write the map as PLY");
  for (auto* s : {sim, odo, slam, eval, exp}) {
    add_common(s);
  }
  eval->add_option("--trajectory", trajectory, "estimated trajectory file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*sim) {
      return cmd_simulate(args);
    }
    if (*odo) {
      return cmd_odometry(args);
    }
    if (*slam) {
      return cmd_slam(args);
    }
    if (*eval) {
      return cmd_evaluate(args, trajectory);
    }
    if (*exp) {
      return cmd_export_map(args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NoOverlap& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return kEstimationError;
  }
  return kOk;
}
