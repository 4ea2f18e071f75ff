#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "viro/harness.hpp"

namespace fs = std::filesystem;
using namespace viro;

namespace {

struct Options {
  std::string mode = "fej-viro";
  std::string trajectory = "figure8";
  std::uint64_t seed = 1;
  int runs = 20;
  std::string out = "out";
  std::string data;

  double duration = 60.0;
  double imu_rate = 200.0;
  double cam_rate = 10.0;
  double uwb_rate = 60.0;
  int max_features = 180;
  double pixel_sigma = 1.0;
  NoiseParams noise;
  double uwb_sigma = 0.15;
  double echo_sigma = 0.15;
  double uwb_bias = -0.75;
  double sync_threshold = 0.05;

  std::size_t n_min = 50;
  double keyframe_spacing = 0.3;
  std::size_t max_short = 11;
  FilterParams filter;

  double obs_sigma_pos = 0.05;
  double obs_sigma_rot = 0.01;
  int obs_steps = 50;
};

void add_common(CLI::App &app, Options &o) {
  app.add_option("--mode", o.mode, "Estimator variant")
      ->check(CLI::IsMember({"vio", "viro", "fej-viro", "fej-viro-s"}))
      ->capture_default_str();
  app.add_option("--trajectory", o.trajectory, "figure8, circle or waypoints")
      ->check(CLI::IsMember({"figure8", "circle", "waypoints", "line", "static"}))
      ->capture_default_str();
  app.add_option("--seed", o.seed, "Master seed")->capture_default_str();
  app.add_option("--runs", o.runs, "Monte-Carlo runs")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--data", o.data, "Directory with measurement files");

  app.add_option("--duration", o.duration)->capture_default_str();
  app.add_option("--imu-rate", o.imu_rate)->capture_default_str();
  app.add_option("--cam-rate", o.cam_rate)->capture_default_str();
  app.add_option("--uwb-rate", o.uwb_rate)->capture_default_str();
  app.add_option("--max-features", o.max_features)->capture_default_str();
  app.add_option("--pixel-sigma", o.pixel_sigma)->capture_default_str();
  app.add_option("--gyro-white", o.noise.gyro_white)->capture_default_str();
  app.add_option("--gyro-walk", o.noise.gyro_walk)->capture_default_str();
  app.add_option("--accel-white", o.noise.accel_white)->capture_default_str();
  app.add_option("--accel-walk", o.noise.accel_walk)->capture_default_str();
  app.add_option("--uwb-sigma", o.uwb_sigma)->capture_default_str();
  app.add_option("--echo-sigma", o.echo_sigma)->capture_default_str();
  app.add_option("--uwb-bias", o.uwb_bias)->capture_default_str();
  app.add_option("--sync-threshold", o.sync_threshold)->capture_default_str();
  app.add_option("--n-min", o.n_min)->capture_default_str();
  app.add_option("--keyframe-spacing", o.keyframe_spacing)->capture_default_str();
  app.add_option("--max-short", o.max_short)->capture_default_str();
  app.add_option("--sigma-rot", o.filter.sigma_rot)->capture_default_str();
  app.add_option("--sigma-pos", o.filter.sigma_pos)->capture_default_str();
  app.add_option("--sigma-vel", o.filter.sigma_vel)->capture_default_str();
  app.add_option("--sigma-gyro-bias", o.filter.sigma_gyro_bias)->capture_default_str();
  app.add_option("--sigma-accel-bias", o.filter.sigma_accel_bias)->capture_default_str();
  app.add_option("--obs-sigma-pos", o.obs_sigma_pos)->capture_default_str();
  app.add_option("--obs-sigma-rot", o.obs_sigma_rot)->capture_default_str();
  app.add_option("--obs-steps", o.obs_steps)->capture_default_str();
}

SimConfig sim_config(const Options &o, TrajectoryKind kind) {
  SimConfig c = default_sim(kind);
  c.seed = o.seed;
  c.duration = o.duration;
  c.imu_rate = o.imu_rate;
  c.cam_rate = o.cam_rate;
  c.uwb_rate = o.uwb_rate;
  c.max_features = o.max_features;
  c.pixel_sigma = o.pixel_sigma;
  c.noise = o.noise;
  c.uwb.sigma_range = o.uwb_sigma;
  c.uwb.sigma_echo = o.echo_sigma;
  c.uwb.bias = o.uwb_bias;
  c.uwb.sync_threshold = o.sync_threshold;
  c.validate();
  return c;
}

RunConfig run_config(const Options &o) {
  RunConfig rc;
  rc.mode = parse_mode(o.mode);
  rc.sim = sim_config(o, parse_trajectory(o.trajectory));
  rc.filter = o.filter;
  rc.filter.noise = o.noise;
  rc.filter.init.n_min = o.n_min;
  rc.filter.init.keyframe_spacing = o.keyframe_spacing;
  rc.filter.max_short = o.max_short;
  return rc;
}

SimData load_data(const RunConfig &rc, const fs::path &dir) {
  SimData d;
  d.config = rc.sim;
  d.truth = gen_trajectory(rc.sim);
  std::string hash;
  d.imu.samples = read_imu_csv(dir / "imu.csv", &hash);
  if (hash != rc.sim.hash()) {
    throw ParseError("measurement files were generated with a different configuration (hash " + hash + ")");
  }
  d.features.frames = read_feature_csv(dir / "features.csv");
  d.uwb.ranges = read_range_csv(dir / "ranges.csv");
  d.uwb.echoes = read_echo_csv(dir / "echoes.csv");
  // True biases are not part of the files; the filter only uses them for its initial state.
  d.imu.gyro_bias.assign(d.imu.samples.size(), rc.sim.gyro_bias0);
  d.imu.accel_bias.assign(d.imu.samples.size(), rc.sim.accel_bias0);
  return d;
}

int cmd_simulate(const Options &o) {
  const RunConfig rc = run_config(o);
  write_sim_data(o.out, simulate(rc.sim));
  return 0;
}

int cmd_run(const Options &o) {
  const RunConfig rc = run_config(o);
  const SimData data = o.data.empty() ? simulate(rc.sim) : load_data(rc, o.data);
  const RunResult r = run_pipeline(rc, data);
  for (const auto &w : r.warnings) {
    std::cerr << "warning: " << w << '\n';
  }
  const EvalSeries series = compute_nees(r.records, data.truth);
  write_trajectory(o.out, r.records);
  write_nees(o.out, summarize_nees({series}), 1);
  write_sigma_bounds(o.out, series);
  write_ate(o.out, compute_ate(r.records, data.truth));
  std::vector<InitReport> reports;
  if (r.init) {
    reports.push_back(*r.init);
  }
  write_init_report(o.out, reports);
  return 0;
}

int cmd_montecarlo(const Options &o) {
  const RunConfig rc = run_config(o);
  const MonteCarloResult mc = montecarlo(rc, o.seed, o.runs);
  write_nees(o.out, mc.nees, o.runs);
  write_sigma_bounds(o.out, mc.series.front());
  write_trajectory(o.out, mc.runs.front().records);
  write_ate(o.out, mc.mean_ate);
  std::vector<InitReport> reports;
  for (const auto &r : mc.runs) {
    if (r.init) {
      reports.push_back(*r.init);
    }
  }
  write_init_report(o.out, reports);
  std::cout << "mode=" << o.mode << " runs=" << o.runs << " mean_ate=" << mc.mean_ate
            << " post_init_nees_rot=" << mc.nees.post_init_rot << " post_init_nees_pos=" << mc.nees.post_init_pos
            << '\n';
  return 0;
}

int cmd_obs_report(const Options &o, bool all) {
  ObsConfig cfg;
  cfg.sigma_pos = o.obs_sigma_pos;
  cfg.sigma_rot = o.obs_sigma_rot;
  cfg.seed = o.seed;
  std::vector<std::pair<std::string, ObservabilityReport>> rows;
  std::vector<std::string> names = {o.trajectory};
  if (all) {
    names = {"figure8", "circle", "waypoints"};
  }
  for (const auto &name : names) {
    const SimConfig sim = sim_config(o, parse_trajectory(name));
    for (auto &r : run_obs_report(sim, cfg, o.obs_steps)) {
      rows.emplace_back(name, std::move(r));
    }
  }
  write_obs_report(o.out, rows);
  return 0;
}

int cmd_evaluate(const Options &o) {
  if (o.data.empty()) {
    throw std::invalid_argument("evaluate: --data must point at a directory with groundtruth.csv");
  }
  const auto records = read_trajectory(fs::path(o.out) / "trajectory.csv");
  const auto gt = read_groundtruth_csv(fs::path(o.data) / "groundtruth.csv");
  std::map<std::int64_t, const GroundTruthRow *> by_stamp;
  for (const auto &g : gt) {
    by_stamp[stamp_to_ns(g.stamp)] = &g;
  }
  std::vector<Vec3> est;
  std::vector<Vec3> truth;
  EvalSeries series;
  for (const auto &r : records) {
    auto it = by_stamp.find(stamp_to_ns(r.stamp));
    if (it == by_stamp.end()) {
      continue;
    }
    const GroundTruthRow &g = *it->second;
    est.push_back(r.est.p);
    truth.push_back(g.p);
    const Mat3 R = r.est.rot();
    const Vec3 dtheta = orientation_error(quat_to_rot(g.q), R);
    const Mat3 Ptt = r.cov.topLeftCorner<3, 3>();
    const Mat3 Ppp = r.cov.bottomRightCorner<3, 3>();
    EvalPoint e;
    e.stamp = r.stamp;
    e.anchors = r.anchors;
    e.err_rot = R.transpose() * dtheta;
    e.err_pos = g.p - r.est.p;
    e.sigma_rot = (R.transpose() * Ptt * R).diagonal().cwiseMax(0.0).cwiseSqrt();
    e.sigma_pos = Ppp.diagonal().cwiseMax(0.0).cwiseSqrt();
    const auto nr = nees(dtheta, Ptt);
    const auto np = nees(e.err_pos, Ppp);
    e.valid = nr && np;
    e.nees_rot = nr.value_or(0.0);
    e.nees_pos = np.value_or(0.0);
    series.push_back(e);
  }
  const double ate = compute_ate(est, truth);
  write_ate(o.out, ate);
  write_nees(o.out, summarize_nees({series}), 1);
  write_sigma_bounds(o.out, series);
  std::cout << "ate=" << ate << '\n';
  return 0;
}

void error_line(const std::string &kind, const std::string &message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Visual-inertial-ranging odometry simulator and evaluation"};
  app.set_config("--config", "", "Key=value configuration file");
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  add_common(app, o);
  auto *simulate_cmd = app.add_subcommand("simulate", "Generate measurement files");
  auto *run_cmd = app.add_subcommand("run", "Run one estimator on one seed");
  auto *mc_cmd = app.add_subcommand("montecarlo", "Monte-Carlo runs with consecutive seeds");
  auto *obs_cmd = app.add_subcommand("obs-report", "Observability matrix residuals");
  bool all_trajectories = false;
  obs_cmd->add_flag("--all", all_trajectories, "Report the three default trajectories");
  auto *eval_cmd = app.add_subcommand("evaluate", "ATE and NEES of an existing trajectory.csv against groundtruth.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    error_line("usage", e.what());
    return 2;
  }

  try {
    if (simulate_cmd->parsed()) {
      return cmd_simulate(o);
    }
    if (run_cmd->parsed()) {
      return cmd_run(o);
    }
    if (mc_cmd->parsed()) {
      return cmd_montecarlo(o);
    }
    if (obs_cmd->parsed()) {
      return cmd_obs_report(o, all_trajectories);
    }
    if (eval_cmd->parsed()) {
      return cmd_evaluate(o);
    }
  } catch (const ParseError &e) {
    error_line("parse", e.what());
    return 3;
  } catch (const std::invalid_argument &e) {
    error_line("invalid_argument", e.what());
    return 2;
  } catch (const std::exception &e) {
    error_line("runtime", e.what());
    return 1;
  }
  return 0;
}
