#include "viro/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

namespace viro {

namespace {

constexpr std::uint64_t kInitErrorStream = 5;

std::ofstream open_out(const std::filesystem::path &path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  os << std::setprecision(12);
  return os;
}

std::vector<double> split_numbers(const std::string &line) {
  std::vector<double> out;
  std::istringstream is(line);
  std::string field;
  while (std::getline(is, field, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(field, &used));
    if (used != field.size()) {
      throw ParseError("malformed number '" + field + "'");
    }
  }
  return out;
}

ImuState perturbed_start(const ImuState &truth, const Matrix15 &P0, std::uint64_t seed) {
  std::mt19937_64 rng(stream_seed(seed, kInitErrorStream));
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix<double, 15, 1> z;
  for (int i = 0; i < 15; ++i) {
    z(i) = n(rng);
  }
  const Eigen::Matrix<double, 15, 1> e = P0.llt().matrixL() * z;
  // x_true = x_est + error, R_true = exp(-dtheta) R_est.
  ImuState x = truth;
  x.q = rot_to_quat(Mat3(so3_exp(Vec3(e.segment<3>(kTheta))) * truth.rot()));
  x.bg -= e.segment<3>(kBg);
  x.v -= e.segment<3>(kVel);
  x.ba -= e.segment<3>(kBa);
  x.p -= e.segment<3>(kPos);
  return x;
}

std::map<int, double> range_map(const std::vector<RangeMeasurement> &ranges) {
  std::map<int, double> out;
  for (const auto &r : ranges) {
    out[r.anchor_id] = r.distance;
  }
  return out;
}

double mean_after(const std::vector<double> &stamps, const std::vector<double> &values, double t) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    if (stamps[i] >= t && std::isfinite(values[i])) {
      sum += values[i];
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

double max_after(const std::vector<double> &stamps, const std::vector<double> &values, double t) {
  double m = 0.0;
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    if (stamps[i] >= t && std::isfinite(values[i])) {
      m = std::max(m, values[i]);
    }
  }
  return m;
}

} // namespace

Mode parse_mode(const std::string &name) {
  if (name == "vio") {
    return Mode::Vio;
  }
  if (name == "viro") {
    return Mode::Viro;
  }
  if (name == "fej-viro") {
    return Mode::FejViro;
  }
  if (name == "fej-viro-s") {
    return Mode::FejViroS;
  }
  throw std::invalid_argument("unknown mode '" + name + "'");
}

std::string mode_name(Mode mode) {
  switch (mode) {
  case Mode::Vio:
    return "vio";
  case Mode::Viro:
    return "viro";
  case Mode::FejViro:
    return "fej-viro";
  case Mode::FejViroS:
    return "fej-viro-s";
  }
  return "unknown";
}

TrajectoryKind parse_trajectory(const std::string &name) {
  if (name == "figure8") {
    return TrajectoryKind::FigureEight;
  }
  if (name == "circle") {
    return TrajectoryKind::Circle;
  }
  if (name == "waypoints") {
    return TrajectoryKind::Waypoints;
  }
  if (name == "line") {
    return TrajectoryKind::Line;
  }
  if (name == "static") {
    return TrajectoryKind::Static;
  }
  throw std::invalid_argument("unknown trajectory '" + name + "'");
}

std::string trajectory_name(TrajectoryKind kind) {
  switch (kind) {
  case TrajectoryKind::FigureEight:
    return "figure8";
  case TrajectoryKind::Circle:
    return "circle";
  case TrajectoryKind::Waypoints:
    return "waypoints";
  case TrajectoryKind::Line:
    return "line";
  case TrajectoryKind::Static:
    return "static";
  }
  return "unknown";
}

SimConfig default_sim(TrajectoryKind kind) {
  SimConfig c;
  c.trajectory.kind = kind;
  switch (kind) {
  case TrajectoryKind::Circle:
    c.trajectory.size_x = 5.0;
    c.trajectory.z_amp = 0.4;
    c.trajectory.period = 15.0;
    break;
  case TrajectoryKind::Waypoints:
    c.trajectory.size_x = 6.0;
    c.trajectory.size_y = 4.0;
    c.trajectory.z_amp = 0.5;
    c.trajectory.period = 24.0;
    break;
  default:
    break;
  }
  return c;
}

Matrix15 FilterParams::initial_covariance() const {
  Matrix15 P = Matrix15::Zero();
  const auto put = [&](Eigen::Index off, double s) { P.block<3, 3>(off, off) = s * s * Mat3::Identity(); };
  put(kTheta, sigma_rot);
  put(kBg, sigma_gyro_bias);
  put(kVel, sigma_vel);
  put(kBa, sigma_accel_bias);
  put(kPos, sigma_pos);
  return P;
}

RunResult run_pipeline(const RunConfig &config) { return run_pipeline(config, simulate(config.sim)); }

RunResult run_pipeline(const RunConfig &config, const SimData &data) {
  const SimConfig &sim = data.config;
  const FilterParams &fp = config.filter;
  const Mode mode = config.mode;
  const bool use_uwb = mode != Mode::Vio;
  const bool long_window = mode == Mode::Viro || mode == Mode::FejViro;
  const auto &frames = data.features.frames;
  if (frames.size() < 2) {
    throw std::invalid_argument("run_pipeline: at least two camera frames are required");
  }
  const UwbParams &uwb = sim.uwb;
  const double pixel = (sim.pixel_sigma > 0 ? sim.pixel_sigma : 1.0) / sim.focal;

  const double t0 = frames.front().stamp;
  const Matrix15 P0 = fp.initial_covariance();
  ImuState x0 = data.truth.imu_state(t0, data.imu.gyro_bias.front(), data.imu.accel_bias.front());
  if (fp.initial_error) {
    x0 = perturbed_start(x0, P0, sim.seed);
  }
  FilterState state = make_filter_state(x0, P0, t0, Vec3(0, 0, 9.81));
  state.max_short = fp.max_short;

  UwbStreams streams;
  if (use_uwb) {
    streams = UwbStreams(data.uwb.ranges, data.uwb.echoes);
  }
  InitBuffer buffer;
  bool uwb_active = use_uwb;
  bool initialized = false;
  std::map<int, FeatureTrack> tracks;
  RunResult result;

  const VisualUpdateOptions vopts{true, fp.chi2_prob};
  const RangingUpdateOptions ropts{mode == Mode::FejViro || mode == Mode::FejViroS, fp.chi2_prob};
  InitOptions iopts;
  iopts.fej = mode == Mode::FejViro;
  iopts.covariance = mode == Mode::FejViroS ? InitCovariance::Solver : InitCovariance::Linearized;

  auto record = [&](double t) {
    EstimateRecord r;
    r.stamp = t;
    r.est = state.imu;
    const std::array<Eigen::Index, 6> idx{kTheta, kTheta + 1, kTheta + 2, kPos, kPos + 1, kPos + 2};
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        r.cov(i, j) = state.cov(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      }
    }
    r.anchors = initialized;
    result.records.push_back(r);
    result.max_long_window = std::max(result.max_long_window, state.long_window.size());
  };

  double t_prev = t0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const CameraFrame &frame = frames[k];
    const double t = frame.stamp;
    if (k > 0) {
      const auto samples = imu_window(data.imu.samples, t_prev, t);
      propagate(state, samples, fp.noise, Linearization::FirstEstimate);

      std::set<int> seen;
      for (const auto &o : frame.obs) {
        seen.insert(o.id);
      }
      const bool full = state.short_window.size() >= state.max_short;
      const double oldest = state.short_window.front().stamp;
      std::vector<FeatureTrack> used;
      for (auto it = tracks.begin(); it != tracks.end();) {
        FeatureTrack &tr = it->second;
        if (seen.count(it->first) == 0) {
          if (tr.obs.size() >= fp.min_track_length) {
            used.push_back(std::move(tr));
          }
          it = tracks.erase(it);
          continue;
        }
        if (full && !tr.obs.empty() && tr.obs.front().stamp <= oldest) {
          if (tr.obs.size() >= fp.min_track_length) {
            used.push_back(tr);
          }
          tr.obs.clear();
        }
        ++it;
      }
      if (!used.empty()) {
        const VisualUpdateStats vs = visual_update(state, used, sim.ext, vopts);
        result.visual_updates += vs.used;
      }
    }

    clone_current_pose(state, t, Window::Short);

    bool keyframe = false;
    if (uwb_active && !initialized) {
      const BufferedFrame *last = buffer.last_keyframe();
      keyframe = last == nullptr || (state.imu.p - last->p).norm() >= fp.init.keyframe_spacing;
      if (keyframe && long_window) {
        clone_current_pose(state, t, Window::Long);
      }
      BufferedFrame bf;
      bf.stamp = t;
      bf.R_IG = state.imu.rot();
      bf.p = state.imu.p;
      bf.keyframe = keyframe;
      bf.ranges = range_map(streams.ranges_at(t, uwb));
      buffer.add_frame(bf);
      std::vector<EchoMeasurement> echoes;
      for (const auto &e : streams.echoes_between(k == 0 ? -1e300 : t_prev, t)) {
        if (k == 0 || e.stamp > t_prev) {
          echoes.push_back(e);
        }
      }
      buffer.add_echoes(echoes);
    }

    if (uwb_active && initialized) {
      const auto ranges = streams.ranges_at(t, uwb);
      const auto echoes = streams.echoes_at(t, uwb);
      const RangingUpdateStats rs = ranging_update(state, ranges, echoes, uwb, ropts);
      result.ranging_updates += rs.used;
    }

    for (const auto &o : frame.obs) {
      tracks[o.id].id = o.id;
      tracks[o.id].obs.push_back(Observation{t, o.uv, pixel});
    }

    if (uwb_active && !initialized && keyframe) {
      try {
        const InitOutcome out = try_initialize(state, buffer, uwb, fp.init, iopts);
        if (out.status == InitStatus::Initialized) {
          initialized = true;
          result.init = out.report;
          buffer.clear();
        }
      } catch (const IllConditioned &) {
        // keep accumulating
      } catch (const InitFailed &e) {
        result.warnings.push_back(std::string("anchor initialization failed, continuing without ranging: ") +
                                  e.what());
        uwb_active = false;
        marginalize_long_window(state);
      }
    }

    record(t);
    t_prev = t;
  }
  result.anchors = state.anchors;
  return result;
}

Vec3 orientation_error(const Mat3 &R_true, const Mat3 &R_est) {
  return -so3_log(Mat3(R_true * R_est.transpose()));
}

std::optional<double> nees(const Vec3 &err, const Mat3 &P) {
  Eigen::LDLT<Mat3> ldlt(P);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-300) || !ldlt.isPositive()) {
    return std::nullopt;
  }
  return err.dot(ldlt.solve(err));
}

EvalSeries compute_nees(const std::vector<EstimateRecord> &records, const GroundTruth &gt) {
  EvalSeries out;
  out.reserve(records.size());
  for (const auto &r : records) {
    const KinematicSample truth = gt.sample(r.stamp);
    const Mat3 R = r.est.rot();
    const Vec3 dtheta = orientation_error(truth.R_IG, R);
    const Mat3 Ptt = r.cov.topLeftCorner<3, 3>();
    const Mat3 Ppp = r.cov.bottomRightCorner<3, 3>();
    EvalPoint e;
    e.stamp = r.stamp;
    e.anchors = r.anchors;
    e.err_rot = R.transpose() * dtheta;
    e.err_pos = truth.p - r.est.p;
    e.sigma_rot = (R.transpose() * Ptt * R).diagonal().cwiseMax(0.0).cwiseSqrt();
    e.sigma_pos = Ppp.diagonal().cwiseMax(0.0).cwiseSqrt();
    const auto nr = nees(dtheta, Ptt);
    const auto np = nees(e.err_pos, Ppp);
    e.valid = nr.has_value() && np.has_value();
    e.nees_rot = nr.value_or(std::numeric_limits<double>::quiet_NaN());
    e.nees_pos = np.value_or(std::numeric_limits<double>::quiet_NaN());
    out.push_back(e);
  }
  return out;
}

double compute_ate(const std::vector<Vec3> &estimate, const std::vector<Vec3> &truth) {
  if (estimate.size() != truth.size() || estimate.size() < 2) {
    throw std::invalid_argument("compute_ate: need at least two matching poses");
  }
  const auto n = static_cast<Eigen::Index>(estimate.size());
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimate[static_cast<std::size_t>(i)];
    dst.col(i) = truth[static_cast<std::size_t>(i)];
  }
  const Vec3 mean = src.rowwise().mean();
  if ((src.colwise() - mean).colwise().norm().maxCoeff() < 1e-12) {
    throw std::invalid_argument("compute_ate: degenerate estimate (all poses identical)");
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3Xd aligned = (T.topLeftCorner<3, 3>() * src).colwise() + T.topRightCorner<3, 1>();
  return std::sqrt((aligned - dst).colwise().squaredNorm().mean());
}

double compute_ate(const std::vector<EstimateRecord> &records, const GroundTruth &gt) {
  std::vector<Vec3> est;
  std::vector<Vec3> truth;
  for (const auto &r : records) {
    est.push_back(r.est.p);
    truth.push_back(gt.sample(r.stamp).p);
  }
  return compute_ate(est, truth);
}

std::string sigma_bounds_header() {
  return "stamp,err_roll,err_pitch,err_yaw,err_x,err_y,err_z,bound_roll,bound_pitch,bound_yaw,bound_x,bound_y,bound_z,"
         "anchors";
}

std::string sigma_bounds_rows(const EvalSeries &series) {
  std::ostringstream os;
  os << std::setprecision(12);
  for (const auto &e : series) {
    os << e.stamp;
    for (int i = 0; i < 3; ++i) {
      os << ',' << e.err_rot(i);
    }
    for (int i = 0; i < 3; ++i) {
      os << ',' << e.err_pos(i);
    }
    for (int i = 0; i < 3; ++i) {
      os << ',' << 3.0 * e.sigma_rot(i);
    }
    for (int i = 0; i < 3; ++i) {
      os << ',' << 3.0 * e.sigma_pos(i);
    }
    os << ',' << (e.anchors ? 1 : 0) << '\n';
  }
  return os.str();
}

EvalSeries parse_sigma_bounds(const std::string &text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != sigma_bounds_header()) {
    throw ParseError("sigma bounds: unexpected header");
  }
  EvalSeries out;
  while (std::getline(is, line)) {
    if (line.empty()) {
      continue;
    }
    const auto v = split_numbers(line);
    if (v.size() != 14) {
      throw ParseError("sigma bounds: expected 14 fields");
    }
    EvalPoint e;
    e.stamp = v[0];
    e.err_rot = Vec3(v[1], v[2], v[3]);
    e.err_pos = Vec3(v[4], v[5], v[6]);
    e.sigma_rot = Vec3(v[7], v[8], v[9]) / 3.0;
    e.sigma_pos = Vec3(v[10], v[11], v[12]) / 3.0;
    e.anchors = v[13] != 0.0;
    out.push_back(e);
  }
  return out;
}

std::optional<double> init_stamp(const std::vector<EstimateRecord> &records) {
  for (const auto &r : records) {
    if (r.anchors) {
      return r.stamp;
    }
  }
  return std::nullopt;
}

NeesSummary summarize_nees(const std::vector<EvalSeries> &runs) {
  NeesSummary s;
  if (runs.empty()) {
    return s;
  }
  const std::size_t n = runs.front().size();
  s.stamps.resize(n);
  s.mean_rot.assign(n, 0.0);
  s.mean_pos.assign(n, 0.0);
  s.count.assign(n, 0);
  for (const auto &run : runs) {
    if (run.size() != n) {
      throw std::invalid_argument("summarize_nees: runs have different lengths");
    }
    for (std::size_t i = 0; i < n; ++i) {
      s.stamps[i] = run[i].stamp;
      if (run[i].valid) {
        s.mean_rot[i] += run[i].nees_rot;
        s.mean_pos[i] += run[i].nees_pos;
        ++s.count[i];
      }
    }
    for (const auto &e : run) {
      if (e.anchors) {
        s.init_time = std::max(s.init_time, e.stamp);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (s.count[i] > 0) {
      s.mean_rot[i] /= s.count[i];
      s.mean_pos[i] /= s.count[i];
    } else {
      s.mean_rot[i] = s.mean_pos[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  s.post_init_rot = mean_after(s.stamps, s.mean_rot, s.init_time);
  s.post_init_pos = mean_after(s.stamps, s.mean_pos, s.init_time);
  s.max_post_init_rot = max_after(s.stamps, s.mean_rot, s.init_time);
  s.max_post_init_pos = max_after(s.stamps, s.mean_pos, s.init_time);
  return s;
}

MonteCarloResult montecarlo(const RunConfig &config, std::uint64_t seed0, int runs) {
  if (runs < 1) {
    throw std::invalid_argument("montecarlo: runs must be positive");
  }
  MonteCarloResult mc;
  for (int i = 0; i < runs; ++i) {
    RunConfig c = config;
    c.sim.seed = seed0 + static_cast<std::uint64_t>(i);
    const SimData data = simulate(c.sim);
    RunResult r = run_pipeline(c, data);
    mc.series.push_back(compute_nees(r.records, data.truth));
    mc.ate.push_back(compute_ate(r.records, data.truth));
    mc.runs.push_back(std::move(r));
  }
  mc.nees = summarize_nees(mc.series);
  for (double a : mc.ate) {
    mc.mean_ate += a / runs;
  }
  return mc;
}

ObsTrajectory obs_trajectory(const SimConfig &sim, int steps, double t0) {
  SimConfig c = sim;
  c.imu_noise = false;
  c.gyro_bias0 = Vec3::Zero();
  c.accel_bias0 = Vec3::Zero();
  c.duration = t0 + steps / c.cam_rate + 1.0;
  const GroundTruth gt = gen_trajectory(c);
  const ImuStream imu = sample_imu(gt, c);
  if (c.anchors.size() < 2) {
    throw std::invalid_argument("obs_trajectory: two anchors are required");
  }
  ObsTrajectory traj;
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k / c.cam_rate;
    traj.stamps.push_back(t);
    AnalysisState x;
    x.imu = gt.imu_state(t);
    x.anchor1 = c.anchors[0].p;
    x.anchor2 = c.anchors[1].p;
    traj.truth.push_back(x);
    if (k > 0) {
      traj.segments.push_back(imu_window(imu.samples, traj.stamps[static_cast<std::size_t>(k - 1)], t));
    }
  }
  const auto f = visible_feature(traj.truth, c.ext);
  const Vec3 feature = f.value_or(traj.truth.front().imu.p + Vec3(5.0, 0.0, 0.0));
  for (auto &x : traj.truth) {
    x.feature = feature;
  }
  return traj;
}

std::vector<ObservabilityReport> run_obs_report(const SimConfig &sim, const ObsConfig &cfg, int steps) {
  const ObsTrajectory traj = obs_trajectory(sim, steps);
  ObsConfig c = cfg;
  c.ext = sim.ext;
  c.lever_arm = sim.uwb.lever_arm;
  return {build_observability_matrix(traj, ObsMode::Ideal, c), build_observability_matrix(traj, ObsMode::Actual, c),
          fej_restoration_check(traj, c)};
}

void write_trajectory(const std::filesystem::path &dir, const std::vector<EstimateRecord> &records) {
  auto os = open_out(dir / "trajectory.csv");
  os << "stamp,qx,qy,qz,qw,px,py,pz,vx,vy,vz,anchors";
  for (int i = 0; i < 6; ++i) {
    for (int j = i; j < 6; ++j) {
      os << ",c" << i << j;
    }
  }
  os << '\n';
  for (const auto &r : records) {
    const auto &x = r.est;
    os << r.stamp << ',' << x.q.x() << ',' << x.q.y() << ',' << x.q.z() << ',' << x.q.w() << ',' << x.p.x() << ','
       << x.p.y() << ',' << x.p.z() << ',' << x.v.x() << ',' << x.v.y() << ',' << x.v.z() << ','
       << (r.anchors ? 1 : 0);
    for (int i = 0; i < 6; ++i) {
      for (int j = i; j < 6; ++j) {
        os << ',' << r.cov(i, j);
      }
    }
    os << '\n';
  }
}

std::vector<EstimateRecord> read_trajectory(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) {
    throw ParseError(path.string() + ": cannot open");
  }
  std::string line;
  std::getline(is, line);
  std::vector<EstimateRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::vector<double> v;
    try {
      v = split_numbers(line);
    } catch (const std::exception &e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (v.size() != 12 + 21) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 33 fields");
    }
    EstimateRecord r;
    r.stamp = v[0];
    r.est.q = Quat(v[1], v[2], v[3], v[4]);
    r.est.p = Vec3(v[5], v[6], v[7]);
    r.est.v = Vec3(v[8], v[9], v[10]);
    r.anchors = v[11] != 0.0;
    std::size_t k = 12;
    for (int i = 0; i < 6; ++i) {
      for (int j = i; j < 6; ++j) {
        r.cov(i, j) = r.cov(j, i) = v[k++];
      }
    }
    out.push_back(r);
  }
  return out;
}

void write_nees(const std::filesystem::path &dir, const NeesSummary &summary, int runs) {
  auto os = open_out(dir / "nees.csv");
  os << "# mean over " << runs << " runs; init_time=" << summary.init_time << '\n';
  os << "stamp,nees_rot,nees_pos,count\n";
  for (std::size_t i = 0; i < summary.stamps.size(); ++i) {
    os << summary.stamps[i] << ',' << summary.mean_rot[i] << ',' << summary.mean_pos[i] << ',' << summary.count[i]
       << '\n';
  }
}

void write_sigma_bounds(const std::filesystem::path &dir, const EvalSeries &series) {
  auto os = open_out(dir / "sigma_bounds.csv");
  os << sigma_bounds_header() << '\n' << sigma_bounds_rows(series);
}

void write_ate(const std::filesystem::path &dir, double ate) {
  auto os = open_out(dir / "ate.txt");
  os << ate << '\n';
}

void write_init_report(const std::filesystem::path &dir, const std::vector<InitReport> &reports) {
  auto os = open_out(dir / "init_report.csv");
  os << "run," << init_report_header() << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::istringstream rows(init_report_rows(reports[i]));
    std::string line;
    while (std::getline(rows, line)) {
      os << i << ',' << line << '\n';
    }
  }
}

void write_obs_report(const std::filesystem::path &dir,
                      const std::vector<std::pair<std::string, ObservabilityReport>> &rows) {
  auto os = open_out(dir / "obs_report.csv");
  os << obs_report_header() << '\n';
  for (const auto &[name, r] : rows) {
    os << obs_report_row(name, r) << '\n';
  }
}

} // namespace viro
