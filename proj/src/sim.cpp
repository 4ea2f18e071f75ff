#include "viro/sim.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <boost/container_hash/hash.hpp>

#include <Eigen/Dense>

namespace viro {

namespace {

using std::numbers::pi;

std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream) { return std::mt19937_64(stream_seed(master, stream)); }

enum Stream : std::uint64_t { kImuStream = 1, kFeatureStream = 2, kRangeStream = 3, kEchoStream = 4 };

Vec3 gaussian(std::mt19937_64 &rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    out(i) = sigma * n(rng);
  }
  return out;
}

Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }

std::size_t sample_count(double duration, double rate) {
  return static_cast<std::size_t>(std::floor(duration * rate + 1e-9)) + 1;
}

// Second derivatives of a uniform periodic cubic spline through `y`.
std::vector<Vec3> periodic_spline(const std::vector<Vec3> &y, double h) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd b(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index prev = (i + n - 1) % n;
    const Eigen::Index next = (i + 1) % n;
    A(i, prev) += 1.0;
    A(i, i) += 4.0;
    A(i, next) += 1.0;
    b.row(i) = 6.0 / (h * h) *
               (y[static_cast<std::size_t>(next)] - 2.0 * y[static_cast<std::size_t>(i)] +
                y[static_cast<std::size_t>(prev)])
                   .transpose();
  }
  const Eigen::MatrixXd M = A.partialPivLu().solve(b);
  std::vector<Vec3> out(y.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = M.row(i).transpose();
  }
  return out;
}

void write_header(std::ofstream &os, const char *stream, const std::string &hash, const char *columns) {
  os << "# stream=" << stream << " config_hash=" << hash << '\n' << columns << '\n';
  os << std::setprecision(17);
}

std::ofstream open_out(const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  return os;
}

// Reads the two header lines, checks the stream type and returns the data rows split into fields.
std::vector<std::vector<double>> read_rows(const std::filesystem::path &path, const std::string &stream,
                                           std::size_t fields, std::string *hash) {
  std::ifstream is(path);
  if (!is) {
    throw ParseError(path.string() + ": cannot open");
  }
  std::string line;
  if (!std::getline(is, line) || line.rfind("# stream=", 0) != 0) {
    throw ParseError(path.string() + ":1: missing stream header");
  }
  std::istringstream head(line.substr(2));
  std::string tok;
  std::string kind;
  std::string h;
  while (head >> tok) {
    if (tok.rfind("stream=", 0) == 0) {
      kind = tok.substr(7);
    } else if (tok.rfind("config_hash=", 0) == 0) {
      h = tok.substr(12);
    }
  }
  if (kind != stream) {
    throw ParseError(path.string() + ":1: expected stream " + stream + ", found " + kind);
  }
  if (hash != nullptr) {
    *hash = h;
  }
  if (!std::getline(is, line)) {
    throw ParseError(path.string() + ":2: missing column header");
  }
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::vector<double> row;
    const char *p = line.data();
    const char *end = line.data() + line.size();
    while (p <= end) {
      const char *comma = std::find(p, end, ',');
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(p, comma, value);
      if (ec != std::errc() || ptr != comma) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
      }
      row.push_back(value);
      p = comma + 1;
    }
    if (row.size() != fields) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(fields) +
                       " fields");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

CameraExtrinsics forward_camera() {
  CameraExtrinsics ext;
  ext.R_CI << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  ext.p_CI = Vec3::Zero();
  return ext;
}

SimConfig::SimConfig() : ext(forward_camera()) {}

void SimConfig::validate() const {
  if (!(duration > 0 && imu_rate > 0 && cam_rate > 0 && uwb_rate > 0)) {
    throw std::invalid_argument("SimConfig: duration and rates must be positive");
  }
  if (max_features < 0 || !(pixel_sigma >= 0) || !(focal > 0)) {
    throw std::invalid_argument("SimConfig: invalid camera settings");
  }
  if (trajectory.kind == TrajectoryKind::Waypoints && trajectory.waypoints < 4) {
    throw std::invalid_argument("SimConfig: spline trajectories need at least four waypoints");
  }
  noise.validate();
  uwb.validate();
}

std::string SimConfig::describe() const {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto &t = trajectory;
  os << "seed=" << seed << "\nduration=" << duration << "\ntrajectory=" << static_cast<int>(t.kind)
     << "\nsize=" << t.size_x << ',' << t.size_y << ',' << t.height << ',' << t.z_amp << "\nperiod=" << t.period
     << "\nattitude=" << t.roll_amp << ',' << t.pitch_amp << "\nwaypoints=" << t.waypoints << ',' << t.waypoint_seed
     << "\nline_velocity=" << t.line_velocity.transpose() << "\nrates=" << imu_rate << ',' << cam_rate << ','
     << uwb_rate << "\nmax_features=" << max_features << "\ncamera=" << pixel_sigma << ',' << focal << ','
     << image_width << ',' << image_height << ',' << min_feature_depth << ',' << max_feature_depth
     << "\nimu_noise=" << noise.gyro_white << ',' << noise.gyro_walk << ',' << noise.accel_white << ','
     << noise.accel_walk << "\nuwb=" << uwb.lever_arm.transpose() << ',' << uwb.bias << ',' << uwb.sigma_range << ','
     << uwb.sigma_echo << ',' << uwb.sync_threshold << "\nnoise_on=" << imu_noise << camera_noise << uwb_noise
     << "\nbias0=" << gyro_bias0.transpose() << ',' << accel_bias0.transpose() << '\n';
  for (const auto &a : anchors) {
    os << "anchor=" << a.id << ',' << a.p.transpose() << '\n';
  }
  os << "R_CI=" << Eigen::Map<const Eigen::Matrix<double, 9, 1>>(ext.R_CI.data()).transpose()
     << "\np_CI=" << ext.p_CI.transpose() << '\n';
  return os.str();
}

std::string SimConfig::hash() const {
  const std::size_t h = boost::hash<std::string>{}(describe());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << static_cast<std::uint64_t>(h);
  return os.str();
}

GroundTruth::GroundTruth(const TrajectorySpec &spec, std::vector<AnchorState> anchors)
    : spec_(spec), anchors_(std::move(anchors)) {
  if (spec_.kind == TrajectoryKind::Waypoints) {
    if (spec_.waypoints < 4) {
      throw std::invalid_argument("GroundTruth: spline trajectories need at least four waypoints");
    }
    // Waypoints on a perturbed ellipse keep the heading well defined.
    std::mt19937_64 rng(spec_.waypoint_seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = spec_.waypoints;
    for (int i = 0; i < n; ++i) {
      const double ang = 2.0 * pi * i / n + 0.25 * u(rng) * 2.0 * pi / n;
      const double rad = 1.0 + 0.3 * u(rng);
      knots_.emplace_back(spec_.size_x * rad * std::cos(ang), spec_.size_y * rad * std::sin(ang),
                          spec_.height + spec_.z_amp * u(rng));
    }
    second_ = periodic_spline(knots_, spec_.period / n);
  }
}

GroundTruth::Translation GroundTruth::translation(double t) const {
  const auto &s = spec_;
  const double w = 2.0 * pi / s.period;
  Translation out;
  switch (s.kind) {
  case TrajectoryKind::FigureEight: {
    out.p = Vec3(s.size_x * std::sin(w * t), s.size_y * std::sin(2 * w * t), s.height + s.z_amp * std::sin(3 * w * t));
    out.v = Vec3(s.size_x * w * std::cos(w * t), 2 * w * s.size_y * std::cos(2 * w * t),
                 3 * w * s.z_amp * std::cos(3 * w * t));
    out.a = Vec3(-s.size_x * w * w * std::sin(w * t), -4 * w * w * s.size_y * std::sin(2 * w * t),
                 -9 * w * w * s.z_amp * std::sin(3 * w * t));
    break;
  }
  case TrajectoryKind::Circle: {
    const double r = s.size_x;
    out.p = Vec3(r * std::cos(w * t), r * std::sin(w * t), s.height + s.z_amp * std::sin(2 * w * t));
    out.v = Vec3(-r * w * std::sin(w * t), r * w * std::cos(w * t), 2 * w * s.z_amp * std::cos(2 * w * t));
    out.a = Vec3(-r * w * w * std::cos(w * t), -r * w * w * std::sin(w * t), -4 * w * w * s.z_amp * std::sin(2 * w * t));
    break;
  }
  case TrajectoryKind::Waypoints: {
    const auto n = knots_.size();
    const double h = s.period / static_cast<double>(n);
    double tau = std::fmod(t, s.period);
    if (tau < 0) {
      tau += s.period;
    }
    const auto i = std::min(static_cast<std::size_t>(tau / h), n - 1);
    const std::size_t j = (i + 1) % n;
    const double x = tau - static_cast<double>(i) * h;
    const double y = h - x;
    const Vec3 &Mi = second_[i];
    const Vec3 &Mj = second_[j];
    const Vec3 ci = knots_[i] / h - Mi * h / 6.0;
    const Vec3 cj = knots_[j] / h - Mj * h / 6.0;
    out.p = Mi * (y * y * y) / (6 * h) + Mj * (x * x * x) / (6 * h) + ci * y + cj * x;
    out.v = -Mi * (y * y) / (2 * h) + Mj * (x * x) / (2 * h) - ci + cj;
    out.a = Mi * y / h + Mj * x / h;
    break;
  }
  case TrajectoryKind::Line:
    out.p = Vec3(0, 0, s.height) + s.line_velocity * t;
    out.v = s.line_velocity;
    out.a = Vec3::Zero();
    break;
  case TrajectoryKind::Static:
    out.p = Vec3(0, 0, s.height);
    out.v = Vec3::Zero();
    out.a = Vec3::Zero();
    break;
  }
  return out;
}

KinematicSample GroundTruth::sample(double t) const {
  const Translation tr = translation(t);
  KinematicSample k;
  k.p = tr.p;
  k.v = tr.v;
  k.a = tr.a;

  double yaw = 0.0;
  double yaw_rate = 0.0;
  const double vh2 = tr.v.x() * tr.v.x() + tr.v.y() * tr.v.y();
  if (vh2 > 1e-12) {
    yaw = std::atan2(tr.v.y(), tr.v.x());
    yaw_rate = (tr.v.x() * tr.a.y() - tr.v.y() * tr.a.x()) / vh2;
  }
  double roll = 0.0, roll_rate = 0.0, pitch = 0.0, pitch_rate = 0.0;
  if (spec_.kind != TrajectoryKind::Line && spec_.kind != TrajectoryKind::Static) {
    const double wr = 2.0 * pi / 7.0;
    const double wp = 2.0 * pi / 9.0;
    roll = spec_.roll_amp * std::sin(wr * t);
    roll_rate = spec_.roll_amp * wr * std::cos(wr * t);
    pitch = spec_.pitch_amp * std::sin(wp * t + 1.0);
    pitch_rate = spec_.pitch_amp * wp * std::cos(wp * t + 1.0);
  }
  const Mat3 R_GI = rot_z(yaw) * rot_y(pitch) * rot_x(roll);
  k.R_IG = R_GI.transpose();
  const double sr = std::sin(roll), cr = std::cos(roll), sp = std::sin(pitch), cp = std::cos(pitch);
  k.omega = Vec3(roll_rate - yaw_rate * sp, pitch_rate * cr + yaw_rate * sr * cp, -pitch_rate * sr + yaw_rate * cr * cp);
  return k;
}

ImuState GroundTruth::imu_state(double t, const Vec3 &bg, const Vec3 &ba) const {
  const KinematicSample k = sample(t);
  return ImuState{rot_to_quat(k.R_IG), bg, k.v, ba, k.p};
}

GroundTruth gen_trajectory(const SimConfig &config) {
  config.validate();
  return GroundTruth(config.trajectory, config.anchors);
}

ImuStream sample_imu(const GroundTruth &gt, const SimConfig &config) {
  auto rng = make_rng(config.seed, kImuStream);
  const double h = 1.0 / config.imu_rate;
  const std::size_t n = sample_count(config.duration, config.imu_rate);
  const NoiseParams &N = config.noise;
  const Vec3 g(0, 0, 9.81);
  ImuStream out;
  out.samples.reserve(n);
  Vec3 bg = config.gyro_bias0;
  Vec3 ba = config.accel_bias0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / config.imu_rate;
    // Increments over [t, t + h] that a zero-order hold reproduces.
    const KinematicSample k0 = gt.sample(t);
    const KinematicSample k1 = gt.sample(t + h);
    const Vec3 w = -so3_log(Mat3(k1.R_IG * k0.R_IG.transpose())) / h;
    const Mat3 R_mid = so3_exp(Vec3(-w * (0.5 * h))) * k0.R_IG;
    const Mat3 M = h / 6.0 * (k0.R_IG.transpose() + 4.0 * R_mid.transpose() + k1.R_IG.transpose());
    ImuSample s;
    s.stamp = t;
    s.omega_m = w + bg;
    s.accel_m = M.partialPivLu().solve(Vec3(k1.v - k0.v + g * h)) + ba;
    if (config.imu_noise) {
      s.omega_m += gaussian(rng, N.gyro_white / std::sqrt(h));
      s.accel_m += gaussian(rng, N.accel_white / std::sqrt(h));
    }
    out.samples.push_back(s);
    out.gyro_bias.push_back(bg);
    out.accel_bias.push_back(ba);
    if (config.imu_noise) {
      bg += gaussian(rng, N.gyro_walk * std::sqrt(h));
      ba += gaussian(rng, N.accel_walk * std::sqrt(h));
    }
  }
  return out;
}

FeatureStream sample_features(const GroundTruth &gt, const SimConfig &config) {
  auto rng = make_rng(config.seed, kFeatureStream);
  const double umax = 0.5 * config.image_width / config.focal;
  const double vmax = 0.5 * config.image_height / config.focal;
  const double sigma = config.camera_noise ? config.pixel_sigma / config.focal : 0.0;
  std::uniform_real_distribution<double> uu(-umax, umax);
  std::uniform_real_distribution<double> uv(-vmax, vmax);
  std::uniform_real_distribution<double> ud(config.min_feature_depth, config.max_feature_depth);
  std::normal_distribution<double> nn(0.0, 1.0);

  FeatureStream out;
  std::set<int> alive;
  int next_id = 0;
  const std::size_t frames = sample_count(config.duration, config.cam_rate);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) / config.cam_rate;
    const KinematicSample ks = gt.sample(t);
    const PoseRef pose{ks.R_IG, ks.p};
    auto in_view = [&](const Vec3 &pf, Vec2 &uv_out) {
      const Vec3 pc = camera_point(pf, pose, config.ext);
      if (!(pc.z() > kMinDepth) || pc.z() > 2.0 * config.max_feature_depth) {
        return false;
      }
      uv_out = pc.head<2>() / pc.z();
      return std::abs(uv_out.x()) <= umax && std::abs(uv_out.y()) <= vmax;
    };
    CameraFrame frame;
    frame.stamp = t;
    for (auto it = alive.begin(); it != alive.end();) {
      Vec2 uv_true;
      if (in_view(out.points.at(*it), uv_true)) {
        frame.obs.push_back({*it, uv_true});
        ++it;
      } else {
        it = alive.erase(it);
      }
    }
    const Mat3 R_GC = (config.ext.R_CI * ks.R_IG).transpose();
    const Vec3 center = ks.p - ks.R_IG.transpose() * config.ext.R_CI.transpose() * config.ext.p_CI;
    while (static_cast<int>(frame.obs.size()) < config.max_features) {
      const double d = ud(rng);
      const Vec3 pc(uu(rng) * d, uv(rng) * d, d);
      const Vec3 pf = center + R_GC * pc;
      const int id = next_id++;
      out.points[id] = pf;
      alive.insert(id);
      Vec2 uv_true;
      in_view(pf, uv_true);
      frame.obs.push_back({id, uv_true});
    }
    for (auto &o : frame.obs) {
      o.uv += Vec2(sigma * nn(rng), sigma * nn(rng));
    }
    out.frames.push_back(std::move(frame));
  }
  return out;
}

UwbStream sample_uwb(const GroundTruth &gt, const SimConfig &config) {
  auto range_rng = make_rng(config.seed, kRangeStream);
  auto echo_rng = make_rng(config.seed, kEchoStream);
  std::normal_distribution<double> nn(0.0, 1.0);
  const UwbParams &P = config.uwb;
  const auto &anchors = gt.anchors();
  UwbStream out;
  const std::size_t n = sample_count(config.duration, config.uwb_rate);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = static_cast<double>(j) / config.uwb_rate;
    const KinematicSample k = gt.sample(t);
    for (const auto &a : anchors) {
      double d = predict_range(k.R_IG, k.p, a.p, P);
      if (config.uwb_noise) {
        d += P.sigma_range * nn(range_rng);
      }
      out.ranges.push_back({t, a.id, d});
    }
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      for (std::size_t m = i + 1; m < anchors.size(); ++m) {
        double d = predict_echo(anchors[i], anchors[m], P);
        if (config.uwb_noise) {
          d += P.sigma_echo * nn(echo_rng);
        }
        out.echoes.push_back({t, anchors[i].id, anchors[m].id, d});
      }
    }
  }
  return out;
}

SimData simulate(const SimConfig &config) {
  SimData data;
  data.config = config;
  data.truth = gen_trajectory(config);
  data.imu = sample_imu(data.truth, config);
  data.features = sample_features(data.truth, config);
  data.uwb = sample_uwb(data.truth, config);
  return data;
}

void write_imu_csv(const std::filesystem::path &path, const std::vector<ImuSample> &s, const std::string &hash) {
  auto os = open_out(path);
  write_header(os, "imu", hash, "stamp,wx,wy,wz,ax,ay,az");
  for (const auto &x : s) {
    os << x.stamp << ',' << x.omega_m.x() << ',' << x.omega_m.y() << ',' << x.omega_m.z() << ',' << x.accel_m.x()
       << ',' << x.accel_m.y() << ',' << x.accel_m.z() << '\n';
  }
}

void write_feature_csv(const std::filesystem::path &path, const std::vector<CameraFrame> &f, const std::string &hash) {
  auto os = open_out(path);
  write_header(os, "feature", hash, "stamp,feat_id,u,v");
  for (const auto &frame : f) {
    for (const auto &o : frame.obs) {
      os << frame.stamp << ',' << o.id << ',' << o.uv.x() << ',' << o.uv.y() << '\n';
    }
  }
}

void write_range_csv(const std::filesystem::path &path, const std::vector<RangeMeasurement> &r,
                     const std::string &hash) {
  auto os = open_out(path);
  write_header(os, "range", hash, "stamp,anchor_id,d");
  for (const auto &m : r) {
    os << m.stamp << ',' << m.anchor_id << ',' << m.distance << '\n';
  }
}

void write_echo_csv(const std::filesystem::path &path, const std::vector<EchoMeasurement> &e, const std::string &hash) {
  auto os = open_out(path);
  write_header(os, "echo", hash, "stamp,anchor_i,anchor_j,d");
  for (const auto &m : e) {
    os << m.stamp << ',' << m.anchor_i << ',' << m.anchor_j << ',' << m.distance << '\n';
  }
}

void write_groundtruth_csv(const std::filesystem::path &path, const std::vector<GroundTruthRow> &g,
                           const std::string &hash) {
  auto os = open_out(path);
  write_header(os, "groundtruth", hash, "stamp,qx,qy,qz,qw,px,py,pz,vx,vy,vz");
  for (const auto &r : g) {
    os << r.stamp << ',' << r.q.x() << ',' << r.q.y() << ',' << r.q.z() << ',' << r.q.w() << ',' << r.p.x() << ','
       << r.p.y() << ',' << r.p.z() << ',' << r.v.x() << ',' << r.v.y() << ',' << r.v.z() << '\n';
  }
}

std::vector<ImuSample> read_imu_csv(const std::filesystem::path &path, std::string *hash) {
  std::vector<ImuSample> out;
  for (const auto &r : read_rows(path, "imu", 7, hash)) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  }
  return out;
}

std::vector<CameraFrame> read_feature_csv(const std::filesystem::path &path, std::string *hash) {
  std::vector<CameraFrame> out;
  for (const auto &r : read_rows(path, "feature", 4, hash)) {
    if (out.empty() || out.back().stamp != r[0]) {
      out.push_back(CameraFrame{r[0], {}});
    }
    out.back().obs.push_back({static_cast<int>(r[1]), Vec2(r[2], r[3])});
  }
  return out;
}

std::vector<RangeMeasurement> read_range_csv(const std::filesystem::path &path, std::string *hash) {
  std::vector<RangeMeasurement> out;
  for (const auto &r : read_rows(path, "range", 3, hash)) {
    out.push_back({r[0], static_cast<int>(r[1]), r[2]});
  }
  return out;
}

std::vector<EchoMeasurement> read_echo_csv(const std::filesystem::path &path, std::string *hash) {
  std::vector<EchoMeasurement> out;
  for (const auto &r : read_rows(path, "echo", 4, hash)) {
    out.push_back({r[0], static_cast<int>(r[1]), static_cast<int>(r[2]), r[3]});
  }
  return out;
}

std::vector<GroundTruthRow> read_groundtruth_csv(const std::filesystem::path &path, std::string *hash) {
  std::vector<GroundTruthRow> out;
  for (const auto &r : read_rows(path, "groundtruth", 11, hash)) {
    GroundTruthRow g;
    g.stamp = r[0];
    g.q = Quat(r[1], r[2], r[3], r[4]);
    g.p = Vec3(r[5], r[6], r[7]);
    g.v = Vec3(r[8], r[9], r[10]);
    out.push_back(g);
  }
  return out;
}

std::vector<GroundTruthRow> groundtruth_rows(const GroundTruth &gt, const std::vector<CameraFrame> &frames) {
  std::vector<GroundTruthRow> out;
  out.reserve(frames.size());
  for (const auto &f : frames) {
    const KinematicSample k = gt.sample(f.stamp);
    out.push_back({f.stamp, rot_to_quat(k.R_IG), k.p, k.v});
  }
  return out;
}

void write_sim_data(const std::filesystem::path &dir, const SimData &data) {
  std::filesystem::create_directories(dir);
  const std::string h = data.config.hash();
  write_imu_csv(dir / "imu.csv", data.imu.samples, h);
  write_feature_csv(dir / "features.csv", data.features.frames, h);
  write_range_csv(dir / "ranges.csv", data.uwb.ranges, h);
  write_echo_csv(dir / "echoes.csv", data.uwb.echoes, h);
  write_groundtruth_csv(dir / "groundtruth.csv", groundtruth_rows(data.truth, data.features.frames), h);
}

} // namespace viro
