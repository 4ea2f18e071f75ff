#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "viro/sim.hpp"

using namespace viro;

namespace {

std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::filesystem::path temp_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("viro_test_sim_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SimConfig quiet(TrajectoryKind kind, double duration) {
  SimConfig c;
  c.trajectory.kind = kind;
  c.duration = duration;
  c.imu_noise = false;
  c.camera_noise = false;
  c.uwb_noise = false;
  return c;
}

} // namespace

TEST_CASE("defaults") {
  const SimConfig c;
  CHECK(c.imu_rate == 200.0);
  CHECK(c.cam_rate == 10.0);
  CHECK(c.uwb_rate == 60.0);
  CHECK(c.anchors.size() == 3);
  CHECK(c.max_features == 180);
  CHECK(c.noise.gyro_white == 1.7e-4);
  CHECK(c.noise.gyro_walk == 2.0e-5);
  CHECK(c.noise.accel_white == 2.0e-3);
  CHECK(c.noise.accel_walk == 3.0e-3);
  CHECK(c.uwb.sigma_range == 0.15);
  CHECK(c.uwb.bias == -0.75);
  CHECK(c.trajectory.kind == TrajectoryKind::FigureEight);
  CHECK(c.duration == 60.0);
  SimConfig bad = c;
  bad.imu_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("straight line and circle") {
  SimConfig line = quiet(TrajectoryKind::Line, 10.0);
  const GroundTruth lg = gen_trajectory(line);
  for (double t : {0.0, 2.5, 7.0}) {
    const KinematicSample k = lg.sample(t);
    CHECK(k.omega.norm() == 0.0);
    CHECK(k.a.norm() == 0.0);
  }
  const ImuStream li = sample_imu(lg, line);
  for (const auto &s : li.samples) {
    CHECK((s.accel_m - lg.sample(s.stamp).R_IG * Vec3(0, 0, 9.81)).norm() < 1e-12);
  }

  SimConfig circle = quiet(TrajectoryKind::Circle, 10.0);
  circle.trajectory.size_x = 5.0;
  circle.trajectory.z_amp = 0.0;
  const GroundTruth cg = gen_trajectory(circle);
  for (double t : {0.3, 4.1, 9.9}) {
    const KinematicSample k = cg.sample(t);
    CHECK(k.a.norm() == doctest::Approx(k.v.squaredNorm() / 5.0).epsilon(1e-6));
  }
}

TEST_CASE("body rate matches the attitude derivative") {
  for (TrajectoryKind kind : {TrajectoryKind::FigureEight, TrajectoryKind::Circle, TrajectoryKind::Waypoints}) {
    const GroundTruth gt = gen_trajectory(quiet(kind, 30.0));
    const double h = 1e-5;
    for (double t = 0.5; t < 30.0; t += 2.3) {
      const Mat3 R0 = gt.sample(t - h).R_IG;
      const Mat3 R1 = gt.sample(t + h).R_IG;
      const Vec3 fd = -so3_log(Mat3(R1 * R0.transpose())) / (2 * h);
      CHECK((fd - gt.sample(t).omega).norm() < 1e-6);
      const Vec3 vfd = (gt.sample(t + h).p - gt.sample(t - h).p) / (2 * h);
      CHECK((vfd - gt.sample(t).v).norm() < 1e-6);
      const Vec3 afd = (gt.sample(t + h).v - gt.sample(t - h).v) / (2 * h);
      CHECK((afd - gt.sample(t).a).norm() < 1e-5);
    }
  }
}

TEST_CASE("stationary accelerometer reads gravity") {
  const SimConfig c = quiet(TrajectoryKind::Static, 2.0);
  const GroundTruth gt = gen_trajectory(c);
  const ImuStream imu = sample_imu(gt, c);
  for (const auto &s : imu.samples) {
    CHECK((s.accel_m - gt.sample(s.stamp).R_IG * Vec3(0, 0, 9.81)).norm() < 1e-12);
    CHECK(s.omega_m.norm() < 1e-15);
  }
}

TEST_CASE("noiseless IMU integrates back to the trajectory") {
  for (TrajectoryKind kind : {TrajectoryKind::FigureEight, TrajectoryKind::Circle, TrajectoryKind::Waypoints}) {
    CAPTURE(static_cast<int>(kind));
    const SimConfig c = quiet(kind, 12.0);
    const GroundTruth gt = gen_trajectory(c);
    const ImuStream imu = sample_imu(gt, c);
    const auto window = imu_window(imu.samples, 0.0, 10.0);
    const ImuState end = integrate_imu(gt.imu_state(0.0), window, Vec3(0, 0, 9.81));
    const ImuState truth = gt.imu_state(10.0);
    CHECK((end.p - truth.p).norm() < 1e-5);
    CHECK(so3_log(Mat3(end.rot() * truth.rot().transpose())).norm() < 1e-6);
  }
}

TEST_CASE("determinism and stream independence") {
  SimConfig c;
  c.duration = 5.0;
  const SimData a = simulate(c);
  const SimData b = simulate(c);
  const auto da = temp_dir("a"), db = temp_dir("b");
  write_sim_data(da, a);
  write_sim_data(db, b);
  for (const char *f : {"imu.csv", "features.csv", "ranges.csv", "echoes.csv", "groundtruth.csv"}) {
    CAPTURE(f);
    CHECK(slurp(da / f) == slurp(db / f));
  }

  SimConfig other = c;
  other.camera_noise = false;
  other.uwb_noise = false;
  const SimData o = simulate(other);
  REQUIRE(o.imu.samples.size() == a.imu.samples.size());
  bool same_imu = true;
  for (std::size_t i = 0; i < a.imu.samples.size(); ++i) {
    same_imu = same_imu && o.imu.samples[i].omega_m == a.imu.samples[i].omega_m &&
               o.imu.samples[i].accel_m == a.imu.samples[i].accel_m;
  }
  CHECK(same_imu);
  CHECK(c.hash() != other.hash());
  CHECK(stream_seed(1, 1) != stream_seed(1, 2));
  CHECK(stream_seed(1, 1) != stream_seed(2, 1));
}

TEST_CASE("bias random walk statistics") {
  SimConfig c = quiet(TrajectoryKind::Static, 5.0);
  c.imu_noise = true;
  const GroundTruth gt = gen_trajectory(c);
  const int runs = 500;
  double sg = 0.0, sa = 0.0, wg = 0.0;
  std::size_t wcount = 0;
  double T = 0.0;
  for (int r = 0; r < runs; ++r) {
    c.seed = 1000 + static_cast<std::uint64_t>(r);
    const ImuStream imu = sample_imu(gt, c);
    T = imu.samples.back().stamp;
    sg += imu.gyro_bias.back().squaredNorm() / 3.0;
    sa += imu.accel_bias.back().squaredNorm() / 3.0;
    for (std::size_t i = 0; i < imu.samples.size(); i += 97) {
      wg += (imu.samples[i].omega_m - imu.gyro_bias[i]).squaredNorm() / 3.0;
      ++wcount;
    }
  }
  CHECK(sg / runs == doctest::Approx(c.noise.gyro_walk * c.noise.gyro_walk * T).epsilon(0.1));
  CHECK(sa / runs == doctest::Approx(c.noise.accel_walk * c.noise.accel_walk * T).epsilon(0.1));
  CHECK(wg / static_cast<double>(wcount) ==
        doctest::Approx(c.noise.gyro_white * c.noise.gyro_white * c.imu_rate).epsilon(0.1));
}

TEST_CASE("features") {
  SimConfig c = quiet(TrajectoryKind::FigureEight, 20.0);
  const GroundTruth gt = gen_trajectory(c);
  const FeatureStream fs = sample_features(gt, c);
  REQUIRE(fs.frames.size() == 201);
  double total = 0.0;
  const double umax = 0.5 * c.image_width / c.focal, vmax = 0.5 * c.image_height / c.focal;
  for (const auto &f : fs.frames) {
    const KinematicSample k = gt.sample(f.stamp);
    const PoseRef pose{k.R_IG, k.p};
    CHECK(f.obs.size() <= 180);
    total += static_cast<double>(f.obs.size());
    for (const auto &o : f.obs) {
      const Vec3 pc = camera_point(fs.points.at(o.id), pose, c.ext);
      CHECK(pc.z() > 0.0);
      CHECK((project(fs.points.at(o.id), pose, c.ext) - o.uv).norm() == 0.0);
      CHECK(std::abs(o.uv.x()) <= umax);
      CHECK(std::abs(o.uv.y()) <= vmax);
    }
  }
  CHECK(total / 201.0 <= 180.0);
  CHECK(total / 201.0 > 100.0);

  // A point behind the camera never shows up.
  const KinematicSample k0 = gt.sample(0.0);
  const Vec3 behind = k0.p + k0.R_IG.transpose() * c.ext.R_CI.transpose() * Vec3(0, 0, -3);
  CHECK_THROWS_AS(project(behind, PoseRef{k0.R_IG, k0.p}, c.ext), CheiralityError);

  SimConfig noisy = c;
  noisy.camera_noise = true;
  const FeatureStream ns = sample_features(gt, noisy);
  double s2 = 0.0;
  std::size_t n = 0;
  for (const auto &f : ns.frames) {
    const KinematicSample k = gt.sample(f.stamp);
    for (const auto &o : f.obs) {
      s2 += (o.uv - project(ns.points.at(o.id), PoseRef{k.R_IG, k.p}, c.ext)).squaredNorm() / 2.0;
      ++n;
    }
  }
  CHECK(std::sqrt(s2 / static_cast<double>(n)) * c.focal == doctest::Approx(c.pixel_sigma).epsilon(0.1));
}

TEST_CASE("uwb streams") {
  SimConfig c = quiet(TrajectoryKind::FigureEight, 60.0);
  const GroundTruth gt = gen_trajectory(c);
  const UwbStream clean = sample_uwb(gt, c);
  for (std::size_t i = 0; i < clean.ranges.size(); i += 37) {
    const auto &m = clean.ranges[i];
    const KinematicSample k = gt.sample(m.stamp);
    const auto &a = c.anchors[static_cast<std::size_t>(m.anchor_id)];
    CHECK(m.distance == predict_range(k.R_IG, k.p, a.p, c.uwb));
  }
  std::vector<double> stamps;
  for (const auto &m : clean.ranges) {
    if (m.anchor_id == 0) {
      stamps.push_back(m.stamp);
    }
  }
  REQUIRE(stamps.size() == 3601);
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    CHECK(std::abs(stamps[i] - stamps[i - 1] - 1.0 / 60.0) < 1e-12);
  }

  c.uwb_noise = true;
  const UwbStream noisy = sample_uwb(gt, c);
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < noisy.ranges.size() && n < 10000; ++i, ++n) {
    const auto &m = noisy.ranges[i];
    const KinematicSample k = gt.sample(m.stamp);
    const double unbiased = predict_range(k.R_IG, k.p, c.anchors[static_cast<std::size_t>(m.anchor_id)].p, c.uwb) -
                            c.uwb.bias;
    const double e = m.distance - unbiased;
    sum += e;
    sum2 += e * e;
  }
  REQUIRE(n == 10000);
  const double mean = sum / static_cast<double>(n);
  CHECK(mean == doctest::Approx(-0.75).epsilon(0.01 / 0.75));
  CHECK(std::sqrt(sum2 / static_cast<double>(n) - mean * mean) == doctest::Approx(0.15).epsilon(0.1));
  CHECK(noisy.echoes.size() == 3601 * 3);
}

TEST_CASE("measurement files round trip") {
  SimConfig c;
  c.duration = 3.0;
  const SimData d = simulate(c);
  const auto dir = temp_dir("rt");
  write_sim_data(dir, d);
  std::string hash;
  const auto imu = read_imu_csv(dir / "imu.csv", &hash);
  CHECK(hash == c.hash());
  REQUIRE(imu.size() == d.imu.samples.size());
  CHECK(imu[17].omega_m == d.imu.samples[17].omega_m);
  CHECK(imu[17].accel_m == d.imu.samples[17].accel_m);
  CHECK(imu[17].stamp == d.imu.samples[17].stamp);
  const auto feats = read_feature_csv(dir / "features.csv");
  REQUIRE(feats.size() == d.features.frames.size());
  CHECK(feats[5].obs.size() == d.features.frames[5].obs.size());
  CHECK(feats[5].obs[3].uv == d.features.frames[5].obs[3].uv);
  const auto ranges = read_range_csv(dir / "ranges.csv");
  REQUIRE(ranges.size() == d.uwb.ranges.size());
  CHECK(ranges[100].distance == d.uwb.ranges[100].distance);
  const auto echoes = read_echo_csv(dir / "echoes.csv");
  REQUIRE(echoes.size() == d.uwb.echoes.size());
  CHECK(echoes[7].anchor_j == d.uwb.echoes[7].anchor_j);
  const auto gtr = read_groundtruth_csv(dir / "groundtruth.csv");
  CHECK(gtr.size() == d.features.frames.size());

  const std::string head = slurp(dir / "imu.csv").substr(0, 200);
  CHECK(head.rfind("# stream=imu config_hash=" + c.hash() + "\nstamp,wx,wy,wz,ax,ay,az\n", 0) == 0);
  CHECK(slurp(dir / "features.csv").find("stamp,feat_id,u,v\n") != std::string::npos);
  CHECK(slurp(dir / "ranges.csv").find("stamp,anchor_id,d\n") != std::string::npos);
  CHECK(slurp(dir / "echoes.csv").find("stamp,anchor_i,anchor_j,d\n") != std::string::npos);
  CHECK(slurp(dir / "groundtruth.csv").find("stamp,qx,qy,qz,qw,px,py,pz,vx,vy,vz\n") != std::string::npos);

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "# stream=range config_hash=x\nstamp,anchor_id,d\n0.1,zero,3.0\n";
  }
  CHECK_THROWS_AS(read_range_csv(dir / "bad.csv"), ParseError);
  CHECK_THROWS_AS(read_imu_csv(dir / "ranges.csv"), ParseError);
  CHECK_THROWS(read_imu_csv(dir / "missing.csv"));
}
