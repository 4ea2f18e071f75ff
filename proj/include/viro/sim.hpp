#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "viro/propagation.hpp"
#include "viro/ranging.hpp"
#include "viro/vision.hpp"

namespace viro {

enum class TrajectoryKind { FigureEight, Circle, Waypoints, Line, Static };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::FigureEight;
  double size_x = 6.0;    // m, figure-eight half width / circle radius / waypoint box
  double size_y = 3.0;    // m
  double height = 1.5;    // m
  double z_amp = 0.5;     // m, vertical oscillation
  double period = 20.0;   // s per lap
  double roll_amp = 0.05; // rad
  double pitch_amp = 0.05;
  int waypoints = 8;
  std::uint64_t waypoint_seed = 3;
  Vec3 line_velocity = Vec3(1.0, 0.0, 0.0);
};

struct SimConfig {
  std::uint64_t seed = 1;
  double duration = 60.0;
  TrajectorySpec trajectory;
  double imu_rate = 200.0;
  double cam_rate = 10.0;
  double uwb_rate = 60.0;
  std::vector<AnchorState> anchors = {{0, Vec3(8.0, -6.0, 3.0)}, {1, Vec3(-8.0, -5.0, 0.5)}, {2, Vec3(1.0, 7.0, 2.5)}};
  int max_features = 180;
  double pixel_sigma = 1.0; // px
  double focal = 460.0;     // px
  double image_width = 752.0;
  double image_height = 480.0;
  double min_feature_depth = 1.0;
  double max_feature_depth = 15.0;
  NoiseParams noise;
  UwbParams uwb{Vec3(0.05, 0.0, 0.1), -0.75, 0.15, 0.15, 0.05};
  CameraExtrinsics ext;
  bool imu_noise = true;
  bool camera_noise = true;
  bool uwb_noise = true;
  Vec3 gyro_bias0 = Vec3::Zero();
  Vec3 accel_bias0 = Vec3::Zero();

  SimConfig();
  void validate() const;
  /// Canonical key=value description used for the config hash.
  std::string describe() const;
  std::string hash() const;
};

/// Forward-looking camera: optical axis along body x, image x along -body y.
CameraExtrinsics forward_camera();

struct KinematicSample {
  Mat3 R_IG = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();     // global acceleration
  Vec3 omega = Vec3::Zero(); // body angular rate
};

/// Smooth analytic trajectory with anchor positions.
class GroundTruth {
public:
  GroundTruth() = default;
  GroundTruth(const TrajectorySpec &spec, std::vector<AnchorState> anchors);

  KinematicSample sample(double t) const;
  ImuState imu_state(double t, const Vec3 &bg = Vec3::Zero(), const Vec3 &ba = Vec3::Zero()) const;
  const std::vector<AnchorState> &anchors() const { return anchors_; }
  const TrajectorySpec &spec() const { return spec_; }

private:
  struct Translation {
    Vec3 p, v, a;
  };
  Translation translation(double t) const;

  TrajectorySpec spec_;
  std::vector<AnchorState> anchors_;
  // Periodic cubic spline: knot values and second derivatives per axis.
  std::vector<Vec3> knots_;
  std::vector<Vec3> second_;
};

GroundTruth gen_trajectory(const SimConfig &config);

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<Vec3> gyro_bias; // true bias per sample
  std::vector<Vec3> accel_bias;
};

/// Sample i is stamped t_i and holds the signal at the center of [t_i, t_i+1].
ImuStream sample_imu(const GroundTruth &gt, const SimConfig &config);

struct FeatureObservation {
  int id = 0;
  Vec2 uv = Vec2::Zero(); // normalized coordinates
};

struct CameraFrame {
  double stamp = 0.0;
  std::vector<FeatureObservation> obs;
};

struct FeatureStream {
  std::vector<CameraFrame> frames;
  std::map<int, Vec3> points;
};

/// Features are spawned inside the view frustum whenever fewer than max_features are visible.
FeatureStream sample_features(const GroundTruth &gt, const SimConfig &config);

struct UwbStream {
  std::vector<RangeMeasurement> ranges;
  std::vector<EchoMeasurement> echoes;
};

UwbStream sample_uwb(const GroundTruth &gt, const SimConfig &config);

struct SimData {
  SimConfig config;
  GroundTruth truth;
  ImuStream imu;
  FeatureStream features;
  UwbStream uwb;
};

SimData simulate(const SimConfig &config);

/// Independent generator for one named stream of a run.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream);

struct GroundTruthRow {
  double stamp = 0.0;
  Quat q;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Measurement files: one per stream, a `# stream=<type> config_hash=<hash>` line, a column line, then rows.
void write_imu_csv(const std::filesystem::path &path, const std::vector<ImuSample> &s, const std::string &hash);
void write_feature_csv(const std::filesystem::path &path, const std::vector<CameraFrame> &f, const std::string &hash);
void write_range_csv(const std::filesystem::path &path, const std::vector<RangeMeasurement> &r,
                     const std::string &hash);
void write_echo_csv(const std::filesystem::path &path, const std::vector<EchoMeasurement> &e, const std::string &hash);
void write_groundtruth_csv(const std::filesystem::path &path, const std::vector<GroundTruthRow> &g,
                           const std::string &hash);

std::vector<ImuSample> read_imu_csv(const std::filesystem::path &path, std::string *hash = nullptr);
std::vector<CameraFrame> read_feature_csv(const std::filesystem::path &path, std::string *hash = nullptr);
std::vector<RangeMeasurement> read_range_csv(const std::filesystem::path &path, std::string *hash = nullptr);
std::vector<EchoMeasurement> read_echo_csv(const std::filesystem::path &path, std::string *hash = nullptr);
std::vector<GroundTruthRow> read_groundtruth_csv(const std::filesystem::path &path, std::string *hash = nullptr);

/// Ground truth at the camera stamps.
std::vector<GroundTruthRow> groundtruth_rows(const GroundTruth &gt, const std::vector<CameraFrame> &frames);

/// Writes imu.csv, features.csv, ranges.csv, echoes.csv and groundtruth.csv into `dir`.
void write_sim_data(const std::filesystem::path &dir, const SimData &data);

class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace viro
