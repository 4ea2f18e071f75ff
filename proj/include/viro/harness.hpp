#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "viro/observability.hpp"
#include "viro/sim.hpp"
#include "viro/uwb_init.hpp"

namespace viro {

enum class Mode { Vio, Viro, FejViro, FejViroS };

Mode parse_mode(const std::string &name);
std::string mode_name(Mode mode);
TrajectoryKind parse_trajectory(const std::string &name);
std::string trajectory_name(TrajectoryKind kind);

/// Default simulation for one of the three evaluation trajectories.
SimConfig default_sim(TrajectoryKind kind);

struct FilterParams {
  NoiseParams noise;
  InitParams init;
  std::size_t max_short = 11;
  std::size_t min_track_length = 3;
  double chi2_prob = 0.95;
  // Initial standard deviations.
  double sigma_rot = 0.02;
  double sigma_gyro_bias = 1e-3;
  double sigma_vel = 0.05;
  double sigma_accel_bias = 1e-2;
  double sigma_pos = 0.05;
  bool initial_error = true;

  Matrix15 initial_covariance() const;
};

struct RunConfig {
  Mode mode = Mode::FejViro;
  SimConfig sim;
  FilterParams filter;
};

struct EstimateRecord {
  double stamp = 0.0;
  ImuState est;
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Zero(); // [theta | p]
  bool anchors = false;
};

struct RunResult {
  std::vector<EstimateRecord> records;
  std::optional<InitReport> init;
  std::vector<std::string> warnings;
  std::vector<AnchorState> anchors; // final estimates
  int visual_updates = 0;
  int ranging_updates = 0;
  std::size_t max_long_window = 0;
};

/// Runs the estimator on simulated measurements. `data.config` supplies the camera and UWB settings.
RunResult run_pipeline(const RunConfig &config, const SimData &data);
RunResult run_pipeline(const RunConfig &config);

/// Error and consistency at one stamp. Orientation quantities are in the global frame.
struct EvalPoint {
  double stamp = 0.0;
  Vec3 err_rot = Vec3::Zero();
  Vec3 err_pos = Vec3::Zero();
  Vec3 sigma_rot = Vec3::Zero();
  Vec3 sigma_pos = Vec3::Zero();
  double nees_rot = 0.0;
  double nees_pos = 0.0;
  bool valid = true; // false when a covariance block is singular
  bool anchors = false;
};

using EvalSeries = std::vector<EvalPoint>;

/// Orientation error in the filter convention: R_true = exp(-dtheta) R_est.
Vec3 orientation_error(const Mat3 &R_true, const Mat3 &R_est);

EvalSeries compute_nees(const std::vector<EstimateRecord> &records, const GroundTruth &gt);

/// NEES of a 3-dof block; nullopt when P is singular.
std::optional<double> nees(const Vec3 &err, const Mat3 &P);

/// Translation RMSE after optimal rigid alignment; throws for fewer than two or identical poses.
double compute_ate(const std::vector<Vec3> &estimate, const std::vector<Vec3> &truth);
double compute_ate(const std::vector<EstimateRecord> &records, const GroundTruth &gt);

std::string sigma_bounds_header();
std::string sigma_bounds_rows(const EvalSeries &series);
/// Parses the CSV written by sigma_bounds_header/rows.
EvalSeries parse_sigma_bounds(const std::string &text);

/// Stamp of the first record with anchors, if any.
std::optional<double> init_stamp(const std::vector<EstimateRecord> &records);

/// Monte-Carlo mean NEES per stamp.
struct NeesSummary {
  std::vector<double> stamps;
  std::vector<double> mean_rot;
  std::vector<double> mean_pos;
  std::vector<int> count;
  double post_init_rot = 0.0; // time average of the mean after the last initialization
  double post_init_pos = 0.0;
  double max_post_init_rot = 0.0;
  double max_post_init_pos = 0.0;
  double init_time = 0.0;
};

NeesSummary summarize_nees(const std::vector<EvalSeries> &runs);

struct MonteCarloResult {
  std::vector<RunResult> runs;
  std::vector<EvalSeries> series;
  std::vector<double> ate;
  NeesSummary nees;
  double mean_ate = 0.0;
};

/// Independent runs with seeds seed0, seed0+1, ...
MonteCarloResult montecarlo(const RunConfig &config, std::uint64_t seed0, int runs);

/// Observability matrix of the analysis state along the configured trajectory.
ObsTrajectory obs_trajectory(const SimConfig &sim, int steps, double t0 = 1.0);
std::vector<ObservabilityReport> run_obs_report(const SimConfig &sim, const ObsConfig &cfg, int steps = 50);

/// Output writers; each creates or truncates one file in `dir`.
void write_trajectory(const std::filesystem::path &dir, const std::vector<EstimateRecord> &records);
void write_nees(const std::filesystem::path &dir, const NeesSummary &summary, int runs);
void write_sigma_bounds(const std::filesystem::path &dir, const EvalSeries &series);
void write_ate(const std::filesystem::path &dir, double ate);
void write_init_report(const std::filesystem::path &dir, const std::vector<InitReport> &reports);
void write_obs_report(const std::filesystem::path &dir,
                      const std::vector<std::pair<std::string, ObservabilityReport>> &rows);

/// Reads trajectory.csv back into records (covariance is not stored).
std::vector<EstimateRecord> read_trajectory(const std::filesystem::path &path);

} // namespace viro
