#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "viro/propagation.hpp"
#include "viro/ranging.hpp"
#include "viro/vision.hpp"

namespace viro {

/// Error-state layout of the analysis state: [theta | bg | v | ba | p | p_f | p_a1 | p_a2].
inline constexpr Eigen::Index kAnalysisDim = 24;
inline constexpr Eigen::Index kFeat = 15;
inline constexpr Eigen::Index kAnchor1 = 18;
inline constexpr Eigen::Index kAnchor2 = 21;

/// Inertial state with one point feature and two anchors.
struct AnalysisState {
  ImuState imu;
  Vec3 feature = Vec3::Zero();
  Vec3 anchor1 = Vec3::Zero();
  Vec3 anchor2 = Vec3::Zero();
};

/// True states at the analysis steps and the true IMU samples between consecutive steps.
struct ObsTrajectory {
  std::vector<double> stamps;
  std::vector<AnalysisState> truth;
  std::vector<std::vector<ImuSample>> segments; // segments[k] spans stamps[k]..stamps[k+1]
};

enum class ObsMode { Ideal, Actual, Fej };

struct ObsConfig {
  double sigma_pos = 0.05; // m (velocity uses the same value in m/s)
  double sigma_rot = 0.01; // rad
  std::uint64_t seed = 7;
  CameraExtrinsics ext;
  Vec3 lever_arm = Vec3::Zero();
  Vec3 gravity = Vec3(0, 0, 9.81);
  double rank_tol = 1e-8;
};

struct ObservabilityReport {
  ObsMode mode = ObsMode::Ideal;
  Eigen::MatrixXd O;
  Eigen::Matrix<double, kAnalysisDim, 3> N1;
  Eigen::Matrix<double, kAnalysisDim, 1> N2;
  Eigen::Vector3d residual_n1 = Eigen::Vector3d::Zero(); // |O n| / |O|_2, n as built (not normalized)
  double residual_n2 = 0.0;
  Eigen::VectorXd singular_values;
  int rank = 0;
  int steps = 0;
  bool degenerate = false;
};

/// Unobservable directions at a linearization point: global translation (N1) and yaw about gravity (N2).
void nullspace_candidates(const AnalysisState &x, const Vec3 &gravity, Eigen::Matrix<double, kAnalysisDim, 3> &N1,
                          Eigen::Matrix<double, kAnalysisDim, 1> &N2);

/// 24x24 transition between two inertial linearization points; identity on the feature and anchors.
Eigen::Matrix<double, kAnalysisDim, kAnalysisDim> analysis_transition(const ImuState &from, const ImuState &to,
                                                                     std::span<const ImuSample> samples,
                                                                     const Vec3 &gravity);

/// Measurement rows at one step: two visual, two robot-anchor ranges, one echo.
Eigen::Matrix<double, 5, kAnalysisDim> analysis_jacobian(const AnalysisState &x, const ObsConfig &cfg);

/**
 * Stacks H_k Phi_{k,1} over all steps.
 *
 * Ideal: everything at the true states. Actual: Phi_{k+1,k} between freshly perturbed
 * x_{k|k} and x_{k+1|k}, H_k at x_{k|k-1}. Fej: Phi and H at the first estimates, with
 * the feature and anchors fixed at their initial perturbed values.
 */
ObservabilityReport build_observability_matrix(const ObsTrajectory &traj, ObsMode mode, const ObsConfig &cfg);

/// FEJ-linearized matrix under the same injected estimation error.
ObservabilityReport fej_restoration_check(const ObsTrajectory &traj, const ObsConfig &cfg);

/// Feature position that stays in front of the camera at every step, or nullopt.
std::optional<Vec3> visible_feature(std::span<const AnalysisState> truth, const CameraExtrinsics &ext);

std::string obs_mode_name(ObsMode mode);
std::string obs_report_header();
std::string obs_report_row(const std::string &trajectory, const ObservabilityReport &report);

} // namespace viro
