#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "viro/state.hpp"

namespace viro {

/// Minimum feature depth in the camera frame (m).
inline constexpr double kMinDepth = 0.1;
/// Minimum camera-center baseline for triangulation (m).
inline constexpr double kMinBaseline = 0.05;

class CheiralityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CameraExtrinsics {
  Mat3 R_CI = Mat3::Identity(); // ^C_I R
  Vec3 p_CI = Vec3::Zero();     // ^C p_I
};

/// Normalized image observation of a feature at a clone stamp.
struct Observation {
  double stamp = 0.0;
  Vec2 uv = Vec2::Zero();
  double sigma = 1.0;
};

struct FeatureTrack {
  int id = 0;
  std::vector<Observation> obs;
};

/// Pose of a camera-carrying body: ^I_G R and ^G p_I.
struct PoseRef {
  Mat3 R_IG;
  Vec3 p;
};

/// Feature position in the camera frame.
Vec3 camera_point(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext);

/// Perspective projection of a global point; throws CheiralityError below kMinDepth.
Vec2 project(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext);
Vec2 project(const Vec3 &p_f, const ClonePose &clone, const CameraExtrinsics &ext);

/// Jacobians of project() with respect to the pose orientation error, pose position and feature position.
struct ProjectionJacobians {
  Eigen::Matrix<double, 2, 3> d_theta;
  Eigen::Matrix<double, 2, 3> d_pos;
  Eigen::Matrix<double, 2, 3> d_feat;
};

ProjectionJacobians projection_jacobians(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext);

struct Triangulation {
  Vec3 p = Vec3::Zero();
  Mat3 cov = Mat3::Zero(); // Gauss-Newton covariance from the observation noise
  int iterations = 0;
};

/**
 * Multi-view triangulation against poses looked up by observation stamp.
 *
 * Returns nullopt when fewer than two poses are available, the baseline is below
 * kMinBaseline, the rays are near-collinear, a depth is below kMinDepth, or
 * Gauss-Newton does not converge.
 */
std::optional<Triangulation> triangulate(std::span<const Observation> obs, std::span<const PoseRef> poses,
                                         const CameraExtrinsics &ext);
std::optional<Triangulation> triangulate(const FeatureTrack &track, const FilterState &state,
                                         const CameraExtrinsics &ext);

struct VisualUpdateOptions {
  bool fej = true;
  double chi2_prob = 0.95;
};

struct VisualUpdateStats {
  int used = 0;
  int gated = 0;
  int rejected = 0;
  int rows = 0;
};

/// Null-space projected system of one track.
struct TrackSystem {
  std::vector<Eigen::Index> cols; // short-window columns
  Eigen::MatrixXd H;              // whitened, rows = 2n - 3
  Eigen::VectorXd r;
};

/// Left null-space projection: returns (Q2^T H_x, Q2^T r) where Q2 spans the left null space of H_f.
void nullspace_project(const Eigen::MatrixXd &H_f, Eigen::MatrixXd &H_x, Eigen::VectorXd &r);

/// Orthogonal compression of a tall system to at most H.cols() rows.
void compress_measurements(Eigen::MatrixXd &H, Eigen::VectorXd &r);

/// Builds the projected system for a triangulated track, or nullopt when a clone is missing.
std::optional<TrackSystem> track_system(const FeatureTrack &track, const Vec3 &p_f, const FilterState &state,
                                        const CameraExtrinsics &ext, bool fej);

/// MSCKF update with the given tracks; every observation must refer to a short-window clone.
VisualUpdateStats visual_update(FilterState &state, std::span<const FeatureTrack> tracks, const CameraExtrinsics &ext,
                                const VisualUpdateOptions &opts = {});

} // namespace viro
