#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "viro/mathx.hpp"

namespace viro {

using Matrix15 = Eigen::Matrix<double, 15, 15>;

/// Error-state layout of the inertial block: [theta | bg | v | ba | p].
inline constexpr Eigen::Index kImuDim = 15;
inline constexpr Eigen::Index kTheta = 0;
inline constexpr Eigen::Index kBg = 3;
inline constexpr Eigen::Index kVel = 6;
inline constexpr Eigen::Index kBa = 9;
inline constexpr Eigen::Index kPos = 12;
inline constexpr Eigen::Index kCloneDim = 6;

struct ImuState {
  Quat q;       // ^I_G q
  Vec3 bg = Vec3::Zero();
  Vec3 v = Vec3::Zero(); // ^G v_I
  Vec3 ba = Vec3::Zero();
  Vec3 p = Vec3::Zero(); // ^G p_I

  Mat3 rot() const { return quat_to_rot(q); }
};

struct ClonePose {
  Quat q;
  Vec3 p = Vec3::Zero();
  double stamp = 0.0;

  Mat3 rot() const { return quat_to_rot(q); }
};

struct AnchorState {
  int id = 0;
  Vec3 p = Vec3::Zero();
};

struct SlamFeature {
  int id = 0;
  Vec3 p = Vec3::Zero();
};

enum class Window { Short, Long };

enum class BlockKind : std::uint8_t { Imu, Feature, Anchor, ShortClone, LongClone };

/// Identity of a state block. Time-indexed blocks carry their stamp in nanoseconds, points their id.
struct BlockKey {
  BlockKind kind = BlockKind::Imu;
  std::int64_t tag = 0;

  auto operator<=>(const BlockKey &) const = default;

  static BlockKey imu(double stamp);
  static BlockKey clone(Window w, double stamp);
  static BlockKey anchor(int id) { return {BlockKind::Anchor, id}; }
  static BlockKey feature(int id) { return {BlockKind::Feature, id}; }
};

std::int64_t stamp_to_ns(double stamp);

/// First estimate of a block. Point blocks only use `p`.
struct FejEntry {
  Quat q;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
  bool active = true;

  Mat3 rot() const { return quat_to_rot(q); }
  ImuState as_imu() const { return ImuState{q, bg, v, ba, p}; }
};

/**
 * Write-once store of linearization points.
 *
 * An entry is recorded when its block first enters the state (or, for the
 * inertial block, once per propagation). Recording the same key twice throws;
 * marginalized blocks keep their entry flagged inactive.
 */
class FejLedger {
public:
  void record(const BlockKey &key, const FejEntry &entry);
  void deactivate(const BlockKey &key);

  bool contains(const BlockKey &key) const { return entries_.count(key) != 0; }
  const FejEntry &at(const BlockKey &key) const;
  std::size_t size() const { return entries_.size(); }

private:
  std::map<BlockKey, FejEntry> entries_;
};

/**
 * Stacked filter state and joint covariance.
 *
 * Error-state ordering: [imu(15) | features(3f) | anchors(3a) | short(6m) | long(6M)],
 * each clone block being [theta | p].
 */
struct FilterState {
  double stamp = 0.0;
  ImuState imu;
  std::vector<SlamFeature> features;
  std::vector<AnchorState> anchors;
  std::vector<ClonePose> short_window;
  std::vector<ClonePose> long_window;
  Eigen::MatrixXd cov;
  Vec3 gravity = Vec3(0, 0, 9.81);
  FejLedger fej;

  std::size_t max_short = 11;
  std::size_t max_long = std::numeric_limits<std::size_t>::max();

  Eigen::Index dim() const;
  Eigen::Index feature_offset(std::size_t i) const;
  Eigen::Index anchor_offset(std::size_t i) const;
  Eigen::Index short_offset(std::size_t i) const;
  Eigen::Index long_offset(std::size_t i) const;

  /// Index into `anchors` for `id`, or -1.
  int anchor_index(int id) const;
  /// Offset of the clone block with `stamp` in window `w`, or -1.
  Eigen::Index clone_offset(Window w, double stamp) const;
  const ClonePose *find_clone(Window w, double stamp) const;

  /// Current inertial first estimate (the propagated value at `stamp`).
  const FejEntry &imu_fej() const { return fej.at(BlockKey::imu(stamp)); }
};

/// New state with the given inertial estimate and 15x15 covariance; records the inertial first estimate.
FilterState make_filter_state(const ImuState &imu, const Matrix15 &P0, double stamp, const Vec3 &gravity);

/// Stochastic cloning of the current pose; a full window first drops its oldest entry.
void clone_current_pose(FilterState &state, double stamp, Window target);

/// Anchors with their joint covariance (3a x 3a) and cross-covariance against the existing error state.
struct AnchorAugmentation {
  std::vector<AnchorState> anchors;
  Eigen::MatrixXd Paa;
  Eigen::MatrixXd Pxa;
};

/// Per-anchor form: anchors are mutually uncorrelated.
struct AnchorBlock {
  AnchorState anchor;
  Mat3 Paa = Mat3::Zero();
  Eigen::MatrixXd Pxa;
};

void augment_anchors(FilterState &state, const AnchorAugmentation &aug);
void augment_anchors(FilterState &state, std::span<const AnchorBlock> anchors);

/// Adds a persistent point feature with covariance Pff and cross-covariance Pxf.
void augment_feature(FilterState &state, const SlamFeature &feature, const Mat3 &Pff, const Eigen::MatrixXd &Pxf);

/// Removes a clone or feature block; its covariance rows and columns are deleted.
void marginalize(FilterState &state, const BlockKey &key);
void marginalize_long_window(FilterState &state);

/// Retraction of an error-state correction. Orientation: R <- exp(-dtheta) R (JPL, ^I_G R).
void apply_correction(FilterState &state, const Eigen::VectorXd &delta);

/**
 * EKF update on a column subset of the error state.
 *
 * `cols` lists the error-state indices the columns of H refer to; R is the
 * measurement noise covariance. Returns the applied correction.
 */
Eigen::VectorXd ekf_update(FilterState &state, std::span<const Eigen::Index> cols, const Eigen::MatrixXd &H,
                           const Eigen::VectorXd &r, const Eigen::MatrixXd &R);

/// Mahalanobis distance r^T (H P H^T + R)^-1 r over a column subset.
double mahalanobis(const FilterState &state, std::span<const Eigen::Index> cols, const Eigen::MatrixXd &H,
                   const Eigen::VectorXd &r, const Eigen::MatrixXd &R);

/// Appends `count` consecutive indices starting at `offset`.
void append_block(std::vector<Eigen::Index> &cols, Eigen::Index offset, Eigen::Index count);

void symmetrize(Eigen::MatrixXd &P);

/// Symmetric within 1e-9 relative and min eigenvalue > -1e-9 trace.
bool covariance_valid(const Eigen::MatrixXd &P);

/// 95% (or `prob`) quantile of the chi-square distribution.
double chi2_quantile(int dof, double prob = 0.95);

/// One-line CSV snapshot: stamp, q, p, v, bg, ba, then (id, x, y, z) per anchor.
std::string snapshot_header(std::size_t num_anchors);
std::string snapshot_record(const FilterState &state);

} // namespace viro
