#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "viro/ranging.hpp"
#include "viro/state.hpp"

namespace viro {

class IllConditioned : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InitFailed : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct InitParams {
  std::size_t n_min = 50;        // keyframes in the long window
  double keyframe_spacing = 0.3; // m
  double cond_max = 1e8;
  int max_iterations = 20;
  double step_tol = 1e-8;
  int max_halvings = 10;
};

/// One buffered pose with the ranges interpolated to its stamp.
struct BufferedFrame {
  double stamp = 0.0;
  Mat3 R_IG = Mat3::Identity(); // pose value when buffered
  Vec3 p = Vec3::Zero();
  bool keyframe = false;
  std::map<int, double> ranges; // anchor id -> distance
};

/**
 * Accumulates poses, synchronized ranges and echoes until the anchors can be initialized.
 *
 * Frames are looked up in the filter state by stamp at solve time; the stored
 * pose is used when the clone is no longer (or never was) part of the state.
 */
class InitBuffer {
public:
  void add_frame(const BufferedFrame &frame);
  void add_echoes(std::span<const EchoMeasurement> echoes);

  std::size_t keyframe_count() const;
  const std::vector<BufferedFrame> &frames() const { return frames_; }
  const std::vector<EchoMeasurement> &echoes() const { return echoes_; }
  /// Stored pose of the most recent keyframe, if any.
  const BufferedFrame *last_keyframe() const;
  std::vector<int> anchor_ids() const;
  void clear();

private:
  std::vector<BufferedFrame> frames_;
  std::vector<EchoMeasurement> echoes_;
};

/// Ranging-node position with a measured distance.
struct RangeRow {
  Vec3 p_r = Vec3::Zero();
  double d = 0.0;
};

struct BootstrapResult {
  Vec3 p = Vec3::Zero();
  double D = 0.0;           // estimate of |p_a|^2
  double consistency = 0.0; // |D - |p|^2|
  double condition = 0.0;
};

/// Linear trilateration from rows [-2x -2y -2z 1] x = (d - bias)^2 - |p_r|^2.
BootstrapResult linear_bootstrap(std::span<const RangeRow> rows, double bias, double cond_max = 1e8);

/// Per-anchor range rows plus inter-anchor echoes.
struct InitProblem {
  std::map<int, std::vector<RangeRow>> ranges;
  std::vector<EchoMeasurement> echoes;
};

struct RefineResult {
  std::map<int, Vec3> anchors;
  double cost = 0.0;
  int iterations = 0;
  Eigen::MatrixXd information; // J^T W J at the solution, anchors ordered by id
};

/// Gauss-Newton on the weighted sum of range and echo residuals.
RefineResult refine_joint(const InitProblem &problem, const std::map<int, Vec3> &guess, const UwbParams &params,
                          const InitParams &init = {});

/// Pose used for one buffered frame: a state clone if present, else the stored value.
struct FramePose {
  Mat3 R_IG;
  Vec3 p;
  Eigen::Index offset = -1; // clone block offset in the error state, -1 when absent
  Window window = Window::Long;
  double stamp = 0.0;
  std::map<int, double> ranges;
};

/// Buffered frames still backed by a long- or short-window clone, plus keyframes outside the state.
std::vector<FramePose> frame_poses(const FilterState &state, const InitBuffer &buffer);

/**
 * Anchor covariance from range linearization about the refined anchors.
 *
 * Each anchor's rows are triangularized by orthogonal rotations; the cross-covariance
 * between anchors follows from the shared pose errors. Jacobians with respect to the
 * clones are taken at their first estimates when `fej` is set.
 */
AnchorAugmentation init_covariance(const FilterState &state, std::span<const FramePose> poses,
                                   const std::map<int, Vec3> &anchors, const UwbParams &params, bool fej);

/// Where the anchor covariance comes from.
enum class InitCovariance { Linearized, Solver };

struct InitOptions {
  bool fej = true;
  InitCovariance covariance = InitCovariance::Linearized;
};

struct AnchorReport {
  int id = 0;
  Vec3 p = Vec3::Zero();
  Vec3 paa_diag = Vec3::Zero();
  double bootstrap_consistency = 0.0;
};

struct InitReport {
  double stamp = 0.0;
  std::vector<AnchorReport> anchors;
  int iterations = 0;
  double cost = 0.0;
  std::size_t keyframes = 0;
};

enum class InitStatus { NotReady, Initialized };

struct InitOutcome {
  InitStatus status = InitStatus::NotReady;
  InitReport report;
};

/**
 * Initializes every buffered anchor once enough keyframes exist.
 *
 * On success the anchors are augmented into the state and the long window is
 * marginalized. Throws IllConditioned or InitFailed; the state is untouched then.
 */
InitOutcome try_initialize(FilterState &state, const InitBuffer &buffer, const UwbParams &params,
                           const InitParams &init = {}, const InitOptions &opts = {});

std::string init_report_header();
std::string init_report_rows(const InitReport &report);

} // namespace viro
