#pragma once

#include <optional>
#include <span>
#include <vector>

#include "viro/state.hpp"

namespace viro {

struct RangeMeasurement {
  double stamp = 0.0;
  int anchor_id = 0;
  double distance = 0.0; // m
};

struct EchoMeasurement {
  double stamp = 0.0;
  int anchor_i = 0;
  int anchor_j = 0;
  double distance = 0.0; // m
};

struct UwbParams {
  Vec3 lever_arm = Vec3::Zero(); // ^I p_r
  double bias = -0.75;           // shared by every node pair
  double sigma_range = 0.15;
  double sigma_echo = 0.15;
  double sync_threshold = 0.05; // s

  void validate() const;
};

/// Ranging node position ^G p_r = ^G p_I + ^I_G R^T ^I p_r.
Vec3 ranging_node(const Mat3 &R_IG, const Vec3 &p_I, const UwbParams &params);

/// Robot-anchor distance including the bias.
double predict_range(const Mat3 &R_IG, const Vec3 &p_I, const Vec3 &p_anchor, const UwbParams &params);

/// Anchor-anchor distance including the bias; throws when the ids coincide.
double predict_echo(const AnchorState &a_i, const AnchorState &a_j, const UwbParams &params);

/// Row Jacobians of the squared unbiased range over (orientation error, IMU position, anchor position).
struct RangeJacobian {
  Eigen::RowVector3d d_theta;
  Eigen::RowVector3d d_pos;
  Eigen::RowVector3d d_anchor;
};

/// Jacobians at the given linearization point; nullopt when the anchor coincides with the ranging node.
std::optional<RangeJacobian> squared_range_jacobians(const Mat3 &R_IG, const Vec3 &p_I, const Vec3 &p_anchor,
                                                     const UwbParams &params);

struct EchoJacobian {
  Eigen::RowVector3d d_anchor_i;
  Eigen::RowVector3d d_anchor_j;
};

/// Jacobians of the squared unbiased echo; nullopt for coincident anchors.
std::optional<EchoJacobian> echo_jacobians(const Vec3 &p_i, const Vec3 &p_j);

/**
 * Linear interpolation of two ranges from the same anchor to t_k.
 *
 * Returns nullopt (discard) when either time offset exceeds the sync threshold.
 * Throws on mixed anchor ids, t_alpha >= t_beta, or t_k outside [t_alpha, t_beta].
 */
std::optional<double> interpolate_range(const RangeMeasurement &alpha, const RangeMeasurement &beta, double t_k,
                                        const UwbParams &params);

/// Same rule for echoes between one anchor pair.
std::optional<double> interpolate_echo(const EchoMeasurement &alpha, const EchoMeasurement &beta, double t_k,
                                       const UwbParams &params);

/// Time-ordered measurement streams, split per anchor and per anchor pair.
class UwbStreams {
public:
  UwbStreams() = default;
  UwbStreams(std::span<const RangeMeasurement> ranges, std::span<const EchoMeasurement> echoes);

  /// Ranges synchronized to t_k, one per anchor whose bracketing pair survives the sync rule.
  std::vector<RangeMeasurement> ranges_at(double t_k, const UwbParams &params) const;
  std::vector<EchoMeasurement> echoes_at(double t_k, const UwbParams &params) const;

  /// Raw echoes with stamps in [t0, t1].
  std::vector<EchoMeasurement> echoes_between(double t0, double t1) const;

  std::vector<int> anchor_ids() const;

private:
  std::vector<std::pair<int, std::vector<RangeMeasurement>>> ranges_;
  std::vector<std::pair<std::pair<int, int>, std::vector<EchoMeasurement>>> echoes_;
};

struct RangingUpdateOptions {
  bool fej = true;
  double chi2_prob = 0.95;
};

struct RangingUpdateStats {
  int used = 0;
  int gated = 0;
  int skipped = 0;
};

/// One scalar row of the stacked ranging system.
struct RangingRow {
  Eigen::RowVectorXd h; // over the columns returned by ranging_columns()
  double residual = 0.0;
  double variance = 0.0;
};

/// Columns touched by ranging rows: orientation, IMU position, then every anchor block.
std::vector<Eigen::Index> ranging_columns(const FilterState &state);

/// Squared-range residual and Jacobian row; nullopt for unknown or coincident anchors.
std::optional<RangingRow> range_row(const FilterState &state, const RangeMeasurement &m, const UwbParams &params,
                                    bool fej);
std::optional<RangingRow> echo_row(const FilterState &state, const EchoMeasurement &m, const UwbParams &params,
                                   bool fej);

/// EKF update with squared unbiased ranges and echoes synchronized to the state stamp.
RangingUpdateStats ranging_update(FilterState &state, std::span<const RangeMeasurement> ranges,
                                  std::span<const EchoMeasurement> echoes, const UwbParams &params,
                                  const RangingUpdateOptions &opts = {});

} // namespace viro
