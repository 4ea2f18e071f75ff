#include "viro/ranging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace viro {

namespace {

constexpr double kCoincident = 1e-9;

template <typename M>
std::optional<double> interpolate(const M &alpha, const M &beta, double t_k, const UwbParams &params) {
  if (!(alpha.stamp < beta.stamp)) {
    throw std::invalid_argument("interpolate_range: t_alpha must precede t_beta");
  }
  if (t_k < alpha.stamp || t_k > beta.stamp) {
    throw std::invalid_argument("interpolate_range: t_k outside [t_alpha, t_beta]");
  }
  if (t_k - alpha.stamp > params.sync_threshold || beta.stamp - t_k > params.sync_threshold) {
    return std::nullopt;
  }
  const double s = (t_k - alpha.stamp) / (beta.stamp - alpha.stamp);
  return alpha.distance + s * (beta.distance - alpha.distance);
}

template <typename M> std::optional<double> at_time(const std::vector<M> &stream, double t_k, const UwbParams &params) {
  auto it = std::lower_bound(stream.begin(), stream.end(), t_k,
                             [](const M &m, double t) { return m.stamp < t; });
  if (it == stream.end()) {
    return std::nullopt;
  }
  if (it->stamp == t_k) {
    return it->distance;
  }
  if (it == stream.begin()) {
    return std::nullopt;
  }
  return interpolate(*(it - 1), *it, t_k, params);
}

} // namespace

void UwbParams::validate() const {
  if (!(sigma_range > 0 && sigma_echo > 0)) {
    throw std::invalid_argument("UwbParams: noise must be positive");
  }
  if (!(sync_threshold > 0)) {
    throw std::invalid_argument("UwbParams: sync threshold must be positive");
  }
}

Vec3 ranging_node(const Mat3 &R_IG, const Vec3 &p_I, const UwbParams &params) {
  return p_I + R_IG.transpose() * params.lever_arm;
}

double predict_range(const Mat3 &R_IG, const Vec3 &p_I, const Vec3 &p_anchor, const UwbParams &params) {
  return (ranging_node(R_IG, p_I, params) - p_anchor).norm() + params.bias;
}

double predict_echo(const AnchorState &a_i, const AnchorState &a_j, const UwbParams &params) {
  if (a_i.id == a_j.id) {
    throw std::invalid_argument("predict_echo: anchor ids must differ");
  }
  return (a_i.p - a_j.p).norm() + params.bias;
}

std::optional<RangeJacobian> squared_range_jacobians(const Mat3 &R_IG, const Vec3 &p_I, const Vec3 &p_anchor,
                                                     const UwbParams &params) {
  const Vec3 p_r = ranging_node(R_IG, p_I, params);
  const Vec3 diff = p_anchor - p_r;
  if (diff.norm() < kCoincident) {
    return std::nullopt;
  }
  RangeJacobian J;
  J.d_pos = -2.0 * diff.transpose();
  J.d_theta = 2.0 * diff.transpose() * R_IG.transpose() * skew(params.lever_arm);
  J.d_anchor = 2.0 * diff.transpose();
  return J;
}

std::optional<EchoJacobian> echo_jacobians(const Vec3 &p_i, const Vec3 &p_j) {
  const Vec3 diff = p_i - p_j;
  if (diff.norm() < kCoincident) {
    return std::nullopt;
  }
  return EchoJacobian{2.0 * diff.transpose(), -2.0 * diff.transpose()};
}

std::optional<double> interpolate_range(const RangeMeasurement &alpha, const RangeMeasurement &beta, double t_k,
                                        const UwbParams &params) {
  if (alpha.anchor_id != beta.anchor_id) {
    throw std::invalid_argument("interpolate_range: measurements come from different anchors");
  }
  return interpolate(alpha, beta, t_k, params);
}

std::optional<double> interpolate_echo(const EchoMeasurement &alpha, const EchoMeasurement &beta, double t_k,
                                       const UwbParams &params) {
  if (std::minmax(alpha.anchor_i, alpha.anchor_j) != std::minmax(beta.anchor_i, beta.anchor_j)) {
    throw std::invalid_argument("interpolate_echo: measurements come from different anchor pairs");
  }
  return interpolate(alpha, beta, t_k, params);
}

UwbStreams::UwbStreams(std::span<const RangeMeasurement> ranges, std::span<const EchoMeasurement> echoes) {
  std::map<int, std::vector<RangeMeasurement>> r;
  for (const auto &m : ranges) {
    r[m.anchor_id].push_back(m);
  }
  std::map<std::pair<int, int>, std::vector<EchoMeasurement>> e;
  for (const auto &m : echoes) {
    e[std::minmax(m.anchor_i, m.anchor_j)].push_back(m);
  }
  auto by_stamp = [](const auto &a, const auto &b) { return a.stamp < b.stamp; };
  for (auto &[id, v] : r) {
    std::stable_sort(v.begin(), v.end(), by_stamp);
    ranges_.emplace_back(id, std::move(v));
  }
  for (auto &[key, v] : e) {
    std::stable_sort(v.begin(), v.end(), by_stamp);
    echoes_.emplace_back(key, std::move(v));
  }
}

std::vector<RangeMeasurement> UwbStreams::ranges_at(double t_k, const UwbParams &params) const {
  std::vector<RangeMeasurement> out;
  for (const auto &[id, stream] : ranges_) {
    if (auto d = at_time(stream, t_k, params)) {
      out.push_back(RangeMeasurement{t_k, id, *d});
    }
  }
  return out;
}

std::vector<EchoMeasurement> UwbStreams::echoes_at(double t_k, const UwbParams &params) const {
  std::vector<EchoMeasurement> out;
  for (const auto &[key, stream] : echoes_) {
    if (auto d = at_time(stream, t_k, params)) {
      out.push_back(EchoMeasurement{t_k, key.first, key.second, *d});
    }
  }
  return out;
}

std::vector<EchoMeasurement> UwbStreams::echoes_between(double t0, double t1) const {
  std::vector<EchoMeasurement> out;
  for (const auto &[key, stream] : echoes_) {
    for (const auto &m : stream) {
      if (m.stamp >= t0 && m.stamp <= t1) {
        out.push_back(m);
      }
    }
  }
  return out;
}

std::vector<int> UwbStreams::anchor_ids() const {
  std::vector<int> ids;
  for (const auto &[id, stream] : ranges_) {
    ids.push_back(id);
  }
  return ids;
}

std::vector<Eigen::Index> ranging_columns(const FilterState &state) {
  std::vector<Eigen::Index> cols;
  append_block(cols, kTheta, 3);
  append_block(cols, kPos, 3);
  append_block(cols, state.anchor_offset(0), 3 * static_cast<Eigen::Index>(state.anchors.size()));
  return cols;
}

std::optional<RangingRow> range_row(const FilterState &state, const RangeMeasurement &m, const UwbParams &params,
                                    bool fej) {
  const int idx = state.anchor_index(m.anchor_id);
  if (idx < 0) {
    return std::nullopt;
  }
  const auto &anchor = state.anchors[static_cast<std::size_t>(idx)];
  Mat3 R_lin = state.imu.rot();
  Vec3 p_lin = state.imu.p;
  Vec3 a_lin = anchor.p;
  if (fej) {
    const FejEntry &f = state.imu_fej();
    R_lin = f.rot();
    p_lin = f.p;
    a_lin = state.fej.at(BlockKey::anchor(anchor.id)).p;
  }
  const auto J = squared_range_jacobians(R_lin, p_lin, a_lin, params);
  const double d_hat = (ranging_node(state.imu.rot(), state.imu.p, params) - anchor.p).norm();
  if (!J || d_hat < kCoincident) {
    return std::nullopt;
  }
  RangingRow row;
  row.h = Eigen::RowVectorXd::Zero(6 + 3 * static_cast<Eigen::Index>(state.anchors.size()));
  row.h.segment<3>(0) = J->d_theta;
  row.h.segment<3>(3) = J->d_pos;
  row.h.segment<3>(6 + 3 * idx) = J->d_anchor;
  const double z = (m.distance - params.bias) * (m.distance - params.bias);
  row.residual = z - d_hat * d_hat;
  const double sd = 2.0 * d_hat * params.sigma_range;
  row.variance = sd * sd;
  return row;
}

std::optional<RangingRow> echo_row(const FilterState &state, const EchoMeasurement &m, const UwbParams &params,
                                   bool fej) {
  if (m.anchor_i == m.anchor_j) {
    throw std::invalid_argument("echo_row: anchor ids must differ");
  }
  const int i = state.anchor_index(m.anchor_i);
  const int j = state.anchor_index(m.anchor_j);
  if (i < 0 || j < 0) {
    return std::nullopt;
  }
  const Vec3 &pi = state.anchors[static_cast<std::size_t>(i)].p;
  const Vec3 &pj = state.anchors[static_cast<std::size_t>(j)].p;
  Vec3 pi_lin = pi;
  Vec3 pj_lin = pj;
  if (fej) {
    pi_lin = state.fej.at(BlockKey::anchor(m.anchor_i)).p;
    pj_lin = state.fej.at(BlockKey::anchor(m.anchor_j)).p;
  }
  const auto J = echo_jacobians(pi_lin, pj_lin);
  const double d_hat = (pi - pj).norm();
  if (!J || d_hat < kCoincident) {
    return std::nullopt;
  }
  RangingRow row;
  row.h = Eigen::RowVectorXd::Zero(6 + 3 * static_cast<Eigen::Index>(state.anchors.size()));
  row.h.segment<3>(6 + 3 * i) = J->d_anchor_i;
  row.h.segment<3>(6 + 3 * j) = J->d_anchor_j;
  const double z = (m.distance - params.bias) * (m.distance - params.bias);
  row.residual = z - d_hat * d_hat;
  const double sd = 2.0 * d_hat * params.sigma_echo;
  row.variance = sd * sd;
  return row;
}

RangingUpdateStats ranging_update(FilterState &state, std::span<const RangeMeasurement> ranges,
                                  std::span<const EchoMeasurement> echoes, const UwbParams &params,
                                  const RangingUpdateOptions &opts) {
  if (state.anchors.empty()) {
    throw std::logic_error("ranging_update: no anchors in the state");
  }
  const std::vector<Eigen::Index> cols = ranging_columns(state);
  const double gate = chi2_quantile(1, opts.chi2_prob);
  RangingUpdateStats stats;
  std::vector<RangingRow> rows;

  auto consider = [&](std::optional<RangingRow> row) {
    if (!row) {
      ++stats.skipped;
      return;
    }
    const Eigen::MatrixXd H = row->h;
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(1, row->residual);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, row->variance);
    if (mahalanobis(state, cols, H, r, R) > gate) {
      ++stats.gated;
      return;
    }
    rows.push_back(std::move(*row));
  };
  for (const auto &m : ranges) {
    consider(range_row(state, m, params, opts.fej));
  }
  for (const auto &m : echoes) {
    consider(echo_row(state, m, params, opts.fej));
  }
  if (rows.empty()) {
    return stats;
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd H(m, static_cast<Eigen::Index>(cols.size()));
  Eigen::VectorXd r(m);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    H.row(i) = rows[static_cast<std::size_t>(i)].h;
    r(i) = rows[static_cast<std::size_t>(i)].residual;
    R(i, i) = rows[static_cast<std::size_t>(i)].variance;
  }
  ekf_update(state, cols, H, r, R);
  stats.used = static_cast<int>(m);
  return stats;
}

} // namespace viro
