#include "viro/state.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

namespace viro {

namespace {

Eigen::MatrixXd insert_block(const Eigen::MatrixXd &P, Eigen::Index at, const Eigen::MatrixXd &Pxb,
                             const Eigen::MatrixXd &Pbb) {
  const Eigen::Index n = P.rows();
  const Eigen::Index k = Pbb.rows();
  const Eigen::Index tail = n - at;
  Eigen::MatrixXd out(n + k, n + k);
  out.topLeftCorner(at, at) = P.topLeftCorner(at, at);
  out.block(0, at + k, at, tail) = P.block(0, at, at, tail);
  out.block(at + k, 0, tail, at) = P.block(at, 0, tail, at);
  out.bottomRightCorner(tail, tail) = P.bottomRightCorner(tail, tail);

  out.block(0, at, at, k) = Pxb.topRows(at);
  out.block(at + k, at, tail, k) = Pxb.bottomRows(tail);
  out.block(at, 0, k, at) = Pxb.topRows(at).transpose();
  out.block(at, at + k, k, tail) = Pxb.bottomRows(tail).transpose();
  out.block(at, at, k, k) = Pbb;
  return out;
}

Eigen::MatrixXd remove_block(const Eigen::MatrixXd &P, Eigen::Index at, Eigen::Index k) {
  const Eigen::Index n = P.rows();
  const Eigen::Index tail = n - at - k;
  Eigen::MatrixXd out(n - k, n - k);
  out.topLeftCorner(at, at) = P.topLeftCorner(at, at);
  out.block(0, at, at, tail) = P.block(0, at + k, at, tail);
  out.block(at, 0, tail, at) = P.block(at + k, 0, tail, at);
  out.bottomRightCorner(tail, tail) = P.bottomRightCorner(tail, tail);
  return out;
}

void check_psd(const Eigen::MatrixXd &P, const char *what) {
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument(std::string(what) + ": covariance is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1e-12, std::abs(P.trace()))) {
    throw std::invalid_argument(std::string(what) + ": covariance is not positive semidefinite");
  }
}

Quat retract(const Quat &q, const Vec3 &dtheta) {
  if (dtheta.isZero(0)) {
    return q;
  }
  return rot_to_quat(Mat3(so3_exp(Vec3(-dtheta)) * quat_to_rot(q)));
}

} // namespace

std::int64_t stamp_to_ns(double stamp) { return std::llround(stamp * 1e9); }

BlockKey BlockKey::imu(double stamp) { return {BlockKind::Imu, stamp_to_ns(stamp)}; }

BlockKey BlockKey::clone(Window w, double stamp) {
  return {w == Window::Short ? BlockKind::ShortClone : BlockKind::LongClone, stamp_to_ns(stamp)};
}

void FejLedger::record(const BlockKey &key, const FejEntry &entry) {
  const auto [it, inserted] = entries_.emplace(key, entry);
  if (!inserted) {
    throw std::logic_error("FejLedger: first estimate already recorded for this block");
  }
}

void FejLedger::deactivate(const BlockKey &key) {
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    it->second.active = false;
  }
}

const FejEntry &FejLedger::at(const BlockKey &key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw std::out_of_range("FejLedger: no first estimate for block");
  }
  return it->second;
}

Eigen::Index FilterState::dim() const {
  return kImuDim + 3 * static_cast<Eigen::Index>(features.size() + anchors.size()) +
         kCloneDim * static_cast<Eigen::Index>(short_window.size() + long_window.size());
}

Eigen::Index FilterState::feature_offset(std::size_t i) const { return kImuDim + 3 * static_cast<Eigen::Index>(i); }

Eigen::Index FilterState::anchor_offset(std::size_t i) const {
  return feature_offset(features.size()) + 3 * static_cast<Eigen::Index>(i);
}

Eigen::Index FilterState::short_offset(std::size_t i) const {
  return anchor_offset(anchors.size()) + kCloneDim * static_cast<Eigen::Index>(i);
}

Eigen::Index FilterState::long_offset(std::size_t i) const {
  return short_offset(short_window.size()) + kCloneDim * static_cast<Eigen::Index>(i);
}

int FilterState::anchor_index(int id) const {
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (anchors[i].id == id) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

Eigen::Index FilterState::clone_offset(Window w, double stamp) const {
  const auto &win = w == Window::Short ? short_window : long_window;
  const std::int64_t ns = stamp_to_ns(stamp);
  for (std::size_t i = 0; i < win.size(); ++i) {
    if (stamp_to_ns(win[i].stamp) == ns) {
      return w == Window::Short ? short_offset(i) : long_offset(i);
    }
  }
  return -1;
}

const ClonePose *FilterState::find_clone(Window w, double stamp) const {
  const auto &win = w == Window::Short ? short_window : long_window;
  const std::int64_t ns = stamp_to_ns(stamp);
  for (const auto &c : win) {
    if (stamp_to_ns(c.stamp) == ns) {
      return &c;
    }
  }
  return nullptr;
}

FilterState make_filter_state(const ImuState &imu, const Matrix15 &P0, double stamp, const Vec3 &gravity) {
  FilterState s;
  s.stamp = stamp;
  s.imu = imu;
  s.cov = P0;
  s.gravity = gravity;
  s.fej.record(BlockKey::imu(stamp), FejEntry{imu.q, imu.p, imu.v, imu.bg, imu.ba, true});
  return s;
}

void clone_current_pose(FilterState &state, double stamp, Window target) {
  auto &win = target == Window::Short ? state.short_window : state.long_window;
  if (!win.empty() && stamp <= win.back().stamp) {
    throw std::invalid_argument("clone_current_pose: clone stamps must be strictly increasing");
  }
  const std::size_t cap = target == Window::Short ? state.max_short : state.max_long;
  if (cap == 0) {
    throw std::invalid_argument("clone_current_pose: window has zero capacity");
  }
  if (win.size() >= cap) {
    marginalize(state, BlockKey::clone(target, win.front().stamp));
  }

  const Eigen::Index n = state.dim();
  const Eigen::Index at = target == Window::Short ? state.short_offset(state.short_window.size())
                                                  : state.long_offset(state.long_window.size());
  Eigen::MatrixXd Pxb(n, kCloneDim);
  Pxb.leftCols<3>() = state.cov.middleCols<3>(kTheta);
  Pxb.rightCols<3>() = state.cov.middleCols<3>(kPos);
  Eigen::Matrix<double, 6, 6> Pbb;
  Pbb.topLeftCorner<3, 3>() = state.cov.block<3, 3>(kTheta, kTheta);
  Pbb.topRightCorner<3, 3>() = state.cov.block<3, 3>(kTheta, kPos);
  Pbb.bottomLeftCorner<3, 3>() = state.cov.block<3, 3>(kPos, kTheta);
  Pbb.bottomRightCorner<3, 3>() = state.cov.block<3, 3>(kPos, kPos);
  state.cov = insert_block(state.cov, at, Pxb, Pbb);
  win.push_back(ClonePose{state.imu.q, state.imu.p, stamp});

  // The clone shares the inertial first estimate at its stamp when one exists.
  const BlockKey imu_key = BlockKey::imu(stamp);
  FejEntry entry{state.imu.q, state.imu.p};
  if (state.fej.contains(imu_key)) {
    const FejEntry &f = state.fej.at(imu_key);
    entry = FejEntry{f.q, f.p};
  }
  state.fej.record(BlockKey::clone(target, stamp), entry);
}

void augment_anchors(FilterState &state, const AnchorAugmentation &aug) {
  if (!state.anchors.empty()) {
    throw std::invalid_argument("augment_anchors: anchors already present");
  }
  const auto a = static_cast<Eigen::Index>(aug.anchors.size());
  if (aug.Paa.rows() != 3 * a || aug.Paa.cols() != 3 * a || aug.Pxa.rows() != state.dim() ||
      aug.Pxa.cols() != 3 * a) {
    throw std::invalid_argument("augment_anchors: dimension mismatch");
  }
  for (std::size_t i = 0; i < aug.anchors.size(); ++i) {
    for (std::size_t j = i + 1; j < aug.anchors.size(); ++j) {
      if (aug.anchors[i].id == aug.anchors[j].id) {
        throw std::invalid_argument("augment_anchors: duplicate anchor id");
      }
    }
  }
  check_psd(aug.Paa, "augment_anchors");
  const Eigen::Index at = state.anchor_offset(0);
  Eigen::MatrixXd Paa = 0.5 * (aug.Paa + aug.Paa.transpose());
  state.cov = insert_block(state.cov, at, aug.Pxa, Paa);
  state.anchors = aug.anchors;
  for (const auto &anc : aug.anchors) {
    state.fej.record(BlockKey::anchor(anc.id), FejEntry{Quat(), anc.p});
  }
}

void augment_anchors(FilterState &state, std::span<const AnchorBlock> anchors) {
  const auto a = static_cast<Eigen::Index>(anchors.size());
  AnchorAugmentation aug;
  aug.Paa = Eigen::MatrixXd::Zero(3 * a, 3 * a);
  aug.Pxa = Eigen::MatrixXd::Zero(state.dim(), 3 * a);
  for (Eigen::Index i = 0; i < a; ++i) {
    const auto &blk = anchors[static_cast<std::size_t>(i)];
    if (blk.Pxa.rows() != state.dim() || blk.Pxa.cols() != 3) {
      throw std::invalid_argument("augment_anchors: dimension mismatch");
    }
    aug.anchors.push_back(blk.anchor);
    aug.Paa.block<3, 3>(3 * i, 3 * i) = blk.Paa;
    aug.Pxa.middleCols<3>(3 * i) = blk.Pxa;
  }
  augment_anchors(state, aug);
}

void augment_feature(FilterState &state, const SlamFeature &feature, const Mat3 &Pff, const Eigen::MatrixXd &Pxf) {
  if (Pxf.rows() != state.dim() || Pxf.cols() != 3) {
    throw std::invalid_argument("augment_feature: dimension mismatch");
  }
  for (const auto &f : state.features) {
    if (f.id == feature.id) {
      throw std::invalid_argument("augment_feature: duplicate feature id");
    }
  }
  check_psd(Pff, "augment_feature");
  const Eigen::Index at = state.feature_offset(state.features.size());
  state.cov = insert_block(state.cov, at, Pxf, Eigen::MatrixXd(Pff));
  state.features.push_back(feature);
  state.fej.record(BlockKey::feature(feature.id), FejEntry{Quat(), feature.p});
}

void marginalize(FilterState &state, const BlockKey &key) {
  switch (key.kind) {
  case BlockKind::Imu:
    throw std::invalid_argument("marginalize: the current inertial state cannot be marginalized");
  case BlockKind::Anchor:
    throw std::invalid_argument("marginalize: anchors are never marginalized");
  case BlockKind::Feature: {
    auto it = std::find_if(state.features.begin(), state.features.end(),
                           [&](const SlamFeature &f) { return f.id == key.tag; });
    if (it == state.features.end()) {
      throw std::invalid_argument("marginalize: unknown feature");
    }
    const auto idx = static_cast<std::size_t>(it - state.features.begin());
    state.cov = remove_block(state.cov, state.feature_offset(idx), 3);
    state.features.erase(it);
    break;
  }
  case BlockKind::ShortClone:
  case BlockKind::LongClone: {
    const bool is_short = key.kind == BlockKind::ShortClone;
    auto &win = is_short ? state.short_window : state.long_window;
    auto it = std::find_if(win.begin(), win.end(), [&](const ClonePose &c) { return stamp_to_ns(c.stamp) == key.tag; });
    if (it == win.end()) {
      throw std::invalid_argument("marginalize: unknown clone");
    }
    const auto idx = static_cast<std::size_t>(it - win.begin());
    const Eigen::Index at = is_short ? state.short_offset(idx) : state.long_offset(idx);
    state.cov = remove_block(state.cov, at, kCloneDim);
    win.erase(it);
    break;
  }
  }
  state.fej.deactivate(key);
}

void marginalize_long_window(FilterState &state) {
  if (state.long_window.empty()) {
    return;
  }
  const Eigen::Index at = state.long_offset(0);
  const auto k = static_cast<Eigen::Index>(kCloneDim * state.long_window.size());
  state.cov = remove_block(state.cov, at, k);
  for (const auto &c : state.long_window) {
    state.fej.deactivate(BlockKey::clone(Window::Long, c.stamp));
  }
  state.long_window.clear();
}

void apply_correction(FilterState &state, const Eigen::VectorXd &delta) {
  if (delta.size() != state.dim()) {
    throw std::invalid_argument("apply_correction: correction has wrong dimension");
  }
  if (!delta.allFinite()) {
    throw std::invalid_argument("apply_correction: non-finite correction");
  }
  auto &imu = state.imu;
  imu.q = retract(imu.q, delta.segment<3>(kTheta));
  imu.bg += delta.segment<3>(kBg);
  imu.v += delta.segment<3>(kVel);
  imu.ba += delta.segment<3>(kBa);
  imu.p += delta.segment<3>(kPos);
  for (std::size_t i = 0; i < state.features.size(); ++i) {
    state.features[i].p += delta.segment<3>(state.feature_offset(i));
  }
  for (std::size_t i = 0; i < state.anchors.size(); ++i) {
    state.anchors[i].p += delta.segment<3>(state.anchor_offset(i));
  }
  for (std::size_t i = 0; i < state.short_window.size(); ++i) {
    const Eigen::Index o = state.short_offset(i);
    state.short_window[i].q = retract(state.short_window[i].q, delta.segment<3>(o));
    state.short_window[i].p += delta.segment<3>(o + 3);
  }
  for (std::size_t i = 0; i < state.long_window.size(); ++i) {
    const Eigen::Index o = state.long_offset(i);
    state.long_window[i].q = retract(state.long_window[i].q, delta.segment<3>(o));
    state.long_window[i].p += delta.segment<3>(o + 3);
  }
}

Eigen::VectorXd ekf_update(FilterState &state, std::span<const Eigen::Index> cols, const Eigen::MatrixXd &H,
                           const Eigen::VectorXd &r, const Eigen::MatrixXd &R) {
  const auto k = static_cast<Eigen::Index>(cols.size());
  if (H.cols() != k || H.rows() != r.size() || R.rows() != r.size() || R.cols() != r.size()) {
    throw std::invalid_argument("ekf_update: dimension mismatch");
  }
  const std::vector<Eigen::Index> idx(cols.begin(), cols.end());
  const Eigen::MatrixXd P_cols = state.cov(Eigen::all, idx);
  const Eigen::MatrixXd PHt = P_cols * H.transpose();
  Eigen::MatrixXd S = H * PHt(idx, Eigen::all) + R;
  S = 0.5 * (S + S.transpose());
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const Eigen::MatrixXd K = ldlt.solve(PHt.transpose()).transpose();
  const Eigen::VectorXd delta = K * r;
  state.cov.noalias() -= K * PHt.transpose();
  symmetrize(state.cov);
  apply_correction(state, delta);
  return delta;
}

double mahalanobis(const FilterState &state, std::span<const Eigen::Index> cols, const Eigen::MatrixXd &H,
                   const Eigen::VectorXd &r, const Eigen::MatrixXd &R) {
  const std::vector<Eigen::Index> idx(cols.begin(), cols.end());
  const Eigen::MatrixXd Pss = state.cov(idx, idx);
  const Eigen::MatrixXd S = H * Pss * H.transpose() + R;
  return r.dot(S.ldlt().solve(r));
}

void append_block(std::vector<Eigen::Index> &cols, Eigen::Index offset, Eigen::Index count) {
  for (Eigen::Index i = 0; i < count; ++i) {
    cols.push_back(offset + i);
  }
}

void symmetrize(Eigen::MatrixXd &P) {
  P = 0.5 * (P + P.transpose()).eval();
}

bool covariance_valid(const Eigen::MatrixXd &P) {
  const double scale = std::max(1e-300, P.cwiseAbs().maxCoeff());
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    return false;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (P + P.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > -1e-9 * std::abs(P.trace());
}

double chi2_quantile(int dof, double prob) {
  if (dof <= 0) {
    throw std::invalid_argument("chi2_quantile: dof must be positive");
  }
  static std::mutex mu;
  static std::map<std::pair<int, double>, double> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(dof, prob);
  auto it = cache.find(key);
  if (it != cache.end()) {
    return it->second;
  }
  const boost::math::chi_squared_distribution<double> dist(dof);
  const double q = boost::math::quantile(dist, prob);
  cache.emplace(key, q);
  return q;
}

std::string snapshot_header(std::size_t num_anchors) {
  std::ostringstream os;
  os << "stamp,qx,qy,qz,qw,px,py,pz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz";
  for (std::size_t i = 0; i < num_anchors; ++i) {
    os << ",a" << i << "_id,a" << i << "_x,a" << i << "_y,a" << i << "_z";
  }
  return os.str();
}

std::string snapshot_record(const FilterState &state) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto &m = state.imu;
  os << state.stamp << ',' << m.q.x() << ',' << m.q.y() << ',' << m.q.z() << ',' << m.q.w();
  for (const Vec3 *v : {&m.p, &m.v, &m.bg, &m.ba}) {
    os << ',' << (*v)(0) << ',' << (*v)(1) << ',' << (*v)(2);
  }
  for (const auto &a : state.anchors) {
    os << ',' << a.id << ',' << a.p(0) << ',' << a.p(1) << ',' << a.p(2);
  }
  return os.str();
}

} // namespace viro
