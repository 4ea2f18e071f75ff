#include "viro/vision.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace viro {

namespace {

constexpr int kMaxGnIterations = 20;

Eigen::Matrix<double, 2, 3> projection_derivative(const Vec3 &pc) {
  Eigen::Matrix<double, 2, 3> J;
  const double iz = 1.0 / pc(2);
  J << iz, 0, -pc(0) * iz * iz, 0, iz, -pc(1) * iz * iz;
  return J;
}

Vec3 camera_center(const PoseRef &pose, const CameraExtrinsics &ext) {
  return pose.p - pose.R_IG.transpose() * ext.R_CI.transpose() * ext.p_CI;
}

PoseRef pose_of(const ClonePose &c) { return PoseRef{c.rot(), c.p}; }

} // namespace

Vec3 camera_point(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext) {
  return ext.R_CI * pose.R_IG * (p_f - pose.p) + ext.p_CI;
}

Vec2 project(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext) {
  const Vec3 pc = camera_point(p_f, pose, ext);
  if (!(pc(2) > kMinDepth)) {
    throw CheiralityError("project: feature depth below the cheirality floor");
  }
  return pc.head<2>() / pc(2);
}

Vec2 project(const Vec3 &p_f, const ClonePose &clone, const CameraExtrinsics &ext) {
  return project(p_f, pose_of(clone), ext);
}

ProjectionJacobians projection_jacobians(const Vec3 &p_f, const PoseRef &pose, const CameraExtrinsics &ext) {
  const Vec3 pc = camera_point(p_f, pose, ext);
  const Eigen::Matrix<double, 2, 3> Jp = projection_derivative(pc);
  const Mat3 RCG = ext.R_CI * pose.R_IG;
  ProjectionJacobians J;
  J.d_theta = Jp * ext.R_CI * skew(Vec3(pose.R_IG * (p_f - pose.p)));
  J.d_pos = -Jp * RCG;
  J.d_feat = Jp * RCG;
  return J;
}

std::optional<Triangulation> triangulate(std::span<const Observation> obs, std::span<const PoseRef> poses,
                                         const CameraExtrinsics &ext) {
  if (obs.size() < 2 || obs.size() != poses.size()) {
    return std::nullopt;
  }
  std::vector<Vec3> centers;
  centers.reserve(poses.size());
  for (const auto &pose : poses) {
    centers.push_back(camera_center(pose, ext));
  }
  double baseline = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      baseline = std::max(baseline, (centers[i] - centers[j]).norm());
    }
  }
  if (baseline < kMinBaseline) {
    return std::nullopt;
  }

  // Linear initialization: point closest to all bearing rays.
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 dir = (poses[i].R_IG.transpose() * ext.R_CI.transpose() * Vec3(obs[i].uv(0), obs[i].uv(1), 1.0)).normalized();
    const Mat3 M = Mat3::Identity() - dir * dir.transpose();
    A += M;
    b += M * centers[i];
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> es(A);
  if (es.eigenvalues()(0) < 1e-6 * es.eigenvalues()(2)) {
    return std::nullopt;
  }
  Vec3 p = A.ldlt().solve(b);

  auto cost_at = [&](const Vec3 &x, double &cost) {
    cost = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const Vec3 pc = camera_point(x, poses[i], ext);
      if (!(pc(2) > kMinDepth)) {
        return false;
      }
      cost += ((obs[i].uv - pc.head<2>() / pc(2)) / obs[i].sigma).squaredNorm();
    }
    return true;
  };

  double cost = 0.0;
  if (!cost_at(p, cost)) {
    return std::nullopt;
  }
  Triangulation out;
  bool converged = false;
  Mat3 JtJ = Mat3::Zero();
  for (int it = 0; it < kMaxGnIterations; ++it) {
    JtJ.setZero();
    Vec3 Jtr = Vec3::Zero();
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const Vec3 pc = camera_point(p, poses[i], ext);
      const Eigen::Matrix<double, 2, 3> J = projection_derivative(pc) * ext.R_CI * poses[i].R_IG / obs[i].sigma;
      const Vec2 r = (obs[i].uv - pc.head<2>() / pc(2)) / obs[i].sigma;
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * r;
    }
    const Vec3 dp = JtJ.ldlt().solve(Jtr);
    if (!dp.allFinite()) {
      return std::nullopt;
    }
    double step = 1.0;
    double new_cost = 0.0;
    bool accepted = false;
    for (int halving = 0; halving < 10; ++halving) {
      if (cost_at(p + step * dp, new_cost) && new_cost <= cost * (1.0 + 1e-12) + 1e-300) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) {
      // No descent left: already at the minimum to within numerical precision.
      converged = dp.norm() < 1e-6 * (1.0 + p.norm());
      break;
    }
    p += step * dp;
    cost = new_cost;
    if ((step * dp).norm() < 1e-12 * (1.0 + p.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    return std::nullopt;
  }
  // Covariance at the final estimate.
  JtJ.setZero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 pc = camera_point(p, poses[i], ext);
    const Eigen::Matrix<double, 2, 3> J = projection_derivative(pc) * ext.R_CI * poses[i].R_IG / obs[i].sigma;
    JtJ += J.transpose() * J;
  }
  out.p = p;
  out.cov = JtJ.inverse();
  return out;
}

std::optional<Triangulation> triangulate(const FeatureTrack &track, const FilterState &state,
                                         const CameraExtrinsics &ext) {
  std::vector<PoseRef> poses;
  std::vector<Observation> obs;
  for (const auto &o : track.obs) {
    const ClonePose *c = state.find_clone(Window::Short, o.stamp);
    if (c == nullptr) {
      continue;
    }
    poses.push_back(pose_of(*c));
    obs.push_back(o);
  }
  return triangulate(obs, poses, ext);
}

void nullspace_project(const Eigen::MatrixXd &H_f, Eigen::MatrixXd &H_x, Eigen::VectorXd &r) {
  const Eigen::Index m = H_f.rows();
  const Eigen::Index k = H_f.cols();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(H_f);
  const Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd Q2 = Q.rightCols(m - k);
  H_x = (Q2.transpose() * H_x).eval();
  r = (Q2.transpose() * r).eval();
}

void compress_measurements(Eigen::MatrixXd &H, Eigen::VectorXd &r) {
  const Eigen::Index m = H.rows();
  const Eigen::Index k = H.cols();
  if (m <= k) {
    return;
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(H);
  const Eigen::VectorXd qtr = qr.householderQ().adjoint() * r;
  H = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  r = qtr.head(k);
}

std::optional<TrackSystem> track_system(const FeatureTrack &track, const Vec3 &p_f, const FilterState &state,
                                        const CameraExtrinsics &ext, bool fej) {
  std::vector<const Observation *> used;
  std::vector<Eigen::Index> offsets;
  for (const auto &o : track.obs) {
    const Eigen::Index off = state.clone_offset(Window::Short, o.stamp);
    if (off < 0) {
      return std::nullopt;
    }
    used.push_back(&o);
    offsets.push_back(off);
  }
  const auto n = static_cast<Eigen::Index>(used.size());
  if (n < 2) {
    return std::nullopt;
  }
  std::vector<Eigen::Index> blocks = offsets;
  std::sort(blocks.begin(), blocks.end());
  blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());

  TrackSystem sys;
  for (const Eigen::Index b : blocks) {
    append_block(sys.cols, b, kCloneDim);
  }
  Eigen::MatrixXd H_x = Eigen::MatrixXd::Zero(2 * n, static_cast<Eigen::Index>(sys.cols.size()));
  Eigen::MatrixXd H_f(2 * n, 3);
  Eigen::VectorXd r(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Observation &o = *used[static_cast<std::size_t>(i)];
    const ClonePose *c = state.find_clone(Window::Short, o.stamp);
    PoseRef lin{c->rot(), c->p};
    if (fej) {
      const FejEntry &f = state.fej.at(BlockKey::clone(Window::Short, o.stamp));
      lin = PoseRef{f.rot(), f.p};
    }
    const Vec3 pc = camera_point(p_f, PoseRef{c->rot(), c->p}, ext);
    if (!(pc(2) > kMinDepth) || !(camera_point(p_f, lin, ext)(2) > kMinDepth)) {
      return std::nullopt;
    }
    const ProjectionJacobians J = projection_jacobians(p_f, lin, ext);
    const auto col = static_cast<Eigen::Index>(
        (std::lower_bound(blocks.begin(), blocks.end(), offsets[static_cast<std::size_t>(i)]) - blocks.begin()) *
        kCloneDim);
    const double w = 1.0 / o.sigma;
    H_x.block<2, 3>(2 * i, col) = w * J.d_theta;
    H_x.block<2, 3>(2 * i, col + 3) = w * J.d_pos;
    H_f.middleRows<2>(2 * i) = w * J.d_feat;
    r.segment<2>(2 * i) = w * (o.uv - pc.head<2>() / pc(2));
  }
  nullspace_project(H_f, H_x, r);
  sys.H = std::move(H_x);
  sys.r = std::move(r);
  return sys;
}

VisualUpdateStats visual_update(FilterState &state, std::span<const FeatureTrack> tracks, const CameraExtrinsics &ext,
                                const VisualUpdateOptions &opts) {
  VisualUpdateStats stats;
  std::vector<TrackSystem> accepted;
  for (const auto &track : tracks) {
    const auto tri = triangulate(track, state, ext);
    if (!tri) {
      ++stats.rejected;
      continue;
    }
    auto sys = track_system(track, tri->p, state, ext, opts.fej);
    if (!sys || sys->r.size() == 0) {
      ++stats.rejected;
      continue;
    }
    const Eigen::MatrixXd Rn = Eigen::MatrixXd::Identity(sys->r.size(), sys->r.size());
    const double d2 = mahalanobis(state, sys->cols, sys->H, sys->r, Rn);
    if (d2 > chi2_quantile(static_cast<int>(sys->r.size()), opts.chi2_prob)) {
      ++stats.gated;
      continue;
    }
    accepted.push_back(std::move(*sys));
  }
  if (accepted.empty()) {
    return stats;
  }

  std::vector<Eigen::Index> cols;
  Eigen::Index rows = 0;
  for (const auto &sys : accepted) {
    cols.insert(cols.end(), sys.cols.begin(), sys.cols.end());
    rows += sys.r.size();
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  std::map<Eigen::Index, Eigen::Index> where;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    where[cols[i]] = static_cast<Eigen::Index>(i);
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(cols.size()));
  Eigen::VectorXd r(rows);
  Eigen::Index row = 0;
  for (const auto &sys : accepted) {
    const Eigen::Index m = sys.r.size();
    for (std::size_t j = 0; j < sys.cols.size(); ++j) {
      H.block(row, where[sys.cols[j]], m, 1) = sys.H.col(static_cast<Eigen::Index>(j));
    }
    r.segment(row, m) = sys.r;
    row += m;
  }
  stats.used = static_cast<int>(accepted.size());
  stats.rows = static_cast<int>(rows);
  compress_measurements(H, r);
  ekf_update(state, cols, H, r, Eigen::MatrixXd::Identity(r.size(), r.size()));
  return stats;
}

} // namespace viro
