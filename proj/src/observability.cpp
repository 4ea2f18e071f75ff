#include "viro/observability.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/SVD>

namespace viro {

namespace {

using Mat24 = Eigen::Matrix<double, kAnalysisDim, kAnalysisDim>;

class Perturber {
public:
  Perturber(const ObsConfig &cfg) : cfg_(cfg), rng_(cfg.seed) {}

  Vec3 vec(double sigma) {
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
      out(i) = sigma * normal_(rng_);
    }
    return out;
  }

  ImuState imu(const ImuState &x) {
    ImuState out = x;
    out.q = rot_to_quat(Mat3(so3_exp(vec(-cfg_.sigma_rot)) * x.rot()));
    out.v += vec(cfg_.sigma_pos);
    out.p += vec(cfg_.sigma_pos);
    return out;
  }

private:
  const ObsConfig &cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

bool is_degenerate(const ObsTrajectory &traj) {
  const auto &t = traj.truth;
  double max_pos = 0.0;
  double max_rot = 0.0;
  const Mat3 R0 = t.front().imu.rot();
  for (const auto &x : t) {
    max_pos = std::max(max_pos, (x.imu.p - t.front().imu.p).norm());
    max_rot = std::max(max_rot, so3_log(Mat3(x.imu.rot() * R0.transpose())).norm());
  }
  return max_pos < 1e-3 || max_rot < 1e-3;
}

} // namespace

void nullspace_candidates(const AnalysisState &x, const Vec3 &gravity, Eigen::Matrix<double, kAnalysisDim, 3> &N1,
                          Eigen::Matrix<double, kAnalysisDim, 1> &N2) {
  N1.setZero();
  N2.setZero();
  for (Eigen::Index off : {kPos, kFeat, kAnchor1, kAnchor2}) {
    N1.block<3, 3>(off, 0).setIdentity();
  }
  N2.segment<3>(kTheta) = x.imu.rot() * gravity;
  N2.segment<3>(kVel) = -skew(x.imu.v) * gravity;
  N2.segment<3>(kPos) = -skew(x.imu.p) * gravity;
  N2.segment<3>(kFeat) = -skew(x.feature) * gravity;
  N2.segment<3>(kAnchor1) = -skew(x.anchor1) * gravity;
  N2.segment<3>(kAnchor2) = -skew(x.anchor2) * gravity;
}

Mat24 analysis_transition(const ImuState &from, const ImuState &to, std::span<const ImuSample> samples,
                          const Vec3 &gravity) {
  Transition t = compute_phi_qd(from, samples, NoiseParams{}, gravity);
  orientation_column(from, to, samples.back().stamp - samples.front().stamp, gravity, t.phi);
  Mat24 phi = Mat24::Identity();
  phi.topLeftCorner<15, 15>() = t.phi;
  return phi;
}

Eigen::Matrix<double, 5, kAnalysisDim> analysis_jacobian(const AnalysisState &x, const ObsConfig &cfg) {
  Eigen::Matrix<double, 5, kAnalysisDim> H = Eigen::Matrix<double, 5, kAnalysisDim>::Zero();
  const Mat3 R = x.imu.rot();
  const ProjectionJacobians V = projection_jacobians(x.feature, PoseRef{R, x.imu.p}, cfg.ext);
  H.block<2, 3>(0, kTheta) = V.d_theta;
  H.block<2, 3>(0, kPos) = V.d_pos;
  H.block<2, 3>(0, kFeat) = V.d_feat;

  UwbParams uwb;
  uwb.lever_arm = cfg.lever_arm;
  const Eigen::Index anchor_cols[2] = {kAnchor1, kAnchor2};
  const Vec3 anchors[2] = {x.anchor1, x.anchor2};
  for (int i = 0; i < 2; ++i) {
    if (auto J = squared_range_jacobians(R, x.imu.p, anchors[i], uwb)) {
      H.block<1, 3>(2 + i, kTheta) = J->d_theta;
      H.block<1, 3>(2 + i, kPos) = J->d_pos;
      H.block<1, 3>(2 + i, anchor_cols[i]) = J->d_anchor;
    }
  }
  if (auto E = echo_jacobians(x.anchor1, x.anchor2)) {
    H.block<1, 3>(4, kAnchor1) = E->d_anchor_i;
    H.block<1, 3>(4, kAnchor2) = E->d_anchor_j;
  }
  return H;
}

ObservabilityReport build_observability_matrix(const ObsTrajectory &traj, ObsMode mode, const ObsConfig &cfg) {
  const std::size_t n = traj.truth.size();
  if (n < 10 || traj.stamps.size() != n || traj.segments.size() + 1 < n) {
    throw std::invalid_argument("build_observability_matrix: need at least ten steps with IMU segments");
  }
  Perturber noise(cfg);

  // Linearization points: H_k at `meas[k]`, Phi_{k+1,k} from `from[k]` to `meas[k+1].imu`.
  std::vector<AnalysisState> meas(n);
  std::vector<ImuState> from(n);
  for (std::size_t k = 0; k < n; ++k) {
    const AnalysisState &t = traj.truth[k];
    switch (mode) {
    case ObsMode::Ideal:
      meas[k] = t;
      from[k] = t.imu;
      break;
    case ObsMode::Actual:
      meas[k].imu = noise.imu(t.imu);
      meas[k].feature = t.feature + noise.vec(cfg.sigma_pos);
      meas[k].anchor1 = t.anchor1 + noise.vec(cfg.sigma_pos);
      meas[k].anchor2 = t.anchor2 + noise.vec(cfg.sigma_pos);
      from[k] = noise.imu(t.imu);
      break;
    case ObsMode::Fej:
      meas[k].imu = noise.imu(t.imu);
      if (k == 0) {
        meas[k].feature = t.feature + noise.vec(cfg.sigma_pos);
        meas[k].anchor1 = t.anchor1 + noise.vec(cfg.sigma_pos);
        meas[k].anchor2 = t.anchor2 + noise.vec(cfg.sigma_pos);
      } else {
        meas[k].feature = meas[0].feature;
        meas[k].anchor1 = meas[0].anchor1;
        meas[k].anchor2 = meas[0].anchor2;
      }
      from[k] = meas[k].imu;
      break;
    }
  }

  ObservabilityReport rep;
  rep.mode = mode;
  rep.steps = static_cast<int>(n);
  rep.degenerate = is_degenerate(traj);
  rep.O.resize(5 * static_cast<Eigen::Index>(n), kAnalysisDim);
  Mat24 phi = Mat24::Identity();
  for (std::size_t k = 0; k < n; ++k) {
    rep.O.middleRows<5>(5 * static_cast<Eigen::Index>(k)) = analysis_jacobian(meas[k], cfg) * phi;
    if (k + 1 < n) {
      phi = (analysis_transition(from[k], meas[k + 1].imu, traj.segments[k], cfg.gravity) * phi).eval();
    }
  }

  nullspace_candidates(meas[0], cfg.gravity, rep.N1, rep.N2);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rep.O);
  rep.singular_values = svd.singularValues();
  const double smax = rep.singular_values(0);
  rep.rank = static_cast<int>((rep.singular_values.array() > cfg.rank_tol * smax).count());
  for (int i = 0; i < 3; ++i) {
    rep.residual_n1(i) = (rep.O * rep.N1.col(i)).norm() / smax;
  }
  rep.residual_n2 = (rep.O * rep.N2).norm() / smax;
  return rep;
}

ObservabilityReport fej_restoration_check(const ObsTrajectory &traj, const ObsConfig &cfg) {
  return build_observability_matrix(traj, ObsMode::Fej, cfg);
}

std::optional<Vec3> visible_feature(std::span<const AnalysisState> truth, const CameraExtrinsics &ext) {
  std::optional<Vec3> best;
  double best_depth = 1.0;
  for (std::size_t k = 0; k < truth.size(); k += 5) {
    const Mat3 R_CG = ext.R_CI * truth[k].imu.rot();
    const Vec3 center = truth[k].imu.p - truth[k].imu.rot().transpose() * ext.R_CI.transpose() * ext.p_CI;
    const Vec3 axis = R_CG.transpose() * Vec3::UnitZ();
    for (double depth : {3.0, 5.0, 8.0, 12.0}) {
      const Vec3 cand = center + depth * axis;
      double min_depth = std::numeric_limits<double>::infinity();
      for (const auto &x : truth) {
        min_depth = std::min(min_depth, camera_point(cand, PoseRef{x.imu.rot(), x.imu.p}, ext).z());
      }
      if (min_depth > best_depth) {
        best_depth = min_depth;
        best = cand;
      }
    }
  }
  return best;
}

std::string obs_mode_name(ObsMode mode) {
  switch (mode) {
  case ObsMode::Ideal:
    return "ideal";
  case ObsMode::Actual:
    return "actual";
  case ObsMode::Fej:
    return "fej";
  }
  return "unknown";
}

std::string obs_report_header() {
  return "trajectory,mode,steps,rank,residual_n1_x,residual_n1_y,residual_n1_z,residual_n2,sv20,sv21,sv22,sv23,sv24,"
         "degenerate";
}

std::string obs_report_row(const std::string &trajectory, const ObservabilityReport &report) {
  std::ostringstream os;
  os.precision(6);
  os << std::scientific;
  os << trajectory << ',' << obs_mode_name(report.mode) << ',' << report.steps << ',' << report.rank << ','
     << report.residual_n1(0) << ',' << report.residual_n1(1) << ',' << report.residual_n1(2) << ','
     << report.residual_n2;
  const double smax = report.singular_values(0);
  for (Eigen::Index i = 19; i < kAnalysisDim; ++i) {
    os << ',' << (i < report.singular_values.size() ? report.singular_values(i) / smax : 0.0);
  }
  os << ',' << (report.degenerate ? 1 : 0);
  return os.str();
}

} // namespace viro
