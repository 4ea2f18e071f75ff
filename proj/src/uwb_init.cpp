#include "viro/uwb_init.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <Eigen/QR>
#include <Eigen/SVD>

namespace viro {

namespace {

struct Residuals {
  Eigen::VectorXd r; // whitened
  Eigen::MatrixXd J; // whitened Jacobian of the prediction
};

Residuals evaluate(const InitProblem &problem, const std::vector<int> &ids, const Eigen::VectorXd &x,
                   const UwbParams &params, bool with_jacobian) {
  std::map<int, Eigen::Index> col;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    col[ids[k]] = 3 * static_cast<Eigen::Index>(k);
  }
  Eigen::Index rows = 0;
  for (const auto &[id, v] : problem.ranges) {
    if (col.count(id) != 0) {
      rows += static_cast<Eigen::Index>(v.size());
    }
  }
  std::vector<const EchoMeasurement *> echoes;
  for (const auto &e : problem.echoes) {
    if (col.count(e.anchor_i) != 0 && col.count(e.anchor_j) != 0 && e.anchor_i != e.anchor_j) {
      echoes.push_back(&e);
    }
  }
  rows += static_cast<Eigen::Index>(echoes.size());

  Residuals out;
  out.r.resize(rows);
  if (with_jacobian) {
    out.J = Eigen::MatrixXd::Zero(rows, x.size());
  }
  Eigen::Index k = 0;
  for (const auto &[id, v] : problem.ranges) {
    auto it = col.find(id);
    if (it == col.end()) {
      continue;
    }
    const Vec3 pa = x.segment<3>(it->second);
    for (const auto &row : v) {
      const Vec3 e = row.p_r - pa;
      const double n = e.norm();
      out.r(k) = (row.d - params.bias - n) / params.sigma_range;
      if (with_jacobian && n > 0) {
        out.J.block<1, 3>(k, it->second) = -e.transpose() / (n * params.sigma_range);
      }
      ++k;
    }
  }
  for (const auto *m : echoes) {
    const Eigen::Index ci = col[m->anchor_i];
    const Eigen::Index cj = col[m->anchor_j];
    const Vec3 e = x.segment<3>(ci) - x.segment<3>(cj);
    const double n = e.norm();
    out.r(k) = (m->distance - params.bias - n) / params.sigma_echo;
    if (with_jacobian && n > 0) {
      out.J.block<1, 3>(k, ci) = e.transpose() / (n * params.sigma_echo);
      out.J.block<1, 3>(k, cj) = -e.transpose() / (n * params.sigma_echo);
    }
    ++k;
  }
  return out;
}

} // namespace

void InitBuffer::add_frame(const BufferedFrame &frame) {
  if (!frames_.empty() && !(frame.stamp > frames_.back().stamp)) {
    throw std::invalid_argument("InitBuffer: frame stamps must increase");
  }
  frames_.push_back(frame);
}

void InitBuffer::add_echoes(std::span<const EchoMeasurement> echoes) {
  echoes_.insert(echoes_.end(), echoes.begin(), echoes.end());
}

std::size_t InitBuffer::keyframe_count() const {
  return static_cast<std::size_t>(
      std::count_if(frames_.begin(), frames_.end(), [](const BufferedFrame &f) { return f.keyframe; }));
}

const BufferedFrame *InitBuffer::last_keyframe() const {
  for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
    if (it->keyframe) {
      return &*it;
    }
  }
  return nullptr;
}

std::vector<int> InitBuffer::anchor_ids() const {
  std::set<int> ids;
  for (const auto &f : frames_) {
    for (const auto &[id, d] : f.ranges) {
      ids.insert(id);
    }
  }
  return {ids.begin(), ids.end()};
}

void InitBuffer::clear() {
  frames_.clear();
  echoes_.clear();
}

BootstrapResult linear_bootstrap(std::span<const RangeRow> rows, double bias, double cond_max) {
  if (rows.size() < 4) {
    throw std::invalid_argument("linear_bootstrap: at least four rows are required");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &row = rows[static_cast<std::size_t>(i)];
    A.block<1, 3>(i, 0) = -2.0 * row.p_r.transpose();
    A(i, 3) = 1.0;
    const double d = row.d - bias;
    b(i) = d * d - row.p_r.squaredNorm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto &s = svd.singularValues();
  const double cond = s(3) > 0 ? s(0) / s(3) : std::numeric_limits<double>::infinity();
  if (!(cond <= cond_max)) {
    std::ostringstream msg;
    msg << "linear_bootstrap: condition number " << cond << " exceeds " << cond_max;
    throw IllConditioned(msg.str());
  }
  const Eigen::Vector4d x = svd.solve(b);
  BootstrapResult out;
  out.p = x.head<3>();
  out.D = x(3);
  out.consistency = std::abs(out.D - out.p.squaredNorm());
  out.condition = cond;
  return out;
}

RefineResult refine_joint(const InitProblem &problem, const std::map<int, Vec3> &guess, const UwbParams &params,
                          const InitParams &init) {
  std::vector<int> ids;
  Eigen::VectorXd x(3 * static_cast<Eigen::Index>(guess.size()));
  for (const auto &[id, p] : guess) {
    if (!p.allFinite()) {
      throw std::invalid_argument("refine_joint: initial guess is not finite");
    }
    x.segment<3>(3 * static_cast<Eigen::Index>(ids.size())) = p;
    ids.push_back(id);
  }
  if (ids.empty()) {
    throw std::invalid_argument("refine_joint: no anchors");
  }

  auto cost_of = [&](const Eigen::VectorXd &v) { return evaluate(problem, ids, v, params, false).r.squaredNorm(); };

  RefineResult out;
  double cost = cost_of(x);
  int failures = 0;
  for (int it = 0; it < init.max_iterations; ++it) {
    const Residuals res = evaluate(problem, ids, x, params, true);
    const Eigen::MatrixXd N = res.J.transpose() * res.J;
    const Eigen::VectorXd g = res.J.transpose() * res.r;
    const Eigen::VectorXd step = N.completeOrthogonalDecomposition().solve(g);
    out.iterations = it + 1;
    if (!step.allFinite()) {
      throw InitFailed("refine_joint: non-finite step");
    }
    if (step.norm() < init.step_tol) {
      break;
    }
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= init.max_halvings; ++h, alpha *= 0.5) {
      const Eigen::VectorXd trial = x + alpha * step;
      const double c = cost_of(trial);
      if (c <= cost) {
        x = trial;
        cost = c;
        accepted = true;
        break;
      }
    }
    if (accepted) {
      failures = 0;
      continue;
    }
    if (step.norm() < 1e-6 * (1.0 + x.norm())) {
      break;
    }
    if (++failures >= 3) {
      throw InitFailed("refine_joint: cost increased in three consecutive iterations");
    }
  }
  const Residuals fin = evaluate(problem, ids, x, params, true);
  out.cost = fin.r.squaredNorm();
  out.information = fin.J.transpose() * fin.J;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    out.anchors[ids[k]] = x.segment<3>(3 * static_cast<Eigen::Index>(k));
  }
  return out;
}

std::vector<FramePose> frame_poses(const FilterState &state, const InitBuffer &buffer) {
  std::vector<FramePose> out;
  for (const auto &f : buffer.frames()) {
    FramePose fp;
    fp.stamp = f.stamp;
    fp.ranges = f.ranges;
    if (const ClonePose *c = state.find_clone(Window::Long, f.stamp)) {
      fp.R_IG = c->rot();
      fp.p = c->p;
      fp.window = Window::Long;
      fp.offset = state.clone_offset(Window::Long, f.stamp);
    } else if (const ClonePose *c = state.find_clone(Window::Short, f.stamp)) {
      fp.R_IG = c->rot();
      fp.p = c->p;
      fp.window = Window::Short;
      fp.offset = state.clone_offset(Window::Short, f.stamp);
    } else if (f.keyframe) {
      fp.R_IG = f.R_IG;
      fp.p = f.p;
    } else {
      continue;
    }
    out.push_back(std::move(fp));
  }
  return out;
}

AnchorAugmentation init_covariance(const FilterState &state, std::span<const FramePose> poses,
                                   const std::map<int, Vec3> &anchors, const UwbParams &params, bool fej) {
  const Eigen::Index dim = state.dim();
  const auto a = static_cast<Eigen::Index>(anchors.size());
  const Mat3 l_skew = skew(params.lever_arm);

  std::vector<Eigen::MatrixXd> A; // H_a1^-1 H_x1, 3 x dim
  std::vector<Mat3> B;            // H_a1^-1
  AnchorAugmentation aug;
  for (const auto &[id, pa] : anchors) {
    std::vector<const FramePose *> used;
    for (const auto &fp : poses) {
      if (fp.ranges.count(id) != 0) {
        used.push_back(&fp);
      }
    }
    if (used.size() < 4) {
      throw InitFailed("init_covariance: fewer than four ranges for anchor " + std::to_string(id));
    }
    const auto n = static_cast<Eigen::Index>(used.size());
    Eigen::MatrixXd Ha(n, 3);
    Eigen::MatrixXd Hx = Eigen::MatrixXd::Zero(n, dim);
    for (Eigen::Index k = 0; k < n; ++k) {
      const FramePose &fp = *used[static_cast<std::size_t>(k)];
      Mat3 R = fp.R_IG;
      Vec3 p = fp.p;
      if (fej && fp.offset >= 0) {
        const FejEntry &f = state.fej.at(BlockKey::clone(fp.window, fp.stamp));
        R = f.rot();
        p = f.p;
      }
      const Vec3 e = p + R.transpose() * params.lever_arm - pa;
      const double norm = e.norm();
      if (norm < 1e-9) {
        throw InitFailed("init_covariance: anchor coincides with the ranging node");
      }
      const Eigen::RowVector3d u = e.transpose() / (norm * params.sigma_range);
      Ha.row(k) = -u;
      if (fp.offset >= 0) {
        Hx.block<1, 3>(k, fp.offset) = -u * R.transpose() * l_skew;
        Hx.block<1, 3>(k, fp.offset + 3) = u;
      }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Ha);
    const Eigen::MatrixXd QtHx = qr.householderQ().transpose() * Hx;
    const Mat3 Ha1 = qr.matrixQR().topLeftCorner<3, 3>().triangularView<Eigen::Upper>();
    const double dmax = Ha1.diagonal().cwiseAbs().maxCoeff();
    const double dmin = Ha1.diagonal().cwiseAbs().minCoeff();
    if (!(dmin > 1e-12 * dmax)) {
      throw InitFailed("init_covariance: singular anchor Jacobian for anchor " + std::to_string(id));
    }
    const Mat3 Ha1_inv = Ha1.triangularView<Eigen::Upper>().solve(Mat3::Identity());
    A.push_back(Ha1_inv * QtHx.topRows(3));
    B.push_back(Ha1_inv);
    aug.anchors.push_back(AnchorState{id, pa});
  }

  const Eigen::MatrixXd &P = state.cov;
  aug.Paa = Eigen::MatrixXd::Zero(3 * a, 3 * a);
  aug.Pxa = Eigen::MatrixXd::Zero(dim, 3 * a);
  for (Eigen::Index i = 0; i < a; ++i) {
    const Eigen::MatrixXd PAi = P * A[static_cast<std::size_t>(i)].transpose();
    aug.Pxa.middleCols<3>(3 * i) = -PAi;
    for (Eigen::Index j = 0; j < a; ++j) {
      aug.Paa.block<3, 3>(3 * j, 3 * i) = A[static_cast<std::size_t>(j)] * PAi;
    }
    aug.Paa.block<3, 3>(3 * i, 3 * i) += B[static_cast<std::size_t>(i)] * B[static_cast<std::size_t>(i)].transpose();
  }
  aug.Paa = 0.5 * (aug.Paa + aug.Paa.transpose()).eval();
  return aug;
}

InitOutcome try_initialize(FilterState &state, const InitBuffer &buffer, const UwbParams &params,
                           const InitParams &init, const InitOptions &opts) {
  InitOutcome out;
  const std::size_t keyframes = buffer.keyframe_count();
  if (keyframes < init.n_min) {
    return out;
  }
  if (!state.anchors.empty()) {
    throw std::logic_error("try_initialize: anchors already initialized");
  }
  const std::vector<FramePose> poses = frame_poses(state, buffer);
  InitProblem problem;
  for (const auto &fp : poses) {
    const Vec3 p_r = fp.p + fp.R_IG.transpose() * params.lever_arm;
    for (const auto &[id, d] : fp.ranges) {
      problem.ranges[id].push_back(RangeRow{p_r, d});
    }
  }
  problem.echoes = buffer.echoes();

  std::map<int, Vec3> guess;
  std::map<int, double> consistency;
  for (const auto &[id, rows] : problem.ranges) {
    if (rows.size() < 4) {
      throw IllConditioned("try_initialize: too few ranges for anchor " + std::to_string(id));
    }
    const BootstrapResult b = linear_bootstrap(rows, params.bias, init.cond_max);
    guess[id] = b.p;
    consistency[id] = b.consistency;
  }
  if (guess.empty()) {
    throw IllConditioned("try_initialize: no ranges buffered");
  }
  const RefineResult refined = refine_joint(problem, guess, params, init);

  AnchorAugmentation aug;
  if (opts.covariance == InitCovariance::Linearized) {
    aug = init_covariance(state, poses, refined.anchors, params, opts.fej);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(refined.information);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0)) {
      throw InitFailed("try_initialize: singular solver information matrix");
    }
    const auto n = refined.information.rows();
    aug.Paa = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    aug.Paa = 0.5 * (aug.Paa + aug.Paa.transpose()).eval();
    aug.Pxa = Eigen::MatrixXd::Zero(state.dim(), n);
    for (const auto &[id, p] : refined.anchors) {
      aug.anchors.push_back(AnchorState{id, p});
    }
  }
  if (!aug.Paa.allFinite() || !aug.Pxa.allFinite()) {
    throw InitFailed("try_initialize: non-finite anchor covariance");
  }
  augment_anchors(state, aug);
  marginalize_long_window(state);

  out.status = InitStatus::Initialized;
  out.report.stamp = state.stamp;
  out.report.iterations = refined.iterations;
  out.report.cost = refined.cost;
  out.report.keyframes = keyframes;
  for (std::size_t k = 0; k < aug.anchors.size(); ++k) {
    AnchorReport r;
    r.id = aug.anchors[k].id;
    r.p = aug.anchors[k].p;
    r.paa_diag = aug.Paa.block<3, 3>(3 * static_cast<Eigen::Index>(k), 3 * static_cast<Eigen::Index>(k)).diagonal();
    r.bootstrap_consistency = consistency[r.id];
    out.report.anchors.push_back(r);
  }
  return out;
}

std::string init_report_header() {
  return "stamp,anchor_id,px,py,pz,paa_xx,paa_yy,paa_zz,iterations,cost,keyframes,bootstrap_consistency";
}

std::string init_report_rows(const InitReport &report) {
  std::ostringstream os;
  os.precision(10);
  for (const auto &a : report.anchors) {
    os << report.stamp << ',' << a.id << ',' << a.p.x() << ',' << a.p.y() << ',' << a.p.z() << ',' << a.paa_diag.x()
       << ',' << a.paa_diag.y() << ',' << a.paa_diag.z() << ',' << report.iterations << ',' << report.cost << ','
       << report.keyframes << ',' << a.bootstrap_consistency << '\n';
  }
  return os.str();
}

} // namespace viro
