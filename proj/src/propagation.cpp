#include "viro/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace viro {

namespace {

void check_samples(std::span<const ImuSample> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("imu propagation: at least two samples are required");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].stamp > samples[i - 1].stamp)) {
      throw std::invalid_argument("imu propagation: sample stamps must be strictly increasing");
    }
  }
}

struct StepResult {
  Mat3 R_end;
  Vec3 v_end;
  Vec3 p_end;
};

// One zero-order-hold interval of length h.
StepResult integrate_step(const Mat3 &R, const Vec3 &v, const Vec3 &p, const Vec3 &w_hat, const Vec3 &a_hat, double h,
                          const Vec3 &g) {
  const Mat3 R_mid = so3_exp(Vec3(-w_hat * (0.5 * h))) * R;
  const Mat3 R_end = so3_exp(Vec3(-w_hat * h)) * R;
  const Vec3 a0 = R.transpose() * a_hat - g;
  const Vec3 am = R_mid.transpose() * a_hat - g;
  const Vec3 a1 = R_end.transpose() * a_hat - g;
  return {R_end, v + h / 6.0 * (a0 + 4.0 * am + a1), p + h * v + h * h / 6.0 * (a0 + 2.0 * am)};
}

} // namespace

void NoiseParams::validate() const {
  if (!(gyro_white > 0 && gyro_walk > 0 && accel_white > 0 && accel_walk > 0)) {
    throw std::invalid_argument("NoiseParams: all densities must be positive");
  }
}

ImuState integrate_imu(const ImuState &start, std::span<const ImuSample> samples, const Vec3 &gravity) {
  check_samples(samples);
  Mat3 R = start.rot();
  Vec3 v = start.v;
  Vec3 p = start.p;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double h = samples[i + 1].stamp - samples[i].stamp;
    const StepResult s =
        integrate_step(R, v, p, samples[i].omega_m - start.bg, samples[i].accel_m - start.ba, h, gravity);
    R = s.R_end;
    v = s.v_end;
    p = s.p_end;
  }
  ImuState out = start;
  out.q = rot_to_quat(R);
  out.v = v;
  out.p = p;
  return out;
}

void propagate_mean(FilterState &state, std::span<const ImuSample> samples) {
  state.imu = integrate_imu(state.imu, samples, state.gravity);
  state.stamp = samples.back().stamp;
}

void orientation_column(const ImuState &start, const ImuState &end, double dt, const Vec3 &gravity, Matrix15 &phi) {
  const Mat3 R0 = start.rot();
  const Mat3 R1 = end.rot();
  phi.block<3, 3>(kTheta, kTheta) = R1 * R0.transpose();
  phi.block<3, 3>(kVel, kTheta) = -skew(Vec3(end.v - start.v + gravity * dt)) * R0.transpose();
  phi.block<3, 3>(kPos, kTheta) =
      -skew(Vec3(end.p - start.p - start.v * dt + 0.5 * gravity * dt * dt)) * R0.transpose();
}

Transition compute_phi_qd(const ImuState &lin, std::span<const ImuSample> samples, const NoiseParams &noise,
                          const Vec3 &gravity, const ImuState *fej_start) {
  check_samples(samples);
  Transition out;
  Mat3 R = lin.rot();
  Vec3 v = lin.v;
  Vec3 p = lin.p;
  const Mat3 I3 = Mat3::Identity();

  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double h = samples[i + 1].stamp - samples[i].stamp;
    const Vec3 w_hat = samples[i].omega_m - lin.bg;
    const Vec3 a_hat = samples[i].accel_m - lin.ba;
    const StepResult s = integrate_step(R, v, p, w_hat, a_hat, h, gravity);

    const Mat3 R_mid = so3_exp(Vec3(-w_hat * (0.5 * h))) * R;
    const Mat3 a_skew = skew(a_hat);
    const Mat3 A_bg_mid = (0.5 * h) * R_mid.transpose() * a_skew * so3_left_jacobian(Vec3(-w_hat * (0.5 * h)));
    const Mat3 A_bg_end = h * s.R_end.transpose() * a_skew * so3_left_jacobian(Vec3(-w_hat * h));
    const Mat3 A_ba_0 = -R.transpose();
    const Mat3 A_ba_mid = -R_mid.transpose();
    const Mat3 A_ba_end = -s.R_end.transpose();

    Matrix15 F = Matrix15::Identity();
    F.block<3, 3>(kTheta, kTheta) = s.R_end * R.transpose();
    F.block<3, 3>(kTheta, kBg) = -h * so3_left_jacobian(Vec3(-w_hat * h));
    F.block<3, 3>(kVel, kTheta) = -skew(Vec3(s.v_end - v + gravity * h)) * R.transpose();
    F.block<3, 3>(kVel, kBg) = h / 6.0 * (4.0 * A_bg_mid + A_bg_end);
    F.block<3, 3>(kVel, kBa) = h / 6.0 * (A_ba_0 + 4.0 * A_ba_mid + A_ba_end);
    F.block<3, 3>(kPos, kTheta) = -skew(Vec3(s.p_end - p - v * h + 0.5 * gravity * h * h)) * R.transpose();
    F.block<3, 3>(kPos, kBg) = h * h / 6.0 * (2.0 * A_bg_mid);
    F.block<3, 3>(kPos, kVel) = h * I3;
    F.block<3, 3>(kPos, kBa) = h * h / 6.0 * (A_ba_0 + 2.0 * A_ba_mid);

    Matrix15 Qstep = Matrix15::Zero();
    Qstep.block<3, 3>(kTheta, kTheta) = noise.gyro_white * noise.gyro_white * h * I3;
    Qstep.block<3, 3>(kBg, kBg) = noise.gyro_walk * noise.gyro_walk * h * I3;
    Qstep.block<3, 3>(kVel, kVel) = noise.accel_white * noise.accel_white * h * I3;
    Qstep.block<3, 3>(kBa, kBa) = noise.accel_walk * noise.accel_walk * h * I3;

    out.phi = (F * out.phi).eval();
    out.qd = (F * out.qd * F.transpose()).eval() + Qstep;

    R = s.R_end;
    v = s.v_end;
    p = s.p_end;
  }
  out.qd = 0.5 * (out.qd + out.qd.transpose()).eval();

  out.end = lin;
  out.end.q = rot_to_quat(R);
  out.end.v = v;
  out.end.p = p;

  if (fej_start != nullptr) {
    orientation_column(*fej_start, out.end, samples.back().stamp - samples.front().stamp, gravity, out.phi);
  }
  return out;
}

void propagate_covariance(FilterState &state, const Matrix15 &phi, const Matrix15 &qd) {
  auto &P = state.cov;
  const Eigen::Index n = P.rows();
  if (P.cols() != n || n < kImuDim) {
    throw std::invalid_argument("propagate_covariance: dimension mismatch");
  }
  const Eigen::Index rest = n - kImuDim;
  const Matrix15 Pii = P.topLeftCorner<15, 15>();
  P.topLeftCorner<15, 15>() = phi * Pii * phi.transpose() + qd;
  if (rest > 0) {
    const Eigen::MatrixXd cross = phi * P.topRightCorner(kImuDim, rest);
    P.topRightCorner(kImuDim, rest) = cross;
    P.bottomLeftCorner(rest, kImuDim) = cross.transpose();
  }
  symmetrize(P);
}

Transition propagate(FilterState &state, std::span<const ImuSample> samples, const NoiseParams &noise,
                     Linearization lin) {
  check_samples(samples);
  if (std::abs(samples.front().stamp - state.stamp) > 1e-9) {
    throw std::invalid_argument("propagate: samples must start at the state stamp");
  }
  const ImuState fej = state.imu_fej().as_imu();
  const Transition t =
      compute_phi_qd(state.imu, samples, noise, state.gravity, lin == Linearization::FirstEstimate ? &fej : nullptr);
  state.imu = t.end;
  state.stamp = samples.back().stamp;
  propagate_covariance(state, t.phi, t.qd);
  const ImuState &e = t.end;
  state.fej.record(BlockKey::imu(state.stamp), FejEntry{e.q, e.p, e.v, e.bg, e.ba, true});
  return t;
}

std::vector<ImuSample> imu_window(std::span<const ImuSample> stream, double t0, double t1) {
  if (!(t1 > t0)) {
    throw std::invalid_argument("imu_window: empty interval");
  }
  if (stream.empty() || stream.front().stamp > t0 + 1e-12) {
    throw std::invalid_argument("imu_window: stream does not cover the interval start");
  }
  auto by_stamp = [](const ImuSample &s, double t) { return s.stamp < t; };
  // Last sample at or before t0 holds over the start of the interval.
  auto it = std::lower_bound(stream.begin(), stream.end(), t0, by_stamp);
  if (it == stream.end() || it->stamp > t0 + 1e-12) {
    --it;
  }
  std::vector<ImuSample> out;
  ImuSample first = *it;
  first.stamp = t0;
  out.push_back(first);
  for (++it; it != stream.end() && it->stamp < t1 - 1e-12; ++it) {
    if (it->stamp > t0 + 1e-12) {
      out.push_back(*it);
    }
  }
  ImuSample last = out.back();
  last.stamp = t1;
  if (it != stream.end() && std::abs(it->stamp - t1) <= 1e-12) {
    last.omega_m = it->omega_m;
    last.accel_m = it->accel_m;
  }
  out.push_back(last);
  return out;
}

} // namespace viro
