#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "viro/propagation.hpp"

using namespace viro;

namespace {

const Vec3 kG(0, 0, 9.81);

std::vector<ImuSample> constant_samples(double t0, double dt, int n, const Vec3 &w, const Vec3 &a) {
  std::vector<ImuSample> out;
  for (int i = 0; i <= n; ++i) {
    out.push_back({t0 + i * dt, w, a});
  }
  return out;
}

std::vector<ImuSample> random_samples(std::mt19937_64 &rng, double t0, double dt, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<ImuSample> out;
  for (int i = 0; i <= n; ++i) {
    out.push_back({t0 + i * dt, Vec3(g(rng), g(rng), g(rng)) * 0.5, Vec3(g(rng), g(rng), 9.81 + g(rng))});
  }
  return out;
}

ImuState random_state(std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ImuState x;
  x.q = rot_to_quat(so3_exp(Vec3(g(rng), g(rng), g(rng))));
  x.bg = Vec3(g(rng), g(rng), g(rng)) * 0.01;
  x.v = Vec3(g(rng), g(rng), g(rng));
  x.ba = Vec3(g(rng), g(rng), g(rng)) * 0.05;
  x.p = Vec3(g(rng), g(rng), g(rng)) * 3.0;
  return x;
}

ImuState perturb(const ImuState &x, const Eigen::Matrix<double, 15, 1> &e) {
  ImuState y = x;
  y.q = rot_to_quat(Mat3(so3_exp(Vec3(-e.segment<3>(kTheta))) * x.rot()));
  y.bg += e.segment<3>(kBg);
  y.v += e.segment<3>(kVel);
  y.ba += e.segment<3>(kBa);
  y.p += e.segment<3>(kPos);
  return y;
}

Eigen::Matrix<double, 15, 1> error_between(const ImuState &truth, const ImuState &est) {
  Eigen::Matrix<double, 15, 1> e;
  e.segment<3>(kTheta) = -so3_log(Mat3(truth.rot() * est.rot().transpose()));
  e.segment<3>(kBg) = truth.bg - est.bg;
  e.segment<3>(kVel) = truth.v - est.v;
  e.segment<3>(kBa) = truth.ba - est.ba;
  e.segment<3>(kPos) = truth.p - est.p;
  return e;
}

Matrix15 numeric_phi(const ImuState &x, std::span<const ImuSample> samples) {
  const double h = 1e-6;
  const ImuState end = integrate_imu(x, samples, kG);
  Matrix15 J;
  for (int i = 0; i < 15; ++i) {
    Eigen::Matrix<double, 15, 1> e = Eigen::Matrix<double, 15, 1>::Zero();
    e(i) = h;
    const auto plus = error_between(integrate_imu(perturb(x, e), samples, kG), end);
    const auto minus = error_between(integrate_imu(perturb(x, -e), samples, kG), end);
    J.col(i) = (plus - minus) / (2 * h);
  }
  return J;
}

} // namespace

TEST_CASE("stationary equilibrium") {
  ImuState x;
  const auto s = constant_samples(0.0, 0.005, 200, Vec3::Zero(), kG);
  const ImuState end = integrate_imu(x, s, kG);
  CHECK(end.p.norm() < 1e-9);
  CHECK(end.v.norm() < 1e-9);
  CHECK((end.rot() - Mat3::Identity()).norm() < 1e-12);

  FilterState st = make_filter_state(x, Matrix15::Identity() * 1e-4, 0.0, kG);
  propagate_mean(st, s);
  CHECK(st.stamp == doctest::Approx(1.0));
  CHECK(st.imu.p.norm() < 1e-9);
}

TEST_CASE("constant yaw rate") {
  const double w = 0.7;
  ImuState x;
  const auto s = constant_samples(0.0, 0.005, 200, Vec3(0, 0, w), kG);
  const ImuState end = integrate_imu(x, s, kG);
  // ^I_G R = exp(-w t e_z): the body frame has turned by w t about z.
  CHECK((so3_log(end.rot()) - Vec3(0, 0, -w * 1.0)).norm() < 1e-6);
  CHECK(end.p.norm() < 1e-9);
}

TEST_CASE("free fall") {
  ImuState x;
  x.v = Vec3(1, 0, 0);
  const auto s = constant_samples(0.0, 0.005, 100, Vec3::Zero(), Vec3::Zero());
  const ImuState end = integrate_imu(x, s, kG);
  CHECK((end.v - (x.v - kG * 0.5)).norm() < 1e-12);
  CHECK((end.p - (x.v * 0.5 - 0.5 * kG * 0.25)).norm() < 1e-12);
}

TEST_CASE("transition matches finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const ImuState x = random_state(rng);
    const int n = trial % 2 == 0 ? 1 : 20;
    const auto s = random_samples(rng, 0.0, 0.005, n);
    const Transition t = compute_phi_qd(x, s, NoiseParams{}, kG);
    const Matrix15 J = numeric_phi(x, s);
    for (int c = 0; c < 15; ++c) {
      const double scale = std::max(1.0, J.col(c).norm());
      CHECK((t.phi.col(c) - J.col(c)).norm() / scale < 1e-4);
    }
  }
}

TEST_CASE("transition structure") {
  std::mt19937_64 rng(3);
  const ImuState x = random_state(rng);
  const auto s = random_samples(rng, 0.0, 0.005, 10);
  const Matrix15 phi = compute_phi_qd(x, s, NoiseParams{}, kG).phi;
  const Mat3 I = Mat3::Identity();
  CHECK(phi.block<3, 3>(kTheta, kVel).isZero(0));
  CHECK(phi.block<3, 3>(kTheta, kBa).isZero(0));
  CHECK(phi.block<3, 3>(kTheta, kPos).isZero(0));
  CHECK(phi.block<3, 15>(kBg, 0) == (Eigen::Matrix<double, 3, 15>() << Mat3::Zero(), I, Mat3::Zero(), Mat3::Zero(), Mat3::Zero()).finished());
  CHECK(phi.block<3, 15>(kBa, 0) == (Eigen::Matrix<double, 3, 15>() << Mat3::Zero(), Mat3::Zero(), Mat3::Zero(), I, Mat3::Zero()).finished());
  CHECK(phi.block<3, 3>(kVel, kVel) == I);
  CHECK(phi.block<3, 3>(kVel, kPos).isZero(0));
  CHECK(phi.block<3, 3>(kPos, kPos) == I);

  const auto tiny = random_samples(rng, 0.0, 1e-9, 1);
  const Transition t0 = compute_phi_qd(x, tiny, NoiseParams{}, kG);
  CHECK((t0.phi - Matrix15::Identity()).norm() < 1e-6);
  CHECK(t0.qd.norm() < 1e-12);
  const auto one = random_samples(rng, 0.0, 1e-3, 1);
  const Matrix15 p1 = compute_phi_qd(x, one, NoiseParams{}, kG).phi;
  CHECK((p1.block<3, 3>(kPos, kVel) - 1e-3 * I).norm() < 1e-12);
}

TEST_CASE("first-estimate transitions compose") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const ImuState x0 = random_state(rng);
    const auto s = random_samples(rng, 0.0, 0.005, 40);
    const std::vector<ImuSample> a(s.begin(), s.begin() + 21);
    const std::vector<ImuSample> b(s.begin() + 20, s.end());
    const NoiseParams noise;
    const Transition ta = compute_phi_qd(x0, a, noise, kG, &x0);
    const Transition tb = compute_phi_qd(ta.end, b, noise, kG, &ta.end);
    const Transition tab = compute_phi_qd(x0, s, noise, kG, &x0);
    const Matrix15 composed = tb.phi * ta.phi;
    CHECK((composed - tab.phi).norm() / tab.phi.norm() < 1e-8);
  }
}

TEST_CASE("covariance propagation") {
  std::mt19937_64 rng(4);
  ImuState x = random_state(rng);
  FilterState st = make_filter_state(x, Matrix15::Identity() * 1e-3, 0.0, kG);
  clone_current_pose(st, 0.0, Window::Short);
  AnchorAugmentation aug{{{0, Vec3(1, 2, 3)}}, Eigen::MatrixXd::Identity(3, 3) * 0.3, Eigen::MatrixXd::Zero(st.dim(), 3)};
  augment_anchors(st, aug);
  const Eigen::MatrixXd before = st.cov;

  propagate_covariance(st, Matrix15::Identity(), Matrix15::Zero());
  CHECK(st.cov == before);

  const auto s = random_samples(rng, 0.0, 0.005, 20);
  propagate(st, s, NoiseParams{}, Linearization::FirstEstimate);
  CHECK(st.cov.block(15, 15, 3, 3) == before.block(15, 15, 3, 3));
  CHECK(covariance_valid(st.cov));
  CHECK(st.fej.contains(BlockKey::imu(0.1)));

  FilterState q = make_filter_state(x, Matrix15::Identity() * 1e-3, 0.0, kG);
  double trace = q.cov.trace();
  Matrix15 Qd = Matrix15::Zero();
  Qd.diagonal().setConstant(1e-6);
  for (int i = 0; i < 10; ++i) {
    propagate_covariance(q, Matrix15::Identity(), Qd);
    CHECK(q.cov.trace() >= trace);
    trace = q.cov.trace();
  }
}

TEST_CASE("imu window") {
  std::vector<ImuSample> stream;
  for (int i = 0; i <= 10; ++i) {
    stream.push_back({i * 0.1, Vec3::Constant(i), Vec3::Zero()});
  }
  const auto w = imu_window(stream, 0.25, 0.5);
  REQUIRE(w.size() == 4);
  CHECK(w.front().stamp == doctest::Approx(0.25));
  CHECK(w.front().omega_m(0) == 2.0);
  CHECK(w[1].omega_m(0) == 3.0);
  CHECK(w.back().stamp == doctest::Approx(0.5));
  CHECK_THROWS(imu_window(stream, 0.5, 0.5));
  CHECK_THROWS(integrate_imu(ImuState{}, std::span<const ImuSample>(stream.data(), 1), kG));
}
