#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "viro/ranging.hpp"

using namespace viro;

namespace {

Vec3 gauss3(std::mt19937_64 &rng, double s) {
  std::normal_distribution<double> g(0.0, s);
  return Vec3(g(rng), g(rng), g(rng));
}

FilterState state_with_anchors(std::mt19937_64 &rng, const std::vector<AnchorState> &anchors, double pvar = 1e-2) {
  ImuState imu;
  imu.q = rot_to_quat(so3_exp(gauss3(rng, 1.0)));
  imu.p = gauss3(rng, 2.0);
  imu.v = gauss3(rng, 1.0);
  FilterState s = make_filter_state(imu, Matrix15::Identity() * pvar, 0.0, Vec3(0, 0, 9.81));
  const auto a = static_cast<Eigen::Index>(anchors.size());
  augment_anchors(s, AnchorAugmentation{anchors, Eigen::MatrixXd::Identity(3 * a, 3 * a) * pvar,
                                        Eigen::MatrixXd::Zero(s.dim(), 3 * a)});
  return s;
}

double squared_unbiased(const FilterState &s, int anchor, const UwbParams &p) {
  const double d = predict_range(s.imu.rot(), s.imu.p, s.anchors[static_cast<std::size_t>(anchor)].p, p) - p.bias;
  return d * d;
}

} // namespace

TEST_CASE("predict_range") {
  UwbParams p;
  p.bias = 0.5;
  CHECK(predict_range(Mat3::Identity(), Vec3::Zero(), Vec3(3, 4, 0), p) == doctest::Approx(5.5));
  p.lever_arm = Vec3(0.1, -0.2, 0.3);
  const Mat3 R = so3_exp(Vec3(0.3, -0.4, 1.2));
  const Vec3 pI(1, 2, 3);
  const Vec3 node = ranging_node(R, pI, p);
  CHECK(predict_range(R, pI, node, p) == doctest::Approx(0.5));
  // Oracle: body-frame lever arm mapped through ^G_I R = (^I_G R)^T.
  const Eigen::Isometry3d T_GI = Eigen::Translation3d(pI) * Eigen::Isometry3d(Mat3(R.transpose()));
  const Vec3 anchor(-4, 5, 1);
  CHECK(predict_range(R, pI, anchor, p) == doctest::Approx((anchor - T_GI * p.lever_arm).norm() + 0.5).epsilon(1e-14));
}

TEST_CASE("predict_echo") {
  UwbParams p;
  p.bias = 0.0;
  const AnchorState a{0, Vec3(0, 0, 0)}, b{1, Vec3(0, 0, 2)}, c{2, Vec3(3, -1, 4)};
  CHECK(predict_echo(a, b, p) == 2.0);
  CHECK(predict_echo(a, c, p) == predict_echo(c, a, p));
  UwbParams biased;
  CHECK(biased.bias == -0.75);
  CHECK(predict_echo(a, b, biased) == predict_echo(a, b, p) - 0.75);
  CHECK_THROWS_AS(predict_echo(a, a, p), std::invalid_argument);
}

TEST_CASE("squared range Jacobian structure") {
  std::mt19937_64 rng(1);
  UwbParams p;
  for (int i = 0; i < 50; ++i) {
    const Mat3 R = so3_exp(gauss3(rng, 1.0));
    const auto J = squared_range_jacobians(R, gauss3(rng, 3.0), gauss3(rng, 5.0), p);
    REQUIRE(J.has_value());
    CHECK(J->d_pos == -J->d_anchor);
    CHECK(J->d_theta.isZero(0));
  }
  p.lever_arm = Vec3(0.1, 0, 0);
  const Vec3 node = ranging_node(Mat3::Identity(), Vec3::Zero(), p);
  CHECK_FALSE(squared_range_jacobians(Mat3::Identity(), Vec3::Zero(), node, p).has_value());
}

TEST_CASE("range and echo rows match finite differences through the retraction") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    UwbParams p;
    p.lever_arm = gauss3(rng, 0.2);
    std::vector<AnchorState> anchors;
    for (int a = 0; a < 3; ++a) {
      anchors.push_back({10 + a, Vec3(u(rng), u(rng), u(rng)) * 10.0});
    }
    FilterState s = state_with_anchors(rng, anchors);
    const auto cols = ranging_columns(s);
    REQUIRE(cols.size() == 15);
    for (int a = 0; a < 3; ++a) {
      const auto row = range_row(s, RangeMeasurement{0.0, 10 + a, 0.0}, p, false);
      REQUIRE(row.has_value());
      for (std::size_t c = 0; c < cols.size(); ++c) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(s.dim());
        d(cols[c]) = h;
        FilterState sp = s, sm = s;
        apply_correction(sp, d);
        apply_correction(sm, -d);
        const double fd = (squared_unbiased(sp, a, p) - squared_unbiased(sm, a, p)) / (2 * h);
        const double ana = row->h(static_cast<Eigen::Index>(c));
        CHECK(std::abs(fd - ana) <= 1e-5 * std::max(1.0, std::abs(ana)));
      }
    }
    const auto echo = echo_row(s, EchoMeasurement{0.0, 10, 12, 0.0}, p, false);
    REQUIRE(echo.has_value());
    CHECK(echo->h.head<12>().segment<3>(3).isZero(0)); // anchor 11 untouched
    CHECK(echo->h.head<6>().isZero(0));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(s.dim());
      d(cols[c]) = h;
      FilterState sp = s, sm = s;
      apply_correction(sp, d);
      apply_correction(sm, -d);
      const double fd = ((sp.anchors[0].p - sp.anchors[2].p).squaredNorm() -
                         (sm.anchors[0].p - sm.anchors[2].p).squaredNorm()) /
                        (2 * h);
      const double ana = echo->h(static_cast<Eigen::Index>(c));
      CHECK(std::abs(fd - ana) <= 1e-5 * std::max(1.0, std::abs(ana)));
    }
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("echo Jacobians") {
  const auto J = echo_jacobians(Vec3(1, 2, 3), Vec3(-2, 0.5, 4));
  REQUIRE(J.has_value());
  CHECK((J->d_anchor_i + J->d_anchor_j).isZero(0));
  const auto Z = echo_jacobians(Vec3(1, 2, 3), Vec3(1, 2, -1));
  REQUIRE(Z.has_value());
  CHECK(Z->d_anchor_i(0) == 0.0);
  CHECK(Z->d_anchor_i(1) == 0.0);
  CHECK(Z->d_anchor_i(2) != 0.0);
  CHECK_FALSE(echo_jacobians(Vec3(1, 1, 1), Vec3(1, 1, 1)).has_value());
}

TEST_CASE("interpolation") {
  UwbParams p;
  const RangeMeasurement a{1.0, 0, 4.0}, b{1.02, 0, 5.0};
  CHECK(*interpolate_range(a, b, 1.0, p) == 4.0);
  CHECK(*interpolate_range(a, b, 1.01, p) == doctest::Approx(4.5));
  const RangeMeasurement far{1.0 + p.sync_threshold + 0.02, 0, 5.0};
  // t_beta - t_k = threshold + 1e-9.
  CHECK_FALSE(interpolate_range(a, far, far.stamp - p.sync_threshold - 1e-9, p).has_value());
  CHECK(interpolate_range(a, far, far.stamp - p.sync_threshold + 1e-9, p).has_value());
  CHECK_THROWS(interpolate_range(a, RangeMeasurement{1.02, 1, 5.0}, 1.01, p));
  CHECK_THROWS(interpolate_range(b, a, 1.01, p));
  CHECK_THROWS(interpolate_range(a, b, 1.5, p));

  const EchoMeasurement e1{0.0, 0, 1, 10.0}, e2{0.01, 0, 1, 10.5};
  CHECK(*interpolate_echo(e1, e2, 0.005, p) == doctest::Approx(10.25));
  CHECK_THROWS(interpolate_echo(e1, EchoMeasurement{0.01, 0, 2, 10.0}, 0.005, p));

  std::vector<RangeMeasurement> ranges;
  for (int j = 0; j < 60; ++j) {
    ranges.push_back({j / 60.0, 0, 3.0 + j / 60.0});
    if (j < 30) {
      ranges.push_back({j / 60.0, 1, 7.0});
    }
  }
  const UwbStreams streams(ranges, {});
  const auto at = streams.ranges_at(0.25, p);
  REQUIRE(at.size() == 2);
  CHECK(at[0].distance == doctest::Approx(3.25));
  CHECK(streams.ranges_at(0.8, p).size() == 1); // anchor 1 stopped at 0.483 s
  CHECK(streams.anchor_ids() == std::vector<int>{0, 1});
}

TEST_CASE("squared-range noise variance") {
  std::mt19937_64 rng(9);
  const double sigma = 0.15, bias = -0.75, d_true = 8.0;
  std::normal_distribution<double> n(0.0, sigma);
  const int N = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < N; ++i) {
    const double z = d_true + bias + n(rng);
    const double sq = (z - bias) * (z - bias);
    sum += sq;
    sum2 += sq * sq;
  }
  const double var = sum2 / N - (sum / N) * (sum / N);
  const double predicted = std::pow(2.0 * d_true * sigma, 2);
  CHECK(var == doctest::Approx(predicted).epsilon(0.05));

  FilterState s;
  {
    std::mt19937_64 r2(1);
    s = state_with_anchors(r2, {{0, Vec3(5, 5, 5)}});
  }
  UwbParams p;
  const double d_hat = predict_range(s.imu.rot(), s.imu.p, s.anchors[0].p, p) - p.bias;
  const auto row = range_row(s, RangeMeasurement{0.0, 0, d_hat + p.bias}, p, false);
  REQUIRE(row.has_value());
  CHECK(row->variance == doctest::Approx(std::pow(2 * d_hat * p.sigma_range, 2)));
  CHECK(std::abs(row->residual) < 1e-10);
}

TEST_CASE("ranging update") {
  std::mt19937_64 rng(5);
  const std::vector<AnchorState> anchors = {{0, Vec3(8, -6, 3)}, {1, Vec3(-8, -5, 0.5)}, {2, Vec3(1, 7, 2.5)}};
  UwbParams p;
  p.lever_arm = Vec3(0.05, 0, 0.1);

  SUBCASE("zero residuals give zero correction") {
    FilterState s = state_with_anchors(rng, anchors);
    const FilterState before = s;
    std::vector<RangeMeasurement> m;
    for (const auto &a : anchors) {
      m.push_back({0.0, a.id, predict_range(s.imu.rot(), s.imu.p, a.p, p)});
    }
    std::vector<EchoMeasurement> e = {{0.0, 0, 1, predict_echo(anchors[0], anchors[1], p)}};
    const auto stats = ranging_update(s, m, e, p);
    CHECK(stats.used == 4);
    CHECK((s.imu.p - before.imu.p).norm() < 1e-9);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK((s.anchors[i].p - before.anchors[i].p).norm() < 1e-9);
    }
  }

  SUBCASE("anchor covariance shrinks on a static pose") {
    FilterState s = state_with_anchors(rng, anchors, 0.1);
    std::normal_distribution<double> n(0.0, p.sigma_range);
    double trace = s.cov.block(15, 15, 9, 9).trace();
    const ImuState truth = s.imu;
    for (int k = 0; k < 200; ++k) {
      std::vector<RangeMeasurement> m;
      for (const auto &a : anchors) {
        m.push_back({0.0, a.id, predict_range(truth.rot(), truth.p, a.p, p) + n(rng)});
      }
      ranging_update(s, m, {}, p);
      const double t = s.cov.block(15, 15, 9, 9).trace();
      CHECK(t <= trace + 1e-15);
      trace = t;
      CHECK(covariance_valid(s.cov));
    }
  }

  SUBCASE("first-estimate rows are frozen") {
    FilterState s = state_with_anchors(rng, anchors);
    const RangeMeasurement m{0.0, 1, 12.0};
    const auto r1 = range_row(s, m, p, true);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(s.dim());
    d.setConstant(0.01);
    apply_correction(s, d);
    const auto r2 = range_row(s, m, p, true);
    const auto r3 = range_row(s, m, p, false);
    REQUIRE((r1 && r2 && r3));
    CHECK(r1->h == r2->h);
    CHECK(r1->h != r3->h);
    const EchoMeasurement e{0.0, 0, 2, 9.0};
    const auto e1 = echo_row(s, e, p, true);
    apply_correction(s, d);
    CHECK(echo_row(s, e, p, true)->h == e1->h);
  }

  SUBCASE("rows follow the anchor order of the state") {
    FilterState a = state_with_anchors(rng, anchors);
    std::mt19937_64 same(5);
    FilterState b = a;
    // Same state with the anchor blocks stored in reverse order.
    const std::vector<AnchorState> rev = {anchors[2], anchors[1], anchors[0]};
    b.anchors = rev;
    Eigen::MatrixXd P = a.cov;
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(a.dim(), a.dim());
    for (Eigen::Index i = 0; i < A.size(); ++i) {
      A.data()[i] = n(same) * 0.02;
    }
    P = P + A * A.transpose();
    a.cov = P;
    Eigen::VectorXi perm(a.dim());
    for (int i = 0; i < 15; ++i) {
      perm(i) = i;
    }
    for (int k = 0; k < 3; ++k) {
      for (int j = 0; j < 3; ++j) {
        perm(15 + 3 * k + j) = 15 + 3 * (2 - k) + j; // b index -> a index
      }
    }
    Eigen::MatrixXd Pb(a.dim(), a.dim());
    for (Eigen::Index i = 0; i < a.dim(); ++i)
      for (Eigen::Index j = 0; j < a.dim(); ++j)
        Pb(i, j) = P(perm(i), perm(j));
    b.cov = Pb;
    b.fej = a.fej;
    std::vector<RangeMeasurement> m = {{0.0, 0, 14.0}, {0.0, 1, 9.0}, {0.0, 2, 11.0}};
    std::vector<EchoMeasurement> e = {{0.0, 0, 1, 16.2}};
    RangingUpdateOptions opts{false, 1.0 - 1e-12};
    ranging_update(a, m, e, p, opts);
    ranging_update(b, m, e, p, opts);
    CHECK((a.imu.p - b.imu.p).norm() < 1e-10);
    for (int k = 0; k < 3; ++k) {
      CHECK((a.anchors[static_cast<std::size_t>(k)].p - b.anchors[static_cast<std::size_t>(2 - k)].p).norm() < 1e-10);
    }
    for (Eigen::Index i = 0; i < a.dim(); ++i)
      for (Eigen::Index j = 0; j < a.dim(); ++j)
        CHECK(std::abs(b.cov(i, j) - a.cov(perm(i), perm(j))) < 1e-10);
  }

  SUBCASE("no anchors") {
    FilterState s = make_filter_state(ImuState{}, Matrix15::Identity(), 0.0, Vec3(0, 0, 9.81));
    CHECK_THROWS_AS(ranging_update(s, {}, {}, p), std::logic_error);
  }
}

TEST_CASE("gate rejection rate at the true state") {
  std::mt19937_64 rng(13);
  const std::vector<AnchorState> anchors = {{0, Vec3(8, -6, 3)}, {1, Vec3(-8, -5, 0.5)}, {2, Vec3(1, 7, 2.5)}};
  UwbParams p;
  p.lever_arm = Vec3(0.05, 0, 0.1);
  std::normal_distribution<double> n(0.0, p.sigma_range);
  FilterState s = state_with_anchors(rng, anchors, 1e-6);
  const auto cols = ranging_columns(s);
  const double gate = chi2_quantile(1);
  int rejected = 0;
  const int N = 10000;
  for (int i = 0; i < N; ++i) {
    const auto &a = anchors[static_cast<std::size_t>(i % 3)];
    const RangeMeasurement m{0.0, a.id, predict_range(s.imu.rot(), s.imu.p, a.p, p) + n(rng)};
    const auto row = range_row(s, m, p, false);
    REQUIRE(row.has_value());
    const double d2 = mahalanobis(s, cols, row->h, Eigen::VectorXd::Constant(1, row->residual),
                                  Eigen::MatrixXd::Constant(1, 1, row->variance));
    rejected += d2 > gate ? 1 : 0;
  }
  CHECK(rejected < 0.055 * N);
}
