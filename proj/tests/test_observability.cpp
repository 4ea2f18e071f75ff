#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viro/harness.hpp"
#include "viro/observability.hpp"

using namespace viro;

namespace {

ObsConfig config_for(const SimConfig &sim) {
  ObsConfig cfg;
  cfg.ext = sim.ext;
  cfg.lever_arm = sim.uwb.lever_arm;
  return cfg;
}

double gap(const ObservabilityReport &r, int keep) {
  return r.singular_values(keep - 1) / std::max(r.singular_values(keep), 1e-300);
}

} // namespace

TEST_CASE("null-space candidates") {
  AnalysisState x;
  x.anchor1 = Vec3(1, 2, 3);
  Eigen::Matrix<double, kAnalysisDim, 3> N1;
  Eigen::Matrix<double, kAnalysisDim, 1> N2;
  nullspace_candidates(x, Vec3(0, 0, 9.81), N1, N2);
  for (int i = 0; i < 3; ++i) {
    CHECK(N1.col(i).norm() == doctest::Approx(2.0)); // four unit blocks
    for (int j = i + 1; j < 3; ++j) {
      CHECK(N1.col(i).dot(N1.col(j)) == 0.0);
    }
  }
  AnalysisState zero;
  nullspace_candidates(zero, Vec3(0, 0, 9.81), N1, N2);
  Eigen::Matrix<double, kAnalysisDim, 1> expected = Eigen::Matrix<double, kAnalysisDim, 1>::Zero();
  expected.segment<3>(kTheta) = Vec3(0, 0, 9.81);
  CHECK(N2 == expected);
}

TEST_CASE("ideal, actual and first-estimate observability on the default trajectories") {
  for (TrajectoryKind kind : {TrajectoryKind::FigureEight, TrajectoryKind::Circle, TrajectoryKind::Waypoints}) {
    CAPTURE(trajectory_name(kind));
    const SimConfig sim = default_sim(kind);
    const ObsTrajectory traj = obs_trajectory(sim, 50);
    const ObsConfig cfg = config_for(sim);

    const ObservabilityReport ideal = build_observability_matrix(traj, ObsMode::Ideal, cfg);
    CHECK(ideal.O.rows() == 250);
    CHECK(ideal.residual_n1.maxCoeff() < 1e-8);
    CHECK(ideal.residual_n2 < 1e-8);
    CHECK(ideal.rank == 20);
    CHECK(gap(ideal, 20) >= 1e6);

    // Every step's range and echo rows annihilate the yaw direction on their own.
    Eigen::Matrix<double, kAnalysisDim, 3> N1;
    Eigen::Matrix<double, kAnalysisDim, 1> N2;
    nullspace_candidates(traj.truth.front(), cfg.gravity, N1, N2);
    const Eigen::VectorXd ON = ideal.O * N2;
    const double scale = ideal.O.norm() * N2.norm();
    for (int k = 0; k < 50; ++k) {
      CHECK(std::abs(ON(5 * k + 2)) < 1e-8 * scale);
      CHECK(std::abs(ON(5 * k + 3)) < 1e-8 * scale);
      CHECK(std::abs(ON(5 * k + 4)) < 1e-8 * scale);
    }

    const ObservabilityReport actual = build_observability_matrix(traj, ObsMode::Actual, cfg);
    CHECK(actual.residual_n1.maxCoeff() < 1e-8);
    CHECK(actual.residual_n2 > 1e-3);
    CHECK(actual.rank == 21);

    const ObservabilityReport fej = fej_restoration_check(traj, cfg);
    CHECK(fej.mode == ObsMode::Fej);
    CHECK(fej.residual_n1.maxCoeff() < 1e-8);
    CHECK(fej.residual_n2 < 1e-8);
    CHECK(fej.rank == 20);
  }
}

TEST_CASE("actual mode without estimation error is ideal") {
  const SimConfig sim = default_sim(TrajectoryKind::FigureEight);
  const ObsTrajectory traj = obs_trajectory(sim, 50);
  ObsConfig cfg = config_for(sim);
  cfg.sigma_pos = 0.0;
  cfg.sigma_rot = 0.0;
  const ObservabilityReport r = build_observability_matrix(traj, ObsMode::Actual, cfg);
  CHECK(r.residual_n1.maxCoeff() < 1e-8);
  CHECK(r.residual_n2 < 1e-8);
  CHECK(r.rank == 20);
}

TEST_CASE("spurious yaw information grows with the estimation error") {
  const SimConfig sim = default_sim(TrajectoryKind::FigureEight);
  const ObsTrajectory traj = obs_trajectory(sim, 50);
  double previous = 0.0;
  for (double sigma : {1e-3, 1e-2, 1e-1}) {
    ObsConfig cfg = config_for(sim);
    cfg.sigma_pos = sigma;
    cfg.sigma_rot = sigma / 5.0;
    const ObservabilityReport r = build_observability_matrix(traj, ObsMode::Actual, cfg);
    CAPTURE(sigma);
    CHECK(r.residual_n2 > previous);
    previous = r.residual_n2;
  }
}

TEST_CASE("degenerate inputs") {
  const SimConfig sim = default_sim(TrajectoryKind::Circle);
  ObsTrajectory traj = obs_trajectory(sim, 50);
  traj.truth.resize(5);
  traj.stamps.resize(5);
  CHECK_THROWS_AS(build_observability_matrix(traj, ObsMode::Ideal, config_for(sim)), std::invalid_argument);
}

TEST_CASE("report row") {
  const SimConfig sim = default_sim(TrajectoryKind::Circle);
  const ObservabilityReport r = build_observability_matrix(obs_trajectory(sim, 20), ObsMode::Ideal, config_for(sim));
  const std::string row = obs_report_row("circle", r);
  CHECK(row.rfind("circle,ideal,20,20,", 0) == 0);
  const std::string header = obs_report_header();
  CHECK(std::count(row.begin(), row.end(), ',') == std::count(header.begin(), header.end(), ','));
}
