#pragma once

#include <span>
#include <vector>

#include "viro/state.hpp"

namespace viro {

struct ImuSample {
  double stamp = 0.0;
  Vec3 omega_m = Vec3::Zero(); // rad/s
  Vec3 accel_m = Vec3::Zero(); // m/s^2
};

/// Continuous-time noise densities.
struct NoiseParams {
  double gyro_white = 1.7e-4;  // rad/s/sqrt(Hz)
  double gyro_walk = 2.0e-5;   // rad/s^2/sqrt(Hz)
  double accel_white = 2.0e-3; // m/s^2/sqrt(Hz)
  double accel_walk = 3.0e-3;  // m/s^3/sqrt(Hz)

  void validate() const;
};

/// Where the transition matrix takes its linearization point.
enum class Linearization { Current, FirstEstimate };

struct Transition {
  Matrix15 phi = Matrix15::Identity(); // inertial block; identity on every other block
  Matrix15 qd = Matrix15::Zero();
  ImuState end;                        // propagated mean at the last sample stamp
};

/**
 * Mean integration with zero-order hold: sample i drives [t_i, t_{i+1}].
 *
 * Attitude is integrated in closed form, velocity and position with RK4.
 * Requires at least two samples with strictly increasing stamps.
 */
ImuState integrate_imu(const ImuState &start, std::span<const ImuSample> samples, const Vec3 &gravity);

/// Advances the inertial block; every other block is left untouched.
void propagate_mean(FilterState &state, std::span<const ImuSample> samples);

/**
 * Inertial transition matrix and discrete noise over `samples`, starting at `lin`.
 *
 * Each interval contributes the exact Jacobian of the discrete integration step.
 * When `fej_start` is given, the orientation column is rebuilt in closed form from
 * the first estimate at the interval start and the propagated end, so that
 * transitions over consecutive intervals compose into the transition over their union.
 */
Transition compute_phi_qd(const ImuState &lin, std::span<const ImuSample> samples, const NoiseParams &noise,
                          const Vec3 &gravity, const ImuState *fej_start = nullptr);

/// Closed-form orientation column (phi_11, phi_31, phi_51) between two inertial linearization points.
void orientation_column(const ImuState &start, const ImuState &end, double dt, const Vec3 &gravity, Matrix15 &phi);

/// P <- Phi P Phi^T + Qd, with Phi the identity outside the inertial block.
void propagate_covariance(FilterState &state, const Matrix15 &phi, const Matrix15 &qd);

/// Mean, transition and covariance in one step; records the new inertial first estimate.
Transition propagate(FilterState &state, std::span<const ImuSample> samples, const NoiseParams &noise,
                     Linearization lin);

/**
 * Samples covering [t0, t1] from a time-ordered stream, with boundary samples
 * inserted at t0 and t1 under zero-order hold.
 */
std::vector<ImuSample> imu_window(std::span<const ImuSample> stream, double t0, double t1);

} // namespace viro
