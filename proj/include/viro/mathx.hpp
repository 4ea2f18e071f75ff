#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace viro {

template <typename Scalar> using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec3 = Vector3<double>;
using Mat3 = Matrix3<double>;
using Vec2 = Eigen::Vector2d;

/// Rotations below this angle (rad) take the Taylor branch.
inline constexpr double kSmallAngle = 1e-8;

/**
 * Unit quaternion in JPL convention, stored as (x, y, z, w).
 *
 * A quaternion q represents the passive rotation ^I_G R that maps vectors
 * expressed in the global frame into the IMU frame. Only quat_to_rot and
 * rot_to_quat interpret the components; everything else in the library works
 * with rotation matrices.
 */
template <typename Scalar> class UnitQuaternion {
public:
  using Coeffs = Eigen::Matrix<Scalar, 4, 1>;

  UnitQuaternion() : coeffs_(0, 0, 0, 1) {}
  UnitQuaternion(Scalar x, Scalar y, Scalar z, Scalar w) : coeffs_(x, y, z, w) {}
  explicit UnitQuaternion(const Coeffs &c) : coeffs_(c) {}

  static UnitQuaternion identity() { return UnitQuaternion(); }

  Scalar x() const { return coeffs_(0); }
  Scalar y() const { return coeffs_(1); }
  Scalar z() const { return coeffs_(2); }
  Scalar w() const { return coeffs_(3); }
  const Coeffs &coeffs() const { return coeffs_; }

  Scalar norm() const { return coeffs_.norm(); }
  UnitQuaternion normalized() const { return UnitQuaternion(Coeffs(coeffs_ / coeffs_.norm())); }
  UnitQuaternion operator-() const { return UnitQuaternion(Coeffs(-coeffs_)); }

private:
  Coeffs coeffs_;
};

using Quat = UnitQuaternion<double>;

/// Cross-product matrix: skew(v) * w == v.cross(w).
template <typename Derived>
Matrix3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived> &v) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  Matrix3<S> m;
  m << S(0), -v(2), v(1), v(2), S(0), -v(0), -v(1), v(0), S(0);
  return m;
}

/// Rodrigues exponential, exp(skew(theta)).
template <typename Derived>
Matrix3<typename Derived::Scalar> so3_exp(const Eigen::MatrixBase<Derived> &theta) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  const Matrix3<S> K = skew(theta);
  if (angle < S(kSmallAngle)) {
    return Matrix3<S>::Identity() + K + S(0.5) * K * K;
  }
  const S a = std::sin(angle) / angle;
  const S b = (S(1) - std::cos(angle)) / (angle * angle);
  return Matrix3<S>::Identity() + a * K + b * K * K;
}

/// Inverse of so3_exp for rotation angles in [0, pi].
template <typename Derived>
Vector3<typename Derived::Scalar> so3_log(const Eigen::MatrixBase<Derived> &R) {
  using S = typename Derived::Scalar;
  const Vector3<S> vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const S cos_angle = std::clamp((R.trace() - S(1)) / S(2), S(-1), S(1));
  const S angle = std::acos(cos_angle);
  if (angle < S(kSmallAngle)) {
    return S(0.5) * vee;
  }
  if (S(M_PI) - angle < S(1e-6)) {
    // Near a half turn the antisymmetric part vanishes; recover the axis from the symmetric part.
    const Matrix3<S> B = (R + Matrix3<S>::Identity()) / S(2);
    Eigen::Index k = 0;
    B.diagonal().maxCoeff(&k);
    Vector3<S> axis = B.col(k) / std::sqrt(B(k, k));
    axis.normalize();
    if (axis.dot(vee) < S(0)) {
      axis = -axis;
    }
    return angle * axis;
  }
  return angle / (S(2) * std::sin(angle)) * vee;
}

/// Left Jacobian of SO(3): exp(phi + d) ~= exp(J_l(phi) d) exp(phi).
template <typename Derived>
Matrix3<typename Derived::Scalar> so3_left_jacobian(const Eigen::MatrixBase<Derived> &phi) {
  using S = typename Derived::Scalar;
  const S angle = phi.norm();
  const Matrix3<S> K = skew(phi);
  if (angle < S(kSmallAngle)) {
    return Matrix3<S>::Identity() + S(0.5) * K + K * K / S(6);
  }
  const S a2 = angle * angle;
  return Matrix3<S>::Identity() + (S(1) - std::cos(angle)) / a2 * K + (angle - std::sin(angle)) / (a2 * angle) * K * K;
}

/**
 * Rotation matrix ^I_G R of a JPL unit quaternion.
 *
 * For q = (sin(a/2) k, cos(a/2)) this yields exp(-a skew(k)), the frame
 * rotation by angle a about axis k.
 */
template <typename Scalar> Matrix3<Scalar> quat_to_rot(const UnitQuaternion<Scalar> &q) {
  if (std::abs(q.norm() - Scalar(1)) > Scalar(1e-6)) {
    throw std::invalid_argument("quat_to_rot: quaternion is not unit norm");
  }
  const UnitQuaternion<Scalar> u = q.normalized();
  const Vector3<Scalar> v(u.x(), u.y(), u.z());
  const Scalar w = u.w();
  return (Scalar(2) * w * w - Scalar(1)) * Matrix3<Scalar>::Identity() - Scalar(2) * w * skew(v) +
         Scalar(2) * v * v.transpose();
}

/// JPL quaternion of a rotation matrix; the returned quaternion has w >= 0.
template <typename Derived>
UnitQuaternion<typename Derived::Scalar> rot_to_quat(const Eigen::MatrixBase<Derived> &R) {
  using S = typename Derived::Scalar;
  // The JPL matrix of q equals the Hamilton matrix of the conjugate quaternion.
  const Eigen::Quaternion<S> h(Matrix3<S>(R.transpose()));
  UnitQuaternion<S> q(h.x(), h.y(), h.z(), h.w());
  if (q.w() < S(0)) {
    q = -q;
  }
  return q.normalized();
}

/// JPL product; quat_to_rot(a * b) == quat_to_rot(a) * quat_to_rot(b).
template <typename Scalar>
UnitQuaternion<Scalar> operator*(const UnitQuaternion<Scalar> &a, const UnitQuaternion<Scalar> &b) {
  return rot_to_quat(Matrix3<Scalar>(quat_to_rot(a) * quat_to_rot(b)));
}

/// JPL quaternion for a frame rotation of `angle` about unit `axis`.
template <typename Derived>
UnitQuaternion<typename Derived::Scalar> quat_from_axis_angle(const Eigen::MatrixBase<Derived> &axis,
                                                              typename Derived::Scalar angle) {
  using S = typename Derived::Scalar;
  const Vector3<S> k = axis.normalized();
  const S s = std::sin(angle / S(2));
  return UnitQuaternion<S>(k(0) * s, k(1) * s, k(2) * s, std::cos(angle / S(2)));
}

} // namespace viro
