#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include "spheroview/error.hpp"

namespace spheroview::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

/// Local parameterization of a pose: (rotation vector [rad], translation [m]).
using Twist = Eigen::Matrix<double, 6, 1>;

class ParameterizationSingularity : public Error {
 public:
  ParameterizationSingularity() : Error("parameterization singularity") {}
};

/// Rigid transform in SE(3). The quaternion is kept unit-norm with w >= 0 so
/// that equal rotations compare equal.
class Pose {
 public:
  Pose() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
  Pose(const Quat& q, const Vec3& t);

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Quat::Identity(), t}; }
  static Pose from_rotation(const Quat& q) { return {q, Vec3::Zero()}; }
  static Pose from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t = Vec3::Zero());

  const Quat& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }

  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  Mat4 matrix() const;

  /// Transforms a point.
  Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }
  Pose operator*(const Pose& other) const;

 private:
  Quat q_;
  Vec3 t_;
};

/// Result transforms points as `a` applied after `b`.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Linear translation, shortest-arc slerp rotation. s in [0, 1].
Pose interpolate(const Pose& a, const Pose& b, double s);

Quat so3_exp(const Vec3& omega);
/// Rotation vector of q, angle in [0, pi].
Vec3 so3_log(const Quat& q);

Pose exp_map(const Twist& xi);
/// Throws ParameterizationSingularity when the rotation angle is within 1e-6 of pi.
Twist log_map(const Pose& p);

/// Rotation angle of q in [0, pi].
double rotation_angle(const Quat& q);
double angular_distance(const Pose& a, const Pose& b);
double translation_distance(const Pose& a, const Pose& b);

/// Quaternion normalized and sign-canonicalized (w >= 0).
Quat canonical(const Quat& q);

void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);

}  // namespace spheroview::geom
