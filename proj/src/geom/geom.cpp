#include "spheroview/geom.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

namespace spheroview::geom {

namespace {

constexpr double kSmallAngle = 1e-8;

}  // namespace

Quat canonical(const Quat& q) {
  // Leave unit quaternions bit-identical so composing with the identity is exact.
  Quat n = std::abs(q.squaredNorm() - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? q : q.normalized();
  bool flip = n.w() < 0.0;
  if (n.w() == 0.0) {
    // 180 degree rotation: make the first non-zero vector component positive.
    for (int i = 0; i < 3; ++i) {
      if (n.vec()[i] != 0.0) {
        flip = n.vec()[i] < 0.0;
        break;
      }
    }
  }
  if (flip) n.coeffs() = -n.coeffs();
  return n;
}

Pose::Pose(const Quat& q, const Vec3& t) : q_(canonical(q)), t_(t) {}

Pose Pose::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t) {
  return {Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())), t};
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = q_.toRotationMatrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Pose Pose::operator*(const Pose& other) const { return compose(*this, other); }

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

Pose inverse(const Pose& p) {
  const Quat qi = p.rotation().conjugate();
  return {qi, -(qi * p.translation())};
}

Quat so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    // Second-order Taylor expansion keeps exp(log(q)) exact near identity.
    const Vec3 half = 0.5 * omega;
    return Quat(1.0 - theta * theta / 8.0, half.x(), half.y(), half.z()).normalized();
  }
  const double s = std::sin(0.5 * theta) / theta;
  return Quat(std::cos(0.5 * theta), s * omega.x(), s * omega.y(), s * omega.z());
}

Vec3 so3_log(const Quat& q) {
  const Quat c = canonical(q);
  const double vn = c.vec().norm();
  if (vn < kSmallAngle) return 2.0 * c.vec() / c.w();
  const double theta = 2.0 * std::atan2(vn, c.w());
  return c.vec() * (theta / vn);
}

double rotation_angle(const Quat& q) {
  const Quat c = canonical(q);
  return 2.0 * std::atan2(c.vec().norm(), c.w());
}

Pose interpolate(const Pose& a, const Pose& b, double s) {
  if (s <= 0.0) return a;
  if (s >= 1.0) return b;
  Quat rel = a.rotation().conjugate() * b.rotation();
  if (rel.w() < 0.0) rel.coeffs() = -rel.coeffs();
  const Quat q = a.rotation() * so3_exp(s * so3_log(rel));
  return {q, (1.0 - s) * a.translation() + s * b.translation()};
}

Pose exp_map(const Twist& xi) {
  return {so3_exp(xi.head<3>()), xi.tail<3>()};
}

Twist log_map(const Pose& p) {
  if (rotation_angle(p.rotation()) > std::numbers::pi - 1e-6) throw ParameterizationSingularity();
  Twist xi;
  xi.head<3>() = so3_log(p.rotation());
  xi.tail<3>() = p.translation();
  return xi;
}

double angular_distance(const Pose& a, const Pose& b) {
  return rotation_angle(a.rotation().conjugate() * b.rotation());
}

double translation_distance(const Pose& a, const Pose& b) {
  return (a.translation() - b.translation()).norm();
}

void to_json(nlohmann::json& j, const Pose& p) {
  const Quat& q = p.rotation();
  const Vec3& t = p.translation();
  j = nlohmann::json{{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

void from_json(const nlohmann::json& j, Pose& p) {
  const auto& q = j.at("q");
  const auto& t = j.at("t");
  if (!q.is_array() || q.size() != 4 || !t.is_array() || t.size() != 3)
    throw InvalidArgument("pose JSON needs q:[w,x,y,z] and t:[x,y,z]");
  const Quat quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  if (quat.norm() < 1e-12) throw InvalidArgument("pose JSON has a zero quaternion");
  p = Pose(quat, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>()));
}

}  // namespace spheroview::geom
