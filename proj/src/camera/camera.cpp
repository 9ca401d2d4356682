#include "spheroview/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

namespace spheroview::camera {

void DoubleSphereIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("intrinsics: fx and fy must be positive");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("intrinsics: alpha must lie in [0, 1)");
  if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be positive");
}

double DoubleSphereIntrinsics::validity_w2() const {
  const double w1 = alpha <= 0.5 ? alpha / (1.0 - alpha) : (1.0 - alpha) / alpha;
  return (w1 + xi) / std::sqrt(2.0 * w1 * xi + xi * xi + 1.0);
}

Projection project(const Vec3& p, const DoubleSphereIntrinsics& k) {
  const double d1 = p.norm();
  if (d1 == 0.0) throw DegeneratePoint();
  Projection out;
  double u = 0.0;
  double v = 0.0;
  out.valid = project_kernel(p.x(), p.y(), p.z(), d1, k.fx, k.fy, k.cx, k.cy, k.xi, k.alpha,
                             k.validity_w2(), u, v);
  out.pixel = {u, v};
  if (!std::isfinite(u) || !std::isfinite(v)) out.valid = false;
  return out;
}

Unprojection unproject(const Vec2& px, const DoubleSphereIntrinsics& k) {
  const double mx = (px.x() - k.cx) / k.fx;
  const double my = (px.y() - k.cy) / k.fy;
  const double r2 = mx * mx + my * my;
  Unprojection out;
  if (k.alpha > 0.5 && r2 > 1.0 / (2.0 * k.alpha - 1.0)) return out;

  const double a = k.alpha;
  const double mz = (1.0 - a * a * r2) / (a * std::sqrt(1.0 - (2.0 * a - 1.0) * r2) + 1.0 - a);
  const double disc = mz * mz + (1.0 - k.xi * k.xi) * r2;
  if (disc < 0.0) return out;
  const double scale = (mz * k.xi + std::sqrt(disc)) / (mz * mz + r2);
  const Vec3 dir(scale * mx, scale * my, scale * mz - k.xi);
  const double n = dir.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return out;
  out.direction = dir / n;
  out.valid = true;
  return out;
}

namespace {

bool horizontal_direction_visible(double theta, const DoubleSphereIntrinsics& k) {
  const Projection p = project(Vec3(std::sin(theta), 0.0, std::cos(theta)), k);
  return p.valid && p.pixel.x() >= 0.0 && p.pixel.x() <= static_cast<double>(k.width);
}

// Largest angle in [0, pi] on one side (sign = +1 right, -1 left) that stays visible.
double visible_extent(const DoubleSphereIntrinsics& k, double sign) {
  constexpr int kScanSteps = 36000;
  const double step = std::numbers::pi / kScanSteps;
  double lo = 0.0;
  int i = 1;
  for (; i <= kScanSteps; ++i) {
    if (!horizontal_direction_visible(sign * i * step, k)) break;
    lo = i * step;
  }
  if (i > kScanSteps) return std::numbers::pi;
  double hi = i * step;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (horizontal_direction_visible(sign * mid, k) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

double fov_check(const DoubleSphereIntrinsics& k) {
  k.validate();
  if (!horizontal_direction_visible(0.0, k)) return 0.0;
  return visible_extent(k, 1.0) + visible_extent(k, -1.0);
}

StereoRig default_rig() {
  DoubleSphereIntrinsics k;
  k.fx = 300.0;
  k.fy = 300.0;
  k.cx = 640.0;
  k.cy = 480.0;
  k.xi = -0.2;
  k.alpha = 0.59;
  k.width = 1280;
  k.height = 960;
  return {k, k, geom::Pose::from_translation({0.064, 0.0, 0.0})};
}

DoubleSphereIntrinsics scale_intrinsics(const DoubleSphereIntrinsics& k, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("intrinsics scale must be positive");
  DoubleSphereIntrinsics s = k;
  s.fx = k.fx * scale;
  s.fy = k.fy * scale;
  s.cx = (k.cx + 0.5) * scale - 0.5;
  s.cy = (k.cy + 0.5) * scale - 0.5;
  s.width = std::max(1, static_cast<int>(std::lround(k.width * scale)));
  s.height = std::max(1, static_cast<int>(std::lround(k.height * scale)));
  return s;
}

void to_json(nlohmann::json& j, const DoubleSphereIntrinsics& k) {
  j = nlohmann::json{{"fx", k.fx},     {"fy", k.fy},       {"cx", k.cx},         {"cy", k.cy},
                     {"xi", k.xi},     {"alpha", k.alpha}, {"width", k.width}, {"height", k.height}};
}

void from_json(const nlohmann::json& j, DoubleSphereIntrinsics& k) {
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.xi = j.at("xi").get<double>();
  k.alpha = j.at("alpha").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
}

void to_json(nlohmann::json& j, const StereoRig& rig) {
  j = nlohmann::json{{"schema", 1}, {"left", rig.left}, {"right", rig.right}, {"t_l_r", rig.t_l_r}};
}

void from_json(const nlohmann::json& j, StereoRig& rig) {
  rig.left = j.at("left").get<DoubleSphereIntrinsics>();
  rig.right = j.at("right").get<DoubleSphereIntrinsics>();
  rig.t_l_r = j.at("t_l_r").get<geom::Pose>();
}

StereoRig load_rig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open rig file " + path.string());
  try {
    return nlohmann::json::parse(in).get<StereoRig>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("rig file " + path.string() + ": " + e.what());
  }
}

}  // namespace spheroview::camera
