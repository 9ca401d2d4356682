#pragma once

#include <cmath>
#include <filesystem>

#include <nlohmann/json_fwd.hpp>

#include "spheroview/error.hpp"
#include "spheroview/geom.hpp"

namespace spheroview::camera {

using geom::Vec2;
using geom::Vec3;

class DegeneratePoint : public Error {
 public:
  DegeneratePoint() : Error("degenerate point") {}
};

// Double-sphere fisheye intrinsics (Usenko et al. parameterization).
struct DoubleSphereIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double xi = 0.0;
  double alpha = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument unless fx, fy > 0, 0 <= alpha < 1 and the size is positive.
  void validate() const;

  /// Cosine bound of the projection domain: a direction is valid iff z/|p| > -w2.
  double validity_w2() const;

  bool operator==(const DoubleSphereIntrinsics&) const = default;
};

struct StereoRig {
  DoubleSphereIntrinsics left;
  DoubleSphereIntrinsics right;
  geom::Pose t_l_r;  ///< right camera expressed in the left camera frame

  double baseline() const { return t_l_r.translation().norm(); }
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  bool valid = false;
};

struct Unprojection {
  Vec3 direction = Vec3::UnitZ();
  bool valid = false;
};

/// Throws DegeneratePoint for the zero vector.
Projection project(const Vec3& point, const DoubleSphereIntrinsics& intr);
Unprojection unproject(const Vec2& pixel, const DoubleSphereIntrinsics& intr);

/// Horizontal angular span (rad) of directions in the x-z plane that project
/// validly onto the sensor extent u in [0, width].
double fov_check(const DoubleSphereIntrinsics& intr);

/// 1280x960, xi=-0.2, alpha=0.59, fx=fy=300, centered principal point,
/// 64 mm baseline along +x. Matches data/rig_default.json.
StereoRig default_rig();

/// Intrinsics of the same lens imaged at `scale` times the resolution. Pixel
/// centres sit on integer coordinates, so the principal point maps as
/// (c + 0.5) * scale - 0.5.
DoubleSphereIntrinsics scale_intrinsics(const DoubleSphereIntrinsics& k, double scale);

void to_json(nlohmann::json& j, const DoubleSphereIntrinsics& k);
void from_json(const nlohmann::json& j, DoubleSphereIntrinsics& k);
void to_json(nlohmann::json& j, const StereoRig& rig);
void from_json(const nlohmann::json& j, StereoRig& rig);

StereoRig load_rig(const std::filesystem::path& path);

// Branch-light projection kernel shared with the renderer. `d1` is |p|.
// Writes u, v and returns validity; pixel values are unspecified when invalid.
template <typename T>
inline bool project_kernel(T x, T y, T z, T d1, T fx, T fy, T cx, T cy, T xi, T alpha, T w2, T& u, T& v) {
  const T zs = xi * d1 + z;
  const T d2 = std::sqrt(x * x + y * y + zs * zs);
  const T denom = alpha * d2 + (T(1) - alpha) * zs;
  const T inv = T(1) / denom;
  u = fx * x * inv + cx;
  v = fy * y * inv + cy;
  return z > -w2 * d1;
}

}  // namespace spheroview::camera
