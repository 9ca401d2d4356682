#pragma once

#include <chrono>
#include <numbers>
#include <vector>

#include "spheroview/camera.hpp"
#include "spheroview/error.hpp"
#include "spheroview/geom.hpp"
#include "spheroview/image.hpp"

namespace spheroview::render {

using geom::Pose;
using geom::Vec2;
using geom::Vec3;

class EyeOutsideSphere : public Error {
 public:
  EyeOutsideSphere() : Error("eye outside projection sphere") {}
};

struct RenderConfig {
  double r = 1.0;  ///< projection sphere radius (m)
  int out_width = 800;
  int out_height = 800;
  double eye_fov = std::numbers::pi / 2.0;  ///< vertical FoV of the pinhole eye (rad)
  image::Rgb background{0, 0, 0};
  int threads = 0;  ///< 0 = hardware concurrency

  void validate() const;
  double eye_focal() const;
};

struct EyeView {
  image::Image image;
  Pose t_world_eye;
  std::chrono::nanoseconds render_time{0};
};

/// Eye-frame ray (optical convention: z forward, x right, y down) through the
/// center of output pixel (px, py); not normalized.
Vec3 eye_ray(const RenderConfig& cfg, double px, double py);

/// Inverse of eye_ray for a direction in front of the eye.
Vec2 eye_pixel(const RenderConfig& cfg, const Vec3& direction);

/// Unit direction, in camera frame, of the point where an eye ray meets the
/// sphere of radius r around the camera. `t_cam_eye` is the eye pose in the camera frame.
Vec3 sphere_lookup_direction(const Vec3& ray_eye, const Pose& t_cam_eye, double r);

/// Re-renders `frame` for a virtual pinhole eye by ray casting against the
/// constant-distance sphere. Throws EyeOutsideSphere if the eye is not strictly
/// inside the sphere.
EyeView reproject(const image::Image& frame, const camera::DoubleSphereIntrinsics& intr, const Pose& t_world_cam,
                  const Pose& t_world_eye, const RenderConfig& cfg);

/// Bearing error (rad) of an object at distance d seen from an eye displaced by
/// dx perpendicular to the view ray, when the scene is assumed to lie at r.
double angular_error(double d, double dx, double r);

/// Limit of angular_error as d grows: pi/2 - atan(r / dx).
double angular_error_asymptote(double dx, double r);

struct ErrorSample {
  double d = 0.0;
  double gamma = 0.0;  ///< rad
};

/// `steps` evenly spaced distances over [d_min, d_max]. A grid point within
/// rounding of r is snapped to r so its error is exactly zero; when no grid
/// point lands on an r inside the range, the sample d = r is inserted.
std::vector<ErrorSample> error_curve(double dx, double r, double d_min, double d_max, int steps);

struct EyeOffsets {
  Pose left;   ///< left eye in the head frame
  Pose right;  ///< right eye in the head frame
};

struct StereoViews {
  EyeView left;
  EyeView right;
  std::chrono::nanoseconds wall_time{0};
};

/// Renders each eye against its own camera's sphere. The right camera pose is
/// t_world_cam_left * rig.t_l_r.
StereoViews render_stereo(const image::Image& left_frame, const image::Image& right_frame,
                          const camera::StereoRig& rig, const Pose& t_world_cam_left, const Pose& t_world_head,
                          const EyeOffsets& eyes, const RenderConfig& cfg);

}  // namespace spheroview::render
