#pragma once

#include <numbers>

#include "spheroview/error.hpp"
#include "spheroview/geom.hpp"

namespace spheroview::headctl {

using geom::Pose;
using geom::Vec3;

class UndefinedYaw : public Error {
 public:
  UndefinedYaw() : Error("undefined yaw") {}
};

/// Replaces the rotation of `p` by a pure rotation about `up` that keeps the
/// horizontal heading of the body's `forward` axis. Translation is unchanged.
/// Head frames use x forward, z up unless told otherwise.
Pose flatten_yaw(const Pose& p, const Vec3& up = Vec3::UnitZ(), const Vec3& forward = Vec3::UnitX());

/// Anchors operator motion in VR space to the robot's nominal head pose.
struct HeadMapping {
  Pose t_robot_nom;
  Pose t_vr_nom;  ///< yaw-only

  /// "Re-zero": records the operator's current pose as nominal, removing pitch and roll.
  static HeadMapping capture(const Pose& t_robot_nom, const Pose& t_vr_head, const Vec3& up = Vec3::UnitZ(),
                             const Vec3& forward = Vec3::UnitX());
};

/// t_robot_nom * inverse(t_vr_nom) * t_vr_head, unfiltered.
Pose map_head(const HeadMapping& m, const Pose& t_vr_head);

enum class Mode { kTracking, kApproach };

struct FilterState {
  Pose current;
  bool initialized = false;
  Mode mode = Mode::kTracking;
};

/// Single-pole smoothing factor dt / (dt + 1 / (2 pi fc)).
double filter_coefficient(double dt, double fc_hz);

/// One low-pass tick: lerp translation and slerp rotation toward the target by
/// filter_coefficient(dt, fc). The first call snaps to the target.
Pose filter_step(FilterState& state, const Pose& target, double dt, double fc_hz = 100.0);

struct GuardConfig {
  double fc_hz = 100.0;
  double v_max = 1.0;                                    ///< m/s
  double omega_max = std::numbers::pi;                   ///< rad/s
  double jump_threshold_m = 0.2;
  double jump_threshold_rad = 30.0 * std::numbers::pi / 180.0;
  double reentry_m = 0.01;
  double reentry_rad = 1.0 * std::numbers::pi / 180.0;
};

struct GuardOutput {
  Pose pose;
  Mode mode = Mode::kTracking;
};

/// Filtered tracking with a jump monitor. A target farther than the jump
/// threshold switches to APPROACH, which moves at the velocity caps until the
/// state is within the re-entry tolerance. Output motion never exceeds the caps.
GuardOutput jump_guard(FilterState& state, const Pose& target, double dt, const GuardConfig& cfg);

/// Moves from `from` toward `to` by at most `max_translation` metres and
/// `max_rotation` radians (straight line, shortest arc). Lands exactly on `to`
/// when it is within reach.
Pose move_toward(const Pose& from, const Pose& to, double max_translation, double max_rotation);

/// Mapping plus guarded filter, as run by the operator-side control loop.
class HeadController {
 public:
  HeadController(HeadMapping mapping, GuardConfig cfg) : mapping_(mapping), cfg_(cfg) {}

  Pose step(const Pose& t_vr_head, double dt);
  void rezero(const Pose& t_robot_nom, const Pose& t_vr_head);

  const HeadMapping& mapping() const { return mapping_; }
  const FilterState& state() const { return state_; }

 private:
  HeadMapping mapping_;
  GuardConfig cfg_;
  FilterState state_;
};

}  // namespace spheroview::headctl
