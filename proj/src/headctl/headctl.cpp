#include "spheroview/headctl.hpp"

#include <cmath>

namespace spheroview::headctl {

Pose flatten_yaw(const Pose& p, const Vec3& up_in, const Vec3& forward_in) {
  const Vec3 up = up_in.normalized();
  const Vec3 ref = (forward_in - forward_in.dot(up) * up).normalized();
  const Vec3 f = p.rotation() * forward_in.normalized();
  const Vec3 h = f - f.dot(up) * up;
  if (h.norm() < 1e-6) throw UndefinedYaw();
  const double yaw = std::atan2(up.dot(ref.cross(h)), ref.dot(h));
  return {geom::Quat(Eigen::AngleAxisd(yaw, up)), p.translation()};
}

HeadMapping HeadMapping::capture(const Pose& t_robot_nom, const Pose& t_vr_head, const Vec3& up,
                                 const Vec3& forward) {
  return {t_robot_nom, flatten_yaw(t_vr_head, up, forward)};
}

Pose map_head(const HeadMapping& m, const Pose& t_vr_head) {
  return m.t_robot_nom * geom::inverse(m.t_vr_nom) * t_vr_head;
}

double filter_coefficient(double dt, double fc_hz) {
  if (!(dt > 0.0)) throw InvalidArgument("filter: dt must be positive");
  const double rc = 1.0 / (2.0 * std::numbers::pi * fc_hz);
  return dt / (dt + rc);
}

namespace {

Pose blend(const Pose& current, const Pose& target, double a) { return geom::interpolate(current, target, a); }

}  // namespace

Pose filter_step(FilterState& state, const Pose& target, double dt, double fc_hz) {
  const double a = filter_coefficient(dt, fc_hz);
  if (!state.initialized) {
    state.current = target;
    state.initialized = true;
    return state.current;
  }
  state.current = blend(state.current, target, a);
  return state.current;
}

Pose move_toward(const Pose& from, const Pose& to, double max_translation, double max_rotation) {
  // Relative slack absorbs rounding so a run of capped steps lands on the target.
  constexpr double kSlack = 1.0 + 1e-9;
  const Vec3 d = to.translation() - from.translation();
  const double dist = d.norm();
  const Vec3 t = dist <= max_translation * kSlack ? to.translation()
                                                  : Vec3(from.translation() + d * (max_translation / dist));
  const double angle = geom::angular_distance(from, to);
  geom::Quat q = to.rotation();
  if (angle > max_rotation * kSlack) {
    q = geom::interpolate(Pose::from_rotation(from.rotation()), Pose::from_rotation(to.rotation()),
                          max_rotation / angle)
            .rotation();
  }
  return {q, t};
}

GuardOutput jump_guard(FilterState& state, const Pose& target, double dt, const GuardConfig& cfg) {
  if (!(cfg.v_max > 0.0) || !(cfg.omega_max > 0.0)) throw InvalidArgument("jump_guard: caps must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("jump_guard: dt must be positive");
  if (!state.initialized) {
    state.current = target;
    state.initialized = true;
    state.mode = Mode::kTracking;
    return {state.current, state.mode};
  }
  const double max_t = cfg.v_max * dt;
  const double max_r = cfg.omega_max * dt;
  auto within = [&](const Pose& a, double tol_m, double tol_rad) {
    return geom::translation_distance(a, target) <= tol_m && geom::angular_distance(a, target) <= tol_rad;
  };

  if (state.mode == Mode::kTracking && !within(state.current, cfg.jump_threshold_m, cfg.jump_threshold_rad)) {
    state.mode = Mode::kApproach;
  }
  if (state.mode == Mode::kApproach) {
    if (within(state.current, cfg.reentry_m, cfg.reentry_rad)) {
      state.mode = Mode::kTracking;
    } else {
      state.current = move_toward(state.current, target, max_t, max_r);
      if (within(state.current, cfg.reentry_m, cfg.reentry_rad)) state.mode = Mode::kTracking;
      return {state.current, Mode::kApproach};
    }
  }
  const Pose filtered = blend(state.current, target, filter_coefficient(dt, cfg.fc_hz));
  state.current = move_toward(state.current, filtered, max_t, max_r);
  return {state.current, Mode::kTracking};
}

Pose HeadController::step(const Pose& t_vr_head, double dt) {
  return jump_guard(state_, map_head(mapping_, t_vr_head), dt, cfg_).pose;
}

void HeadController::rezero(const Pose& t_robot_nom, const Pose& t_vr_head) {
  mapping_ = HeadMapping::capture(t_robot_nom, t_vr_head);
  state_ = FilterState{};
}

}  // namespace spheroview::headctl
