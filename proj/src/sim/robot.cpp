#include "spheroview/sim.hpp"

namespace spheroview::sim {

namespace {

// Tolerance on stamp comparisons so delays that are whole multiples of the
// tick survive floating-point accumulation of the clock.
constexpr double kStampSlack = 1e-9;

}  // namespace

void RobotHeadConfig::validate() const {
  if (!(v_max > 0 && omega_max > 0)) throw InvalidArgument("robot: velocity caps must be positive");
  if (!(command_delay >= 0 && report_delay >= 0)) throw InvalidArgument("robot: delays must be non-negative");
}

RobotHeadModel::RobotHeadModel(const Pose& initial, RobotHeadConfig c) : cfg(c), actual(initial), target(initial) {
  cfg.validate();
}

Pose head_step(RobotHeadModel& m, const Pose& commanded, double dt) {
  if (!(dt > 0)) throw InvalidArgument("head_step: dt must be positive");
  m.queue.emplace_back(m.clock, commanded);
  m.clock += dt;
  while (!m.queue.empty() && m.queue.front().first <= m.clock - m.cfg.command_delay + kStampSlack) {
    m.target = m.queue.front().second;
    m.queue.pop_front();
  }
  m.actual = headctl::move_toward(m.actual, m.target, m.cfg.v_max * dt, m.cfg.omega_max * dt);
  return m.actual;
}

}  // namespace spheroview::sim
