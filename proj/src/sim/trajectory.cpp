#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spheroview/sim.hpp"

namespace spheroview::sim {

Trajectory::Trajectory(std::vector<Keyframe> keys) : keys_(std::move(keys)) {
  if (keys_.empty()) throw InvalidArgument("trajectory: no keyframes");
  for (std::size_t i = 1; i < keys_.size(); ++i)
    if (!(keys_[i].t > keys_[i - 1].t)) throw InvalidArgument("trajectory: keyframe times must strictly increase");
}

Pose Trajectory::sample(double t) const {
  if (t <= keys_.front().t) return keys_.front().pose;
  if (t >= keys_.back().t) return keys_.back().pose;
  const auto it = std::upper_bound(keys_.begin(), keys_.end(), t,
                                   [](double value, const Keyframe& k) { return value < k.t; });
  const Keyframe& b = *it;
  const Keyframe& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  const double s = u * u * (3.0 - 2.0 * u);
  return geom::interpolate(a.pose, b.pose, s);
}

void to_json(nlohmann::json& j, const Trajectory& t) {
  j = nlohmann::json{{"schema", 1}, {"keyframes", nlohmann::json::array()}};
  for (const auto& k : t.keyframes()) j["keyframes"].push_back({{"t", k.t}, {"pose", k.pose}});
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1) throw InvalidArgument("trajectory: expected \"schema\": 1");
  std::vector<Keyframe> keys;
  for (const auto& k : j.at("keyframes")) keys.push_back({k.at("t").get<double>(), k.at("pose").get<Pose>()});
  return Trajectory(std::move(keys));
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open trajectory " + path.string());
  return trajectory_from_json(nlohmann::json::parse(in));
}

Pose default_operator_pose() { return Pose::from_translation({0.0, 0.0, 1.7}); }

namespace {

// The eased segment peaks at 1.5x its mean speed.
double segment_time(double distance, double peak_speed) { return 1.5 * distance / peak_speed; }

}  // namespace

Trajectory sweep_trajectory(double distance, double peak_speed, double rest) {
  if (!(distance > 0 && peak_speed > 0 && rest > 0)) throw InvalidArgument("sweep: arguments must be positive");
  const Pose home = default_operator_pose();
  const Pose away = home * Pose::from_translation({0.0, -distance, 0.0});
  const double move = segment_time(distance, peak_speed);
  return Trajectory({{0.0, home}, {rest, home}, {rest + move, away}, {2 * rest + move, away}});
}

Trajectory dynamic_trajectory() {
  const Pose home = default_operator_pose();
  struct Step {
    Vec3 offset;
    double peak_speed;
    double pause;
  };
  // Lateral and fore-aft moves at mixed speeds, each ending in a short pause.
  const Step steps[] = {
      {{0.0, -0.30, 0.0}, 0.50, 0.6}, {{0.0, 0.20, 0.0}, 0.30, 0.8},  {{0.25, 0.20, 0.0}, 0.45, 0.5},
      {{0.0, 0.0, 0.0}, 0.25, 1.0},   {{0.0, -0.25, 0.05}, 0.50, 0.4}, {{-0.15, 0.0, -0.05}, 0.35, 0.7},
      {{0.0, 0.30, 0.0}, 0.50, 0.6},  {{0.0, 0.0, 0.0}, 0.40, 1.0},
  };
  std::vector<Keyframe> keys{{0.0, home}, {1.0, home}};
  Vec3 at = Vec3::Zero();
  double t = 1.0;
  for (const auto& s : steps) {
    const double move = segment_time((s.offset - at).norm(), s.peak_speed);
    t += move;
    keys.push_back({t, home * Pose::from_translation(s.offset)});
    t += s.pause;
    keys.push_back({t, home * Pose::from_translation(s.offset)});
    at = s.offset;
  }
  return Trajectory(std::move(keys));
}

}  // namespace spheroview::sim
