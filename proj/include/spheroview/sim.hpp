#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spheroview/camera.hpp"
#include "spheroview/error.hpp"
#include "spheroview/geom.hpp"
#include "spheroview/headctl.hpp"
#include "spheroview/image.hpp"
#include "spheroview/render.hpp"
#include "spheroview/transport.hpp"

namespace spheroview::sim {

using geom::Pose;
using geom::Vec3;
using image::Rgb;

// ---------------------------------------------------------------------------
// Synthetic scene

/// Flat rectangle in its own x-y plane, centered on the pose origin.
struct Quad {
  Pose pose;
  double width = 1.0;  ///< along local x (m)
  double height = 1.0; ///< along local y (m)
  int cells_x = 1;     ///< checker cells; 1x1 is a flat color
  int cells_y = 1;
  Rgb color_a{200, 200, 200};
  Rgb color_b{60, 60, 60};
};

/// Small bright target drawn as a Gaussian splat in angle around its direction.
struct PointTarget {
  Vec3 position = Vec3::Zero();
  Rgb color{255, 255, 255};
  double angular_size_deg = 1.0;  ///< full width; the splat sigma is half of it
};

struct Scene {
  Rgb sky{90, 120, 170};
  std::vector<Quad> quads;
  std::vector<PointTarget> points;

  /// Every primitive must sit between 5 cm and 100 m from the world origin.
  void validate() const;
};

inline constexpr double kMinPrimitiveDistance = 0.05;
inline constexpr double kMaxPrimitiveDistance = 100.0;

void to_json(nlohmann::json& j, const Scene& s);
void from_json(const nlohmann::json& j, Scene& s);
Scene load_scene(const std::filesystem::path& path);

/// Checker wall, floor and two point targets in front of the default head pose.
Scene default_scene();

/// Colour seen along a world-frame ray (unit direction), nearest hit first.
Rgb shade(const Scene& scene, const Vec3& origin, const Vec3& direction);

/// Renders the scene through the fisheye model. Pixels outside the
/// unprojection domain are black. Deterministic for a given input.
image::Image capture(const Scene& scene, const Pose& t_world_cam, const camera::DoubleSphereIntrinsics& intr,
                     int threads = 0);

// ---------------------------------------------------------------------------
// Robot head dynamics

struct RobotHeadConfig {
  double v_max = 1.0;                       ///< m/s
  double omega_max = std::numbers::pi;      ///< rad/s
  double command_delay = 0.100;             ///< s, command path
  double report_delay = 0.030;              ///< s, pose feedback path
  void validate() const;
};

/// Cartesian rate-limited stand-in for the arm. Commands are queued and take
/// effect command_delay after they were issued.
struct RobotHeadModel {
  RobotHeadModel(const Pose& initial, RobotHeadConfig cfg = {});

  RobotHeadConfig cfg;
  Pose actual;
  Pose target;        ///< command currently being tracked
  double clock = 0.0; ///< s
  std::deque<std::pair<double, Pose>> queue;
};

/// Issues `commanded` at the model clock, advances by dt and moves toward the
/// newest command at least command_delay old, within v_max*dt and omega_max*dt.
Pose head_step(RobotHeadModel& model, const Pose& commanded, double dt);

// ---------------------------------------------------------------------------
// Operator trajectories

struct Keyframe {
  double t = 0.0;
  Pose pose;
};

/// Keyframed head path. Segments ease in and out with a cubic in time
/// (zero velocity at each keyframe); translation is linear in the eased
/// parameter, rotation is slerped.
class Trajectory {
 public:
  /// Throws InvalidArgument unless stamps strictly increase and there is at least one keyframe.
  explicit Trajectory(std::vector<Keyframe> keys);

  Pose sample(double t) const;  ///< clamped outside [start, end]
  double start() const { return keys_.front().t; }
  double end() const { return keys_.back().t; }
  const std::vector<Keyframe>& keyframes() const { return keys_; }

 private:
  std::vector<Keyframe> keys_;
};

void to_json(nlohmann::json& j, const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);
Trajectory load_trajectory(const std::filesystem::path& path);

/// Standing operator head in VR space: 1.7 m above the floor, looking along +x.
Pose default_operator_pose();

/// One lateral head movement of `distance` metres with the given peak speed,
/// after `rest` seconds standing still and followed by the same rest.
Trajectory sweep_trajectory(double distance = 0.4, double peak_speed = 0.5, double rest = 1.0);

/// The standard dynamic run: lateral and fore-aft sweeps at several speeds
/// up to 0.5 m/s with short pauses, about 16 s long.
Trajectory dynamic_trajectory();

// ---------------------------------------------------------------------------
// Closed loop

/// Per-stage frame pipeline delays (s). The defaults add up to 40 ms.
struct LatencyBudget {
  double exposure = 0.008;
  double transfer = 0.010;
  double encode = 0.007;
  double network = 0.003;
  double decode = 0.007;
  double render = 0.005;
  double total() const { return exposure + transfer + encode + network + decode + render; }
};

struct SimConfig {
  double control_rate_hz = 250.0;
  double camera_rate_hz = 45.0;
  double display_rate_hz = 90.0;
  double report_rate_hz = 100.0;
  LatencyBudget latency;
  double latency_jitter = 0.0;  ///< s, uniform +- added to the network stage, drawn from the seed
  RobotHeadConfig robot;
  headctl::GuardConfig guard;
  Pose t_robot_nom = Pose::from_translation({0.0, 0.0, 1.2});  ///< nominal head pose in the robot base
  camera::StereoRig rig = camera::default_rig();
  Pose t_head_cam;                ///< left camera in the head frame
  render::EyeOffsets eyes;        ///< eye poses in the head frame
  double tail = 1.0;              ///< s simulated after the trajectory ends
  bool render_frames = false;     ///< capture and reproject images (slow)
  render::RenderConfig render;    ///< eye view settings when render_frames is set
  int save_every = 0;             ///< write every n-th displayed eye pair to frames_dir (0 = none)
  std::filesystem::path frames_dir;
  std::uint64_t seed = 1;

  SimConfig();
  void validate() const;
};

void to_json(nlohmann::json& j, const SimConfig& c);
/// Overlays the keys present in `j` onto `c`; unknown keys throw InvalidArgument.
void merge_json(const nlohmann::json& j, SimConfig& c);

struct TraceRow {
  double t = 0.0;
  Pose t_operator;       ///< VR frame
  Pose t_robot;          ///< actual robot head, robot frame
  double ds = 0.0;       ///< eye-to-camera distance (m)
  double v_op = 0.0;     ///< operator head speed (m/s)
  double v_rob = 0.0;    ///< reported robot head speed (m/s)
  double frame_latency = std::numeric_limits<double>::quiet_NaN();  ///< newest displayed frame (s)
};

struct FrameRecord {
  std::int64_t capture_ns = 0;
  std::int64_t display_ns = 0;
};

struct SimTrace {
  std::vector<TraceRow> rows;
  std::vector<FrameRecord> frames;
  std::vector<std::string> warnings;
  std::size_t eye_views_rendered = 0;
  double control_rate_hz = 0.0;

  std::vector<double> v_op() const;
  std::vector<double> v_rob() const;
  std::vector<double> ds() const;
  transport::LatencyReport latency() const;
};

/// Columns: t_s, ds_m, v_op_mps, v_rob_mps, frame_latency_s.
void write_trace_csv(const SimTrace& trace, const std::filesystem::path& path);

/// Deterministic fixed-rate simulation of the operator, head controller,
/// robot dynamics and frame pipeline.
SimTrace run_closed_loop(const Scene& scene, const Trajectory& operator_path, const SimConfig& cfg);

// ---------------------------------------------------------------------------
// Series analysis

/// Lag (s) of `b` behind `a`: argmax over integer shifts of the normalized
/// cross-correlation, refined with a parabola through the peak. Shifts up to
/// max_lag_s are searched (default: a quarter of the series).
/// Throws Error("no signal") when either series is flat.
double estimate_lag(const std::vector<double>& a, const std::vector<double>& b, double rate_hz,
                    std::optional<double> max_lag_s = std::nullopt);

/// Throws Error("no signal") when either series is flat.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct ThresholdLags {
  double start = 0.0;   ///< b rises through the threshold this long after a
  double finish = 0.0;  ///< b falls back through it this long after a
};

/// Start and finish delays of a single movement, using a threshold at
/// `fraction` of each series' peak.
ThresholdLags threshold_lags(const std::vector<double>& a, const std::vector<double>& b, double rate_hz,
                             double fraction = 0.1);

}  // namespace spheroview::sim
