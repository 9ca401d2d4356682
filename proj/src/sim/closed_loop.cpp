#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "spheroview/sim.hpp"

namespace spheroview::sim {

namespace {

constexpr std::int64_t kNsPerS = 1'000'000'000;

std::int64_t to_ns(double s) { return static_cast<std::int64_t>(std::llround(s * 1e9)); }
double to_s(std::int64_t ns) { return static_cast<double>(ns) * 1e-9; }

// Optical frame (z forward, x right, y down) expressed in the head frame (x forward, z up).
geom::Quat head_to_optical() {
  geom::Mat3 r;
  r.col(0) = -Vec3::UnitY();
  r.col(1) = -Vec3::UnitZ();
  r.col(2) = Vec3::UnitX();
  return geom::Quat(r);
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw InvalidArgument("config: unknown key '" + where + key + "'");
  }
}

image::Image side_by_side(const image::Image& a, const image::Image& b) {
  image::Image out(a.width() + b.width(), std::max(a.height(), b.height()));
  for (int y = 0; y < a.height(); ++y)
    std::copy(a.row(y), a.row(y) + a.stride(), out.row(y));
  for (int y = 0; y < b.height(); ++y)
    std::copy(b.row(y), b.row(y) + b.stride(), out.row(y) + a.stride());
  return out;
}

}  // namespace

SimConfig::SimConfig() {
  t_head_cam = Pose(head_to_optical(), Vec3(0.05, 0.032, 0.0));
  eyes.left = t_head_cam;
  eyes.right = t_head_cam * rig.t_l_r;
  render.out_width = 256;
  render.out_height = 256;
}

void SimConfig::validate() const {
  for (double r : {control_rate_hz, camera_rate_hz, display_rate_hz, report_rate_hz})
    if (!(r > 0)) throw InvalidArgument("config: rates must be positive");
  if (camera_rate_hz > control_rate_hz || report_rate_hz > control_rate_hz || display_rate_hz > control_rate_hz)
    throw InvalidArgument("config: camera, report and display rates cannot exceed the control rate");
  for (double d : {latency.exposure, latency.transfer, latency.encode, latency.network, latency.decode,
                   latency.render, latency_jitter, tail})
    if (!(d >= 0)) throw InvalidArgument("config: latencies and tail must be non-negative");
  if (save_every < 0) throw InvalidArgument("config: save_every must be non-negative");
  robot.validate();
  render.validate();
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  j = nlohmann::json{
      {"schema", 1},
      {"control_rate_hz", c.control_rate_hz},
      {"camera_rate_hz", c.camera_rate_hz},
      {"display_rate_hz", c.display_rate_hz},
      {"report_rate_hz", c.report_rate_hz},
      {"latency",
       {{"exposure", c.latency.exposure},
        {"transfer", c.latency.transfer},
        {"encode", c.latency.encode},
        {"network", c.latency.network},
        {"decode", c.latency.decode},
        {"render", c.latency.render}}},
      {"latency_jitter", c.latency_jitter},
      {"robot",
       {{"v_max", c.robot.v_max},
        {"omega_max", c.robot.omega_max},
        {"command_delay", c.robot.command_delay},
        {"report_delay", c.robot.report_delay}}},
      {"guard",
       {{"fc_hz", c.guard.fc_hz},
        {"v_max", c.guard.v_max},
        {"omega_max", c.guard.omega_max},
        {"jump_threshold_m", c.guard.jump_threshold_m},
        {"jump_threshold_rad", c.guard.jump_threshold_rad},
        {"reentry_m", c.guard.reentry_m},
        {"reentry_rad", c.guard.reentry_rad}}},
      {"robot_nominal", c.t_robot_nom},
      {"head_to_camera", c.t_head_cam},
      {"tail", c.tail},
      {"render_frames", c.render_frames},
      {"render",
       {{"r", c.render.r},
        {"out_width", c.render.out_width},
        {"out_height", c.render.out_height},
        {"eye_fov", c.render.eye_fov},
        {"threads", c.render.threads}}},
      {"save_every", c.save_every},
      {"frames_dir", c.frames_dir.string()},
      {"seed", c.seed},
  };
}

void merge_json(const nlohmann::json& j, SimConfig& c) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  reject_unknown(j,
                 {"schema", "control_rate_hz", "camera_rate_hz", "display_rate_hz", "report_rate_hz", "latency",
                  "latency_jitter", "robot", "guard", "robot_nominal", "head_to_camera", "tail", "render_frames",
                  "render", "save_every", "frames_dir", "seed"},
                 "");
  if (j.contains("schema") && j["schema"] != 1) throw InvalidArgument("config: expected \"schema\": 1");
  take(j, "control_rate_hz", c.control_rate_hz);
  take(j, "camera_rate_hz", c.camera_rate_hz);
  take(j, "display_rate_hz", c.display_rate_hz);
  take(j, "report_rate_hz", c.report_rate_hz);
  if (j.contains("latency")) {
    const auto& l = j["latency"];
    reject_unknown(l, {"exposure", "transfer", "encode", "network", "decode", "render"}, "latency.");
    take(l, "exposure", c.latency.exposure);
    take(l, "transfer", c.latency.transfer);
    take(l, "encode", c.latency.encode);
    take(l, "network", c.latency.network);
    take(l, "decode", c.latency.decode);
    take(l, "render", c.latency.render);
  }
  take(j, "latency_jitter", c.latency_jitter);
  if (j.contains("robot")) {
    const auto& r = j["robot"];
    reject_unknown(r, {"v_max", "omega_max", "command_delay", "report_delay"}, "robot.");
    take(r, "v_max", c.robot.v_max);
    take(r, "omega_max", c.robot.omega_max);
    take(r, "command_delay", c.robot.command_delay);
    take(r, "report_delay", c.robot.report_delay);
  }
  if (j.contains("guard")) {
    const auto& g = j["guard"];
    reject_unknown(g, {"fc_hz", "v_max", "omega_max", "jump_threshold_m", "jump_threshold_rad", "reentry_m", "reentry_rad"},
                   "guard.");
    take(g, "fc_hz", c.guard.fc_hz);
    take(g, "v_max", c.guard.v_max);
    take(g, "omega_max", c.guard.omega_max);
    take(g, "jump_threshold_m", c.guard.jump_threshold_m);
    take(g, "jump_threshold_rad", c.guard.jump_threshold_rad);
    take(g, "reentry_m", c.guard.reentry_m);
    take(g, "reentry_rad", c.guard.reentry_rad);
  }
  if (j.contains("robot_nominal")) c.t_robot_nom = j["robot_nominal"].get<Pose>();
  if (j.contains("head_to_camera")) {
    c.t_head_cam = j["head_to_camera"].get<Pose>();
    c.eyes.left = c.t_head_cam;
    c.eyes.right = c.t_head_cam * c.rig.t_l_r;
  }
  take(j, "tail", c.tail);
  take(j, "render_frames", c.render_frames);
  if (j.contains("render")) {
    const auto& r = j["render"];
    reject_unknown(r, {"r", "out_width", "out_height", "eye_fov", "threads"}, "render.");
    take(r, "r", c.render.r);
    take(r, "out_width", c.render.out_width);
    take(r, "out_height", c.render.out_height);
    take(r, "eye_fov", c.render.eye_fov);
    take(r, "threads", c.render.threads);
  }
  take(j, "save_every", c.save_every);
  if (j.contains("frames_dir")) c.frames_dir = j["frames_dir"].get<std::string>();
  take(j, "seed", c.seed);
  c.validate();
}

std::vector<double> SimTrace::v_op() const {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(r.v_op);
  return v;
}

std::vector<double> SimTrace::v_rob() const {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(r.v_rob);
  return v;
}

std::vector<double> SimTrace::ds() const {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(r.ds);
  return v;
}

transport::LatencyReport SimTrace::latency() const {
  std::vector<transport::LatencySample> s;
  s.reserve(frames.size());
  for (const auto& f : frames) s.push_back({f.capture_ns, f.display_ns});
  return transport::latency_report(s, 0);
}

void write_trace_csv(const SimTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s\n";
  char line[160];
  for (const auto& r : trace.rows) {
    if (std::isnan(r.frame_latency))
      std::snprintf(line, sizeof line, "%.6f,%.9f,%.9f,%.9f,\n", r.t, r.ds, r.v_op, r.v_rob);
    else
      std::snprintf(line, sizeof line, "%.6f,%.9f,%.9f,%.9f,%.6f\n", r.t, r.ds, r.v_op, r.v_rob, r.frame_latency);
    out << line;
  }
}

SimTrace run_closed_loop(const Scene& scene, const Trajectory& path, const SimConfig& cfg) {
  cfg.validate();
  scene.validate();

  SimTrace trace;
  trace.control_rate_hz = cfg.control_rate_hz;
  if (cfg.display_rate_hz < cfg.camera_rate_hz)
    trace.warnings.push_back("display rate is below the camera rate; some frames will never be shown");

  const std::int64_t tick_ns = to_ns(1.0 / cfg.control_rate_hz);
  const double dt = to_s(tick_ns);
  const std::int64_t start_ns = to_ns(path.start());
  const std::int64_t end_ns = to_ns(path.end() + cfg.tail);
  const std::int64_t report_delay_ns = to_ns(cfg.robot.report_delay);

  const Pose op0 = path.sample(path.start());
  headctl::HeadController controller(headctl::HeadMapping::capture(cfg.t_robot_nom, op0), cfg.guard);
  RobotHeadModel robot(cfg.t_robot_nom, cfg.robot);
  transport::TimedPoseBuffer reported(static_cast<std::uint8_t>(transport::FrameId::kRobotHead));

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> jitter(-cfg.latency_jitter, cfg.latency_jitter);
  const LatencyBudget& lb = cfg.latency;
  const double pipeline = lb.exposure + lb.transfer + lb.encode + lb.network + lb.decode;

  struct PendingFrame {
    std::int64_t capture_ns;
    std::int64_t ready_ns;
    image::Image left, right;
  };
  std::deque<PendingFrame> pending;
  std::optional<PendingFrame> shown;
  double last_latency = std::numeric_limits<double>::quiet_NaN();

  std::int64_t capture_index = 0, report_index = 0, display_index = 0;
  auto scheduled = [start_ns](std::int64_t index, double rate) {
    return start_ns + static_cast<std::int64_t>(std::ceil(static_cast<double>(index) * kNsPerS / rate - 1e-3));
  };

  Pose prev_op = op0;
  Pose prev_reported = cfg.t_robot_nom;
  std::size_t displayed = 0;

  for (std::int64_t now = start_ns; now <= end_ns; now += tick_ns) {
    const double t = to_s(now);
    const Pose op = path.sample(t);
    const Pose head_now = robot.actual;

    if (now >= scheduled(report_index, cfg.report_rate_hz)) {
      reported.insert(now, head_now);
      ++report_index;
    }

    // Camera exposure on the robot side.
    if (now >= scheduled(capture_index, cfg.camera_rate_hz)) {
      PendingFrame f;
      f.capture_ns = now;
      const double extra = cfg.latency_jitter > 0 ? jitter(rng) : 0.0;
      f.ready_ns = now + to_ns(std::max(0.0, pipeline + extra));
      if (cfg.render_frames) {
        const Pose cam = head_now * cfg.t_head_cam;
        f.left = capture(scene, cam, cfg.rig.left, cfg.render.threads);
        f.right = capture(scene, cam * cfg.rig.t_l_r, cfg.rig.right, cfg.render.threads);
      }
      pending.push_back(std::move(f));
      ++capture_index;
    }

    // Frames that finished decoding are drawn on the next tick.
    while (!pending.empty() && pending.front().ready_ns <= now) {
      PendingFrame f = std::move(pending.front());
      pending.pop_front();
      const std::int64_t display_ns = now + to_ns(lb.render);
      trace.frames.push_back({f.capture_ns, display_ns});
      last_latency = to_s(display_ns - f.capture_ns);
      shown = std::move(f);
    }

    // Eye views at display rate from the newest frame, posed by the reported
    // robot pose at that frame's capture stamp.
    if (now >= scheduled(display_index, cfg.display_rate_hz)) {
      ++display_index;
      if (cfg.render_frames && shown && reported.size() > 0) {
        const Pose cam = reported.lookup(shown->capture_ns).pose * cfg.t_head_cam;
        const Pose head = headctl::map_head(controller.mapping(), op);
        try {
          const auto views = render::render_stereo(shown->left, shown->right, cfg.rig, cam, head, cfg.eyes, cfg.render);
          ++trace.eye_views_rendered;
          if (cfg.save_every > 0 && !cfg.frames_dir.empty() && displayed % static_cast<std::size_t>(cfg.save_every) == 0) {
            std::filesystem::create_directories(cfg.frames_dir);
            char name[64];
            std::snprintf(name, sizeof name, "eyes_%05zu.png", displayed / static_cast<std::size_t>(cfg.save_every));
            image::write_png(side_by_side(views.left.image, views.right.image), cfg.frames_dir / name);
          }
          ++displayed;
        } catch (const render::EyeOutsideSphere&) {
          trace.warnings.push_back("eye left the projection sphere at t=" + std::to_string(t));
        }
      }
    }

    // Operator-side view of the robot: reports arrive report_delay late.
    Pose rob_seen = prev_reported;
    if (const auto first = reported.oldest(); first && now - report_delay_ns >= *first)
      rob_seen = reported.lookup(now - report_delay_ns).pose;

    TraceRow row;
    row.t = t;
    row.t_operator = op;
    row.t_robot = head_now;
    const Pose eye = headctl::map_head(controller.mapping(), op) * cfg.t_head_cam;
    const Pose cam = head_now * cfg.t_head_cam;
    row.ds = (eye.translation() - cam.translation()).norm();
    if (now > start_ns) {
      row.v_op = (op.translation() - prev_op.translation()).norm() / dt;
      row.v_rob = (rob_seen.translation() - prev_reported.translation()).norm() / dt;
    }
    row.frame_latency = last_latency;
    trace.rows.push_back(row);
    prev_op = op;
    prev_reported = rob_seen;

    const Pose command = controller.step(op, dt);
    head_step(robot, command, dt);
  }
  return trace;
}

}  // namespace spheroview::sim
