#include "spheroview/serve.hpp"

#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "spheroview/net.hpp"

namespace spheroview::serve {

using geom::Pose;
using SteadyClock = std::chrono::steady_clock;
using net::Millis;

void ServeOptions::validate() const {
  sim.validate();
  scene.validate();
  if (eye_size < 16 || eye_size > 512) throw InvalidArgument("eye size must lie in [16, 512]");
  if (jpeg_quality < 1 || jpeg_quality > 100) throw InvalidArgument("jpeg quality must lie in [1, 100]");
  if (!(stream_rate_hz > 0.0) || stream_rate_hz > 120.0) throw InvalidArgument("stream rate must lie in (0, 120] Hz");
  if (!(capture_scale > 0.0) || capture_scale > 1.0) throw InvalidArgument("capture scale must lie in (0, 1]");
  if (!(duration_s >= 0.0)) throw InvalidArgument("duration must not be negative");
}

namespace {

constexpr Millis kPollInterval(100);

std::chrono::nanoseconds period(double rate_hz) {
  return std::chrono::nanoseconds(static_cast<std::int64_t>(std::llround(1e9 / rate_hz)));
}

struct Session {
  std::unique_ptr<net::Connection> conn;
  std::thread rx;
  std::atomic<bool> alive{true};
};

}  // namespace

struct Server::Impl {
  ServeOptions opts;
  net::Listener listener;
  std::atomic<bool> stopping{false};
  std::atomic<bool> ran{false};

  // Shared between the control loop, the frame pipeline and the receivers.
  mutable std::mutex state_mu;
  std::optional<Pose> operator_pose;
  std::uint64_t operator_stamp = 0;
  bool rezero = false;
  double r;
  Pose robot_actual;
  Pose robot_command;
  Pose mapped_head;

  std::mutex sessions_mu;
  std::vector<std::shared_ptr<Session>> sessions;

  mutable std::mutex stats_mu;
  ServeStats stats;
  double frame_build_total = 0.0;

  explicit Impl(ServeOptions o)
      : opts((o.validate(), std::move(o))),
        listener(opts.port, opts.ui_dir),
        r(opts.sim.render.r),
        robot_actual(opts.sim.t_robot_nom),
        robot_command(opts.sim.t_robot_nom),
        mapped_head(opts.sim.t_robot_nom) {}

  void log(const std::string& msg) const {
    if (opts.log) opts.log(msg);
  }

  template <class F>
  void count(F&& f) {
    std::lock_guard lock(stats_mu);
    f(stats);
  }

  std::vector<std::shared_ptr<Session>> live_sessions() {
    std::lock_guard lock(sessions_mu);
    std::vector<std::shared_ptr<Session>> out;
    for (const auto& s : sessions)
      if (s->alive) out.push_back(s);
    return out;
  }

  void broadcast(const std::vector<transport::Message>& msgs) {
    for (const auto& s : live_sessions()) {
      try {
        for (const auto& m : msgs) s->conn->send(m);
      } catch (const net::NetError&) {
        s->alive = false;
      }
    }
  }

  void apply_config(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      count([](ServeStats& s) { ++s.configs_rejected; });
      log("config rejected: not JSON");
      return;
    }
    std::optional<double> new_r;
    bool do_rezero = false;
    std::string problem;
    if (!j.is_object()) problem = "not an object";
    for (auto it = j.begin(); problem.empty() && it != j.end(); ++it) {
      if (it.key() == "r") {
        if (!it->is_number() || !(it->get<double>() > 0.0) || it->get<double>() > sim::kMaxPrimitiveDistance)
          problem = "r must be a positive number up to 100";
        else
          new_r = it->get<double>();
      } else if (it.key() == "rezero") {
        if (!it->is_boolean()) problem = "rezero must be a boolean";
        do_rezero = it->is_boolean() && it->get<bool>();
      } else {
        problem = "unknown key " + it.key();
      }
    }
    if (!problem.empty()) {
      count([](ServeStats& s) { ++s.configs_rejected; });
      log("config rejected: " + problem);
      return;
    }
    {
      std::lock_guard lock(state_mu);
      if (new_r) r = *new_r;
      if (do_rezero) rezero = true;
    }
    count([](ServeStats& s) { ++s.configs_applied; });
  }

  void receive_loop(const std::shared_ptr<Session>& s) {
    while (!stopping && s->alive) {
      try {
        auto m = s->conn->receive(kPollInterval);
        if (!m) continue;
        const std::int64_t t2 = net::now_ns();
        switch (m->type) {
          case transport::MsgType::kClockPing:
            s->conn->send(net::answer_ping(*m, t2));
            count([](ServeStats& st) { ++st.pings_answered; });
            break;
          case transport::MsgType::kPose: {
            const auto p = transport::parse_pose(*m);
            if (p.frame_id != static_cast<std::uint8_t>(transport::FrameId::kOperatorHead)) break;
            const Pose pose = p.to_pose();
            std::lock_guard lock(state_mu);
            if (!operator_pose || p.timestamp_ns >= operator_stamp) {
              operator_pose = pose;
              operator_stamp = p.timestamp_ns;
            }
            count([](ServeStats& st) { ++st.poses_received; });
            break;
          }
          case transport::MsgType::kConfig:
            apply_config(transport::parse_config(*m));
            break;
          default:
            break;  // frames and pongs are not expected upstream
        }
      } catch (const net::NetError&) {
        s->alive = false;
      } catch (const Error& e) {
        log(std::string("dropped malformed message: ") + e.what());
      }
    }
  }

  void accept_loop() {
    while (!stopping) {
      std::unique_ptr<net::Connection> conn;
      try {
        conn = listener.accept(kPollInterval);
      } catch (const net::NetError& e) {
        log(std::string("accept failed: ") + e.what());
        continue;
      }
      std::lock_guard lock(sessions_mu);
      // Reap finished sessions.
      std::erase_if(sessions, [](const std::shared_ptr<Session>& s) {
        if (s->alive) return false;
        if (s->rx.joinable()) s->rx.join();
        return true;
      });
      if (!conn) continue;
      log(std::string("session opened over ") + (conn->websocket() ? "websocket" : "tcp"));
      auto s = std::make_shared<Session>();
      s->conn = std::move(conn);
      s->rx = std::thread([this, s] { receive_loop(s); });
      sessions.push_back(std::move(s));
      count([](ServeStats& st) { ++st.sessions; });
    }
  }

  void frame_loop() {
    const auto& sc = opts.sim;
    camera::StereoRig rig = sc.rig;
    rig.left = camera::scale_intrinsics(sc.rig.left, opts.capture_scale);
    rig.right = camera::scale_intrinsics(sc.rig.right, opts.capture_scale);
    render::RenderConfig rc = sc.render;
    rc.out_width = rc.out_height = opts.eye_size;
    const auto step = period(opts.stream_rate_hz);
    auto next = SteadyClock::now();
    while (!stopping) {
      next += step;
      std::this_thread::sleep_until(next);
      if (SteadyClock::now() - next > 4 * step) next = SteadyClock::now();  // do not burst after a stall
      if (live_sessions().empty()) continue;

      Pose actual, head;
      {
        std::lock_guard lock(state_mu);
        actual = robot_actual;
        head = mapped_head;
        rc.r = r;
      }
      const auto t0 = SteadyClock::now();
      const std::int64_t capture_ns = net::now_ns();
      const Pose cam = actual * sc.t_head_cam;
      const auto left = sim::capture(opts.scene, cam, rig.left, rc.threads);
      const auto right = sim::capture(opts.scene, cam * rig.t_l_r, rig.right, rc.threads);
      render::StereoViews views;
      try {
        views = render::render_stereo(left, right, rig, cam, head, sc.eyes, rc);
      } catch (const render::EyeOutsideSphere&) {
        count([](ServeStats& st) { ++st.frames_skipped; });
        continue;
      }
      std::vector<transport::Message> msgs;
      std::uint8_t id = 0;
      for (const auto* eye : {&views.left, &views.right}) {
        transport::FrameMsg f;
        f.capture_timestamp_ns = static_cast<std::uint64_t>(capture_ns);
        f.camera_id = id++;
        f.encoding = transport::Encoding::kJpeg;
        f.width = static_cast<std::uint16_t>(eye->image.width());
        f.height = static_cast<std::uint16_t>(eye->image.height());
        f.payload = image::encode_jpeg(eye->image, opts.jpeg_quality);
        msgs.push_back(transport::to_message(f));
      }
      const double build_s = std::chrono::duration<double>(SteadyClock::now() - t0).count();
      broadcast(msgs);
      std::lock_guard lock(stats_mu);
      ++stats.frames_sent;
      frame_build_total += build_s;
      stats.mean_frame_build_s = frame_build_total / static_cast<double>(stats.frames_sent);
    }
  }

  void control_loop() {
    const auto& sc = opts.sim;
    const auto tick = period(sc.control_rate_hz);
    const double dt = std::chrono::duration<double>(tick).count();
    const auto report_step = period(sc.report_rate_hz);
    sim::RobotHeadModel robot(sc.t_robot_nom, sc.robot);
    std::optional<headctl::HeadController> controller;
    const auto start = SteadyClock::now();
    auto next = start;
    auto next_report = start;
    while (!stopping) {
      if (opts.duration_s > 0.0 && SteadyClock::now() - start >= std::chrono::duration<double>(opts.duration_s)) break;
      next += tick;
      std::this_thread::sleep_until(next);
      if (SteadyClock::now() - next > 10 * tick) next = SteadyClock::now();

      std::optional<Pose> op;
      bool capture_nominal = false;
      {
        std::lock_guard lock(state_mu);
        op = operator_pose;
        capture_nominal = rezero || (op && !controller);
        rezero = false;
      }
      Pose command = sc.t_robot_nom;
      Pose head = sc.t_robot_nom;
      if (op) {
        if (capture_nominal) {
          if (controller)
            controller->rezero(sc.t_robot_nom, *op);
          else
            controller.emplace(headctl::HeadMapping::capture(sc.t_robot_nom, *op), sc.guard);
          log("nominal pose captured");
        }
        command = controller->step(*op, dt);
        head = headctl::map_head(controller->mapping(), *op);
      }
      const Pose actual = sim::head_step(robot, command, dt);
      {
        std::lock_guard lock(state_mu);
        robot_actual = actual;
        robot_command = command;
        mapped_head = head;
      }
      if (SteadyClock::now() >= next_report) {
        next_report += report_step;
        const auto stamp = static_cast<std::uint64_t>(net::now_ns());
        using transport::FrameId;
        auto pose_msg = [stamp](FrameId id, const Pose& p) {
          return transport::to_message(transport::PoseMsg::from_pose(stamp, static_cast<std::uint8_t>(id), p));
        };
        broadcast({pose_msg(FrameId::kRobotHead, actual), pose_msg(FrameId::kMappedTarget, command),
                   pose_msg(FrameId::kLeftCamera, actual * sc.t_head_cam),
                   pose_msg(FrameId::kLeftEye, head * sc.eyes.left)});
      }
    }
  }

  void shutdown_sessions() {
    std::lock_guard lock(sessions_mu);
    for (auto& s : sessions) {
      s->alive = false;
      if (s->rx.joinable()) s->rx.join();
      s->conn->close();
    }
    sessions.clear();
  }
};

Server::Server(ServeOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Server::~Server() {
  impl_->stopping = true;
  impl_->shutdown_sessions();
}

std::uint16_t Server::port() const { return impl_->listener.port(); }

void Server::run() {
  if (impl_->ran.exchange(true)) throw Error("server already ran");
  impl_->log("listening on port " + std::to_string(port()));
  std::thread acceptor([this] { impl_->accept_loop(); });
  std::thread frames([this] { impl_->frame_loop(); });
  impl_->control_loop();
  impl_->stopping = true;
  acceptor.join();
  frames.join();
  impl_->shutdown_sessions();
}

void Server::stop() { impl_->stopping = true; }

ServeStats Server::stats() const {
  std::lock_guard lock(impl_->stats_mu);
  return impl_->stats;
}

double Server::sphere_radius() const {
  std::lock_guard lock(impl_->state_mu);
  return impl_->r;
}

}  // namespace spheroview::serve
