#include <doctest.h>

#include <chrono>
#include <map>
#include <thread>

#include "spheroview/net.hpp"
#include "spheroview/serve.hpp"

using namespace spheroview;
using namespace spheroview::serve;
using geom::Pose;
using geom::Vec3;
using net::Millis;
using transport::MsgType;

namespace {

ServeOptions small_options() {
  ServeOptions o;
  o.port = 0;
  o.eye_size = 64;
  o.capture_scale = 0.25;
  o.stream_rate_hz = 20.0;
  o.sim.render.threads = 1;
  return o;
}

struct Observed {
  std::map<std::uint8_t, std::vector<transport::PoseMsg>> poses;
  std::vector<transport::FrameMsg> frames;
  std::vector<std::int64_t> frame_arrivals;
};

// Streams a lateral operator motion for `seconds` while collecting downstream traffic.
Observed drive(net::Connection& conn, double seconds, double lateral_speed) {
  Observed obs;
  auto handle = [&](transport::Message&& m) {
    if (m.type == MsgType::kPose) {
      const auto p = transport::parse_pose(m);
      obs.poses[p.frame_id].push_back(p);
    } else if (m.type == MsgType::kFrame) {
      obs.frames.push_back(transport::parse_frame(m));
      obs.frame_arrivals.push_back(net::now_ns());
    }
  };
  const Pose start = sim::default_operator_pose();
  const auto t0 = std::chrono::steady_clock::now();
  auto next_send = t0;
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double t = std::chrono::duration<double>(now - t0).count();
    if (t >= seconds) break;
    if (now >= next_send) {
      next_send += std::chrono::microseconds(16667);
      const Pose op = Pose::from_translation(start.translation() + Vec3(0, lateral_speed * t, 0)) *
                      Pose(start.rotation(), Vec3::Zero());
      conn.send(transport::to_message(transport::PoseMsg::from_pose(static_cast<std::uint64_t>(net::now_ns()),
                                                                     0, op)));
    }
    if (auto m = conn.receive(Millis(5))) handle(std::move(*m));
  }
  return obs;
}

void check_session(net::Connection& conn, bool fresh_server) {
  const auto clock = net::measure_offset(conn, Millis(2000));
  CHECK(std::llabs(clock.offset_ns) < 5'000'000);

  const Observed obs = drive(conn, 1.5, 0.2);
  for (std::uint8_t id = 1; id <= 4; ++id) CHECK(obs.poses.count(id) == 1);
  REQUIRE(obs.poses.count(1) == 1);
  // The robot head starts at its nominal pose and follows the lateral motion.
  // A later session finds the head where the previous operator left it.
  const auto& head = obs.poses.at(1);
  CHECK(head.size() > 50);
  const Pose first = head.front().to_pose();
  const Pose last = head.back().to_pose();
  if (fresh_server) CHECK((first.translation() - Vec3(0, 0, 1.2)).norm() < 1e-9);
  CHECK(last.translation().y() > 0.1);

  REQUIRE(obs.frames.size() >= 6);
  std::map<int, int> per_eye;
  for (std::size_t i = 0; i < obs.frames.size(); ++i) {
    const auto& f = obs.frames[i];
    ++per_eye[f.camera_id];
    CHECK(f.encoding == transport::Encoding::kJpeg);
    const auto img = image::decode_jpeg(f.payload);
    CHECK(img.width() == 64);
    CHECK(img.height() == 64);
    // Pose-to-photon latency after clock correction is positive and bounded.
    const double latency = 1e-9 * static_cast<double>(obs.frame_arrivals[i] -
                                                      static_cast<std::int64_t>(f.capture_timestamp_ns) +
                                                      clock.offset_ns);
    CHECK(latency > 0.0);
    CHECK(latency < 1.0);
  }
  CHECK(per_eye[0] == per_eye[1]);
}

}  // namespace

TEST_CASE("serve options are validated") {
  auto o = small_options();
  o.eye_size = 1024;
  CHECK_THROWS_AS(Server{o}, InvalidArgument);
  o = small_options();
  o.capture_scale = 0.0;
  CHECK_THROWS_AS(Server{o}, InvalidArgument);
  o = small_options();
  o.jpeg_quality = 0;
  CHECK_THROWS_AS(Server{o}, InvalidArgument);
}

TEST_CASE("serve streams poses and eye views over both carriers") {
  Server server(small_options());
  std::thread runner([&] { server.run(); });
  for (bool ws : {true, false}) {
    CAPTURE(ws);
    auto conn = ws ? net::connect_websocket("127.0.0.1", server.port()) : net::connect_tcp("127.0.0.1", server.port());
    check_session(*conn, ws);
    conn->close();
  }
  server.stop();
  runner.join();
  const auto st = server.stats();
  CHECK(st.sessions == 2);
  CHECK(st.pings_answered == 2 * transport::kClockExchanges);
  CHECK(st.poses_received > 100);
  CHECK(st.frames_sent > 0);
}

TEST_CASE("serve applies config updates and rejects bad ones") {
  Server server(small_options());
  std::thread runner([&] { server.run(); });
  auto conn = net::connect_tcp("127.0.0.1", server.port());
  conn->send(transport::config_message(R"({"r": 2.5})"));
  conn->send(transport::config_message(R"({"r": -1})"));
  conn->send(transport::config_message(R"({"radius": 2})"));
  conn->send(transport::config_message("not json"));
  conn->send(transport::config_message(R"({"rezero": true})"));
  // A clock exchange flushes the queue: the server handles messages in order.
  net::measure_offset(*conn, Millis(2000), [](transport::Message&&) {});
  CHECK(server.sphere_radius() == 2.5);
  server.stop();
  runner.join();
  const auto st = server.stats();
  CHECK(st.configs_applied == 2);
  CHECK(st.configs_rejected == 3);
}

TEST_CASE("serve stops by itself after its duration") {
  auto o = small_options();
  o.duration_s = 0.3;
  Server server(o);
  const auto t0 = std::chrono::steady_clock::now();
  server.run();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed >= 0.3);
  CHECK(elapsed < 2.0);
}

TEST_CASE("a taken port is reported") {
  auto o = small_options();
  Server first(o);
  o.port = first.port();
  CHECK_THROWS_AS(Server{o}, net::NetError);
}
