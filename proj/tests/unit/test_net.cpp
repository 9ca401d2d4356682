#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "spheroview/net.hpp"

// After Eigen: resolv.h defines a _res macro that collides with Eigen internals.
#include <httplib.h>

using namespace spheroview;
using namespace spheroview::net;
using transport::Message;
using transport::MsgType;

namespace {

// Accepts one session and echoes every message; pings get pongs.
class EchoServer {
 public:
  explicit EchoServer(std::optional<std::filesystem::path> ui = std::nullopt) : listener_(0, std::move(ui)) {
    thread_ = std::thread([this] {
      auto conn = listener_.accept(Millis(5000));
      if (!conn) return;
      was_websocket_ = conn->websocket();
      try {
        for (;;) {
          auto m = conn->receive(Millis(5000));
          if (!m) return;
          const std::int64_t t2 = now_ns();
          if (m->type == MsgType::kClockPing)
            conn->send(answer_ping(*m, t2));
          else
            conn->send(*m);
        }
      } catch (const NetError&) {
      }
    });
  }
  ~EchoServer() { thread_.join(); }
  std::uint16_t port() const { return listener_.port(); }
  bool was_websocket() const { return was_websocket_; }

 private:
  Listener listener_;
  std::thread thread_;
  std::atomic<bool> was_websocket_{false};
};

std::vector<Message> sample_messages() {
  std::mt19937 rng(7);
  std::vector<Message> out;
  for (std::size_t n : {0u, 1u, 125u, 126u, 65535u, 65536u, 3u << 20}) {
    Message m{MsgType::kFrame, std::vector<std::uint8_t>(n)};
    for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng());
    out.push_back(std::move(m));
  }
  out.push_back(transport::to_message(
      transport::PoseMsg::from_pose(42, 1, geom::Pose::from_translation({0.1, -0.2, 1.2}))));
  out.push_back(transport::config_message(R"({"r":2.0})"));
  return out;
}

void round_trip(Connection& conn) {
  for (const auto& m : sample_messages()) {
    conn.send(m);
    auto back = conn.receive(Millis(5000));
    REQUIRE(back.has_value());
    CHECK(*back == m);
  }
}

}  // namespace

TEST_CASE("websocket accept key matches the protocol example") {
  CHECK(websocket_accept("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST_CASE("tcp carrier round trips framed messages") {
  EchoServer server;
  auto conn = connect_tcp("127.0.0.1", server.port());
  CHECK_FALSE(conn->websocket());
  round_trip(*conn);
  conn->close();
  CHECK_FALSE(server.was_websocket());
}

TEST_CASE("websocket carrier round trips framed messages") {
  EchoServer server;
  auto conn = connect_websocket("127.0.0.1", server.port(), "/stream");
  CHECK(conn->websocket());
  round_trip(*conn);
  conn->close();
  CHECK(server.was_websocket());
}

TEST_CASE("receive times out quietly and reports a closed peer") {
  Listener listener(0);
  auto client = connect_tcp("127.0.0.1", listener.port());
  client->send(transport::config_message("{}"));
  auto server = listener.accept(Millis(2000));
  REQUIRE(server);
  CHECK(server->receive(Millis(1000)).has_value());
  CHECK_FALSE(client->receive(Millis(20)).has_value());
  server->close();
  CHECK_THROWS_AS(client->receive(Millis(1000)), NetError);
}

TEST_CASE("loopback clock offset is near zero on both carriers") {
  for (bool ws : {false, true}) {
    EchoServer server;
    auto conn = ws ? connect_websocket("127.0.0.1", server.port()) : connect_tcp("127.0.0.1", server.port());
    const auto est = measure_offset(*conn);
    CHECK(est.samples == static_cast<std::size_t>(transport::kClockExchanges));
    CHECK(std::llabs(est.offset_ns) < 1'000'000);
    CHECK(est.round_trip_ns >= 0);
    conn->close();
  }
}

TEST_CASE("measure_offset forwards unrelated traffic") {
  Listener listener(0);
  auto client = connect_tcp("127.0.0.1", listener.port());
  std::thread t([&] {
    auto server = listener.accept(Millis(2000));
    REQUIRE(server);
    for (int i = 0; i < transport::kClockExchanges; ++i) {
      auto ping = server->receive(Millis(2000));
      REQUIRE(ping);
      server->send(transport::config_message("{}"));
      server->send(answer_ping(*ping, now_ns()));
    }
  });
  int forwarded = 0;
  measure_offset(*client, Millis(2000), [&](Message&& m) {
    CHECK(m.type == MsgType::kConfig);
    ++forwarded;
  });
  t.join();
  CHECK(forwarded == transport::kClockExchanges);
}

TEST_CASE("plain http requests get static files and the listener survives garbage") {
  const auto dir = std::filesystem::temp_directory_path() / "spheroview_net_ui";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>viewer</html>";
  Listener listener(0, dir);
  std::thread t([&] {
    httplib::Client http("127.0.0.1", listener.port());
    auto index = http.Get("/");
    REQUIRE(index);
    CHECK(index->status == 200);
    CHECK(index->body == "<html>viewer</html>");
    CHECK(index->get_header_value("Content-Type").find("text/html") == 0);
    auto missing = http.Get("/nope.js");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto escape = http.Get("/../etc/passwd");
    REQUIRE(escape);
    CHECK(escape->status == 404);
    {
      // Garbage is dropped without taking the listener down.
      httplib::Client junk("127.0.0.1", listener.port());
      junk.set_read_timeout(0, 200000);
      junk.Post("/x", "junk", "text/plain");
    }
    auto conn = connect_tcp("127.0.0.1", listener.port());
    conn->send(transport::config_message("{}"));
  });
  auto conn = listener.accept(Millis(5000));
  REQUIRE(conn);
  auto m = conn->receive(Millis(2000));
  REQUIRE(m);
  CHECK(m->type == MsgType::kConfig);
  t.join();
  std::filesystem::remove_all(dir);
}

TEST_CASE("default port honours the environment") {
  ::unsetenv("SPHEROVIEW_PORT");
  CHECK(default_port() == 8765);
  ::setenv("SPHEROVIEW_PORT", "9100", 1);
  CHECK(default_port() == 9100);
  ::setenv("SPHEROVIEW_PORT", "junk", 1);
  CHECK(default_port() == 8765);
  ::unsetenv("SPHEROVIEW_PORT");
}
