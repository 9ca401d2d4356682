#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "spheroview/error.hpp"
#include "spheroview/transport.hpp"

namespace spheroview::net {

using Millis = std::chrono::milliseconds;

class NetError : public Error {
 public:
  using Error::Error;
};

/// Wall-clock nanoseconds since the Unix epoch; the stamp used on the wire.
std::int64_t now_ns();

/// One framed-message channel. send() is safe to call from several threads;
/// receive() must be called from one thread at a time.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send(const transport::Message& msg) = 0;
  /// Next complete message, or nothing on timeout. Throws NetError once the
  /// peer has closed or the stream is broken.
  virtual std::optional<transport::Message> receive(Millis timeout) = 0;
  virtual void close() = 0;
  virtual bool websocket() const = 0;
};

std::unique_ptr<Connection> connect_tcp(const std::string& host, std::uint16_t port, Millis timeout = Millis(2000));
std::unique_ptr<Connection> connect_websocket(const std::string& host, std::uint16_t port,
                                              const std::string& path = "/", Millis timeout = Millis(2000));

/// Accepts both carriers on one port. A connection that opens with the wire
/// magic is raw TCP; one that opens with an HTTP GET carrying a WebSocket
/// upgrade becomes a WebSocket session. Other GET requests are answered from
/// `ui_dir` (or 404) and closed. A raw TCP client must send first.
class Listener {
 public:
  explicit Listener(std::uint16_t port, std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Next session, or nullptr on timeout.
  std::unique_ptr<Connection> accept(Millis timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::optional<std::filesystem::path> ui_dir_;
};

/// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept(const std::string& client_key);

/// Default port: SPHEROVIEW_PORT if set and valid, else 8765.
std::uint16_t default_port();

/// Client side of the clock handshake: kClockExchanges ping/pong rounds.
/// Messages other than pongs that arrive meanwhile go to `other` if given.
/// Throws NetError on timeout.
transport::OffsetEstimate measure_offset(Connection& conn, Millis timeout = Millis(1000),
                                         const std::function<void(transport::Message&&)>& other = {});

/// Server side: the pong for a ping received at `t2` (server clock).
transport::Message answer_ping(const transport::Message& ping, std::int64_t t2);

}  // namespace spheroview::net
