#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "spheroview/sim.hpp"

namespace spheroview::serve {

struct ServeOptions {
  std::uint16_t port = 8765;  ///< 0 picks a free port
  sim::Scene scene = sim::default_scene();
  sim::SimConfig sim;          ///< rates, robot dynamics, guard, rig and eye offsets
  std::optional<std::filesystem::path> ui_dir;
  double duration_s = 0.0;     ///< 0 runs until stop()
  int eye_size = 512;          ///< square eye views, at most 512
  int jpeg_quality = 80;
  double stream_rate_hz = 30.0;
  double capture_scale = 0.5;  ///< camera resolution relative to the rig
  std::function<void(const std::string&)> log;

  void validate() const;
};

struct ServeStats {
  std::uint64_t sessions = 0;
  std::uint64_t frames_sent = 0;         ///< eye pairs
  std::uint64_t frames_skipped = 0;      ///< eye outside the sphere
  std::uint64_t poses_received = 0;
  std::uint64_t pings_answered = 0;
  std::uint64_t configs_applied = 0;
  std::uint64_t configs_rejected = 0;
  double mean_frame_build_s = 0.0;       ///< capture + reproject + encode per eye pair
};

/// Live counterpart of the closed-loop simulation. A real-time control loop
/// tracks the newest operator head pose (frame 0) with the guarded filter and
/// drives the simulated robot head; the robot head, commanded target, left
/// camera and left eye poses are broadcast at the report rate and JPEG eye
/// views at the stream rate. Clock pings are answered; Config messages
/// {"r": metres, "rezero": true} change the sphere radius or re-capture the
/// nominal pose. The first operator pose received sets the nominal pose.
class Server {
 public:
  /// Binds the port; throws net::NetError if it is taken.
  explicit Server(ServeOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const;
  /// Blocks until duration_s elapses or stop() is called.
  void run();
  void stop();
  ServeStats stats() const;
  double sphere_radius() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spheroview::serve
