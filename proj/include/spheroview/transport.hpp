#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "spheroview/error.hpp"
#include "spheroview/geom.hpp"

namespace spheroview::transport {

using geom::Pose;

// ---------------------------------------------------------------------------
// Time-indexed pose history

enum class FrameId : std::uint8_t {
  kOperatorHead = 0,
  kRobotHead = 1,
  kMappedTarget = 2,
  kLeftCamera = 3,
  kLeftEye = 4,
};

struct PoseLookup {
  Pose pose;
  bool extrapolated = false;  ///< query fell outside the stored span and was clamped
};

/// Bounded ring of strictly increasing (stamp, pose) pairs. Safe for one
/// writer and many readers.
class TimedPoseBuffer {
 public:
  explicit TimedPoseBuffer(std::uint8_t frame_id = 0, std::size_t capacity = 1024);

  /// Throws InvalidArgument unless t_ns is newer than every stored stamp.
  void insert(std::int64_t t_ns, const Pose& pose);
  /// Exact hit, interpolation between neighbours, or clamp with the flag set.
  /// Throws Error("empty pose buffer") when nothing has been inserted.
  PoseLookup lookup(std::int64_t t_ns) const;

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::uint8_t frame_id() const { return frame_id_; }
  std::optional<std::int64_t> oldest() const;
  std::optional<std::int64_t> newest() const;

 private:
  struct Entry {
    std::int64_t t_ns;
    Pose pose;
  };
  const Entry& at(std::size_t i) const { return ring_[(start_ + i) % capacity_]; }

  std::uint8_t frame_id_;
  std::size_t capacity_;
  std::vector<Entry> ring_;
  std::size_t start_ = 0;
  std::size_t count_ = 0;
  mutable std::shared_mutex mutex_;
};

// ---------------------------------------------------------------------------
// Wire framing: 'S' 'V' | type u8 | length u32 LE | payload

class FramingError : public Error {
 public:
  using Error::Error;
};

enum class MsgType : std::uint8_t {
  kFrame = 1,
  kPose = 2,
  kClockPing = 3,
  kClockPong = 4,
  kConfig = 5,  ///< UTF-8 JSON object
};

inline constexpr std::uint8_t kMagic0 = 0x53;
inline constexpr std::uint8_t kMagic1 = 0x56;
inline constexpr std::size_t kHeaderSize = 7;
inline constexpr std::size_t kMaxPayload = 64u << 20;

struct Message {
  MsgType type = MsgType::kClockPing;
  std::vector<std::uint8_t> payload;
  bool operator==(const Message&) const = default;
};

bool known_type(std::uint8_t type);

std::vector<std::uint8_t> encode(const Message& msg);
void encode_into(const Message& msg, std::vector<std::uint8_t>& out);

struct Decoded {
  Message message;
  std::size_t consumed = 0;
};

/// Decodes one message from the front of `bytes`. Returns nothing when more
/// bytes are needed; throws FramingError on bad magic, unknown type or a
/// payload above kMaxPayload.
std::optional<Decoded> decode(std::span<const std::uint8_t> bytes);

/// Incremental decoder for a byte stream. Garbage is skipped up to the next
/// magic pair and counted.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Message> next();
  std::size_t errors() const { return errors_; }
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  void compact();
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t errors_ = 0;
};

// ---------------------------------------------------------------------------
// Typed payloads

enum class Encoding : std::uint8_t { kRawRgb8 = 0, kJpeg = 1 };

struct FrameMsg {
  std::uint64_t capture_timestamp_ns = 0;
  std::uint8_t camera_id = 0;
  Encoding encoding = Encoding::kRawRgb8;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> payload;
  bool operator==(const FrameMsg&) const = default;
};
inline constexpr std::size_t kFrameHeaderSize = 14;

struct PoseMsg {
  std::uint64_t timestamp_ns = 0;
  std::uint8_t frame_id = 0;
  std::array<double, 7> pose{1, 0, 0, 0, 0, 0, 0};  ///< qw qx qy qz tx ty tz
  bool operator==(const PoseMsg&) const = default;

  static PoseMsg from_pose(std::uint64_t t_ns, std::uint8_t frame_id, const Pose& p);
  /// Throws InvalidArgument for a zero quaternion.
  Pose to_pose() const;
};
inline constexpr std::size_t kPoseSize = 65;

struct ClockMsg {
  std::uint64_t t1 = 0;  ///< client send
  std::uint64_t t2 = 0;  ///< server receive
  std::uint64_t t3 = 0;  ///< server send
  bool operator==(const ClockMsg&) const = default;
};
inline constexpr std::size_t kClockSize = 24;

Message to_message(const FrameMsg& m);
Message to_message(const PoseMsg& m);
Message to_message(const ClockMsg& m, MsgType type);
Message config_message(const std::string& json_text);

/// Each parser checks the message type and exact payload layout, throwing FramingError.
FrameMsg parse_frame(const Message& m);
PoseMsg parse_pose(const Message& m);
ClockMsg parse_clock(const Message& m);
std::string parse_config(const Message& m);

// ---------------------------------------------------------------------------
// Clock offset and latency accounting

struct ClockSample {
  std::int64_t t1 = 0;  ///< client send, client clock
  std::int64_t t2 = 0;  ///< server receive, server clock
  std::int64_t t3 = 0;  ///< server send, server clock
  std::int64_t t4 = 0;  ///< client receive, client clock

  std::int64_t offset() const { return ((t2 - t1) + (t3 - t4)) / 2; }
  std::int64_t round_trip() const { return (t4 - t1) - (t3 - t2); }
};

struct OffsetEstimate {
  std::int64_t offset_ns = 0;      ///< server clock minus client clock (median)
  std::int64_t round_trip_ns = 0;  ///< median round trip
  std::size_t samples = 0;
};

inline constexpr int kClockExchanges = 8;

/// Median over the exchanges. Throws InvalidArgument on an empty set.
OffsetEstimate estimate_offset(std::span<const ClockSample> samples);

/// In-process stand-in for a network peer: a server clock skewed from the
/// client by `skew_ns`, reached over a link with random one-way delays.
class SimulatedLink {
 public:
  struct Config {
    std::int64_t skew_ns = 0;
    std::int64_t delay_min_ns = 200'000;
    std::int64_t delay_max_ns = 3'000'000;
    std::int64_t processing_ns = 50'000;
    bool symmetric = false;  ///< use the same delay in both directions
  };
  SimulatedLink(Config cfg, std::uint64_t seed);

  /// One ping/pong starting at client time `t1`.
  ClockSample exchange(std::int64_t t1);
  /// kClockExchanges exchanges spaced `spacing_ns` apart.
  OffsetEstimate measure(std::int64_t start_ns, std::int64_t spacing_ns = 10'000'000);

 private:
  std::int64_t delay();
  Config cfg_;
  std::mt19937_64 rng_;
};

struct LatencySample {
  std::int64_t capture_ns = 0;  ///< capture clock
  std::int64_t display_ns = 0;  ///< display clock
};

struct LatencyReport {
  std::vector<double> latency_s;  ///< per frame; NaN where flagged
  std::vector<bool> anomaly;      ///< negative after correction
  std::size_t count = 0;          ///< frames in the summary
  std::size_t anomalies = 0;
  double mean_s = 0.0;
  double p95_s = 0.0;
};

/// latency = display - capture - offset, with `offset_ns` the display clock
/// minus the capture clock. Negative results are flagged and left out of the
/// mean and the 95th percentile (nearest rank).
LatencyReport latency_report(std::span<const LatencySample> samples, std::int64_t offset_ns);

}  // namespace spheroview::transport
