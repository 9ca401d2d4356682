#include <algorithm>
#include <bit>
#include <cstring>

#include "spheroview/transport.hpp"

namespace spheroview::transport {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

void expect_type(const Message& m, MsgType type, const char* what) {
  if (m.type != type) throw FramingError(std::string(what) + ": unexpected message type");
}

}  // namespace

bool known_type(std::uint8_t type) { return type >= 1 && type <= 5; }

void encode_into(const Message& msg, std::vector<std::uint8_t>& out) {
  if (msg.payload.size() > kMaxPayload) throw FramingError("payload exceeds 64 MiB");
  out.reserve(out.size() + kHeaderSize + msg.payload.size());
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(static_cast<std::uint8_t>(msg.type));
  put_u32(out, static_cast<std::uint32_t>(msg.payload.size()));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
}

std::vector<std::uint8_t> encode(const Message& msg) {
  std::vector<std::uint8_t> out;
  encode_into(msg, out);
  return out;
}

std::optional<Decoded> decode(std::span<const std::uint8_t> bytes) {
  if (!bytes.empty() && bytes[0] != kMagic0) throw FramingError("bad magic");
  if (bytes.size() >= 2 && bytes[1] != kMagic1) throw FramingError("bad magic");
  if (bytes.size() < kHeaderSize) return std::nullopt;
  if (!known_type(bytes[2])) throw FramingError("unknown message type");
  const std::uint32_t len = get_u32(bytes.data() + 3);
  if (len > kMaxPayload) throw FramingError("payload exceeds 64 MiB");
  if (bytes.size() < kHeaderSize + len) return std::nullopt;
  Decoded d;
  d.message.type = static_cast<MsgType>(bytes[2]);
  d.message.payload.assign(bytes.begin() + kHeaderSize, bytes.begin() + kHeaderSize + len);
  d.consumed = kHeaderSize + len;
  return d;
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  compact();
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void StreamDecoder::compact() {
  if (pos_ > 0 && pos_ * 2 >= buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
}

std::optional<Message> StreamDecoder::next() {
  while (pos_ < buf_.size()) {
    const std::span<const std::uint8_t> view(buf_.data() + pos_, buf_.size() - pos_);
    try {
      auto d = decode(view);
      if (!d) return std::nullopt;
      pos_ += d->consumed;
      return std::move(d->message);
    } catch (const FramingError&) {
      ++errors_;
      // Skip at least one byte, then resume at the next candidate magic.
      const auto from = view.begin() + 1;
      const auto it = std::find(from, view.end(), kMagic0);
      pos_ += static_cast<std::size_t>(it - view.begin());
    }
  }
  return std::nullopt;
}

Message to_message(const FrameMsg& m) {
  if (m.encoding == Encoding::kRawRgb8 &&
      m.payload.size() != static_cast<std::size_t>(m.width) * m.height * 3)
    throw InvalidArgument("raw frame payload must hold width*height*3 bytes");
  Message msg{MsgType::kFrame, {}};
  auto& out = msg.payload;
  out.reserve(kFrameHeaderSize + m.payload.size());
  put_u64(out, m.capture_timestamp_ns);
  out.push_back(m.camera_id);
  out.push_back(static_cast<std::uint8_t>(m.encoding));
  put_u16(out, m.width);
  put_u16(out, m.height);
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return msg;
}

Message to_message(const PoseMsg& m) {
  Message msg{MsgType::kPose, {}};
  msg.payload.reserve(kPoseSize);
  put_u64(msg.payload, m.timestamp_ns);
  msg.payload.push_back(m.frame_id);
  for (double v : m.pose) put_f64(msg.payload, v);
  return msg;
}

Message to_message(const ClockMsg& m, MsgType type) {
  if (type != MsgType::kClockPing && type != MsgType::kClockPong)
    throw InvalidArgument("clock message must be a ping or a pong");
  Message msg{type, {}};
  msg.payload.reserve(kClockSize);
  put_u64(msg.payload, m.t1);
  put_u64(msg.payload, m.t2);
  put_u64(msg.payload, m.t3);
  return msg;
}

Message config_message(const std::string& json_text) {
  return {MsgType::kConfig, std::vector<std::uint8_t>(json_text.begin(), json_text.end())};
}

FrameMsg parse_frame(const Message& m) {
  expect_type(m, MsgType::kFrame, "frame");
  const auto& p = m.payload;
  if (p.size() < kFrameHeaderSize) throw FramingError("frame: truncated header");
  FrameMsg f;
  f.capture_timestamp_ns = get_u64(p.data());
  f.camera_id = p[8];
  if (p[9] > 1) throw FramingError("frame: unknown encoding");
  f.encoding = static_cast<Encoding>(p[9]);
  f.width = get_u16(p.data() + 10);
  f.height = get_u16(p.data() + 12);
  f.payload.assign(p.begin() + kFrameHeaderSize, p.end());
  if (f.encoding == Encoding::kRawRgb8 && f.payload.size() != static_cast<std::size_t>(f.width) * f.height * 3)
    throw FramingError("frame: raw payload size does not match dimensions");
  return f;
}

PoseMsg parse_pose(const Message& m) {
  expect_type(m, MsgType::kPose, "pose");
  if (m.payload.size() != kPoseSize) throw FramingError("pose: payload must be 65 bytes");
  PoseMsg out;
  out.timestamp_ns = get_u64(m.payload.data());
  out.frame_id = m.payload[8];
  for (std::size_t i = 0; i < 7; ++i) out.pose[i] = get_f64(m.payload.data() + 9 + 8 * i);
  return out;
}

ClockMsg parse_clock(const Message& m) {
  if (m.type != MsgType::kClockPing && m.type != MsgType::kClockPong)
    throw FramingError("clock: unexpected message type");
  if (m.payload.size() != kClockSize) throw FramingError("clock: payload must be 24 bytes");
  return {get_u64(m.payload.data()), get_u64(m.payload.data() + 8), get_u64(m.payload.data() + 16)};
}

std::string parse_config(const Message& m) {
  expect_type(m, MsgType::kConfig, "config");
  return {m.payload.begin(), m.payload.end()};
}

PoseMsg PoseMsg::from_pose(std::uint64_t t_ns, std::uint8_t frame_id, const Pose& p) {
  const auto& q = p.rotation();
  const auto& t = p.translation();
  return {t_ns, frame_id, {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()}};
}

Pose PoseMsg::to_pose() const {
  const geom::Quat q(pose[0], pose[1], pose[2], pose[3]);
  if (!(q.norm() > 1e-12)) throw InvalidArgument("pose message carries a zero quaternion");
  return {q, geom::Vec3(pose[4], pose[5], pose[6])};
}

}  // namespace spheroview::transport
