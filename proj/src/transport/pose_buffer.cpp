#include <mutex>

#include "spheroview/transport.hpp"

namespace spheroview::transport {

TimedPoseBuffer::TimedPoseBuffer(std::uint8_t frame_id, std::size_t capacity)
    : frame_id_(frame_id), capacity_(capacity) {
  if (capacity_ < 2) throw InvalidArgument("pose buffer capacity must be at least 2");
  ring_.resize(capacity_, Entry{0, Pose::identity()});
}

void TimedPoseBuffer::insert(std::int64_t t_ns, const Pose& pose) {
  std::unique_lock lock(mutex_);
  if (count_ > 0 && t_ns <= at(count_ - 1).t_ns)
    throw InvalidArgument("pose buffer stamps must be strictly increasing");
  if (count_ < capacity_) {
    ring_[(start_ + count_) % capacity_] = {t_ns, pose};
    ++count_;
  } else {
    ring_[start_] = {t_ns, pose};
    start_ = (start_ + 1) % capacity_;
  }
}

PoseLookup TimedPoseBuffer::lookup(std::int64_t t_ns) const {
  std::shared_lock lock(mutex_);
  if (count_ == 0) throw Error("empty pose buffer");
  const Entry& first = at(0);
  const Entry& last = at(count_ - 1);
  if (t_ns < first.t_ns) return {first.pose, true};
  if (t_ns > last.t_ns) return {last.pose, true};
  // First entry with stamp >= t_ns.
  std::size_t lo = 0, hi = count_ - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (at(mid).t_ns < t_ns)
      lo = mid + 1;
    else
      hi = mid;
  }
  const Entry& b = at(lo);
  if (b.t_ns == t_ns) return {b.pose, false};
  const Entry& a = at(lo - 1);
  const double s = static_cast<double>(t_ns - a.t_ns) / static_cast<double>(b.t_ns - a.t_ns);
  return {geom::interpolate(a.pose, b.pose, s), false};
}

std::size_t TimedPoseBuffer::size() const {
  std::shared_lock lock(mutex_);
  return count_;
}

std::optional<std::int64_t> TimedPoseBuffer::oldest() const {
  std::shared_lock lock(mutex_);
  if (count_ == 0) return std::nullopt;
  return at(0).t_ns;
}

std::optional<std::int64_t> TimedPoseBuffer::newest() const {
  std::shared_lock lock(mutex_);
  if (count_ == 0) return std::nullopt;
  return at(count_ - 1).t_ns;
}

}  // namespace spheroview::transport
