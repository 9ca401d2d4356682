#include <algorithm>
#include <cmath>

#include "spheroview/transport.hpp"

namespace spheroview::transport {

namespace {

std::int64_t median(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace

OffsetEstimate estimate_offset(std::span<const ClockSample> samples) {
  if (samples.empty()) throw InvalidArgument("estimate_offset: no exchanges");
  std::vector<std::int64_t> offsets, rtts;
  for (const auto& s : samples) {
    offsets.push_back(s.offset());
    rtts.push_back(s.round_trip());
  }
  return {median(std::move(offsets)), median(std::move(rtts)), samples.size()};
}

SimulatedLink::SimulatedLink(Config cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
  if (cfg_.delay_min_ns < 0 || cfg_.delay_max_ns < cfg_.delay_min_ns)
    throw InvalidArgument("simulated link: need 0 <= delay_min <= delay_max");
}

std::int64_t SimulatedLink::delay() {
  std::uniform_int_distribution<std::int64_t> d(cfg_.delay_min_ns, cfg_.delay_max_ns);
  return d(rng_);
}

ClockSample SimulatedLink::exchange(std::int64_t t1) {
  const std::int64_t up = delay();
  const std::int64_t down = cfg_.symmetric ? up : delay();
  ClockSample s;
  s.t1 = t1;
  s.t2 = t1 + up + cfg_.skew_ns;
  s.t3 = s.t2 + cfg_.processing_ns;
  s.t4 = s.t3 - cfg_.skew_ns + down;
  return s;
}

OffsetEstimate SimulatedLink::measure(std::int64_t start_ns, std::int64_t spacing_ns) {
  std::vector<ClockSample> samples;
  std::int64_t t = start_ns;
  for (int i = 0; i < kClockExchanges; ++i) {
    samples.push_back(exchange(t));
    t = samples.back().t4 + spacing_ns;
  }
  return estimate_offset(samples);
}

LatencyReport latency_report(std::span<const LatencySample> samples, std::int64_t offset_ns) {
  LatencyReport r;
  std::vector<double> good;
  for (const auto& s : samples) {
    const std::int64_t ns = s.display_ns - s.capture_ns - offset_ns;
    const bool bad = ns < 0;
    r.anomaly.push_back(bad);
    r.latency_s.push_back(bad ? std::nan("") : static_cast<double>(ns) * 1e-9);
    if (bad)
      ++r.anomalies;
    else
      good.push_back(r.latency_s.back());
  }
  r.count = good.size();
  if (good.empty()) return r;
  double sum = 0.0;
  for (double v : good) sum += v;
  r.mean_s = sum / static_cast<double>(good.size());
  std::sort(good.begin(), good.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(good.size())));
  r.p95_s = good[std::max<std::size_t>(rank, 1) - 1];
  return r;
}

}  // namespace spheroview::transport
