#include "spheroview/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "spheroview/sim.hpp"

namespace spheroview::bench {

MachineInfo describe_machine() {
  MachineInfo m;
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) m.cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  if (m.cpu.empty()) m.cpu = "unknown";
  m.hardware_threads = std::thread::hardware_concurrency();
#if defined(__clang__)
  m.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  m.compiler = "gcc " __VERSION__;
#else
  m.compiler = "unknown";
#endif
#if defined(__AVX512F__)
  m.simd = "avx512f";
#elif defined(__AVX2__)
  m.simd = "avx2";
#elif defined(__SSE2__)
  m.simd = "sse2";
#else
  m.simd = "none";
#endif
  return m;
}

StereoBenchmark benchmark_stereo(int frames, const render::RenderConfig& cfg, int warmup) {
  if (frames < 1) throw InvalidArgument("benchmark needs at least one frame");
  cfg.validate();
  const sim::SimConfig sc;
  const sim::Scene scene = sim::default_scene();
  const geom::Pose head = sc.t_robot_nom;
  const geom::Pose cam = head * sc.t_head_cam;
  const auto left = sim::capture(scene, cam, sc.rig.left, cfg.threads);
  const auto right = sim::capture(scene, cam * sc.rig.t_l_r, sc.rig.right, cfg.threads);

  StereoBenchmark b;
  b.frames = frames;
  b.width = cfg.out_width;
  b.height = cfg.out_height;
  b.threads = cfg.threads;
  b.machine = describe_machine();
  b.frame_ms.reserve(static_cast<std::size_t>(frames));
  for (int i = -warmup; i < frames; ++i) {
    // Small lateral and yaw wobble, well inside the sphere.
    const double s = std::sin(0.05 * i);
    const geom::Pose eye_head =
        geom::Pose::from_translation({0.0, 0.05 * s, 0.0}) * head *
        geom::Pose::from_axis_angle(geom::Vec3::UnitZ(), 0.1 * s);
    const auto views = render::render_stereo(left, right, sc.rig, cam, eye_head, sc.eyes, cfg);
    if (i >= 0) b.frame_ms.push_back(std::chrono::duration<double, std::milli>(views.wall_time).count());
  }
  std::vector<double> sorted = b.frame_ms;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(k, 1, sorted.size()) - 1];
  };
  b.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  b.p50_ms = rank(0.50);
  b.p95_ms = rank(0.95);
  b.max_ms = sorted.back();
  return b;
}

void to_json(nlohmann::json& j, const MachineInfo& m) {
  j = nlohmann::json{
      {"cpu", m.cpu}, {"hardware_threads", m.hardware_threads}, {"compiler", m.compiler}, {"simd", m.simd}};
}

void to_json(nlohmann::json& j, const StereoBenchmark& b) {
  j = nlohmann::json{{"schema", 1},        {"frames", b.frames},   {"width", b.width},
                     {"height", b.height}, {"threads", b.threads}, {"mean_ms", b.mean_ms},
                     {"p50_ms", b.p50_ms}, {"p95_ms", b.p95_ms},   {"max_ms", b.max_ms},
                     {"machine", b.machine}};
}

}  // namespace spheroview::bench
