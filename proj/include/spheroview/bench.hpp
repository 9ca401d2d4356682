#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spheroview/render.hpp"

namespace spheroview::bench {

struct MachineInfo {
  std::string cpu;           ///< model name as reported by the OS
  unsigned hardware_threads = 0;
  std::string compiler;
  std::string simd;          ///< widest vector extension the build targets
};

MachineInfo describe_machine();

struct StereoBenchmark {
  int frames = 0;
  int width = 0;
  int height = 0;
  int threads = 0;           ///< as configured; 0 means all hardware threads
  std::vector<double> frame_ms;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
  MachineInfo machine;
};

/// Times render_stereo on captures of the default scene with the default rig.
/// The head moves slightly every frame so no two frames are identical.
/// `warmup` untimed frames run first.
StereoBenchmark benchmark_stereo(int frames, const render::RenderConfig& cfg, int warmup = 10);

void to_json(nlohmann::json& j, const MachineInfo& m);
/// Summary only; per-frame times are left out.
void to_json(nlohmann::json& j, const StereoBenchmark& b);

}  // namespace spheroview::bench
