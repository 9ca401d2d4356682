#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spheroview/bench.hpp"
#include "spheroview/calib.hpp"
#include "spheroview/camera.hpp"
#include "spheroview/image.hpp"
#include "spheroview/net.hpp"
#include "spheroview/render.hpp"
#include "spheroview/serve.hpp"
#include "spheroview/sim.hpp"

namespace spheroview::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kDeg = std::numbers::pi / 180.0;

// Argument combinations that CLI11 cannot express on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p, const std::string& what) {
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot open " + what + " file " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(what + " file " + p.string() + ": " + e.what());
  }
}

void expect_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw InvalidArgument(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known) throw InvalidArgument(what + ": unknown key \"" + it.key() + "\"");
  }
  if (j.contains("schema") && j["schema"] != 1) throw InvalidArgument(what + ": expected \"schema\": 1");
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Effective configuration next to an output, e.g. out.csv.run.json.
void write_sidecar(const fs::path& output, const std::string& command, json effective) {
  write_json(fs::path(output.string() + ".run.json"),
             json{{"schema", 1}, {"command", command}, {"effective", std::move(effective)}});
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

geom::Pose load_pose(const std::string& path) {
  const json j = read_json(path, "pose");
  expect_keys(j, {"schema", "q", "t"}, "pose file " + path);
  return j.get<geom::Pose>();
}

camera::StereoRig load_rig_or_default(const std::string& path) {
  return path.empty() ? camera::default_rig() : camera::load_rig(path);
}

sim::Scene load_scene_or_default(const std::string& path) {
  return path.empty() ? sim::default_scene() : sim::load_scene(path);
}

sim::Trajectory load_trajectory_arg(const std::string& arg) {
  if (arg == "sweep") return sim::sweep_trajectory();
  if (arg == "dynamic") return sim::dynamic_trajectory();
  return sim::load_trajectory(arg);
}

sim::SimConfig load_sim_config(const std::string& config_path, const std::string& rig_path) {
  sim::SimConfig c;
  if (!config_path.empty()) sim::merge_json(read_json(config_path, "config"), c);
  if (!rig_path.empty()) {
    c.rig = camera::load_rig(rig_path);
    c.eyes.right = c.t_head_cam * c.rig.t_l_r;
  }
  return c;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  bool synthetic = false;
  std::size_t n = 200;
  double noise_px = 0.5;
  std::uint64_t seed = 1;
  double perturb_m = 0.05;
  double perturb_deg = 5.0;
  std::string samples, rig, init, out, samples_out;
  bool single_side = false;
  int max_iterations = 100;
};

int run_calibrate(const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
  if (a.synthetic == !a.samples.empty()) throw UsageError("give exactly one of --synthetic or --samples");
  if (!a.samples.empty() && a.init.empty()) throw UsageError("--samples needs --init");
  const camera::StereoRig rig = load_rig_or_default(a.rig);

  std::vector<calib::CalibSample> samples;
  calib::ChainParams init;
  std::optional<calib::ChainParams> truth;
  if (a.synthetic) {
    truth = calib::default_ground_truth();
    samples = calib::generate_synthetic(*truth, rig, {a.n, a.noise_px, a.seed});
    init = calib::perturb(*truth, a.perturb_m, a.perturb_deg * kDeg, a.seed);
  } else {
    samples = calib::samples_from_json(read_json(a.samples, "samples"));
    const json ij = read_json(a.init, "init");
    expect_keys(ij, {"schema", "t_cam", "t_mount", "t_mark"}, "init file " + a.init);
    init = ij.get<calib::ChainParams>();
  }

  calib::SolveOptions so;
  so.allow_single_side = a.single_side;
  so.max_iterations = a.max_iterations;
  const calib::CalibEstimate est = calib::solve(samples, rig, init, so);

  json result = est;
  result["schema"] = 1;
  if (truth) {
    const auto e = calib::recovery_error(est.params, *truth);
    result["recovery_error"] = {{"cam_translation_m", e.cam_translation_m},
                                {"cam_rotation_deg", e.cam_rotation_rad / kDeg},
                                {"mount_translation_m", e.mount_translation_m},
                                {"mount_rotation_deg", e.mount_rotation_rad / kDeg},
                                {"mark_translation_m", e.mark_translation_m}};
  }
  if (!a.samples_out.empty()) write_json(a.samples_out, calib::samples_to_json(samples));
  if (!a.out.empty()) {
    write_json(a.out, result);
    write_sidecar(a.out, "calibrate",
                  {{"synthetic", a.synthetic}, {"n", a.n}, {"noise_px", a.noise_px}, {"seed", a.seed},
                   {"perturb_m", a.perturb_m}, {"perturb_deg", a.perturb_deg}, {"samples", a.samples},
                   {"init", init}, {"rig", rig}, {"single_side", a.single_side},
                   {"max_iterations", a.max_iterations}});
  } else {
    out << result.dump(2) << "\n";
  }
  err << (est.converged ? "converged" : "did not converge") << " after " << est.iterations << " iterations, rms "
      << num(est.rms_px) << " px over " << est.samples_used << " samples\n";
  return est.converged ? kExitOk : kExitRuntime;
}

struct RenderArgs {
  std::string frame, rig, cam_pose, eye_pose, out;
  std::string side = "left";
  double r = 1.0;
  int width = 800;
  int height = 800;
  double fov_deg = 90.0;
  int threads = 0;
};

int run_render(const RenderArgs& a, std::ostream&, std::ostream& err) {
  const camera::StereoRig rig = load_rig_or_default(a.rig);
  const auto& k = a.side == "right" ? rig.right : rig.left;
  const image::Image frame = image::read_png(a.frame);
  render::RenderConfig cfg;
  cfg.r = a.r;
  cfg.out_width = a.width;
  cfg.out_height = a.height;
  cfg.eye_fov = a.fov_deg * kDeg;
  cfg.threads = a.threads;
  const geom::Pose cam = load_pose(a.cam_pose);
  const geom::Pose eye = load_pose(a.eye_pose);
  const render::EyeView view = render::reproject(frame, k, cam, eye, cfg);
  image::write_png(view.image, a.out);
  write_sidecar(a.out, "render",
                {{"frame", a.frame}, {"side", a.side}, {"intrinsics", k}, {"cam_pose", cam}, {"eye_pose", eye},
                 {"r", a.r}, {"width", a.width}, {"height", a.height}, {"fov_deg", a.fov_deg}});
  err << "rendered " << a.width << "x" << a.height << " in "
      << num(std::chrono::duration<double, std::milli>(view.render_time).count()) << " ms\n";
  return kExitOk;
}

struct CaptureArgs {
  std::string scene, rig, cam_pose, out;
  std::string side = "left";
  double scale = 1.0;
  int threads = 0;
};

int run_capture(const CaptureArgs& a, std::ostream&, std::ostream&) {
  const camera::StereoRig rig = load_rig_or_default(a.rig);
  const auto k = camera::scale_intrinsics(a.side == "right" ? rig.right : rig.left, a.scale);
  const sim::Scene scene = load_scene_or_default(a.scene);
  const geom::Pose cam = load_pose(a.cam_pose);
  image::write_png(sim::capture(scene, cam, k, a.threads), a.out);
  write_sidecar(a.out, "capture",
                {{"scene", scene}, {"side", a.side}, {"intrinsics", k}, {"cam_pose", cam}, {"scale", a.scale}});
  return kExitOk;
}

struct ErrorCurveArgs {
  double dx = 0.1;
  double r = 1.0;
  double d_min = 0.2;
  double d_max = 3.0;
  int steps = 50;
  std::string csv;
};

int run_error_curve(const ErrorCurveArgs& a, std::ostream& out, std::ostream&) {
  if (!(a.d_max > a.d_min)) throw UsageError("--d-max must exceed --d-min");
  const auto curve = render::error_curve(a.dx, a.r, a.d_min, a.d_max, a.steps);
  std::ostringstream text;
  text << "d_m,gamma_deg\n";
  for (const auto& s : curve) text << num(s.d) << "," << num(s.gamma / kDeg) << "\n";
  if (a.csv.empty()) {
    out << text.str();
    return kExitOk;
  }
  write_text(a.csv, text.str());
  write_sidecar(a.csv, "error-curve",
                {{"dx", a.dx}, {"r", a.r}, {"d_min", a.d_min}, {"d_max", a.d_max}, {"steps", a.steps}});
  out << "rows " << curve.size() << ", gamma(d_max) " << num(curve.back().gamma / kDeg) << " deg, asymptote "
      << num(render::angular_error_asymptote(a.dx, a.r) / kDeg) << " deg\n";
  return kExitOk;
}

struct SimulateArgs {
  std::string scene, trajectory = "dynamic", config, rig, metrics, frames, summary;
  std::optional<std::uint64_t> seed;
};

int run_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  sim::SimConfig cfg = load_sim_config(a.config, a.rig);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.frames.empty()) {
    cfg.render_frames = true;
    cfg.frames_dir = a.frames;
    if (cfg.save_every == 0) cfg.save_every = 1;
  }
  const sim::Scene scene = load_scene_or_default(a.scene);
  const sim::Trajectory path = load_trajectory_arg(a.trajectory);
  const sim::SimTrace trace = sim::run_closed_loop(scene, path, cfg);
  if (const fs::path parent = fs::path(a.metrics).parent_path(); !parent.empty()) fs::create_directories(parent);
  sim::write_trace_csv(trace, a.metrics);

  const auto lat = trace.latency();
  json summary{{"schema", 1},
               {"ticks", trace.rows.size()},
               {"frames_displayed", trace.frames.size()},
               {"eye_views_rendered", trace.eye_views_rendered},
               {"latency_mean_s", lat.mean_s},
               {"latency_p95_s", lat.p95_s},
               {"latency_anomalies", lat.anomalies},
               {"warnings", trace.warnings}};
  const auto ds = trace.ds();
  summary["max_ds_m"] = ds.empty() ? 0.0 : *std::max_element(ds.begin(), ds.end());
  try {
    summary["lag_s"] = sim::estimate_lag(trace.v_op(), trace.v_rob(), trace.control_rate_hz);
    summary["corr_v_op_ds"] = sim::pearson(trace.v_op(), ds);
  } catch (const Error&) {
    summary["lag_s"] = nullptr;  // operator never moved
    summary["corr_v_op_ds"] = nullptr;
  }
  if (!a.summary.empty()) write_json(a.summary, summary);
  json effective{{"scene", scene}, {"trajectory", path}, {"config", cfg}, {"rig", cfg.rig}};
  write_sidecar(a.metrics, "simulate", std::move(effective));
  for (const auto& w : trace.warnings) err << "warning: " << w << "\n";
  out << summary.dump(2) << "\n";
  return kExitOk;
}

struct ServeArgs {
  std::uint16_t port = 0;
  std::string scene, config, rig, ui;
  double duration = 0.0;
  int eye_size = 512;
  int jpeg_quality = 80;
  double stream_rate = 30.0;
  double capture_scale = 0.5;
};

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

int run_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  serve::ServeOptions o;
  o.port = a.port;
  o.scene = load_scene_or_default(a.scene);
  o.sim = load_sim_config(a.config, a.rig);
  if (!a.ui.empty()) o.ui_dir = fs::path(a.ui);
  o.duration_s = a.duration;
  o.eye_size = a.eye_size;
  o.jpeg_quality = a.jpeg_quality;
  o.stream_rate_hz = a.stream_rate;
  o.capture_scale = a.capture_scale;
  o.log = [&err](const std::string& msg) { err << "serve: " << msg << "\n"; };
  serve::Server server(std::move(o));

  g_interrupted = false;
  auto previous_int = std::signal(SIGINT, on_signal);
  auto previous_term = std::signal(SIGTERM, on_signal);
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    while (!done) {
      if (g_interrupted) server.stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  try {
    server.run();
  } catch (...) {
    done = true;
    watcher.join();
    throw;
  }
  done = true;
  watcher.join();
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);

  const auto st = server.stats();
  out << json{{"sessions", st.sessions},
              {"frames_sent", st.frames_sent},
              {"frames_skipped", st.frames_skipped},
              {"poses_received", st.poses_received},
              {"pings_answered", st.pings_answered},
              {"configs_applied", st.configs_applied},
              {"configs_rejected", st.configs_rejected},
              {"mean_frame_build_s", st.mean_frame_build_s}}
             .dump(2)
      << "\n";
  return kExitOk;
}

struct BenchArgs {
  int frames = 300;
  int size = 800;
  int threads = 0;
  std::string report;
};

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream&) {
  render::RenderConfig cfg;
  cfg.out_width = cfg.out_height = a.size;
  cfg.threads = a.threads;
  const auto b = bench::benchmark_stereo(a.frames, cfg);
  const json j = b;
  if (!a.report.empty()) write_json(a.report, j);
  out << j.dump(2) << "\n";
  return kExitOk;
}

int run_write_defaults(const std::string& dir, std::ostream& out) {
  const fs::path d(dir);
  write_json(d / "scene_default.json", sim::default_scene());
  write_json(d / "trajectory_sweep.json", sim::sweep_trajectory());
  write_json(d / "trajectory_dynamic.json", sim::dynamic_trajectory());
  write_json(d / "config_default.json", sim::SimConfig{});
  write_json(d / "rig_default.json", camera::default_rig());
  json truth = calib::default_ground_truth();
  write_json(d / "calib_truth.json", truth);
  out << "wrote defaults to " << d.string() << "\n";
  return kExitOk;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spherical reprojection teleoperation toolkit: calibration, eye-view rendering, closed-loop simulation "
               "and live streaming."};
  app.name("spheroview");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Estimate the camera, mount and marker transforms.");
  c->add_flag("--synthetic", cal.synthetic, "Generate a synthetic sample set from the built-in ground truth");
  c->add_option("--n", cal.n, "Synthetic sample count")->check(CLI::Range(1, 1000000));
  c->add_option("--noise-px", cal.noise_px, "Synthetic Gaussian pixel noise (px)")->check(CLI::NonNegativeNumber);
  c->add_option("--seed", cal.seed, "Seed for synthetic samples and the initial perturbation");
  c->add_option("--perturb-m", cal.perturb_m, "Synthetic initial translation perturbation (m)")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--perturb-deg", cal.perturb_deg, "Synthetic initial rotation perturbation (deg)")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--samples", cal.samples, "Samples JSON")->check(CLI::ExistingFile);
  c->add_option("--init", cal.init, "Initial transforms JSON")->check(CLI::ExistingFile);
  c->add_option("--rig", cal.rig, "Stereo rig JSON (default: built-in rig)")->check(CLI::ExistingFile);
  c->add_option("--out", cal.out, "Estimate JSON (default: stdout)");
  c->add_option("--samples-out", cal.samples_out, "Also write the sample set used");
  c->add_flag("--single-side", cal.single_side, "Accept samples seen by one camera only");
  c->add_option("--max-iterations", cal.max_iterations, "Solver iteration cap")->check(CLI::Range(1, 100000));

  RenderArgs ren;
  auto* r = app.add_subcommand("render", "Reproject one camera frame into an eye view.");
  r->add_option("--frame", ren.frame, "Camera frame PNG")->required()->check(CLI::ExistingFile);
  r->add_option("--rig", ren.rig, "Stereo rig JSON (default: built-in rig)")->check(CLI::ExistingFile);
  r->add_option("--side", ren.side, "Which rig camera took the frame")->check(CLI::IsMember({"left", "right"}));
  r->add_option("--cam-pose", ren.cam_pose, "Camera pose JSON in the world frame")->required()->check(
      CLI::ExistingFile);
  r->add_option("--eye-pose", ren.eye_pose, "Eye pose JSON in the world frame")->required()->check(CLI::ExistingFile);
  r->add_option("--r", ren.r, "Projection sphere radius (m)")->check(CLI::PositiveNumber);
  r->add_option("--width", ren.width, "Eye view width (px)")->check(CLI::Range(1, 16384));
  r->add_option("--height", ren.height, "Eye view height (px)")->check(CLI::Range(1, 16384));
  r->add_option("--fov-deg", ren.fov_deg, "Eye vertical field of view (deg)")->check(CLI::Range(1.0, 179.0));
  r->add_option("--threads", ren.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  r->add_option("--out", ren.out, "Eye view PNG")->required();

  CaptureArgs cap;
  auto* cp = app.add_subcommand("capture", "Render a synthetic fisheye camera frame of a scene.");
  cp->add_option("--scene", cap.scene, "Scene JSON (default: built-in scene)")->check(CLI::ExistingFile);
  cp->add_option("--rig", cap.rig, "Stereo rig JSON (default: built-in rig)")->check(CLI::ExistingFile);
  cp->add_option("--side", cap.side, "Rig camera")->check(CLI::IsMember({"left", "right"}));
  cp->add_option("--cam-pose", cap.cam_pose, "Camera pose JSON in the world frame")->required()->check(
      CLI::ExistingFile);
  cp->add_option("--scale", cap.scale, "Resolution relative to the rig")->check(CLI::Range(0.01, 4.0));
  cp->add_option("--threads", cap.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  cp->add_option("--out", cap.out, "Frame PNG")->required();

  ErrorCurveArgs ec;
  auto* e = app.add_subcommand("error-curve", "Bearing error of a translated eye against target distance.");
  e->add_option("--dx", ec.dx, "Lateral eye offset from the camera (m)")->check(CLI::NonNegativeNumber);
  e->add_option("--r", ec.r, "Projection sphere radius (m)")->check(CLI::PositiveNumber);
  e->add_option("--d-min", ec.d_min, "Nearest target distance (m)")->check(CLI::PositiveNumber);
  e->add_option("--d-max", ec.d_max, "Farthest target distance (m)")->check(CLI::PositiveNumber);
  e->add_option("--steps", ec.steps, "Grid points; d = r is always included when in range")
      ->check(CLI::Range(2, 1000000));
  e->add_option("--csv", ec.csv, "CSV output with columns d_m,gamma_deg (default: stdout)");

  SimulateArgs sa;
  auto* s = app.add_subcommand("simulate", "Run the deterministic closed-loop simulation.");
  s->add_option("--scene", sa.scene, "Scene JSON (default: built-in scene)")->check(CLI::ExistingFile);
  s->add_option("--trajectory", sa.trajectory, "Trajectory JSON, or the built-in 'sweep' or 'dynamic'");
  s->add_option("--config", sa.config, "Simulation config JSON overlaid on the defaults")->check(CLI::ExistingFile);
  s->add_option("--rig", sa.rig, "Stereo rig JSON (default: built-in rig)")->check(CLI::ExistingFile);
  s->add_option("--metrics", sa.metrics, "Per-tick metrics CSV")->required();
  s->add_option("--frames", sa.frames, "Render eye views and save them to this directory");
  s->add_option("--summary", sa.summary, "Also write the summary JSON here");
  s->add_option("--seed", sa.seed, "Seed for latency jitter (default: from config, else 1)");

  ServeArgs sv;
  sv.port = net::default_port();
  auto* v = app.add_subcommand("serve", "Run the live simulation for viewers over TCP and WebSocket.");
  v->add_option("--port", sv.port, "Listening port (default: SPHEROVIEW_PORT, else 8765)");
  v->add_option("--scene", sv.scene, "Scene JSON (default: built-in scene)")->check(CLI::ExistingFile);
  v->add_option("--config", sv.config, "Simulation config JSON overlaid on the defaults")->check(CLI::ExistingFile);
  v->add_option("--rig", sv.rig, "Stereo rig JSON (default: built-in rig)")->check(CLI::ExistingFile);
  v->add_option("--ui", sv.ui, "Directory of static viewer files served over HTTP")->check(CLI::ExistingDirectory);
  v->add_option("--duration", sv.duration, "Seconds to run (0: until interrupted)")->check(CLI::NonNegativeNumber);
  v->add_option("--eye-size", sv.eye_size, "Streamed eye view size (px)")->check(CLI::Range(16, 512));
  v->add_option("--jpeg-quality", sv.jpeg_quality, "JPEG quality")->check(CLI::Range(1, 100));
  v->add_option("--stream-rate", sv.stream_rate, "Eye view stream rate (Hz)")->check(CLI::Range(0.1, 120.0));
  v->add_option("--capture-scale", sv.capture_scale, "Camera resolution relative to the rig")
      ->check(CLI::Range(0.05, 1.0));

  BenchArgs ba;
  auto* b = app.add_subcommand("bench", "Time stereo eye-view rendering.");
  b->add_option("--frames", ba.frames, "Timed frames")->check(CLI::Range(1, 1000000));
  b->add_option("--size", ba.size, "Eye view width and height (px)")->check(CLI::Range(16, 8192));
  b->add_option("--threads", ba.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  b->add_option("--report", ba.report, "Benchmark report JSON");

  std::string defaults_dir;
  auto* w = app.add_subcommand("write-defaults", "Write the built-in scene, trajectories, config and rig as JSON.");
  w->add_option("--out-dir", defaults_dir, "Target directory")->required();

  CLI::App* active = &app;
  try {
    app.parse(argc, argv);
    active = app.get_subcommands().front();
    if (*c) return run_calibrate(cal, out, err);
    if (*r) return run_render(ren, out, err);
    if (*cp) return run_capture(cap, out, err);
    if (*e) return run_error_curve(ec, out, err);
    if (*s) return run_simulate(sa, out, err);
    if (*v) return run_serve(sv, out, err);
    if (*b) return run_bench(ba, out, err);
    return run_write_defaults(defaults_dir, out);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) {
      app.exit(ex, out, err);
      return kExitOk;
    }
    for (auto* sub : app.get_subcommands()) active = sub;
    err << "error: " << ex.what() << "\n\n" << active->help();
    return kExitUsage;
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n\n" << active->help();
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace spheroview::cli
