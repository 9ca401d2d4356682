// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [benchmark_report.json]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "oracles.hpp"
#include "render_oracles.hpp"
#include "spheroview/bench.hpp"
#include "spheroview/calib.hpp"
#include "spheroview/camera.hpp"
#include "spheroview/headctl.hpp"
#include "spheroview/render.hpp"
#include "spheroview/sim.hpp"
#include "spheroview/transport.hpp"

using namespace spheroview;
using geom::Pose;
using geom::Quat;
using geom::Vec2;
using geom::Vec3;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (detail.tellp() > 0) detail << "; ";
    detail << what << (ok ? "" : " [miss]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, std::string("threw: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0) o.check(secs < budget_s, fmt("%.2f s", secs) + fmt(" < %.0f s", budget_s));
  if (!o.pass) ++failures;
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str());
  std::fflush(stdout);
}

double angle_between(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

double azimuth(const Vec3& d) { return std::atan2(d.x(), d.z()); }

// Error curve through the command line, read back from its CSV.
void error_curve_check(Outcome& o) {
  const auto csv = std::filesystem::temp_directory_path() / "spheroview_acceptance_curve.csv";
  const std::string path = csv.string();
  const char* argv[] = {"spheroview", "error-curve", "--dx", "0.1", "--r", "1.0",
                        "--d-min", "0.2", "--d-max", "3.0", "--csv", path.c_str()};
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(std::size(argv)), argv, out, err);
  o.check(code == cli::kExitOk, "exit " + std::to_string(code));
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  double at_r = NAN, at_max = NAN, d_last = NAN;
  while (std::getline(in, line)) {
    double d = 0, g = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf", &d, &g) != 2) continue;
    if (d == 1.0) at_r = g;
    d_last = d;
    at_max = g;
  }
  std::filesystem::remove(csv);
  o.check(at_r == 0.0, "gamma(1.0) = " + fmt("%.3g deg", at_r));
  const double asym = oracle::deg(std::atan(1.0) * 2.0 - std::atan(10.0));
  o.check(d_last == 3.0 && std::abs(at_max - asym) <= 0.3,
          "gamma(3.0) = " + fmt("%.3f deg", at_max) + fmt(" vs asymptote %.3f deg within 0.3", asym));
}

void rendered_distortion(Outcome& o) {
  const auto k = camera::default_rig().left;
  const render::RenderConfig cfg;
  const double dx = 0.1;
  double worst = 0;
  for (double d : {0.3, 0.5, 2.0, 3.0}) {
    const Vec3 target(0.0, 0.0, d);
    const auto frame = oracle::spot_frame(k, target, oracle::rad(0.4));
    const auto view = render::reproject(frame, k, Pose::identity(), Pose::from_translation({dx, 0, 0}), cfg);
    double cx = 0, cy = 0;
    if (!oracle::centroid(view.image, cx, cy)) {
      o.check(false, "target lost at d = " + fmt("%.1f", d));
      return;
    }
    const Vec3 seen = oracle::eye_direction(cfg, cx, cy);
    const double measured = azimuth(target - Vec3(dx, 0, 0)) - azimuth(seen);
    worst = std::max(worst, oracle::deg(std::abs(measured - render::angular_error(d, dx, 1.0))));
  }
  o.check(worst < 0.2, "max |rendered - analytic| = " + fmt("%.4f deg", worst) + " < 0.2");
}

void rotation_invariance(Outcome& o) {
  const auto k = camera::default_rig().left;
  const render::RenderConfig cfg;
  std::mt19937_64 rng(21);
  double worst = 0;
  for (double d : {0.3, 1.0, 3.0}) {
    const Vec3 target = d * Vec3(0.2, -0.1, 1.0).normalized();
    const auto frame = oracle::spot_frame(k, target, oracle::rad(0.4));
    for (int trial = 0; trial < 3; ++trial) {
      const Vec3 axis = Vec3::Random().normalized();
      const Pose eye_in_cam(geom::so3_exp(axis * oracle::rad(25)), Vec3::Zero());
      const Pose cam = oracle::random_pose(rng, 1.0);
      const auto view = render::reproject(frame, k, cam, cam * eye_in_cam, cfg);
      double cx = 0, cy = 0;
      if (!oracle::centroid(view.image, cx, cy)) {
        o.check(false, "target lost at d = " + fmt("%.1f", d));
        return;
      }
      const Vec3 truth = (geom::inverse(eye_in_cam) * target).normalized();
      worst = std::max(worst, oracle::deg(angle_between(oracle::eye_direction(cfg, cx, cy), truth)));
    }
  }
  o.check(worst < 0.05, "max bearing error = " + fmt("%.4f deg", worst) + " < 0.05");
}

void calibration(Outcome& o) {
  const auto rig = camera::default_rig();
  const calib::ChainParams gt = calib::default_ground_truth();
  {
    const auto samples = calib::generate_synthetic(gt, rig, {200, 0.0, 7, 200});
    const auto est = calib::solve(samples, rig, calib::perturb(gt, 0.05, oracle::rad(5), 99));
    const auto e = calib::recovery_error(est.params, gt);
    const double t = std::max(e.cam_translation_m, e.mount_translation_m);
    const double r = oracle::deg(std::max(e.cam_rotation_rad, e.mount_rotation_rad));
    o.check(est.converged, "noiseless converged");
    o.check(t < 1e-4 && r < 0.01, "cam/mount " + fmt("%.2e m", t) + fmt(" %.2e deg", r));
    o.check(e.mark_translation_m < 1e-4, "mark " + fmt("%.2e m", e.mark_translation_m));
  }
  std::vector<double> trans;
  double rms_lo = 1e9, rms_hi = 0;
  bool all_converged = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto samples = calib::generate_synthetic(gt, rig, {200, 0.5, seed, 200});
    const auto est = calib::solve(samples, rig, calib::perturb(gt, 0.05, oracle::rad(5), seed + 100));
    all_converged = all_converged && est.converged;
    const auto e = calib::recovery_error(est.params, gt);
    trans.push_back(std::max({e.cam_translation_m, e.mount_translation_m, e.mark_translation_m}));
    rms_lo = std::min(rms_lo, est.rms_px);
    rms_hi = std::max(rms_hi, est.rms_px);
  }
  std::nth_element(trans.begin(), trans.begin() + 10, trans.end());
  const double median = 0.5 * (trans[10] + *std::max_element(trans.begin(), trans.begin() + 10));
  o.check(all_converged, "20 noisy seeds converged");
  o.check(median < 2e-3, "median translation error " + fmt("%.3f mm", median * 1e3) + " < 2");
  o.check(rms_lo >= 0.35 && rms_hi <= 0.65, "rms " + fmt("[%.3f", rms_lo) + fmt(", %.3f] px", rms_hi));
}

void double_sphere(Outcome& o) {
  const auto k = camera::default_rig().left;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  double dir_err = 0, px_err = 0;
  for (int count = 0; count < 10000;) {
    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
    const auto p = camera::project(3.0 * d, k);
    if (!p.valid) continue;
    const auto u = camera::unproject(p.pixel, k);
    if (!u.valid) {
      o.check(false, "unprojection of a projected point failed");
      return;
    }
    dir_err = std::max(dir_err, angle_between(u.direction, d));
    ++count;
  }
  std::uniform_real_distribution<double> uu(0, k.width - 1), uv(0, k.height - 1);
  for (int count = 0; count < 10000;) {
    const Vec2 px(uu(rng), uv(rng));
    const auto u = camera::unproject(px, k);
    if (!u.valid) continue;
    const auto p = camera::project(u.direction, k);
    if (!p.valid) continue;
    px_err = std::max(px_err, (p.pixel - px).norm());
    ++count;
  }
  o.check(dir_err < 1e-6, "direction " + fmt("%.1e rad", dir_err));
  o.check(px_err < 1e-6, "pixel " + fmt("%.1e px", px_err));

  camera::DoubleSphereIntrinsics pin;
  pin.fx = pin.fy = 300;
  pin.cx = 320;
  pin.cy = 240;
  pin.width = 640;
  pin.height = 480;
  double pin_err = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 px(uu(rng) / 2, uv(rng) / 2);
    const auto u = camera::unproject(px, pin);
    const Vec3 ref = Vec3((px.x() - 320) / 300, (px.y() - 240) / 300, 1).normalized();
    const Vec3 pt = 2.5 * ref;
    const auto p = camera::project(pt, pin);
    if (!u.valid || !p.valid) {
      o.check(false, "pinhole sample invalid");
      return;
    }
    pin_err = std::max({pin_err, (u.direction - ref).norm(),
                        (p.pixel - Vec2(300 * pt.x() / pt.z() + 320, 300 * pt.y() / pt.z() + 240)).norm()});
  }
  o.check(pin_err < 1e-9, "pinhole limit " + fmt("%.1e", pin_err));
}

void head_and_filter(Outcome& o) {
  std::mt19937_64 rng(31);
  const Pose robot_nom = oracle::random_pose(rng);
  const Pose vr_nom(Quat(Eigen::AngleAxisd(oracle::rad(40), Vec3::UnitZ()) *
                         Eigen::AngleAxisd(oracle::rad(12), Vec3::UnitY())),
                    Vec3(0.2, -0.1, 1.6));
  const auto m = headctl::HeadMapping::capture(robot_nom, vr_nom);
  const Pose fixed = headctl::map_head(m, m.t_vr_nom);
  double map_err = std::max(geom::angular_distance(fixed, robot_nom), geom::translation_distance(fixed, robot_nom));
  for (int i = 0; i < 1000; ++i) {
    const Pose head = oracle::random_pose(rng);
    const oracle::Mat4 ref = oracle::homogeneous(m.t_robot_nom) * oracle::homogeneous(m.t_vr_nom).inverse() *
                             oracle::homogeneous(head);
    map_err = std::max(map_err, oracle::max_abs_diff(oracle::homogeneous(headctl::map_head(m, head)), ref));
  }
  o.check(map_err < 1e-9, "map_head " + fmt("%.1e", map_err));

  const double a = headctl::filter_coefficient(1.0 / 90.0, 100.0);
  o.check(std::abs(a - 0.87469) <= 1e-5, "filter coefficient " + fmt("%.7f vs 0.87469 +- 1e-5", a));

  headctl::GuardConfig cfg;
  std::uniform_real_distribution<double> u(0, 1);
  headctl::FilterState st;
  Pose target;
  const double dt = 1.0 / 250.0;
  double worst_v = 0, worst_w = 0;
  for (int i = 0; i < 100000; ++i) {
    const double r = u(rng);
    if (r < 0.05) {
      target = oracle::random_pose(rng, 1.0);
    } else if (r < 0.5) {
      target = target * oracle::random_pose(rng, 0.002);
    }
    const Pose before = st.current;
    const bool was_init = st.initialized;
    headctl::jump_guard(st, target, dt, cfg);
    if (!was_init) continue;
    worst_v = std::max(worst_v, geom::translation_distance(before, st.current) / (cfg.v_max * dt));
    worst_w = std::max(worst_w, geom::angular_distance(before, st.current) / (cfg.omega_max * dt));
  }
  o.check(worst_v <= 1 + 1e-9 && worst_w <= 1 + 1e-9,
          "jump_guard peak/cap " + fmt("%.6f", worst_v) + fmt(" m, %.6f rad", worst_w));
}

void latency_and_lag(Outcome& o) {
  sim::SimConfig cfg;
  const double tick = 1.0 / cfg.control_rate_hz;
  const auto trace = sim::run_closed_loop(sim::default_scene(), sim::sweep_trajectory(), cfg);
  const auto lat = trace.latency();
  o.check(std::abs(cfg.latency.total() - 0.040) < 1e-12, "budget " + fmt("%.0f ms", cfg.latency.total() * 1e3));
  o.check(lat.anomalies == 0 && std::abs(lat.mean_s - 0.040) <= tick,
          "mean latency " + fmt("%.2f ms", lat.mean_s * 1e3) + " vs 40 +- 4");
  const double lag = sim::estimate_lag(trace.v_op(), trace.v_rob(), cfg.control_rate_hz);
  o.check(std::abs(lag - 0.130) <= tick, "closed-loop lag " + fmt("%.1f ms", lag * 1e3) + " vs 130 +- 4");

  // A constructed 130 ms delay on a sum of random sinusoids.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> freq(0.2, 2.0), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<std::pair<double, double>> tones(6);
  for (auto& [f, p] : tones) f = freq(rng), p = phase(rng);
  const auto signal = [&](double t) {
    double v = 0;
    for (const auto& [f, p] : tones) v += std::sin(2.0 * std::numbers::pi * f * t + p);
    return v;
  };
  std::vector<double> a(3000), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = static_cast<double>(i) * tick;
    a[i] = signal(t);
    b[i] = signal(t - 0.130);
  }
  const double built = sim::estimate_lag(a, b, cfg.control_rate_hz);
  o.check(std::abs(built - 0.130) <= tick, "constructed lag " + fmt("%.1f ms", built * 1e3));
}

void correlation(Outcome& o) {
  const sim::SimConfig cfg;
  const auto trace = sim::run_closed_loop(sim::default_scene(), sim::dynamic_trajectory(), cfg);
  const double c = sim::pearson(trace.v_op(), trace.ds());
  o.check(c > 0.8, "pearson(v_op, ds) = " + fmt("%.4f", c) + " > 0.8");
}

void performance(Outcome& o, const std::filesystem::path& report) {
  render::RenderConfig cfg;
  cfg.out_width = cfg.out_height = 800;
  const auto b = bench::benchmark_stereo(300, cfg);
  nlohmann::json j = b;
  std::ofstream(report) << j.dump(2) << "\n";
  o.check(b.mean_ms <= 11.0, "mean " + fmt("%.2f ms", b.mean_ms) + fmt(" (p95 %.2f)", b.p95_ms) + " <= 11 on " +
                                 std::to_string(b.machine.hardware_threads) + " thread(s), report " +
                                 report.string());
}

void transport_conformance(Outcome& o) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> type(1, 5), len(0, 512), byte(0, 255), chunk(1, 4096);
  std::vector<std::uint8_t> stream;
  std::vector<transport::Message> sent;
  std::size_t mismatches = 0;
  for (int i = 0; i < 100000; ++i) {
    transport::Message m;
    m.type = static_cast<transport::MsgType>(type(rng));
    m.payload.resize(static_cast<std::size_t>(len(rng)));
    for (auto& x : m.payload) x = static_cast<std::uint8_t>(byte(rng));
    const auto enc = transport::encode(m);
    const auto dec = transport::decode(enc);
    if (!dec || dec->consumed != enc.size() || !(dec->message == m) || transport::encode(dec->message) != enc)
      ++mismatches;
    if (i < 20000) {
      stream.insert(stream.end(), enc.begin(), enc.end());
      sent.push_back(std::move(m));
    }
  }
  // The same messages fed through the stream decoder in random chunks.
  transport::StreamDecoder dec;
  std::size_t got = 0;
  for (std::size_t pos = 0; pos < stream.size();) {
    const std::size_t n = std::min(stream.size() - pos, static_cast<std::size_t>(chunk(rng)));
    dec.feed(std::span(stream).subspan(pos, n));
    pos += n;
    while (auto m = dec.next()) {
      if (got >= sent.size() || !(*m == sent[got])) ++mismatches;
      ++got;
    }
  }
  o.check(mismatches == 0 && got == sent.size() && dec.errors() == 0,
          "1e5 messages, " + std::to_string(mismatches) + " mismatches");

  std::int64_t worst_margin = INT64_MAX;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    transport::SimulatedLink link({25'000'000, 200'000, 3'000'000, 50'000, false}, seed);
    const auto est = link.measure(1'000'000'000);
    worst_margin = std::min(worst_margin, est.round_trip_ns / 2 - std::abs(est.offset_ns - 25'000'000));
  }
  o.check(worst_margin >= 0, "25 ms skew within RTT/2 over 200 links, min margin " +
                                 fmt("%.3f ms", static_cast<double>(worst_margin) * 1e-6));
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path report = argc > 1 ? argv[1] : "benchmark_report.json";
  run("error-curve", 1, error_curve_check);
  run("rendered-distortion", 10, rendered_distortion);
  run("rotation-invariance", 10, rotation_invariance);
  run("calibration-recovery", 60, calibration);
  run("double-sphere-round-trips", 5, double_sphere);
  run("head-mapping-and-filter", 10, head_and_filter);
  run("latency-and-lag", 30, latency_and_lag);
  run("deviation-velocity-correlation", 30, correlation);
  run("stereo-render-performance", 0, [&](Outcome& o) { performance(o, report); });
  run("transport-conformance", 0, transport_conformance);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
