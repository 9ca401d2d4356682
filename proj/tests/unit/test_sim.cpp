#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "render_oracles.hpp"
#include "spheroview/sim.hpp"

using namespace spheroview;
using namespace spheroview::sim;
using geom::Vec3;

namespace {

std::vector<double> smooth_signal(std::size_t n, double rate, std::uint64_t seed) {
  // Sum of a few slow sinusoids plus bumps, so the correlation peak is unique.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(0, 2 * std::numbers::pi);
  const double p1 = ph(rng), p2 = ph(rng), p3 = ph(rng);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    x[i] = std::sin(2.1 * t + p1) + 0.6 * std::sin(5.3 * t + p2) + 0.3 * std::sin(0.7 * t + p3) +
           std::exp(-std::pow(t - 3.0, 2) * 8.0);
  }
  return x;
}

Scene boresight_scene(double d) {
  Scene s;
  s.sky = {0, 0, 0};
  s.points.push_back({Vec3(0.0, 0.0, d), {255, 255, 255}, 1.0});
  return s;
}

}  // namespace

TEST_CASE("scene validation and json") {
  Scene s = default_scene();
  nlohmann::json j = s;
  CHECK(j.at("schema") == 1);
  const Scene back = j.get<Scene>();
  CHECK(back.quads.size() == s.quads.size());
  CHECK(back.points.size() == s.points.size());
  CHECK(back.points[0].position == s.points[0].position);

  Scene near;
  near.points.push_back({Vec3(0.0, 0.0, 0.04), {255, 0, 0}, 1.0});
  CHECK_THROWS_AS(near.validate(), InvalidArgument);
  Scene far;
  far.points.push_back({Vec3(100.0, 0.0, 1.0), {255, 0, 0}, 1.0});
  CHECK_THROWS_AS(far.validate(), InvalidArgument);

  j["extra"] = 1;
  CHECK_THROWS_AS(j.get<Scene>(), InvalidArgument);
  nlohmann::json no_schema = s;
  no_schema.erase("schema");
  CHECK_THROWS_AS(no_schema.get<Scene>(), InvalidArgument);
}

TEST_CASE("capture centres a boresight target on the principal point") {
  const auto k = camera::default_rig().left;
  for (double d : {0.3, 1.0, 10.0}) {
    const auto img = capture(boresight_scene(d), geom::Pose::identity(), k);
    double cx = 0, cy = 0;
    REQUIRE(oracle::centroid(img, cx, cy));
    CHECK(cx == doctest::Approx(k.cx).epsilon(1e-3));
    CHECK(cy == doctest::Approx(k.cy).epsilon(1e-3));
  }
}

TEST_CASE("capture is deterministic and thread-count invariant") {
  const auto k = camera::default_rig().left;
  const geom::Pose cam(geom::so3_exp(Vec3(0.2, -0.1, 0.3)), Vec3(0.1, 0.2, 1.2));
  const auto a = capture(default_scene(), cam, k, 1);
  const auto b = capture(default_scene(), cam, k, 3);
  CHECK(a == b);
}

TEST_CASE("capture sees a quad behind the image plane inside the validity bound") {
  const auto k = camera::default_rig().left;
  // Quad centre 100 degrees off the optical axis, facing the camera.
  const double ang = oracle::rad(100.0);
  const Vec3 c = 1.0 * Vec3(std::sin(ang), 0.0, std::cos(ang));
  const Vec3 normal = -c.normalized();
  const geom::Quat q = geom::Quat::FromTwoVectors(Vec3::UnitZ(), normal);
  Scene s;
  s.sky = {0, 0, 0};
  Quad quad;
  quad.pose = geom::Pose(q, c);
  quad.width = quad.height = 0.2;
  quad.color_a = quad.color_b = {10, 250, 10};
  s.quads.push_back(quad);
  const auto img = capture(s, geom::Pose::identity(), k);
  double u = 0, v = 0;
  REQUIRE(oracle::ds_project(c, k, u, v));
  REQUIRE(u < k.width);
  CHECK(img.at(static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v))) == image::Rgb{10, 250, 10});
}

TEST_CASE("head_step") {
  RobotHeadConfig cfg;
  const geom::Pose home = geom::Pose::from_translation({0, 0, 1.2});
  const double dt = 0.004;

  SUBCASE("holding still") {
    RobotHeadModel m(home, cfg);
    for (int i = 0; i < 100; ++i) head_step(m, home, dt);
    CHECK(m.actual.translation() == home.translation());
  }

  SUBCASE("step command arrives after the delay plus the travel time") {
    RobotHeadModel m(home, cfg);
    const geom::Pose goal = home * geom::Pose::from_translation({0.3, 0, 0});
    double arrival = -1;
    for (int i = 1; i <= 200; ++i) {
      head_step(m, goal, dt);
      if (arrival < 0 && geom::translation_distance(m.actual, goal) < 1e-12) arrival = i * dt;
    }
    CHECK(std::abs(arrival - 0.4) <= dt + 1e-9);
  }

  SUBCASE("slow sinusoid is reproduced with a pure delay") {
    RobotHeadModel m(home, cfg);
    auto command = [&](double t) {
      return home * geom::Pose(geom::so3_exp(Vec3(0, 0, 0.3 * std::sin(2 * t))),
                               Vec3(0.1 * std::sin(3 * t), 0.05 * std::cos(2 * t) - 0.05, 0));
    };
    const int delay_ticks = static_cast<int>(std::lround(cfg.command_delay / dt));
    std::vector<geom::Pose> issued;
    for (int i = 0; i < 1000; ++i) {
      issued.push_back(command(i * dt));
      head_step(m, issued.back(), dt);
      if (i >= delay_ticks) {
        const auto& want = issued[static_cast<std::size_t>(i + 1 - delay_ticks)];
        CHECK(geom::translation_distance(m.actual, want) < 1e-12);
        CHECK(geom::angular_distance(m.actual, want) < 1e-9);
      }
    }
  }

  SUBCASE("random commands never exceed the caps") {
    std::mt19937_64 rng(17);
    RobotHeadModel m(home, cfg);
    for (int i = 0; i < 5000; ++i) {
      const geom::Pose before = m.actual;
      head_step(m, oracle::random_pose(rng, 1.0), dt);
      CHECK(geom::translation_distance(before, m.actual) <= cfg.v_max * dt * (1 + 1e-9));
      CHECK(geom::angular_distance(before, m.actual) <= cfg.omega_max * dt * (1 + 1e-9));
    }
  }

  CHECK_THROWS_AS(head_step(*std::make_unique<RobotHeadModel>(home, cfg), home, 0.0), InvalidArgument);
}

TEST_CASE("trajectory interpolation") {
  const geom::Pose a = geom::Pose::from_translation({0, 0, 1});
  const geom::Pose b(geom::so3_exp(Vec3(0, 0, 0.5)), Vec3(1, 0, 1));
  const Trajectory tr({{1.0, a}, {3.0, b}});
  CHECK(tr.sample(0.0).translation() == a.translation());
  CHECK(tr.sample(5.0).translation() == b.translation());
  CHECK(tr.sample(2.0).translation().x() == doctest::Approx(0.5));
  CHECK(tr.sample(1.5).translation().x() == doctest::Approx(0.15625));  // 3u^2 - 2u^3 at u = 1/4
  CHECK(geom::rotation_angle(tr.sample(2.0).rotation()) == doctest::Approx(0.25));
  CHECK_THROWS_AS(Trajectory({{1.0, a}, {1.0, b}}), InvalidArgument);
  CHECK_THROWS_AS(Trajectory({}), InvalidArgument);

  const nlohmann::json j = tr;
  const Trajectory back = trajectory_from_json(j);
  CHECK(back.keyframes().size() == 2);
  CHECK(back.sample(2.2).translation().isApprox(tr.sample(2.2).translation()));

  // Sweep generator: peak speed as requested.
  const Trajectory sweep = sweep_trajectory(0.4, 0.5, 1.0);
  double peak = 0;
  for (double t = sweep.start(); t < sweep.end(); t += 0.001)
    peak = std::max(peak, (sweep.sample(t + 0.001).translation() - sweep.sample(t).translation()).norm() / 0.001);
  CHECK(peak == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("lag estimation") {
  const double rate = 250.0;
  const auto a = smooth_signal(2500, rate, 1);
  CHECK(estimate_lag(a, a, rate) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  for (int k : {1, 7, 33, -12}) {
    std::vector<double> b(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto src = static_cast<std::ptrdiff_t>(i) - k;
      b[i] = src >= 0 && src < static_cast<std::ptrdiff_t>(a.size()) ? a[static_cast<std::size_t>(src)] : a[i];
    }
    CAPTURE(k);
    CHECK(estimate_lag(a, b, rate) == doctest::Approx(k / rate).epsilon(1e-3));
  }

  // 5% noise: within one sample over many seeds.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = smooth_signal(2500, rate, seed + 10);
    std::mt19937_64 rng(seed);
    double sd = 0;
    for (double v : x) sd += v * v;
    sd = std::sqrt(sd / static_cast<double>(x.size()));
    std::normal_distribution<double> noise(0.0, 0.05 * sd);
    const int k = 32;
    std::vector<double> na(x.size()), nb(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      na[i] = x[i] + noise(rng);
      nb[i] = (i >= static_cast<std::size_t>(k) ? x[i - k] : x[0]) + noise(rng);
    }
    CHECK(std::abs(estimate_lag(na, nb, rate) - k / rate) <= 1.0 / rate);
  }

  const std::vector<double> flat(100, 2.0);
  const std::vector<double> head(a.begin(), a.begin() + 100);
  CHECK_THROWS_WITH(estimate_lag(flat, head, rate), "no signal");
  CHECK_THROWS_WITH(pearson(flat, flat), "no signal");
  CHECK(pearson(a, a) == doctest::Approx(1.0));
}

TEST_CASE("closed loop: static operator settles") {
  const geom::Pose still = default_operator_pose();
  const Trajectory tr({{0.0, still}, {2.0, still}});
  const auto trace = run_closed_loop(default_scene(), tr, SimConfig{});
  REQUIRE(!trace.rows.empty());
  CHECK(trace.rows.back().ds < 1e-9);
  for (std::size_t i = 1; i < trace.rows.size(); ++i) {
    CHECK(trace.rows[i].t > trace.rows[i - 1].t);
    CHECK(trace.rows[i].ds >= 0.0);
  }
}

TEST_CASE("closed loop: sweep lag, latency and correlation") {
  SimConfig cfg;
  const auto trace = run_closed_loop(default_scene(), sweep_trajectory(), cfg);
  const double lag = estimate_lag(trace.v_op(), trace.v_rob(), cfg.control_rate_hz);
  CHECK(std::abs(lag - 0.130) <= 1.0 / cfg.control_rate_hz);
  const auto lat = trace.latency();
  CHECK(lat.anomalies == 0);
  CHECK(std::abs(lat.mean_s - 0.040) <= 1.0 / cfg.control_rate_hz);

  const auto dyn = run_closed_loop(default_scene(), dynamic_trajectory(), cfg);
  CHECK(pearson(dyn.v_op(), dyn.ds()) > 0.8);
}

TEST_CASE("closed loop is deterministic and warns on slow displays") {
  SimConfig cfg;
  cfg.latency_jitter = 0.004;
  cfg.seed = 9;
  const auto a = run_closed_loop(default_scene(), sweep_trajectory(0.2, 0.5, 0.3), cfg);
  const auto b = run_closed_loop(default_scene(), sweep_trajectory(0.2, 0.5, 0.3), cfg);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(a.frames[i].display_ns == b.frames[i].display_ns);
  CHECK(a.v_rob() == b.v_rob());
  CHECK(a.warnings.empty());

  cfg.display_rate_hz = 30.0;
  const auto slow = run_closed_loop(default_scene(), sweep_trajectory(0.2, 0.5, 0.3), cfg);
  CHECK(!slow.warnings.empty());
}

TEST_CASE("closed loop renders and saves eye views") {
  SimConfig cfg;
  cfg.render_frames = true;
  cfg.render.out_width = cfg.render.out_height = 64;
  cfg.tail = 0.0;
  cfg.save_every = 5;
  cfg.frames_dir = std::filesystem::temp_directory_path() / "spheroview_sim_frames";
  std::filesystem::remove_all(cfg.frames_dir);
  const geom::Pose p = default_operator_pose();
  const Trajectory tr({{0.0, p}, {0.2, p * geom::Pose::from_translation({0, 0.05, 0})}});
  const auto trace = run_closed_loop(default_scene(), tr, cfg);
  CHECK(trace.eye_views_rendered > 0);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(cfg.frames_dir)) files += e.path().extension() == ".png";
  CHECK(files == (trace.eye_views_rendered + 4) / 5);
  const auto img = image::read_png(cfg.frames_dir / "eyes_00000.png");
  CHECK(img.width() == 128);
  CHECK(img.height() == 64);
  std::filesystem::remove_all(cfg.frames_dir);
}

TEST_CASE("trace csv and config json") {
  const auto trace = run_closed_loop(default_scene(), sweep_trajectory(0.1, 0.5, 0.2), SimConfig{});
  const auto path = std::filesystem::temp_directory_path() / "spheroview_trace.csv";
  write_trace_csv(trace, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == trace.rows.size());
  std::filesystem::remove(path);

  SimConfig c;
  nlohmann::json j = c;
  j["robot"]["command_delay"] = 0.2;
  SimConfig d;
  merge_json(j, d);
  CHECK(d.robot.command_delay == 0.2);
  CHECK(d.camera_rate_hz == c.camera_rate_hz);
  j["bogus"] = true;
  CHECK_THROWS_AS(merge_json(j, d), InvalidArgument);
  nlohmann::json nested = {{"latency", {{"exposur", 0.1}}}};
  CHECK_THROWS_AS(merge_json(nested, d), InvalidArgument);
}
