#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>

#include <nlohmann/json.hpp>

#include "common/parallel.hpp"
#include "spheroview/sim.hpp"

namespace spheroview::sim {

namespace {

constexpr double kSplatCutoffSigmas = 4.0;

Rgb rgb_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("scene: colour must be [r, g, b]");
  Rgb c;
  const int r = j[0].get<int>(), g = j[1].get<int>(), b = j[2].get<int>();
  for (int v : {r, g, b})
    if (v < 0 || v > 255) throw InvalidArgument("scene: colour components must lie in [0, 255]");
  c.r = static_cast<std::uint8_t>(r);
  c.g = static_cast<std::uint8_t>(g);
  c.b = static_cast<std::uint8_t>(b);
  return c;
}

nlohmann::json rgb_to_json(Rgb c) { return {c.r, c.g, c.b}; }

Rgb mix(Rgb a, Rgb b, double w) {
  auto ch = [w](std::uint8_t x, std::uint8_t y) {
    return static_cast<std::uint8_t>(std::lround((1.0 - w) * x + w * y));
  };
  return {ch(a.r, b.r), ch(a.g, b.g), ch(a.b, b.b)};
}

void check_distance(double d, const char* what) {
  if (!(d > kMinPrimitiveDistance && d < kMaxPrimitiveDistance))
    throw InvalidArgument(std::string("scene: ") + what + " must lie between 0.05 m and 100 m from the origin");
}

// Per-intrinsics table of unit viewing directions; invalid pixels hold NaN.
struct DirectionTable {
  camera::DoubleSphereIntrinsics intr;
  std::vector<Vec3> dirs;
};

std::shared_ptr<const DirectionTable> direction_table(const camera::DoubleSphereIntrinsics& k) {
  static std::mutex mutex;
  static std::shared_ptr<const DirectionTable> cached;
  std::lock_guard lock(mutex);
  if (cached && cached->intr == k) return cached;
  auto table = std::make_shared<DirectionTable>();
  table->intr = k;
  table->dirs.resize(static_cast<std::size_t>(k.width) * k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const auto un = camera::unproject({double(x), double(y)}, k);
      table->dirs[static_cast<std::size_t>(y) * k.width + x] =
          un.valid ? un.direction : Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
    }
  cached = table;
  return cached;
}

}  // namespace

void Scene::validate() const {
  for (const auto& q : quads) {
    check_distance(q.pose.translation().norm(), "quad centre");
    if (!(q.width > 0 && q.height > 0)) throw InvalidArgument("scene: quad size must be positive");
    if (q.cells_x < 1 || q.cells_y < 1) throw InvalidArgument("scene: checker cells must be at least 1");
  }
  for (const auto& p : points) {
    check_distance(p.position.norm(), "point target");
    if (!(p.angular_size_deg > 0)) throw InvalidArgument("scene: point angular size must be positive");
  }
}

void to_json(nlohmann::json& j, const Scene& s) {
  j = nlohmann::json{{"schema", 1}, {"sky", rgb_to_json(s.sky)}, {"quads", nlohmann::json::array()},
                     {"points", nlohmann::json::array()}};
  for (const auto& q : s.quads) {
    j["quads"].push_back({{"pose", q.pose},
                          {"size", {q.width, q.height}},
                          {"cells", {q.cells_x, q.cells_y}},
                          {"colors", {rgb_to_json(q.color_a), rgb_to_json(q.color_b)}}});
  }
  for (const auto& p : s.points) {
    j["points"].push_back({{"position", {p.position.x(), p.position.y(), p.position.z()}},
                           {"color", rgb_to_json(p.color)},
                           {"angular_size_deg", p.angular_size_deg}});
  }
}

void from_json(const nlohmann::json& j, Scene& s) {
  if (j.value("schema", 0) != 1) throw InvalidArgument("scene: expected \"schema\": 1");
  for (const auto& [key, _] : j.items())
    if (key != "schema" && key != "sky" && key != "quads" && key != "points")
      throw InvalidArgument("scene: unknown key '" + key + "'");
  s = Scene{};
  if (j.contains("sky")) s.sky = rgb_from_json(j["sky"]);
  for (const auto& jq : j.value("quads", nlohmann::json::array())) {
    Quad q;
    q.pose = jq.at("pose").get<Pose>();
    q.width = jq.at("size").at(0).get<double>();
    q.height = jq.at("size").at(1).get<double>();
    if (jq.contains("cells")) {
      q.cells_x = jq["cells"].at(0).get<int>();
      q.cells_y = jq["cells"].at(1).get<int>();
    }
    if (jq.contains("colors")) {
      q.color_a = rgb_from_json(jq["colors"].at(0));
      q.color_b = rgb_from_json(jq["colors"].at(1));
    } else if (jq.contains("color")) {
      q.color_a = q.color_b = rgb_from_json(jq["color"]);
    }
    s.quads.push_back(q);
  }
  for (const auto& jp : j.value("points", nlohmann::json::array())) {
    PointTarget p;
    const auto& pos = jp.at("position");
    p.position = Vec3(pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>());
    if (jp.contains("color")) p.color = rgb_from_json(jp["color"]);
    p.angular_size_deg = jp.value("angular_size_deg", 1.0);
    s.points.push_back(p);
  }
  s.validate();
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open scene " + path.string());
  return nlohmann::json::parse(in).get<Scene>();
}

Scene default_scene() {
  Scene s;
  // Wall 3 m ahead of the head, facing back toward it.
  Quad wall;
  wall.pose = Pose(geom::Quat(Eigen::AngleAxisd(-std::numbers::pi / 2, Vec3::UnitY())), Vec3(3.0, 0.0, 1.5));
  wall.width = 3.0;
  wall.height = 6.0;
  wall.cells_x = 6;
  wall.cells_y = 12;
  wall.color_a = {220, 220, 210};
  wall.color_b = {40, 60, 90};
  s.quads.push_back(wall);
  // Floor around the robot.
  Quad floor;
  floor.pose = Pose::from_translation({1.0, 0.0, 0.0});
  floor.width = 8.0;
  floor.height = 8.0;
  floor.cells_x = 16;
  floor.cells_y = 16;
  floor.color_a = {150, 130, 100};
  floor.color_b = {90, 75, 60};
  s.quads.push_back(floor);
  // Side wall on the left.
  Quad side;
  side.pose = Pose(geom::Quat(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitX())), Vec3(1.0, 2.0, 1.5));
  side.width = 4.0;
  side.height = 3.0;
  side.cells_x = 8;
  side.cells_y = 6;
  side.color_a = {180, 90, 80};
  side.color_b = {240, 200, 120};
  s.quads.push_back(side);
  s.points.push_back({Vec3(1.0, 0.0, 1.2), {255, 40, 40}, 1.0});
  s.points.push_back({Vec3(2.0, -0.6, 1.0), {40, 255, 40}, 1.0});
  s.validate();
  return s;
}

Rgb shade(const Scene& scene, const Vec3& origin, const Vec3& direction) {
  double best = std::numeric_limits<double>::infinity();
  Rgb color = scene.sky;
  for (const auto& q : scene.quads) {
    const geom::Mat3 r = q.pose.rotation_matrix();
    const Vec3 o = r.transpose() * (origin - q.pose.translation());
    const Vec3 d = r.transpose() * direction;
    if (std::abs(d.z()) < 1e-12) continue;
    const double s = -o.z() / d.z();
    if (!(s > 0.0) || s >= best) continue;
    const Vec3 p = o + s * d;
    const double u = p.x() / q.width + 0.5;
    const double v = p.y() / q.height + 0.5;
    if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
    best = s;
    const int cx = std::min(q.cells_x - 1, static_cast<int>(u * q.cells_x));
    const int cy = std::min(q.cells_y - 1, static_cast<int>(v * q.cells_y));
    color = (cx + cy) % 2 == 0 ? q.color_a : q.color_b;
  }
  for (const auto& pt : scene.points) {
    const Vec3 to = pt.position - origin;
    const double dist = to.norm();
    if (dist >= best || dist <= 0.0) continue;
    const double ang = std::atan2(direction.cross(to).norm(), direction.dot(to));
    const double sigma = 0.5 * pt.angular_size_deg * std::numbers::pi / 180.0;
    if (ang > kSplatCutoffSigmas * sigma) continue;
    color = mix(color, pt.color, std::exp(-0.5 * ang * ang / (sigma * sigma)));
  }
  return color;
}

image::Image capture(const Scene& scene, const Pose& t_world_cam, const camera::DoubleSphereIntrinsics& intr,
                     int threads) {
  intr.validate();
  const auto table = direction_table(intr);
  image::Image img(intr.width, intr.height);
  const geom::Mat3 r = t_world_cam.rotation_matrix();
  const Vec3 origin = t_world_cam.translation();
  detail::parallel_rows(intr.height, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < intr.width; ++x) {
        const Vec3& d = table->dirs[static_cast<std::size_t>(y) * intr.width + x];
        if (std::isnan(d.x())) continue;
        img.set(x, y, shade(scene, origin, r * d));
      }
  });
  return img;
}

}  // namespace spheroview::sim
