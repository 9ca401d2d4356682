#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "spheroview/geom.hpp"

using namespace spheroview::geom;
using oracle::homogeneous;

namespace {

bool near_pose(const Pose& a, const Pose& b, double tol) {
  return angular_distance(a, b) < tol && translation_distance(a, b) < tol;
}

}  // namespace

TEST_CASE("compose") {
  std::mt19937_64 rng(11);
  const Pose p = oracle::random_pose(rng);
  CHECK(near_pose(compose(Pose::identity(), p), p, 1e-12));

  const Pose rz90 = Pose::from_axis_angle(Vec3::UnitZ(), oracle::rad(90));
  const Pose r = compose(rz90, rz90);
  CHECK(oracle::max_abs_diff(homogeneous(r), oracle::rot_z(oracle::rad(180))) < 1e-12);

  for (int i = 0; i < 200; ++i) {
    const Pose a = oracle::random_pose(rng);
    const Pose b = oracle::random_pose(rng);
    CHECK(oracle::max_abs_diff(homogeneous(compose(a, b)), homogeneous(a) * homogeneous(b)) < 1e-9);
  }
}

TEST_CASE("inverse") {
  CHECK(near_pose(inverse(Pose::identity()), Pose::identity(), 0.0 + 1e-15));
  const Pose t = Pose::from_translation({1, 2, 3});
  CHECK((inverse(t).translation() - Vec3(-1, -2, -3)).norm() < 1e-15);

  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const Pose p = oracle::random_pose(rng);
    CHECK(oracle::max_abs_diff(homogeneous(inverse(p)), homogeneous(p).inverse()) < 1e-9);
    const Pose id = compose(p, inverse(p));
    CHECK(rotation_angle(id.rotation()) < 1e-9);
    CHECK(id.translation().norm() < 1e-9);
  }
}

TEST_CASE("quaternion stays unit and canonical") {
  std::mt19937_64 rng(13);
  Pose acc;
  for (int i = 0; i < 1000; ++i) {
    acc = compose(acc, oracle::random_pose(rng, 0.1));
    CHECK(std::abs(acc.rotation().norm() - 1.0) < 1e-9);
    CHECK(acc.rotation().w() >= 0.0);
  }
  const Pose flipped(Quat(-0.5, -0.5, -0.5, -0.5), Vec3::Zero());
  CHECK(flipped.rotation().w() == doctest::Approx(0.5));
}

TEST_CASE("associativity") {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 500; ++i) {
    const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng), c = oracle::random_pose(rng);
    CHECK(near_pose(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9));
  }
}

TEST_CASE("interpolate") {
  std::mt19937_64 rng(15);
  const Pose p = oracle::random_pose(rng);
  CHECK(near_pose(interpolate(p, p, 0.5), p, 1e-12));

  const Pose half = interpolate(Pose::identity(), Pose::from_axis_angle(Vec3::UnitZ(), oracle::rad(90)), 0.5);
  CHECK(oracle::max_abs_diff(homogeneous(half), oracle::rot_z(oracle::rad(45))) < 1e-12);

  std::uniform_real_distribution<double> us(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    const double s = us(rng);
    const Pose m = interpolate(a, b, s);
    // Angle oracle from rotation matrices; shortest arc total angle.
    const Eigen::Matrix3d ra = homogeneous(a).topLeftCorner<3, 3>();
    const Eigen::Matrix3d rb = homogeneous(b).topLeftCorner<3, 3>();
    const Eigen::Matrix3d rm = homogeneous(m).topLeftCorner<3, 3>();
    const double total = oracle::rotation_angle(ra.transpose() * rb);
    CHECK(std::abs(oracle::rotation_angle(ra.transpose() * rm) - s * total) < 1e-9);
    CHECK(std::abs(oracle::rotation_angle(rm.transpose() * rb) - (1 - s) * total) < 1e-9);
    CHECK((m.translation() - ((1 - s) * a.translation() + s * b.translation())).norm() < 1e-12);
  }
  const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng);
  CHECK(near_pose(interpolate(a, b, 0.0), a, 0.0 + 1e-15));
  CHECK(near_pose(interpolate(a, b, 1.0), b, 0.0 + 1e-15));
}

TEST_CASE("exp and log") {
  CHECK(near_pose(exp_map(Twist::Zero()), Pose::identity(), 1e-15));
  Twist tz = Twist::Zero();
  tz[2] = oracle::rad(90);
  CHECK(oracle::max_abs_diff(homogeneous(exp_map(tz)), oracle::rot_z(oracle::rad(90))) < 1e-12);

  std::mt19937_64 rng(16);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Pose p = oracle::random_pose(rng);
    if (rotation_angle(p.rotation()) > std::numbers::pi - 1e-5) continue;
    CHECK(near_pose(exp_map(log_map(p)), p, 1e-9));
    ++checked;
  }
  CHECK(checked > 990);

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Twist t;
    for (int k = 0; k < 6; ++k) t[k] = u(rng);
    CHECK((log_map(exp_map(t)) - t).norm() < 1e-9);
  }
  // Tiny angles go through the series branch.
  Twist tiny = Twist::Zero();
  tiny[0] = 1e-10;
  CHECK((log_map(exp_map(tiny)) - tiny).norm() < 1e-18);
}

TEST_CASE("log rejects the pi boundary") {
  CHECK_THROWS_AS(log_map(Pose::from_axis_angle(Vec3::UnitX(), std::numbers::pi)), ParameterizationSingularity);
  CHECK_THROWS_WITH(log_map(Pose::from_axis_angle(Vec3::UnitY(), std::numbers::pi - 1e-7)),
                    "parameterization singularity");
  CHECK_NOTHROW(log_map(Pose::from_axis_angle(Vec3::UnitY(), std::numbers::pi - 1e-4)));
}

TEST_CASE("json") {
  std::mt19937_64 rng(17);
  const Pose p = oracle::random_pose(rng);
  const nlohmann::json j = p;
  CHECK(j.at("q").size() == 4);
  CHECK(j.at("t").size() == 3);
  CHECK(near_pose(j.get<Pose>(), p, 1e-15));
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"q":[0,0,0,0],"t":[0,0,0]})").get<Pose>(), spheroview::InvalidArgument);
}
