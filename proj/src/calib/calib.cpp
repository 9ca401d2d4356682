#include "spheroview/calib.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace spheroview::calib {

namespace {

constexpr int kDim = 15;
using ParamVec = Eigen::Matrix<double, kDim, 1>;
using Hessian = Eigen::Matrix<double, kDim, kDim>;

constexpr std::array<const char*, kDim> kParamNames = {
    "t_cam.rx",   "t_cam.ry",   "t_cam.rz",   "t_cam.tx",   "t_cam.ty",
    "t_cam.tz",   "t_mount.rx", "t_mount.ry", "t_mount.rz", "t_mount.tx",
    "t_mount.ty", "t_mount.tz", "t_mark.tx",  "t_mark.ty",  "t_mark.tz"};

ChainParams retract(const ChainParams& p, const ParamVec& delta) {
  geom::Twist cam = delta.segment<6>(0);
  geom::Twist mount = delta.segment<6>(6);
  geom::Twist mark = geom::Twist::Zero();
  mark.tail<3>() = delta.segment<3>(12);
  return {p.t_cam * geom::exp_map(cam), p.t_mount * geom::exp_map(mount), p.t_mark * geom::exp_map(mark)};
}

struct SideMask {
  bool left;
  bool right;
};

// Residuals in sample order, left before right; inactive sides contribute zeros
// so the residual layout stays fixed while the solver iterates.
Eigen::VectorXd residuals(const ChainParams& p, std::span<const CalibSample> samples,
                          std::span<const SideMask> masks, const camera::StereoRig& rig) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(4 * samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PixelPrediction pred = predict_pixels(p, samples[i], rig);
    const auto row = static_cast<Eigen::Index>(4 * i);
    if (masks[i].left && pred.valid_left) r.segment<2>(row) = pred.left - samples[i].px_left;
    if (masks[i].right && pred.valid_right) r.segment<2>(row + 2) = pred.right - samples[i].px_right;
  }
  return r;
}

std::size_t active_residuals(const ChainParams& p, std::span<const CalibSample> samples,
                             std::span<const SideMask> masks, const camera::StereoRig& rig) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PixelPrediction pred = predict_pixels(p, samples[i], rig);
    if (masks[i].left && pred.valid_left) n += 2;
    if (masks[i].right && pred.valid_right) n += 2;
  }
  return n;
}

Eigen::MatrixXd jacobian(const ChainParams& p, std::span<const CalibSample> samples,
                         std::span<const SideMask> masks, const camera::StereoRig& rig, double h) {
  Eigen::MatrixXd J(static_cast<Eigen::Index>(4 * samples.size()), kDim);
  for (int k = 0; k < kDim; ++k) {
    ParamVec d = ParamVec::Zero();
    d[k] = h;
    const Eigen::VectorXd plus = residuals(retract(p, d), samples, masks, rig);
    const Eigen::VectorXd minus = residuals(retract(p, -d), samples, masks, rig);
    J.col(k) = (plus - minus) / (2.0 * h);
  }
  return J;
}

std::string describe_direction(const ParamVec& v) {
  std::ostringstream os;
  os.precision(2);
  bool first = true;
  for (int k = 0; k < kDim; ++k) {
    if (std::abs(v[k]) < 0.2) continue;
    os << (first ? "" : " ") << std::showpos << v[k] << std::noshowpos << "*" << kParamNames[k];
    first = false;
  }
  return os.str();
}

}  // namespace

PixelPrediction predict_pixels(const ChainParams& params, const CalibSample& s, const camera::StereoRig& rig) {
  const Vec3 marker_base = (params.t_mount * s.t_arm * params.t_mark).translation();
  const Vec3 in_left = geom::inverse(s.t_head * params.t_cam) * marker_base;
  const Vec3 in_right = geom::inverse(rig.t_l_r) * in_left;
  const camera::Projection pl = camera::project(in_left, rig.left);
  const camera::Projection pr = camera::project(in_right, rig.right);
  return {pl.pixel, pr.pixel, pl.valid, pr.valid};
}

double cost(const ChainParams& params, std::span<const CalibSample> samples, const camera::StereoRig& rig) {
  if (samples.empty()) throw InvalidArgument("cost: empty sample set");
  double e = 0.0;
  for (const CalibSample& s : samples) {
    const PixelPrediction pred = predict_pixels(params, s, rig);
    if (s.valid_left && pred.valid_left) e += (pred.left - s.px_left).squaredNorm();
    if (s.valid_right && pred.valid_right) e += (pred.right - s.px_right).squaredNorm();
  }
  return e;
}

CalibEstimate solve(std::span<const CalibSample> all_samples, const camera::StereoRig& rig,
                    const ChainParams& init, const SolveOptions& opt) {
  std::vector<CalibSample> samples;
  for (const CalibSample& s : all_samples) {
    if (!s.valid_left && !s.valid_right) continue;
    if (!opt.allow_single_side && !(s.valid_left && s.valid_right)) continue;
    samples.push_back(s);
  }
  if (samples.size() < opt.min_samples) {
    throw InvalidArgument("solve: need at least " + std::to_string(opt.min_samples) + " usable samples, got " +
                          std::to_string(samples.size()));
  }
  std::vector<SideMask> masks;
  masks.reserve(samples.size());
  for (const CalibSample& s : samples) masks.push_back({s.valid_left, s.valid_right});

  CalibEstimate est;
  est.params = init;
  est.samples_used = samples.size();

  Eigen::VectorXd r = residuals(est.params, samples, masks, rig);
  double e = r.squaredNorm();
  est.cost_history.push_back(e);

  double lambda = opt.lambda_init;
  bool need_jacobian = true;
  Eigen::MatrixXd J;
  Hessian H;
  ParamVec g;

  while (est.iterations < opt.max_iterations && !est.converged) {
    if (e == 0.0) {
      est.converged = true;
      break;
    }
    if (need_jacobian) {
      J = jacobian(est.params, samples, masks, rig, opt.fd_step);
      H = J.transpose() * J;
      g = J.transpose() * r;
      need_jacobian = false;
      if (est.iterations == 0) {
        const Eigen::SelfAdjointEigenSolver<Hessian> eig(H);
        const double lo = eig.eigenvalues()[0];
        const double hi = eig.eigenvalues()[kDim - 1];
        if (!(lo > 0.0) || hi / lo > opt.max_condition) {
          throw UnidentifiableConfiguration("unidentifiable configuration: near-null twist direction " +
                                            describe_direction(eig.eigenvectors().col(0)));
        }
      }
    }
    ++est.iterations;

    Hessian damped = H;
    damped.diagonal() += lambda * H.diagonal();
    const ParamVec step = damped.ldlt().solve(-g);
    const ChainParams candidate = retract(est.params, step);
    const Eigen::VectorXd r_new = residuals(candidate, samples, masks, rig);
    const double e_new = r_new.squaredNorm();

    if (std::isfinite(e_new) && e_new < e) {
      const double relative = (e - e_new) / e;
      est.params = candidate;
      r = r_new;
      e = e_new;
      est.cost_history.push_back(e);
      lambda /= 10.0;
      need_jacobian = true;
      if (relative < opt.relative_cost_tol || step.norm() < opt.step_tol) est.converged = true;
    } else {
      lambda *= 10.0;
      if (step.norm() < opt.step_tol) est.converged = true;
    }
  }

  est.cost = e;
  const std::size_t n_res = active_residuals(est.params, samples, masks, rig);
  est.rms_px = n_res > 0 ? std::sqrt(e / static_cast<double>(n_res)) : 0.0;

  const Eigen::MatrixXd Jf = jacobian(est.params, samples, masks, rig, opt.fd_step);
  const Hessian Hf = Jf.transpose() * Jf;
  const Eigen::SelfAdjointEigenSolver<Hessian> eig(Hf);
  est.condition_number = eig.eigenvalues()[kDim - 1] / eig.eigenvalues()[0];
  return est;
}

ChainParams default_ground_truth() {
  // Optical frame (z forward, x right, y down) inside a flange frame (x forward, z up).
  geom::Mat3 flange_to_optical;
  flange_to_optical << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  const geom::Quat tilt = geom::so3_exp(Vec3(0.035, -0.026, 0.017));
  ChainParams gt;
  gt.t_cam = Pose(geom::Quat(flange_to_optical) * tilt, Vec3(0.06, 0.032, 0.08));
  gt.t_mount = Pose::from_axis_angle(Vec3::UnitZ(), 25.0 * std::numbers::pi / 180.0, Vec3(0.15, -0.35, -0.25));
  gt.t_mark = Pose(geom::so3_exp(Vec3(0.3, -0.2, 0.1)), Vec3(0.01, -0.02, 0.11));
  return gt;
}

namespace {

Pose head_sweep(double t) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double yaw = 0.35 * std::sin(two_pi * 0.11 * t);
  const double pitch = 0.25 * std::sin(two_pi * 0.17 * t + 0.5);
  const double roll = 0.15 * std::sin(two_pi * 0.23 * t + 1.1);
  const geom::Quat q = Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                       Eigen::AngleAxisd(roll, Vec3::UnitX());
  const Vec3 t_nom(0.25, 0.0, 0.45);
  const Vec3 wobble(0.05 * std::sin(two_pi * 0.07 * t + 0.3), 0.05 * std::sin(two_pi * 0.13 * t + 2.0),
                    0.04 * std::sin(two_pi * 0.19 * t + 0.9));
  return {q, t_nom + wobble};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

bool in_image(const Vec2& px, const camera::DoubleSphereIntrinsics& k) {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= k.width - 1.0 && px.y() <= k.height - 1.0;
}

}  // namespace

std::vector<CalibSample> generate_synthetic(const ChainParams& gt, const camera::StereoRig& rig,
                                            const SyntheticOptions& opt) {
  if (opt.n < 1) throw InvalidArgument("generate_synthetic: n must be at least 1");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 60.0 * std::numbers::pi / 180.0);
  std::normal_distribution<double> noise(0.0, opt.noise_px > 0.0 ? opt.noise_px : 1.0);

  const Vec3 box_center = geom::inverse(gt.t_mount) * Vec3(0.95, 0.0, 0.5);
  const Vec3 box_half(0.25, 0.35, 0.3);
  const geom::Quat wrist_nominal = Eigen::AngleAxisd(std::numbers::pi / 2.0, Vec3::UnitY()) * geom::Quat::Identity();

  std::vector<CalibSample> out;
  out.reserve(opt.n);
  const std::size_t max_attempts = opt.n * static_cast<std::size_t>(opt.max_attempts_per_sample);
  std::size_t attempts = 0;
  constexpr double kSweepDt = 0.5;  // seconds between detections along the head sweep
  while (out.size() < opt.n && attempts < max_attempts) {
    const double t = kSweepDt * static_cast<double>(attempts);
    ++attempts;
    CalibSample s;
    s.t_head = head_sweep(t);
    const Vec3 pos = box_center + Vec3(unit(rng) * box_half.x(), unit(rng) * box_half.y(), unit(rng) * box_half.z());
    const geom::Quat wiggle(Eigen::AngleAxisd(angle(rng), random_unit(rng)));
    s.t_arm = Pose(wrist_nominal * wiggle, pos);

    const PixelPrediction p = predict_pixels(gt, s, rig);
    if (!p.valid_left || !p.valid_right) continue;
    s.px_left = p.left;
    s.px_right = p.right;
    if (opt.noise_px > 0.0) {
      s.px_left += Vec2(noise(rng), noise(rng));
      s.px_right += Vec2(noise(rng), noise(rng));
    }
    if (!in_image(s.px_left, rig.left) || !in_image(s.px_right, rig.right)) continue;
    out.push_back(s);
  }
  if (out.size() < opt.n) {
    std::ostringstream os;
    os << "generate_synthetic: only " << out.size() << " of " << opt.n << " samples had the marker in both images after "
       << attempts << " attempts (yield " << 100.0 * static_cast<double>(out.size()) / static_cast<double>(attempts)
       << "%)";
    throw Error(os.str());
  }
  return out;
}

ChainParams perturb(const ChainParams& p, double translation_m, double rotation_rad, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto nudge = [&](const Pose& pose) {
    geom::Twist d;
    d.head<3>() = rotation_rad * random_unit(rng);
    d.tail<3>() = translation_m * random_unit(rng);
    return Pose(pose.rotation() * geom::so3_exp(d.head<3>()), pose.translation() + d.tail<3>());
  };
  return {nudge(p.t_cam), nudge(p.t_mount), nudge(p.t_mark)};
}

RecoveryError recovery_error(const ChainParams& e, const ChainParams& t) {
  return {geom::translation_distance(e.t_cam, t.t_cam), geom::angular_distance(e.t_cam, t.t_cam),
          geom::translation_distance(e.t_mount, t.t_mount), geom::angular_distance(e.t_mount, t.t_mount),
          geom::translation_distance(e.t_mark, t.t_mark)};
}

namespace {

nlohmann::json pixel_json(const Vec2& px, bool valid) {
  if (!valid) return nullptr;
  return nlohmann::json::array({px.x(), px.y()});
}

void read_pixel(const nlohmann::json& j, Vec2& px, bool& valid) {
  if (j.is_null()) {
    valid = false;
    return;
  }
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("sample pixel must be [u, v] or null");
  px = Vec2(j[0].get<double>(), j[1].get<double>());
  valid = true;
}

}  // namespace

void to_json(nlohmann::json& j, const CalibSample& s) {
  j = nlohmann::json{{"t_head", s.t_head},
                     {"t_arm", s.t_arm},
                     {"px_left", pixel_json(s.px_left, s.valid_left)},
                     {"px_right", pixel_json(s.px_right, s.valid_right)}};
}

void from_json(const nlohmann::json& j, CalibSample& s) {
  s.t_head = j.at("t_head").get<Pose>();
  s.t_arm = j.at("t_arm").get<Pose>();
  read_pixel(j.value("px_left", nlohmann::json()), s.px_left, s.valid_left);
  read_pixel(j.value("px_right", nlohmann::json()), s.px_right, s.valid_right);
  if (!s.valid_left && !s.valid_right) throw InvalidArgument("sample has no valid detection");
}

void to_json(nlohmann::json& j, const ChainParams& p) {
  j = nlohmann::json{{"schema", 1}, {"t_cam", p.t_cam}, {"t_mount", p.t_mount}, {"t_mark", p.t_mark}};
}

void from_json(const nlohmann::json& j, ChainParams& p) {
  p.t_cam = j.at("t_cam").get<Pose>();
  p.t_mount = j.at("t_mount").get<Pose>();
  p.t_mark = j.at("t_mark").get<Pose>();
}

void to_json(nlohmann::json& j, const CalibEstimate& e) {
  j = e.params;
  j["rms_px"] = e.rms_px;
  j["iterations"] = e.iterations;
  j["converged"] = e.converged;
  j["cost"] = e.cost;
  j["samples_used"] = e.samples_used;
  j["condition_number"] = e.condition_number;
}

nlohmann::json samples_to_json(std::span<const CalibSample> samples) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CalibSample& s : samples) arr.push_back(s);
  return {{"schema", 1}, {"samples", arr}};
}

std::vector<CalibSample> samples_from_json(const nlohmann::json& j) {
  const nlohmann::json& arr = j.is_array() ? j : j.at("samples");
  std::vector<CalibSample> out;
  out.reserve(arr.size());
  for (const auto& item : arr) out.push_back(item.get<CalibSample>());
  return out;
}

}  // namespace spheroview::calib
