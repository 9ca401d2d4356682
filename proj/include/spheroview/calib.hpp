#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spheroview/camera.hpp"
#include "spheroview/geom.hpp"

namespace spheroview::calib {

using geom::Pose;
using geom::Vec2;
using geom::Vec3;

class UnidentifiableConfiguration : public Error {
 public:
  using Error::Error;
};

/// One marker observation. Poses come from forward kinematics; pixels from the detector.
struct CalibSample {
  Pose t_head;  ///< head-arm flange in head-arm base
  Pose t_arm;   ///< wrist flange in arm base
  Vec2 px_left = Vec2::Zero();
  Vec2 px_right = Vec2::Zero();
  bool valid_left = true;
  bool valid_right = true;
};

/// The three unknown transforms of the kinematic chain.
struct ChainParams {
  Pose t_cam;    ///< left camera in head-arm flange
  Pose t_mount;  ///< arm base in head-arm base
  Pose t_mark;   ///< marker in wrist flange (only the translation is observable)
};

struct CalibEstimate {
  ChainParams params;
  double rms_px = 0.0;
  int iterations = 0;
  bool converged = false;
  double cost = 0.0;
  std::size_t samples_used = 0;
  double condition_number = 0.0;   ///< of the normal equations at the solution
  std::vector<double> cost_history;  ///< cost after every accepted step, starting with the initial cost
};

struct PixelPrediction {
  Vec2 left = Vec2::Zero();
  Vec2 right = Vec2::Zero();
  bool valid_left = false;
  bool valid_right = false;
};

/// Marker origin projected through both cameras. Throws camera::DegeneratePoint
/// when the marker coincides with a camera center.
PixelPrediction predict_pixels(const ChainParams& params, const CalibSample& sample,
                               const camera::StereoRig& rig);

/// Sum of squared pixel residuals over both sides, skipping invalid sides.
double cost(const ChainParams& params, std::span<const CalibSample> samples, const camera::StereoRig& rig);

struct SolveOptions {
  int max_iterations = 100;
  double lambda_init = 1e-3;
  double relative_cost_tol = 1e-10;
  double step_tol = 1e-10;
  double fd_step = 1e-6;
  double max_condition = 1e10;  ///< above this the problem is reported unidentifiable
  bool allow_single_side = false;
  std::size_t min_samples = 15;
};

/// Levenberg-Marquardt over 15 local coordinates: twists of t_cam and t_mount,
/// translation of t_mark (its orientation stays at the initial value).
CalibEstimate solve(std::span<const CalibSample> samples, const camera::StereoRig& rig, const ChainParams& init,
                    const SolveOptions& options = {});

struct SyntheticOptions {
  std::size_t n = 200;
  double noise_px = 0.0;
  std::uint64_t seed = 1;
  int max_attempts_per_sample = 200;
};

/// Head flange follows a multi-frequency sinusoidal sweep; the wrist is sampled
/// uniformly in a box in front of the cameras. Only samples with the marker
/// inside both images are emitted.
std::vector<CalibSample> generate_synthetic(const ChainParams& ground_truth, const camera::StereoRig& rig,
                                            const SyntheticOptions& options);

ChainParams default_ground_truth();

/// Moves every transform by `translation_m` along a random direction and rotates
/// it by `rotation_rad` about a random axis.
ChainParams perturb(const ChainParams& params, double translation_m, double rotation_rad, std::uint64_t seed);

/// Per-transform recovery errors against a reference.
struct RecoveryError {
  double cam_translation_m = 0.0;
  double cam_rotation_rad = 0.0;
  double mount_translation_m = 0.0;
  double mount_rotation_rad = 0.0;
  double mark_translation_m = 0.0;
};
RecoveryError recovery_error(const ChainParams& estimate, const ChainParams& truth);

void to_json(nlohmann::json& j, const CalibSample& s);
void from_json(const nlohmann::json& j, CalibSample& s);
void to_json(nlohmann::json& j, const ChainParams& p);
void from_json(const nlohmann::json& j, ChainParams& p);
void to_json(nlohmann::json& j, const CalibEstimate& e);

nlohmann::json samples_to_json(std::span<const CalibSample> samples);
std::vector<CalibSample> samples_from_json(const nlohmann::json& j);

}  // namespace spheroview::calib
