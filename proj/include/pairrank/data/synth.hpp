#pragma once

#include <cstdint>

#include <json.hpp>

#include "pairrank/data/dataset.hpp"

namespace pairrank::data {

/// Stick-figure longitudinal set whose only temporal change is the left arm.
struct StarmenConfig {
  int n_subjects = 200;
  int timepoints = 10;
  int image_size = 64;
  double alpha_lo = 0.5, alpha_hi = 1.5;  // t* = alpha * (t - tau)
  double tau_lo = 2.0, tau_hi = 7.0;
  /// Arm elevation (degrees above horizontal) = clamp(arm_mid + arm_slope * t*, arm_min, arm_max).
  double arm_mid_deg = 0.0;
  double arm_slope_deg = 7.0;
  double arm_min_deg = -80.0, arm_max_deg = 80.0;
  double max_rotation_deg = 10.0;
  double max_translation = 6.8;  // per axis
  bool intensity_jitter = false;  // brightness/contrast factors in [0.8, 1.2]
};

/// Growing-disc lesions on a textured tissue background.
struct TumorConfig {
  int n_subjects = 100;
  int min_timepoints = 3, max_timepoints = 5;
  int image_size = 96;
  double radius_lo = 5.0, radius_hi = 10.0;  // initial radius, pixels
  double growth_lo = 1.5, growth_hi = 3.5;   // radius increase per visit, pixels
  double intensity_lo = 0.15, intensity_hi = 0.4;
  double max_rotation_deg = 10.0;
  double max_translation = 10.0;
  double noise_stddev = 0.01;  // per-visit acquisition noise
  bool intensity_jitter = false;
};

nlohmann::json to_json(const StarmenConfig& c);
nlohmann::json to_json(const TumorConfig& c);
StarmenConfig starmen_config_from_json(const nlohmann::json& j);
TumorConfig tumor_config_from_json(const nlohmann::json& j);

/// Per-subject progression parameters, exposed for tests.
struct StarmenSubjectParams {
  double alpha = 1.0;
  double tau = 0.0;
};
double starmen_progression(const StarmenSubjectParams& p, double t);
double starmen_arm_angle(const StarmenConfig& c, double t_star);

/// Renders the figure for arm elevation `arm_deg` under `transform` (anatomy
/// drawn from `anatomy_seed`). Pixel intensities are in [0, 1].
Image render_starman(int image_size, double arm_deg, const RigidTransform& transform, std::uint64_t anatomy_seed);

/// Pure function of (config, seed). Throws std::invalid_argument if
/// n_subjects < 1, timepoints < 2 or image_size < 32.
LongitudinalDataset generate_starmen(const StarmenConfig& config, std::uint64_t seed);

/// Pure function of (config, seed). Each sample carries its lesion geometry
/// and the change mask versus the previous visit (the whole disc at visit 0).
LongitudinalDataset generate_tumor(const TumorConfig& config, std::uint64_t seed);

/// Pixels (in the later image's frame) inside radius `later` but not `earlier`.
Mask pair_change_mask(const Lesion& later_lesion, double earlier_radius, int width, int height);
/// Pixels whose centre lies inside the disc.
Mask disc_mask(const Lesion& lesion, int width, int height);

}  // namespace pairrank::data
