#include "pairrank/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "pairrank/util/rng.hpp"

namespace pairrank::data {

using nlohmann::json;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string subject_name(int index) {
  char buffer[16];
  std::snprintf(buffer, sizeof buffer, "s%04d", index);
  return buffer;
}

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

Point transformed(const RigidTransform& tf, Point p) {
  Point q{};
  tf.apply(p.x, p.y, q.x, q.y);
  return q;
}

AugmentParams intensity_params(Rng& rng) {
  AugmentParams p;
  p.brightness = rng.uniform(0.8, 1.2);
  p.contrast = rng.uniform(0.8, 1.2);
  return p;
}

/// Smooth random field: bilinear upsampling of a coarse Gaussian grid.
std::vector<double> smooth_field(Rng& rng, int grid, int size, double stddev) {
  std::vector<double> coarse(static_cast<std::size_t>(grid * grid));
  for (auto& v : coarse) v = rng.normal(0.0, stddev);
  return resize_bilinear(coarse, grid, grid, size, size);
}

}  // namespace

json to_json(const StarmenConfig& c) {
  return json{{"generator", "starmen"},
              {"n_subjects", c.n_subjects},
              {"timepoints", c.timepoints},
              {"image_size", c.image_size},
              {"alpha", {c.alpha_lo, c.alpha_hi}},
              {"tau", {c.tau_lo, c.tau_hi}},
              {"arm_mid_deg", c.arm_mid_deg},
              {"arm_slope_deg", c.arm_slope_deg},
              {"arm_range_deg", {c.arm_min_deg, c.arm_max_deg}},
              {"max_rotation_deg", c.max_rotation_deg},
              {"max_translation", c.max_translation},
              {"intensity_jitter", c.intensity_jitter}};
}

json to_json(const TumorConfig& c) {
  return json{{"generator", "tumor"},
              {"n_subjects", c.n_subjects},
              {"timepoints", {c.min_timepoints, c.max_timepoints}},
              {"image_size", c.image_size},
              {"initial_radius", {c.radius_lo, c.radius_hi}},
              {"growth", {c.growth_lo, c.growth_hi}},
              {"intensity", {c.intensity_lo, c.intensity_hi}},
              {"max_rotation_deg", c.max_rotation_deg},
              {"max_translation", c.max_translation},
              {"noise_stddev", c.noise_stddev},
              {"intensity_jitter", c.intensity_jitter}};
}

StarmenConfig starmen_config_from_json(const json& j) {
  StarmenConfig c;
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  c.timepoints = j.value("timepoints", c.timepoints);
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("alpha")) std::tie(c.alpha_lo, c.alpha_hi) = std::pair{j["alpha"][0].get<double>(), j["alpha"][1].get<double>()};
  if (j.contains("tau")) std::tie(c.tau_lo, c.tau_hi) = std::pair{j["tau"][0].get<double>(), j["tau"][1].get<double>()};
  c.arm_mid_deg = j.value("arm_mid_deg", c.arm_mid_deg);
  c.arm_slope_deg = j.value("arm_slope_deg", c.arm_slope_deg);
  if (j.contains("arm_range_deg")) {
    c.arm_min_deg = j["arm_range_deg"][0].get<double>();
    c.arm_max_deg = j["arm_range_deg"][1].get<double>();
  }
  c.max_rotation_deg = j.value("max_rotation_deg", c.max_rotation_deg);
  c.max_translation = j.value("max_translation", c.max_translation);
  c.intensity_jitter = j.value("intensity_jitter", c.intensity_jitter);
  return c;
}

TumorConfig tumor_config_from_json(const json& j) {
  TumorConfig c;
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  if (j.contains("timepoints")) {
    c.min_timepoints = j["timepoints"][0].get<int>();
    c.max_timepoints = j["timepoints"][1].get<int>();
  }
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("initial_radius")) {
    c.radius_lo = j["initial_radius"][0].get<double>();
    c.radius_hi = j["initial_radius"][1].get<double>();
  }
  if (j.contains("growth")) {
    c.growth_lo = j["growth"][0].get<double>();
    c.growth_hi = j["growth"][1].get<double>();
  }
  if (j.contains("intensity")) {
    c.intensity_lo = j["intensity"][0].get<double>();
    c.intensity_hi = j["intensity"][1].get<double>();
  }
  c.max_rotation_deg = j.value("max_rotation_deg", c.max_rotation_deg);
  c.max_translation = j.value("max_translation", c.max_translation);
  c.noise_stddev = j.value("noise_stddev", c.noise_stddev);
  c.intensity_jitter = j.value("intensity_jitter", c.intensity_jitter);
  return c;
}

double starmen_progression(const StarmenSubjectParams& p, double t) { return p.alpha * (t - p.tau); }

double starmen_arm_angle(const StarmenConfig& c, double t_star) {
  return std::clamp(c.arm_mid_deg + c.arm_slope_deg * t_star, c.arm_min_deg, c.arm_max_deg);
}

Image render_starman(int image_size, double arm_deg, const RigidTransform& transform, std::uint64_t anatomy_seed) {
  // Anatomy is laid out on a 64-pixel canvas and scaled.
  Rng rng(anatomy_seed);
  const double s = image_size / 64.0;
  const double cx = (image_size - 1) / 2.0;
  const double head_r = rng.uniform(4.5, 5.5) * s;
  const double head_y = rng.uniform(11.0, 13.0) * s;
  const double neck_y = head_y + head_r + 1.0 * s;
  const double torso = rng.uniform(17.0, 21.0) * s;
  const double shoulder_y = neck_y + rng.uniform(2.0, 4.0) * s;
  const double arm_len = rng.uniform(12.0, 15.0) * s;
  const double leg_len = rng.uniform(15.0, 18.0) * s;
  const double leg_spread = rng.uniform(18.0, 28.0) * kDegToRad;
  const double right_arm = rng.uniform(30.0, 60.0) * kDegToRad;  // below horizontal
  const double half_width = 1.0 * s;

  const Point neck{cx, neck_y};
  const Point hip{cx, neck_y + torso};
  const Point shoulder{cx, shoulder_y};
  const Point leg_l{cx - leg_len * std::sin(leg_spread), hip.y + leg_len * std::cos(leg_spread)};
  const Point leg_r{cx + leg_len * std::sin(leg_spread), hip.y + leg_len * std::cos(leg_spread)};
  const Point arm_fixed{cx - arm_len * std::cos(right_arm), shoulder_y + arm_len * std::sin(right_arm)};
  const double a = arm_deg * kDegToRad;
  const Point arm_moving{cx + arm_len * std::cos(a), shoulder_y - arm_len * std::sin(a)};

  const Point head = transformed(transform, {cx, head_y});
  const Point segments[][2] = {{transformed(transform, neck), transformed(transform, hip)},
                               {transformed(transform, hip), transformed(transform, leg_l)},
                               {transformed(transform, hip), transformed(transform, leg_r)},
                               {transformed(transform, shoulder), transformed(transform, arm_fixed)},
                               {transformed(transform, shoulder), transformed(transform, arm_moving)}};

  Image image = Image::zeros(image_size, image_size);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      const double dh = std::hypot(p.x - head.x, p.y - head.y);
      double v = std::clamp(head_r + 0.5 - dh, 0.0, 1.0);
      for (const auto& seg : segments) {
        v = std::max(v, std::clamp(half_width + 0.5 - segment_distance(p, seg[0], seg[1]), 0.0, 1.0));
      }
      image.at(x, y) = v;
    }
  }
  return image;
}

LongitudinalDataset generate_starmen(const StarmenConfig& config, std::uint64_t seed) {
  if (config.n_subjects < 1) throw std::invalid_argument("starmen: n_subjects must be >= 1");
  if (config.timepoints < 2) throw std::invalid_argument("starmen: timepoints must be >= 2");
  if (config.image_size < 32) throw std::invalid_argument("starmen: image_size must be >= 32 to render the figure");
  LongitudinalDataset dataset;
  dataset.name = "starmen";
  dataset.info = to_json(config);
  dataset.info["seed"] = seed;
  for (int s = 0; s < config.n_subjects; ++s) {
    Rng rng(seed, static_cast<std::uint64_t>(s));
    const StarmenSubjectParams params{rng.uniform(config.alpha_lo, config.alpha_hi),
                                      rng.uniform(config.tau_lo, config.tau_hi)};
    const std::uint64_t anatomy_seed = rng.next_u64();
    Subject subject{subject_name(s), Split::kUnassigned, {}};
    for (int t = 0; t < config.timepoints; ++t) {
      LongitudinalSample sample;
      sample.subject_id = subject.id;
      sample.time_index = t;
      sample.target = starmen_progression(params, t);
      const double rotation = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
      const double dx = rng.uniform(-config.max_translation, config.max_translation);
      const double dy = rng.uniform(-config.max_translation, config.max_translation);
      const RigidTransform tf{rotation, dx, dy, (config.image_size - 1) / 2.0, (config.image_size - 1) / 2.0};
      sample.image = render_starman(config.image_size, starmen_arm_angle(config, sample.target), tf, anatomy_seed);
      AugmentParams nuisance{rotation, dx, dy};
      if (config.intensity_jitter) {
        const auto jitter = intensity_params(rng);
        nuisance.brightness = jitter.brightness;
        nuisance.contrast = jitter.contrast;
        sample.image = augment(sample.image, jitter);
      }
      sample.nuisance = nuisance;
      subject.samples.push_back(std::move(sample));
    }
    dataset.subjects.push_back(std::move(subject));
  }
  return dataset;
}

Mask disc_mask(const Lesion& lesion, int width, int height) {
  return pair_change_mask(lesion, 0.0, width, height);
}

Mask pair_change_mask(const Lesion& later_lesion, double earlier_radius, int width, int height) {
  Mask mask = Mask::zeros(width, height);
  const double outer = later_lesion.radius * later_lesion.radius;
  const double inner = earlier_radius * earlier_radius;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - later_lesion.center_x, dy = y - later_lesion.center_y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < outer && (earlier_radius <= 0.0 || d2 >= inner)) {
        mask.bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = 1;
      }
    }
  }
  return mask;
}

namespace {

struct TumorSubjectPlan {
  double ellipse_cx, ellipse_cy, semi_a, semi_b;
  double base, lesion_intensity, initial_radius, growth;
  double lesion_x, lesion_y;
  int timepoints;
};

bool inside_ellipse(const TumorSubjectPlan& p, double x, double y, double margin) {
  const double a = p.semi_a - margin, b = p.semi_b - margin;
  const double u = (x - p.ellipse_cx) / a, v = (y - p.ellipse_cy) / b;
  return u * u + v * v <= 1.0;
}

/// Draws subject parameters; false if no lesion centre keeps the final disc inside tissue.
bool plan_tumor_subject(const TumorConfig& c, Rng& rng, TumorSubjectPlan& p) {
  const double size = c.image_size;
  const double mid = (size - 1) / 2.0;
  p.ellipse_cx = mid + rng.uniform(-0.03, 0.03) * size;
  p.ellipse_cy = mid + rng.uniform(-0.03, 0.03) * size;
  p.semi_a = rng.uniform(0.32, 0.36) * size;
  p.semi_b = rng.uniform(0.26, 0.30) * size;
  p.base = rng.uniform(0.35, 0.5);
  p.lesion_intensity = rng.uniform(c.intensity_lo, c.intensity_hi);
  p.initial_radius = rng.uniform(c.radius_lo, c.radius_hi);
  p.growth = rng.uniform(c.growth_lo, c.growth_hi);
  p.timepoints = static_cast<int>(rng.uniform_int(c.min_timepoints, c.max_timepoints));
  const double final_radius = p.initial_radius + p.growth * (p.timepoints - 1);
  for (int attempt = 0; attempt < 32; ++attempt) {
    const double x = p.ellipse_cx + rng.uniform(-p.semi_a, p.semi_a);
    const double y = p.ellipse_cy + rng.uniform(-p.semi_b, p.semi_b);
    if (!inside_ellipse(p, x, y, 1.0)) continue;
    bool fits = true;
    for (int k = 0; k < 32 && fits; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 32.0;
      fits = inside_ellipse(p, x + final_radius * std::cos(a), y + final_radius * std::sin(a), 1.0);
    }
    if (fits) {
      p.lesion_x = x;
      p.lesion_y = y;
      return true;
    }
  }
  return false;
}

Image render_tissue(const TumorConfig& c, const TumorSubjectPlan& p, Rng& rng) {
  const int size = c.image_size;
  const auto coarse = smooth_field(rng, 6, size, 0.06);
  const auto fine = smooth_field(rng, 16, size, 0.03);
  // Two darker inner structures give each subject its own anatomy.
  const double v_sep = rng.uniform(0.05, 0.09) * size;
  const double v_a = rng.uniform(0.03, 0.06) * size;
  const double v_b = rng.uniform(0.08, 0.13) * size;
  const double v_depth = rng.uniform(0.12, 0.22);
  Image image = Image::zeros(size, size);
  const double edge = std::min(p.semi_a, p.semi_b);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x - p.ellipse_cx) / p.semi_a, v = (y - p.ellipse_cy) / p.semi_b;
      const double q = std::sqrt(u * u + v * v);
      const double coverage = std::clamp(0.5 + (1.0 - q) * edge, 0.0, 1.0);
      if (coverage <= 0.0) continue;
      const std::size_t i = static_cast<std::size_t>(y) * static_cast<std::size_t>(size) + static_cast<std::size_t>(x);
      double value = p.base + coarse[i] + fine[i];
      for (const double side : {-1.0, 1.0}) {
        const double vu = (x - (p.ellipse_cx + side * v_sep)) / v_a, vv = (y - p.ellipse_cy) / v_b;
        const double vq = std::sqrt(vu * vu + vv * vv);
        value -= v_depth * std::clamp(0.5 + (1.0 - vq) * v_a, 0.0, 1.0);
      }
      image.at(x, y) = coverage * std::clamp(value, 0.05, 1.0);
    }
  }
  return image;
}

}  // namespace

LongitudinalDataset generate_tumor(const TumorConfig& config, std::uint64_t seed) {
  if (config.n_subjects < 1) throw std::invalid_argument("tumor: n_subjects must be >= 1");
  if (config.min_timepoints < 2 || config.max_timepoints < config.min_timepoints) {
    throw std::invalid_argument("tumor: need 2 <= min_timepoints <= max_timepoints");
  }
  if (config.image_size < 32) throw std::invalid_argument("tumor: image_size must be >= 32");
  if (config.growth_lo <= 0.0) throw std::invalid_argument("tumor: growth rate lower bound must be positive");
  LongitudinalDataset dataset;
  dataset.name = "tumor";
  dataset.info = to_json(config);
  dataset.info["seed"] = seed;
  int regenerated = 0;
  const int size = config.image_size;
  for (int s = 0; s < config.n_subjects; ++s) {
    Rng rng(seed, static_cast<std::uint64_t>(s));
    TumorSubjectPlan plan{};
    while (!plan_tumor_subject(config, rng, plan)) ++regenerated;
    const Image tissue = render_tissue(config, plan, rng);
    Subject subject{subject_name(s), Split::kUnassigned, {}};
    double previous_radius = 0.0;
    for (int t = 0; t < plan.timepoints; ++t) {
      const double radius = plan.initial_radius + plan.growth * t;
      Image canvas = tissue;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double d = std::hypot(x - plan.lesion_x, y - plan.lesion_y);
          const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
          canvas.at(x, y) += coverage * plan.lesion_intensity + rng.normal(0.0, config.noise_stddev);
        }
      }
      clamp_unit(canvas);
      AugmentParams nuisance;
      nuisance.rotation_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
      nuisance.dx = rng.uniform(-config.max_translation, config.max_translation);
      nuisance.dy = rng.uniform(-config.max_translation, config.max_translation);
      if (config.intensity_jitter) {
        const auto jitter = intensity_params(rng);
        nuisance.brightness = jitter.brightness;
        nuisance.contrast = jitter.contrast;
      }
      LongitudinalSample sample;
      sample.subject_id = subject.id;
      sample.time_index = t;
      sample.target = radius;
      sample.image = augment(canvas, nuisance);
      sample.nuisance = nuisance;
      const auto tf = centered_transform(canvas, nuisance.rotation_deg, nuisance.dx, nuisance.dy);
      Lesion lesion{0.0, 0.0, radius};
      tf.apply(plan.lesion_x, plan.lesion_y, lesion.center_x, lesion.center_y);
      sample.lesion = lesion;
      sample.change_mask = pair_change_mask(lesion, previous_radius, size, size);
      previous_radius = radius;
      subject.samples.push_back(std::move(sample));
    }
    dataset.subjects.push_back(std::move(subject));
  }
  dataset.info["regenerated_subjects"] = regenerated;
  return dataset;
}

}  // namespace pairrank::data
