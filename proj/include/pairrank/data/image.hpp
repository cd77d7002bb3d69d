#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pairrank/autodiff/tensor.hpp"
#include "pairrank/util/rng.hpp"

namespace pairrank::data {

/// Single-channel image, row-major, nominal range [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  static Image zeros(int width, int height);
  static Image filled(int width, int height, double value);

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  double mean() const;
  bool operator==(const Image&) const = default;
};

/// Binary mask stored as 0/1 bytes.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  static Mask zeros(int width, int height);
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Bilinear sample at continuous pixel coordinates; outside samples read 0.
double sample_bilinear(const Image& image, double x, double y);

/// Bilinear resize with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& image, int width, int height);
std::vector<double> resize_bilinear(std::span<const double> values, int width, int height, int out_width,
                                    int out_height);

/// 2-D rigid motion about the image centre: q = R(p - c) + c + t.
struct RigidTransform {
  double rotation_deg = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;

  void apply(double x, double y, double& out_x, double& out_y) const;
  void invert(double x, double y, double& out_x, double& out_y) const;
};

RigidTransform centered_transform(const Image& image, double rotation_deg, double dx, double dy);

struct AugmentParams {
  double rotation_deg = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;

  bool geometric_identity() const { return rotation_deg == 0.0 && dx == 0.0 && dy == 0.0; }
};

/// Symmetric sampling ranges for nuisance augmentation.
struct AugmentRanges {
  double max_rotation_deg = 10.0;
  double max_translation = 10.0;
  double brightness_lo = 1.0, brightness_hi = 1.0;
  double contrast_lo = 1.0, contrast_hi = 1.0;

  AugmentParams sample(Rng& rng) const;
};

/// Rotation/translation by bilinear resampling with zero padding, then
/// brightness (pixel * factor), then contrast (mean + factor * (pixel - mean)),
/// then clamping to [0, 1]. Identity parameters return the input unchanged.
Image augment(const Image& image, const AugmentParams& params);

Image warp(const Image& image, const RigidTransform& transform);
Image adjust_brightness(const Image& image, double factor);
/// No clamping; the mean is preserved exactly up to roundoff.
Image adjust_contrast(const Image& image, double factor);
void clamp_unit(Image& image);

/// Stacks equally sized images into an [N, 1, H, W] tensor.
ad::Tensor to_tensor(std::span<const Image* const> images);
ad::Tensor to_tensor(const Image& image);

}  // namespace pairrank::data
