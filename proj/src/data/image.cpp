#include "pairrank/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace pairrank::data {

Image Image::zeros(int width, int height) { return filled(width, height, 0.0); }

Image Image::filled(int width, int height, double value) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image dimensions must be positive");
  return Image{width, height, std::vector<double>(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), value)};
}

double Image::mean() const {
  return std::accumulate(pixels.begin(), pixels.end(), 0.0) / static_cast<double>(pixels.size());
}

Mask Mask::zeros(int width, int height) {
  return Mask{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0)};
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double sample_bilinear(const Image& image, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= image.width || yi >= image.height) return 0.0;
    return image.at(xi, yi);
  };
  return (1.0 - ay) * ((1.0 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
         ay * ((1.0 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
}

std::vector<double> resize_bilinear(std::span<const double> values, int width, int height, int out_width,
                                    int out_height) {
  std::vector<double> out(static_cast<std::size_t>(out_width) * static_cast<std::size_t>(out_height));
  const double sx = static_cast<double>(width) / out_width;
  const double sy = static_cast<double>(height) / out_height;
  for (int oy = 0; oy < out_height; ++oy) {
    const double y = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, height - 1);
    const double ay = y - y0;
    for (int ox = 0; ox < out_width; ++ox) {
      const double x = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, width - 1);
      const double ax = x - x0;
      auto v = [&](int xi, int yi) { return values[static_cast<std::size_t>(yi) * static_cast<std::size_t>(width) + static_cast<std::size_t>(xi)]; };
      out[static_cast<std::size_t>(oy) * static_cast<std::size_t>(out_width) + static_cast<std::size_t>(ox)] =
          (1.0 - ay) * ((1.0 - ax) * v(x0, y0) + ax * v(x1, y0)) + ay * ((1.0 - ax) * v(x0, y1) + ax * v(x1, y1));
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  return Image{width, height, resize_bilinear(image.pixels, image.width, image.height, width, height)};
}

void RigidTransform::apply(double x, double y, double& out_x, double& out_y) const {
  const double a = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double px = x - center_x, py = y - center_y;
  out_x = c * px - s * py + center_x + dx;
  out_y = s * px + c * py + center_y + dy;
}

void RigidTransform::invert(double x, double y, double& out_x, double& out_y) const {
  const double a = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double px = x - center_x - dx, py = y - center_y - dy;
  out_x = c * px + s * py + center_x;
  out_y = -s * px + c * py + center_y;
}

RigidTransform centered_transform(const Image& image, double rotation_deg, double dx, double dy) {
  return RigidTransform{rotation_deg, dx, dy, (image.width - 1) / 2.0, (image.height - 1) / 2.0};
}

AugmentParams AugmentRanges::sample(Rng& rng) const {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-max_rotation_deg, max_rotation_deg);
  p.dx = rng.uniform(-max_translation, max_translation);
  p.dy = rng.uniform(-max_translation, max_translation);
  p.brightness = rng.uniform(brightness_lo, brightness_hi);
  p.contrast = rng.uniform(contrast_lo, contrast_hi);
  return p;
}

Image warp(const Image& image, const RigidTransform& transform) {
  Image out = Image::zeros(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double sx = 0.0, sy = 0.0;
      transform.invert(x, y, sx, sy);
      out.at(x, y) = sample_bilinear(image, sx, sy);
    }
  }
  return out;
}

Image adjust_brightness(const Image& image, double factor) {
  Image out = image;
  for (auto& v : out.pixels) v *= factor;
  return out;
}

Image adjust_contrast(const Image& image, double factor) {
  Image out = image;
  const double m = image.mean();
  for (auto& v : out.pixels) v = m + factor * (v - m);
  return out;
}

void clamp_unit(Image& image) {
  for (auto& v : image.pixels) v = std::clamp(v, 0.0, 1.0);
}

Image augment(const Image& image, const AugmentParams& params) {
  if (params.brightness <= 0.0 || params.contrast <= 0.0) {
    throw std::invalid_argument("augment: brightness and contrast factors must be positive");
  }
  Image out = params.geometric_identity()
                  ? image
                  : warp(image, centered_transform(image, params.rotation_deg, params.dx, params.dy));
  if (params.brightness != 1.0) out = adjust_brightness(out, params.brightness);
  if (params.contrast != 1.0) out = adjust_contrast(out, params.contrast);
  if (params.geometric_identity() && params.brightness == 1.0 && params.contrast == 1.0) return out;
  clamp_unit(out);
  return out;
}

ad::Tensor to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ad::ShapeError("to_tensor: no images");
  const int w = images.front()->width, h = images.front()->height;
  std::vector<double> values;
  values.reserve(images.size() * static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (const Image* img : images) {
    if (img->width != w || img->height != h) throw ad::ShapeError("to_tensor: images differ in size");
    values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  }
  return ad::Tensor::from({images.size(), 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                          std::move(values));
}

ad::Tensor to_tensor(const Image& image) {
  const Image* ptr = &image;
  return to_tensor(std::span<const Image* const>(&ptr, 1));
}

}  // namespace pairrank::data
