#include "pairrank/eval/cam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pairrank/data/image_io.hpp"

namespace pairrank::eval {

std::string_view cam_basis_name(CamBasis basis) {
  switch (basis) {
    case CamBasis::kLater: return "later";
    case CamBasis::kEarlier: return "earlier";
    case CamBasis::kMean: return "mean";
  }
  return "?";
}

CamBasis parse_cam_basis(std::string_view name) {
  if (name == "later") return CamBasis::kLater;
  if (name == "earlier") return CamBasis::kEarlier;
  if (name == "mean") return CamBasis::kMean;
  throw std::invalid_argument("unknown CAM basis '" + std::string(name) + "' (expected later, earlier or mean)");
}

std::vector<double> normalize_map(std::span<const double> raw, int raw_width, int raw_height, int width,
                                  int height) {
  auto up = data::resize_bilinear(raw, raw_width, raw_height, width, height);
  const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
  const double min = *lo, range = *hi - *lo;
  if (!(range > 0.0)) {
    std::fill(up.begin(), up.end(), 0.0);
    return up;
  }
  for (auto& v : up) v = (v - min) / range;
  return up;
}

ActivationMap combine_activations(std::span<const double> channel_weights, const ad::Tensor& activations, int width,
                                  int height) {
  if (activations.rank() != 4 || activations.dim(0) != 1 || activations.dim(1) != channel_weights.size()) {
    throw ad::ShapeError("combine_activations: expected activations [1, " + std::to_string(channel_weights.size()) +
                         ", h, w], got " + ad::shape_string(activations.shape()));
  }
  ActivationMap map;
  map.raw_height = static_cast<int>(activations.dim(2));
  map.raw_width = static_cast<int>(activations.dim(3));
  const std::size_t plane = activations.dim(2) * activations.dim(3);
  map.raw.assign(plane, 0.0);
  const auto a = activations.data();
  for (std::size_t c = 0; c < channel_weights.size(); ++c) {
    const double w = channel_weights[c];
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) map.raw[i] += w * a[c * plane + i];
  }
  map.width = width;
  map.height = height;
  map.normalized = normalize_map(map.raw, map.raw_width, map.raw_height, width, height);
  map.channel_weights.assign(channel_weights.begin(), channel_weights.end());
  return map;
}

ActivationMap weighted_cam(const model::ModelState& model, const data::Image& earlier, const data::Image& later,
                           CamBasis basis) {
  ad::NoGradGuard guard;
  const auto fe = model.extract(data::to_tensor(earlier));
  const auto fl = model.extract(data::to_tensor(later));
  const auto w = model.rank_weight().data();
  std::vector<double> weights(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) weights[c] = std::abs(w[c] * (fe.features[c] - fl.features[c]));

  ad::Tensor activations = fl.activations;
  if (basis == CamBasis::kEarlier) {
    activations = fe.activations;
  } else if (basis == CamBasis::kMean) {
    activations = ad::scale(ad::add(fe.activations, fl.activations), 0.5);
  }
  return combine_activations(weights, activations, later.width, later.height);
}

ActivationMap csr_cam(const model::ModelState& model, const data::Image& image) {
  if (!model.csr_head()) throw std::logic_error("csr_cam: model has no CSR head");
  ad::NoGradGuard guard;
  const auto out = model.extract(data::to_tensor(image));
  const auto w = model.csr_head()->weight.data();
  std::vector<double> weights(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) weights[c] = std::abs(w[c] * out.features[c]);
  return combine_activations(weights, out.activations, image.width, image.height);
}

std::array<double, 3> warm_color(double m) {
  m = std::clamp(m, 0.0, 1.0);
  return {1.0, m, 0.0};
}

std::vector<std::uint8_t> overlay_rgb(const data::Image& image, std::span<const double> map, double alpha) {
  if (map.size() != image.pixels.size()) {
    throw ad::ShapeError("overlay: map has " + std::to_string(map.size()) + " values for a " +
                         std::to_string(image.width) + "x" + std::to_string(image.height) + " image");
  }
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("overlay: alpha must be in [0, 1]");
  std::vector<std::uint8_t> rgb(image.pixels.size() * 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double m = std::clamp(map[i], 0.0, 1.0);
    const double gray = std::clamp(image.pixels[i], 0.0, 1.0);
    const double weight = alpha * m;
    const auto color = warm_color(m);
    for (int ch = 0; ch < 3; ++ch) {
      rgb[i * 3 + static_cast<std::size_t>(ch)] = data::to_byte((1.0 - weight) * gray + weight * color[static_cast<std::size_t>(ch)]);
    }
  }
  return rgb;
}

void render_overlay(const data::Image& image, std::span<const double> map, const std::filesystem::path& path,
                    double alpha) {
  data::write_png_rgb(path, image.width, image.height, overlay_rgb(image, map, alpha));
}

}  // namespace pairrank::eval
