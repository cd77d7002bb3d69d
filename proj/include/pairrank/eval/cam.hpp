#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "pairrank/data/image.hpp"
#include "pairrank/model/model.hpp"

namespace pairrank::eval {

/// Which image's final activations are summed into the change map.
enum class CamBasis { kLater, kEarlier, kMean };

std::string_view cam_basis_name(CamBasis basis);
CamBasis parse_cam_basis(std::string_view name);

struct ActivationMap {
  int raw_width = 0;
  int raw_height = 0;
  std::vector<double> raw;  // sum_c weight_c * A_c
  int width = 0;
  int height = 0;
  std::vector<double> normalized;  // upsampled, min-max scaled to [0, 1]; constant maps are all zero
  std::vector<double> channel_weights;
};

/// Bilinear upsampling to `width` x `height` followed by min-max scaling.
std::vector<double> normalize_map(std::span<const double> raw, int raw_width, int raw_height, int width, int height);

/// Builds the map from precomputed features [1, D] and activations [1, D, h, w].
ActivationMap combine_activations(std::span<const double> channel_weights, const ad::Tensor& activations, int width,
                                  int height);

/// Change map of an ordered pair with channel weights |w_c (f_c(earlier) - f_c(later))|.
ActivationMap weighted_cam(const model::ModelState& model, const data::Image& earlier, const data::Image& later,
                           CamBasis basis = CamBasis::kLater);

/// Baseline map computed on one image alone: weights |w_csr,c f_c(image)|.
ActivationMap csr_cam(const model::ModelState& model, const data::Image& image);

/// RGB of the warm colormap at m in [0, 1]: red through orange to yellow.
std::array<double, 3> warm_color(double m);

/// Blends the grayscale image with warm(m) by per-pixel weight alpha * m:
/// out = (1 - alpha m) gray + alpha m warm(m). A zero map reproduces the image.
std::vector<std::uint8_t> overlay_rgb(const data::Image& image, std::span<const double> map, double alpha);

/// Writes overlay_rgb as a PNG. Throws data::ImageIoError if the path is unwritable.
void render_overlay(const data::Image& image, std::span<const double> map, const std::filesystem::path& path,
                    double alpha = 0.6);

}  // namespace pairrank::eval
