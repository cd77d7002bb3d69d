#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>

#include "pairrank/data/image.hpp"

namespace pairrank::data {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a grayscale PNG (any bit depth; colour is converted to luma) or a
/// binary/ASCII PGM, scaled to [0, 1] by the format's maximum value.
Image read_image(const std::filesystem::path& path);

/// 8-bit quantization used by every writer: round(clamp(v, 0, 1) * 255).
std::uint8_t to_byte(double value);

void write_png(const std::filesystem::path& path, const Image& image);
/// Interleaved 8-bit RGB, `rgb.size() == 3 * width * height`.
void write_png_rgb(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb);
void write_pgm(const std::filesystem::path& path, const Image& image);

Mask read_mask(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

}  // namespace pairrank::data
