#include "pairrank/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace pairrank::data {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("corrupt PNG payload: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image image = Image::zeros(width, height);
  for (int y = 0; y < height; ++y) {
    const png_byte* row = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      if (out_depth == 16) {
        std::uint16_t v = 0;
        std::memcpy(&v, row + 2 * x, 2);
        image.at(x, y) = v / 65535.0;
      } else {
        image.at(x, y) = row[x] / 255.0;
      }
    }
  }
  return image;
}

std::string next_pgm_token(std::istream& in) {
  std::string token;
  while (in >> token) {
    if (token[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return token;
  }
  throw ImageIoError("truncated PGM header");
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image: " + path.string());
  const std::string magic = next_pgm_token(in);
  if (magic != "P5" && magic != "P2") throw ImageIoError("not a PGM file: " + path.string());
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_pgm_token(in));
    height = std::stoi(next_pgm_token(in));
    maxval = std::stoi(next_pgm_token(in));
  } catch (const std::logic_error&) {
    throw ImageIoError("malformed PGM header: " + path.string());
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw ImageIoError("invalid PGM dimensions: " + path.string());
  }
  Image image = Image::zeros(width, height);
  if (magic == "P2") {
    for (auto& v : image.pixels) {
      int raw = 0;
      if (!(in >> raw)) throw ImageIoError("truncated PGM data: " + path.string());
      v = static_cast<double>(raw) / maxval;
    }
    return image;
  }
  in.get();  // single whitespace after maxval
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(image.pixels.size() * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ImageIoError("truncated PGM data: " + path.string());
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const int value = bytes_per == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    image.pixels[i] = static_cast<double>(value) / maxval;
  }
  return image;
}

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type,
                    std::span<const std::uint8_t> data, std::size_t channels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::uint8_t to_byte(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw ImageIoError("image file not found: " + path.string());
  unsigned char head[8] = {};
  probe.read(reinterpret_cast<char*>(head), 8);
  const auto got = probe.gcount();
  probe.close();
  if (got == 8 && png_sig_cmp(head, 0, 8) == 0) return read_png(path);
  if (got >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return read_pgm(path);
  throw ImageIoError("unsupported image payload (expected PNG or PGM): " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), to_byte);
  write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

void write_png_rgb(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
    throw ImageIoError("RGB buffer size does not match dimensions");
  }
  write_png_rows(path, width, height, PNG_COLOR_TYPE_RGB, rgb, 3);
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write image: " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (const double v : image.pixels) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw ImageIoError("failed writing PGM: " + path.string());
}

Mask read_mask(const std::filesystem::path& path) {
  const Image image = read_image(path);
  Mask mask = Mask::zeros(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) mask.bits[i] = image.pixels[i] >= 0.5 ? 1 : 0;
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), bytes.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  write_png_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

}  // namespace pairrank::data
