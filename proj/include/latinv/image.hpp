#pragma once

// Planar CHW images with values nominally in [-1, 1], plus 8-bit PNG and
// base64 transport helpers.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latinv/autodiff.hpp"

namespace latinv {

struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  bool empty() const { return data.empty(); }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Accumulated ToRGB output. An empty canvas means nothing has been painted.
using RGBCanvas = Image;

Image image_from_var(const ad::Var& chw);
ad::Var image_to_var(const Image& image);

double max_abs_diff(const Image& a, const Image& b);

/// Maps [-1, 1] to 8-bit by (x + 1) * 127.5 rounded half away from zero,
/// clamped to [0, 255].
std::vector<std::uint8_t> encode_png(const Image& image);
/// Decodes any PNG into a 3-channel image with x = v / 127.5 - 1.
Image decode_png(const std::vector<std::uint8_t>& bytes);
/// Reads {height, width} from the header without decoding pixels.
std::pair<int, int> png_dimensions(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Tiles images row-major into one canvas; all tiles must share a shape.
Image tile_images(const std::vector<Image>& tiles, int columns);

}  // namespace latinv
