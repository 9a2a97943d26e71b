#include "latinv/image.hpp"

#include <png.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "latinv/errors.hpp"

namespace latinv {

Image image_from_var(const ad::Var& chw) {
  if (chw.rank() != 3) throw DimensionError("image_from_var: expected [C, H, W]");
  return Image{chw.dim(0), chw.dim(1), chw.dim(2), chw.value()};
}

ad::Var image_to_var(const Image& image) {
  return ad::constant({image.channels, image.height, image.width}, image.data);
}

double max_abs_diff(const Image& a, const Image& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw DimensionError("max_abs_diff: image shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.channels != 3) throw DimensionError("encode_png: expected 3 channels");
  const std::size_t hw = static_cast<std::size_t>(image.height) * image.width;
  std::vector<std::uint8_t> pixels(hw * 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = std::round((image.data[c * hw + p] + 1.0) * 127.5);
      pixels[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw Error(std::string("encode_png: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw Error(std::string("encode_png: ") + img.message);
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ArgumentError(std::string("decode_png: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ArgumentError(std::string("decode_png: ") + img.message);
  }
  Image out{3, static_cast<int>(img.height), static_cast<int>(img.width), {}};
  const std::size_t hw = static_cast<std::size_t>(out.height) * out.width;
  out.data.resize(hw * 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p) out.data[c * hw + p] = pixels[p * 3 + c] / 127.5 - 1.0;
  return out;
}

std::pair<int, int> png_dimensions(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ArgumentError(std::string("png_dimensions: ") + img.message);
  const std::pair<int, int> hw{static_cast<int>(img.height), static_cast<int>(img.width)};
  png_image_free(&img);
  return hw;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text_file(const std::string& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) clean.push_back(ch);
  if (clean.size() % 4 != 0) throw ArgumentError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ArgumentError("base64: invalid input");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Image tile_images(const std::vector<Image>& tiles, int columns) {
  if (tiles.empty() || columns < 1) throw ArgumentError("tile_images: nothing to tile");
  const auto& first = tiles.front();
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  Image out{first.channels, rows * first.height, columns * first.width, {}};
  out.data.assign(static_cast<std::size_t>(out.channels) * out.height * out.width, -1.0);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto& tile = tiles[t];
    if (tile.channels != first.channels || tile.height != first.height || tile.width != first.width)
      throw DimensionError("tile_images: tiles differ in shape");
    const int oy = static_cast<int>(t) / columns * first.height;
    const int ox = static_cast<int>(t) % columns * first.width;
    for (int c = 0; c < tile.channels; ++c)
      for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x)
          out.data[(static_cast<std::size_t>(c) * out.height + oy + y) * out.width + ox + x] = tile.at(c, y, x);
  }
  return out;
}

}  // namespace latinv
