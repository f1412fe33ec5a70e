#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "posefree/autograd.hpp"

namespace posefree {

// Row-major RGB image with interleaved channels in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // height * width * 3

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& other) const { return height == other.height && width == other.width; }
  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  // As a [H*W, 3] tensor (no gradient).
  ad::Tensor to_tensor() const;
  static Image from_tensor(const ad::Tensor& t, int height, int width);
};

Image clamp01(Image img);
double l2_norm(const Image& img);

// 8-bit RGB PNG. Values are clamped and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
// Quantizes to 8-bit levels exactly like a PNG write/read round trip.
Image quantize8(const Image& img);

// Lossless dump of the double-precision pixel values.
void write_image_dump(const std::filesystem::path& path, const Image& img);
Image read_image_dump(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace posefree
