#include "posefree/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace posefree {

ad::Tensor Image::to_tensor() const {
  return ad::Tensor::from_data(pixels, {static_cast<std::int64_t>(height) * width, 3});
}

Image Image::from_tensor(const ad::Tensor& t, int height, int width) {
  if (t.numel() != static_cast<std::int64_t>(height) * width * 3)
    throw std::invalid_argument("Image::from_tensor: size mismatch");
  Image img(height, width);
  std::copy(t.values().begin(), t.values().end(), img.pixels.begin());
  return img;
}

Image clamp01(Image img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

double l2_norm(const Image& img) {
  double s = 0.0;
  for (double v : img.pixels) s += v * v;
  return std::sqrt(s);
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<char>*>(png_get_io_ptr(png));
  out->insert(out->end(), reinterpret_cast<char*>(data), reinterpret_cast<char*>(data) + length);
}

void png_flush_noop(png_structp) {}

}  // namespace

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) v = to_byte(v) / 255.0;
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_png(const std::filesystem::path& path, const Image& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<char> bytes;
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error writing " + path.string());
  }
  png_set_write_fn(png, &bytes, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width * 3; ++x) row[x] = to_byte(img.pixels[static_cast<std::size_t>(y) * img.width * 3 + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_file_atomic(path, bytes);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open PNG: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng error reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(height, width);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width * 3; ++x) img.pixels[static_cast<std::size_t>(y) * width * 3 + x] = row[x] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_image_dump(const std::filesystem::path& path, const Image& img) {
  std::ostringstream header;
  header << "PFDUMP " << img.width << ' ' << img.height << " 3\n";
  std::string bytes = header.str();
  bytes.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size() * sizeof(double));
  write_file_atomic(path, bytes);
}

Image read_image_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image dump: " + path.string());
  std::string magic;
  int width = 0, height = 0, channels = 0;
  in >> magic >> width >> height >> channels;
  in.get();
  if (magic != "PFDUMP" || channels != 3 || width <= 0 || height <= 0)
    throw std::runtime_error("malformed image dump: " + path.string());
  Image img(height, width);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated image dump: " + path.string());
  return img;
}

}  // namespace posefree
