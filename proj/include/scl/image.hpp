#ifndef SCL_IMAGE_HPP
#define SCL_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "scl/core/errors.hpp"

namespace scl {

/// Interleaved height x width x channels image.
template <class T>
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<T> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, T fill = T(0)) : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  T& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.channels == b.channels && a.pixels == b.pixels;
  }
};

using RawImage = Image<std::uint8_t>;
using FloatImage = Image<float>;

inline constexpr std::size_t kModelInputSize = 160;

/// Bilinear resize with half-pixel centres and edge clamping. Same-size input is copied unchanged.
template <class T>
Image<float> resize_bilinear(const Image<T>& src, std::size_t out_h, std::size_t out_w) {
  Image<float> dst(out_h, out_w, src.channels);
  if (src.height == out_h && src.width == out_w) {
    std::transform(src.pixels.begin(), src.pixels.end(), dst.pixels.begin(), [](T v) { return static_cast<float>(v); });
    return dst;
  }
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

/// Reads an 8-bit PNG and converts it to RGB (palette/gray are expanded, alpha dropped).
inline RawImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IngestionError("cannot open frame " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IngestionError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("libpng initialisation failed for " + path.string());
  }
  RawImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("corrupt PNG data in " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.assign(img.width * img.height * img.channels, 0);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path& path, const RawImage& img, int compression = 6) {
  if (img.channels != 3) throw FormatError("write_png expects 3 channels, got " + std::to_string(img.channels));
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace scl

#endif  // SCL_IMAGE_HPP
