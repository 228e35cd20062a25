#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "scfa/tensor.hpp"

namespace scfa {

// Lossless 8-bit PNG I/O. Model-space values map to bytes via
// b = round((x+1)*127.5); bytes map back via x = b/127.5 - 1, so -1 <-> 0 and
// +1 <-> 255 exactly. 3-channel images are RGB, 1-channel are grayscale.

namespace detail {

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

template <typename S>
inline void save_image(const std::filesystem::path& path, const Image<S>& img) {
  validate_image(img, "save_image");
  const Tensor<S>& t = img.space == Space::model ? img.t : img.to_model().t;

  std::vector<unsigned char> bytes(static_cast<std::size_t>(t.h) * t.w * t.c);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int ch = 0; ch < t.c; ++ch) {
        const double v = (static_cast<double>(t.at(y, x, ch)) + 1.0) * 127.5;
        const long b = std::lround(std::min(255.0, std::max(0.0, v)));
        bytes[(static_cast<std::size_t>(y) * t.w + x) * t.c + ch] = static_cast<unsigned char>(b);
      }

  detail::FileCloser fc{std::fopen(path.string().c_str(), "wb")};
  if (!fc.f) throw Error("save_image: cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("save_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("save_image: libpng write failed: " + path.string());
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(t.w), static_cast<png_uint_32>(t.h), 8,
               t.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(t.h));
  for (int y = 0; y < t.h; ++y) rows[(std::size_t)y] = bytes.data() + static_cast<std::size_t>(y) * t.w * t.c;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename S>
inline Image<S> load_image(const std::filesystem::path& path) {
  detail::FileCloser fc{std::fopen(path.string().c_str(), "rb")};
  if (!fc.f) throw Error("load_image: cannot open: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("load_image: libpng init failed");
  }
  std::vector<unsigned char> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("load_image: corrupt or unreadable image: " + path.string());
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("load_image: unsupported channel count " + std::to_string(c) + ": " + path.string());
  }
  bytes.resize(static_cast<std::size_t>(h) * w * c);
  rows.resize(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[(std::size_t)y] = bytes.data() + static_cast<std::size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image<S> out{Tensor<S>(h, w, c), Space::model};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.t.at(y, x, ch) =
            S(bytes[(static_cast<std::size_t>(y) * w + x) * c + ch] / 127.5 - 1.0);
  validate_image(out, "load_image");
  return out;
}

}  // namespace scfa
