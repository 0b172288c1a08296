#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "eusseg/common.hpp"

namespace eusseg {

// Decoded raster: interleaved samples, 1 or 3 channels, 8- or 16-bit range.
// `max_value` is the declared full-scale value (255, 65535, or 1 for pure
// binary PNM files), kept so masks can be thresholded on the source scale.
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  int channels = 1;
  std::uint32_t max_value = 255;
  std::vector<std::uint16_t> px;

  std::uint16_t at(std::size_t y, std::size_t x, int c = 0) const {
    return px[(y * width + x) * static_cast<std::size_t>(channels) +
              static_cast<std::size_t>(c)];
  }
};

// Grayscale intensities in [0,1], row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pix;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pix(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return pix[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pix[y * width + x]; }
};

// Binary mask, values are exactly 0 or 1.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pix;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), pix(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return pix[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pix[y * width + x]; }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : pix) n += v;
    return n;
  }
};

inline void check_binary(const BinaryMask& m, const char* what) {
  for (auto v : m.pix) {
    if (v > 1) throw ValidationError(std::string(what) + ": mask is not binary");
  }
}

// 8-bit RGB raster for overlays.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> px;  // interleaved r,g,b

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), px(h * w * 3, 0) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return &px[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const {
    return &px[(y * width + x) * 3];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline Raster load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw ValidationError("cannot open image: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw RuntimeFailure("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw RuntimeFailure("png_create_info_struct failed");
  }

  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("corrupt PNG file: " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t w = png_get_image_width(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("unsupported PNG channel count in " + path.string());
  }

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  bytes.resize(row_bytes * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Raster out;
  out.height = h;
  out.width = w;
  out.channels = channels;
  out.max_value = (depth == 16) ? 65535u : 255u;
  out.px.resize(h * w * static_cast<std::size_t>(channels));
  const std::size_t samples = out.px.size();
  if (depth == 16) {
    // PNG stores 16-bit samples big-endian.
    for (std::size_t i = 0; i < samples; ++i) {
      out.px[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < samples; ++i) out.px[i] = bytes[i];
  }
  return out;
}

inline int pnm_next_value(const std::string& text, std::size_t& pos) {
  // Skips whitespace and '#' comments between header tokens.
  for (;;) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos < text.size() && text[pos] == '#') {
      while (pos < text.size() && text[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  int value = 0;
  bool any = false;
  while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
    value = value * 10 + (text[pos] - '0');
    ++pos;
    any = true;
  }
  if (!any) throw ValidationError("malformed PNM header");
  return value;
}

inline Raster load_pnm(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (text.size() < 2 || text[0] != 'P' || (text[1] != '5' && text[1] != '6')) {
    throw ValidationError("unsupported PNM magic in " + path.string());
  }
  const int channels = (text[1] == '6') ? 3 : 1;
  std::size_t pos = 2;
  const int w = pnm_next_value(text, pos);
  const int h = pnm_next_value(text, pos);
  const int maxval = pnm_next_value(text, pos);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw ValidationError("malformed PNM header in " + path.string());
  }
  ++pos;  // single whitespace byte after maxval

  Raster out;
  out.height = static_cast<std::size_t>(h);
  out.width = static_cast<std::size_t>(w);
  out.channels = channels;
  out.max_value = static_cast<std::uint32_t>(maxval);
  const std::size_t samples = out.height * out.width * static_cast<std::size_t>(channels);
  out.px.resize(samples);
  const bool wide = maxval > 255;
  const std::size_t need = samples * (wide ? 2 : 1);
  if (text.size() - pos < need) {
    throw ValidationError("truncated PNM payload in " + path.string());
  }
  const auto* raw = reinterpret_cast<const std::uint8_t*>(text.data() + pos);
  if (wide) {
    for (std::size_t i = 0; i < samples; ++i) {
      out.px[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < samples; ++i) out.px[i] = raw[i];
  }
  return out;
}

}  // namespace detail

inline bool has_extension(const std::filesystem::path& path, const char* ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

inline Raster load_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("image file does not exist: " + path.string());
  }
  if (has_extension(path, ".png")) return detail::load_png(path);
  if (has_extension(path, ".pgm") || has_extension(path, ".ppm") ||
      has_extension(path, ".pnm")) {
    return detail::load_pnm(path);
  }
  throw ValidationError("unsupported raster format: " + path.string());
}

// Header-only probe used by manifest validation: returns (height, width)
// without decoding pixel data for PNG.
inline std::pair<std::size_t, std::size_t> probe_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("image file does not exist: " + path.string());
  }
  if (has_extension(path, ".png")) {
    std::ifstream in(path, std::ios::binary);
    std::uint8_t head[24];
    in.read(reinterpret_cast<char*>(head), sizeof(head));
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (!in || !std::equal(sig, sig + 8, head)) {
      throw ValidationError("not a PNG file: " + path.string());
    }
    const auto be32 = [&](int off) {
      return (std::uint32_t(head[off]) << 24) | (std::uint32_t(head[off + 1]) << 16) |
             (std::uint32_t(head[off + 2]) << 8) | std::uint32_t(head[off + 3]);
    };
    return {be32(20), be32(16)};  // IHDR: width at 16, height at 20
  }
  const Raster r = load_raster(path);
  return {r.height, r.width};
}

inline void save_png_gray8(const std::filesystem::path& path,
                           std::size_t h, std::size_t w,
                           const std::uint8_t* data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw RuntimeFailure("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + y * w));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void save_png_rgb8(const std::filesystem::path& path, const RgbImage& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw RuntimeFailure("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.px.data() + y * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void save_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.pix.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.pix[i] ? 255 : 0;
  save_png_gray8(path, mask.height, mask.width, bytes.data());
}

inline void save_gray_png(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<std::uint8_t> bytes(img.pix.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(img.pix[i], 0.0, 1.0);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  save_png_gray8(path, img.height, img.width, bytes.data());
}

}  // namespace eusseg
