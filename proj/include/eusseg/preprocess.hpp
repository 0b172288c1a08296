#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "eusseg/common.hpp"
#include "eusseg/image.hpp"
#include "eusseg/manifest.hpp"

namespace eusseg {

// Multi-channel float image in [0,1], interleaved. Intermediate carrier
// between raster decode and grayscale conversion.
struct MultiImage {
  std::size_t height = 0;
  std::size_t width = 0;
  int channels = 1;
  std::vector<double> pix;

  double at(std::size_t y, std::size_t x, int c) const {
    return pix[(y * width + x) * static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(c)];
  }
};

inline MultiImage raster_to_float(const Raster& r) {
  MultiImage out;
  out.height = r.height;
  out.width = r.width;
  out.channels = r.channels;
  out.pix.resize(r.px.size());
  const double scale = 1.0 / static_cast<double>(r.max_value);
  for (std::size_t i = 0; i < r.px.size(); ++i) {
    out.pix[i] = static_cast<double>(r.px[i]) * scale;
  }
  return out;
}

// ITU-R BT.601 luma for color inputs; single-channel passes through untouched.
inline GrayImage to_grayscale(const MultiImage& img) {
  GrayImage out(img.height, img.width);
  if (img.channels == 1) {
    out.pix = img.pix;
    return out;
  }
  if (img.channels != 3) {
    throw ValidationError("to_grayscale: unsupported channel count " +
                          std::to_string(img.channels));
  }
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      out.at(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                     0.114 * img.at(y, x, 2);
    }
  }
  return out;
}

namespace detail {

template <class T>
std::vector<T> crop_plane(const std::vector<T>& src, std::size_t h, std::size_t w,
                          const CropSpec& spec, std::size_t& out_h, std::size_t& out_w) {
  validate_crop(spec, h, w, "crop");
  out_h = h - static_cast<std::size_t>(spec.top) - static_cast<std::size_t>(spec.bottom);
  out_w = w - static_cast<std::size_t>(spec.left) - static_cast<std::size_t>(spec.right);
  std::vector<T> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const T* row = src.data() + (y + static_cast<std::size_t>(spec.top)) * w +
                   static_cast<std::size_t>(spec.left);
    std::copy(row, row + out_w, out.data() + y * out_w);
  }
  return out;
}

// Cubic convolution kernel, a = -0.5 (Catmull-Rom family).
inline double bicubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

struct ResampleAxis {
  std::vector<std::size_t> tap;  // 4 clamped source indices per output position
  std::vector<double> w;         // matching kernel weights
};

// Half-pixel-center source mapping with edge replication for boundary taps.
inline ResampleAxis bicubic_axis(std::size_t in_n, std::size_t out_n) {
  ResampleAxis ax;
  ax.tap.resize(out_n * 4);
  ax.w.resize(out_n * 4);
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    const double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(s);
    const double frac = s - base;
    for (int k = -1; k <= 2; ++k) {
      const long long idx = static_cast<long long>(base) + k;
      const long long clamped = std::clamp<long long>(idx, 0, static_cast<long long>(in_n) - 1);
      ax.tap[o * 4 + static_cast<std::size_t>(k + 1)] = static_cast<std::size_t>(clamped);
      ax.w[o * 4 + static_cast<std::size_t>(k + 1)] = bicubic_weight(static_cast<double>(k) - frac);
    }
  }
  return ax;
}

}  // namespace detail

inline GrayImage crop_periphery(const GrayImage& img, const CropSpec& spec) {
  GrayImage out;
  out.pix = detail::crop_plane(img.pix, img.height, img.width, spec, out.height, out.width);
  return out;
}

inline BinaryMask crop_mask(const BinaryMask& mask, const CropSpec& spec) {
  BinaryMask out;
  out.pix = detail::crop_plane(mask.pix, mask.height, mask.width, spec, out.height, out.width);
  return out;
}

// Separable bicubic resampling (a = -0.5), half-pixel centers, output clamped
// to [0,1]. Same-size resampling reproduces the input exactly because the
// kernel is 1 at offset 0 and 0 at integer offsets.
inline GrayImage resize_bicubic(const GrayImage& img, std::size_t out_h, std::size_t out_w) {
  if (out_h < 4 || out_w < 4) {
    throw ValidationError("resize_bicubic: target size must be at least 4x4");
  }
  if (img.height == 0 || img.width == 0) {
    throw ValidationError("resize_bicubic: empty input");
  }
  const auto ay = detail::bicubic_axis(img.height, out_h);
  const auto ax = detail::bicubic_axis(img.width, out_w);

  // Horizontal pass, then vertical.
  std::vector<double> tmp(img.height * out_w);
  for (std::size_t y = 0; y < img.height; ++y) {
    const double* row = img.pix.data() + y * img.width;
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += ax.w[x * 4 + static_cast<std::size_t>(k)] * row[ax.tap[x * 4 + static_cast<std::size_t>(k)]];
      }
      tmp[y * out_w + x] = acc;
    }
  }
  GrayImage out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += ay.w[y * 4 + static_cast<std::size_t>(k)] * tmp[ay.tap[y * 4 + static_cast<std::size_t>(k)] * out_w + x];
      }
      out.at(y, x) = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

// Nearest-neighbor resampling for label masks; never invents values.
inline BinaryMask resize_mask_nearest(const BinaryMask& mask, std::size_t out_h,
                                      std::size_t out_w) {
  check_binary(mask, "resize_mask_nearest");
  if (out_h == 0 || out_w == 0) {
    throw ValidationError("resize_mask_nearest: degenerate target size");
  }
  BinaryMask out(out_h, out_w);
  const double sy = static_cast<double>(mask.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(mask.width) / static_cast<double>(out_w);
  std::vector<std::size_t> col(out_w);
  for (std::size_t x = 0; x < out_w; ++x) {
    const auto ix = static_cast<long long>(std::floor((static_cast<double>(x) + 0.5) * sx));
    col[x] = static_cast<std::size_t>(std::clamp<long long>(ix, 0, static_cast<long long>(mask.width) - 1));
  }
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto iy = static_cast<long long>(std::floor((static_cast<double>(y) + 0.5) * sy));
    const std::size_t ry = static_cast<std::size_t>(
        std::clamp<long long>(iy, 0, static_cast<long long>(mask.height) - 1));
    for (std::size_t x = 0; x < out_w; ++x) out.at(y, x) = mask.at(ry, col[x]);
  }
  return out;
}

// Foreground iff the normalized sample is >= 0.5. On 8-bit sources this is the
// threshold-at-128 rule; on pure {0,1} rasters it reduces to nonzero.
inline BinaryMask binarize_mask(const Raster& raster, const std::string& context) {
  if (raster.channels != 1) {
    throw ValidationError(context + ": mask must be single-channel");
  }
  BinaryMask out(raster.height, raster.width);
  const double half = static_cast<double>(raster.max_value) * 0.5;
  for (std::size_t i = 0; i < raster.px.size(); ++i) {
    out.pix[i] = static_cast<double>(raster.px[i]) >= half ? 1 : 0;
  }
  return out;
}

// One preprocessed training/evaluation unit.
struct SegSample {
  GrayImage image;  // values in [0,1]
  BinaryMask mask;  // same dimensions as image
  ImageRecord record;
};

inline void check_sample(const SegSample& s) {
  if (s.image.height != s.mask.height || s.image.width != s.mask.width) {
    throw ValidationError("SegSample: image and mask dimensions differ");
  }
  check_binary(s.mask, "SegSample");
}

// Full chain: crop -> grayscale -> bicubic for the image, crop -> nearest for
// the mask. No normalization or augmentation beyond [0,1] scaling.
inline SegSample preprocess_sample(const ImageRecord& record, std::size_t target_h,
                                   std::size_t target_w) {
  const std::string context = record.image_path.filename().string();
  const CropSpec crop = record.crop.value_or(CropSpec{});

  GrayImage gray = to_grayscale(raster_to_float(load_raster(record.image_path)));
  if (!crop.is_zero()) gray = crop_periphery(gray, crop);
  else validate_crop(crop, gray.height, gray.width, context);

  BinaryMask mask = binarize_mask(load_raster(record.mask_path),
                                  record.mask_path.filename().string());
  if (!crop.is_zero()) mask = crop_mask(mask, crop);

  SegSample out;
  out.image = (gray.height == target_h && gray.width == target_w)
                  ? std::move(gray)
                  : resize_bicubic(gray, target_h, target_w);
  out.mask = (mask.height == target_h && mask.width == target_w)
                 ? std::move(mask)
                 : resize_mask_nearest(mask, target_h, target_w);
  out.record = record;
  check_sample(out);
  return out;
}

}  // namespace eusseg
