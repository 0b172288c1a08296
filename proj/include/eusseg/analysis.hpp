#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "eusseg/common.hpp"
#include "eusseg/image.hpp"

namespace eusseg {

struct ComponentStats {
  std::size_t component_count = 0;
  std::vector<std::size_t> component_sizes;  // descending
};

// Counts connected_components invocations. The prediction path must never
// touch component analysis; tests pin that by snapshotting this counter.
inline std::atomic<std::uint64_t>& component_labeling_calls() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// Iterative 8-connected labeling with an explicit stack.
inline ComponentStats connected_components(const BinaryMask& mask, int connectivity = 8) {
  if (connectivity != 8 && connectivity != 4) {
    throw ValidationError("connected_components: connectivity must be 4 or 8");
  }
  check_binary(mask, "connected_components");
  component_labeling_calls().fetch_add(1, std::memory_order_relaxed);

  const std::size_t h = mask.height, w = mask.width;
  ComponentStats stats;
  std::vector<std::uint8_t> visited(h * w, 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.pix[start] || visited[start]) continue;
    std::size_t size = 0;
    stack.push_back(start);
    visited[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const long long y = static_cast<long long>(p / w);
      const long long x = static_cast<long long>(p % w);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == 4 && dy != 0 && dx != 0) continue;
          const long long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long long>(h) ||
              nx >= static_cast<long long>(w)) {
            continue;
          }
          const std::size_t np = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask.pix[np] && !visited[np]) {
            visited[np] = 1;
            stack.push_back(np);
          }
        }
      }
    }
    stats.component_sizes.push_back(size);
  }
  std::sort(stats.component_sizes.rbegin(), stats.component_sizes.rend());
  stats.component_count = stats.component_sizes.size();
  return stats;
}

// ---------------------------------------------------------------------------
// Failure bucketing
// ---------------------------------------------------------------------------

inline constexpr double kCompleteFailureDsc = 0.1;  // strict upper bound
inline constexpr double kPoorCaseDsc = 0.5;         // strict upper bound

struct ImageOutcome {
  std::string image_id;
  double dsc = 0.0;
  ComponentStats components;
};

struct FailureAnnotation {
  std::string image_id;
  double dsc = 0.0;
  std::size_t component_count = 0;
  std::string bucket;  // complete_failure | poor | acceptable
};

struct FailureReport {
  std::vector<std::string> complete_failures;  // dsc < 0.1
  std::vector<std::string> poor_cases;         // 0.1 <= dsc < 0.5
  double multi_prediction_rate = 0.0;          // fraction with component_count > 1
  std::size_t evaluated_count = 0;
  std::size_t multi_prediction_count = 0;
  std::vector<FailureAnnotation> annotations;
};

// Threshold bucketing with strict upper bounds; the multi-prediction rate is
// computed over every evaluated image.
inline FailureReport bucket_failures(const std::vector<ImageOutcome>& per_image) {
  FailureReport report;
  report.evaluated_count = per_image.size();
  for (const auto& img : per_image) {
    if (img.dsc < 0.0 || img.dsc > 1.0) {
      throw ValidationError("bucket_failures: dsc out of [0,1] for " + img.image_id);
    }
    FailureAnnotation ann;
    ann.image_id = img.image_id;
    ann.dsc = img.dsc;
    ann.component_count = img.components.component_count;
    if (img.dsc < kCompleteFailureDsc) {
      report.complete_failures.push_back(img.image_id);
      ann.bucket = "complete_failure";
    } else if (img.dsc < kPoorCaseDsc) {
      report.poor_cases.push_back(img.image_id);
      ann.bucket = "poor";
    } else {
      ann.bucket = "acceptable";
    }
    if (img.components.component_count > 1) ++report.multi_prediction_count;
    report.annotations.push_back(std::move(ann));
  }
  if (!per_image.empty()) {
    report.multi_prediction_rate = static_cast<double>(report.multi_prediction_count) /
                                   static_cast<double>(per_image.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Qualitative overlays
// ---------------------------------------------------------------------------

namespace detail {

// 5x7 glyphs for "0123456789.DSC ", one byte per row, low 5 bits used.
inline const std::uint8_t* glyph_rows(char c) {
  static const std::uint8_t digits[10][7] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
  };
  static const std::uint8_t dot[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};
  static const std::uint8_t d[7] = {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E};
  static const std::uint8_t s[7] = {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E};
  static const std::uint8_t cc[7] = {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E};
  static const std::uint8_t blank[7] = {0, 0, 0, 0, 0, 0, 0};
  if (c >= '0' && c <= '9') return digits[c - '0'];
  switch (c) {
    case '.': return dot;
    case 'D': return d;
    case 'S': return s;
    case 'C': return cc;
    default: return blank;
  }
}

inline void stamp_text(RgbImage& img, std::size_t x0, std::size_t y0, const std::string& text) {
  std::size_t x = x0;
  for (char c : text) {
    const std::uint8_t* rows = glyph_rows(c);
    for (std::size_t gy = 0; gy < 7; ++gy) {
      for (std::size_t gx = 0; gx < 5; ++gx) {
        if (!(rows[gy] & (1u << (4 - gx)))) continue;
        const std::size_t py = y0 + gy, px = x + gx;
        if (py < img.height && px < img.width) {
          auto* p = img.at(py, px);
          p[0] = p[1] = p[2] = 255;
        }
      }
    }
    x += 6;
  }
}

}  // namespace detail

inline std::string format_dsc_label(double dsc) { return format_fixed(dsc, 3); }

// Three panels side by side — input, ground-truth mask, prediction overlaid in
// red at a fixed 50% blend — with the DSC stamped into a footer strip so the
// panels themselves stay exact.
inline RgbImage render_overlay(const GrayImage& image, const BinaryMask& gt,
                               const BinaryMask& pred, double dsc) {
  if (image.height != gt.height || image.width != gt.width || image.height != pred.height ||
      image.width != pred.width) {
    throw ValidationError("render_overlay: shape mismatch");
  }
  check_binary(gt, "render_overlay");
  check_binary(pred, "render_overlay");

  const std::size_t h = image.height, w = image.width;
  const std::size_t footer = 12;
  RgbImage canvas(h + footer, 3 * w);
  const auto to_byte = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t g = to_byte(image.at(y, x));
      auto* left = canvas.at(y, x);
      left[0] = left[1] = left[2] = g;

      const std::uint8_t m = gt.at(y, x) ? 255 : 0;
      auto* mid = canvas.at(y, x + w);
      mid[0] = mid[1] = mid[2] = m;

      auto* right = canvas.at(y, x + 2 * w);
      if (pred.at(y, x)) {
        right[0] = to_byte(0.5 * image.at(y, x) + 0.5);
        right[1] = to_byte(0.5 * image.at(y, x));
        right[2] = to_byte(0.5 * image.at(y, x));
      } else {
        right[0] = right[1] = right[2] = g;
      }
    }
  }
  detail::stamp_text(canvas, 2 * w + 2, h + 2, "DSC " + format_dsc_label(dsc));
  return canvas;
}

}  // namespace eusseg
