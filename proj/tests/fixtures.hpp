#pragma once

// Synthetic data generation for tests: temp directories, raster fixtures and
// manifests with controllable case structure.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "eusseg/common.hpp"
#include "eusseg/image.hpp"
#include "eusseg/manifest.hpp"

namespace fixtures {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("eusseg_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Soft blob image with a bright elliptical lesion; mask marks the lesion.
inline void make_lesion_pair(std::size_t size, double cy, double cx, double ry, double rx,
                             eusseg::GrayImage& image, eusseg::BinaryMask& mask) {
  image = eusseg::GrayImage(size, size);
  mask = eusseg::BinaryMask(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double dx = (static_cast<double>(x) - cx) / rx;
      const double d2 = dy * dy + dx * dx;
      const double background = 0.15 + 0.1 * std::sin(0.3 * static_cast<double>(x)) *
                                           std::cos(0.2 * static_cast<double>(y));
      image.at(y, x) = std::clamp(background + (d2 < 1.0 ? 0.6 * (1.0 - d2) : 0.0), 0.0, 1.0);
      mask.at(y, x) = d2 < 1.0 ? 1 : 0;
    }
  }
}

inline void write_gray_png(const std::filesystem::path& path, const eusseg::GrayImage& img) {
  eusseg::save_gray_png(path, img);
}

struct ManifestSpec {
  std::size_t image_size = 64;
  // one entry per record: case id
  std::vector<std::string> case_ids;
};

// Writes PNG image/mask pairs plus a manifest file; lesion geometry varies per
// record so samples are distinguishable.
inline std::filesystem::path write_manifest(const std::filesystem::path& dir,
                                            const ManifestSpec& spec) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  for (std::size_t i = 0; i < spec.case_ids.size(); ++i) {
    const double phase = static_cast<double>(i);
    const double s = static_cast<double>(spec.image_size);
    eusseg::GrayImage image;
    eusseg::BinaryMask mask;
    make_lesion_pair(spec.image_size, s * (0.3 + 0.05 * std::fmod(phase, 7.0)),
                     s * (0.3 + 0.04 * std::fmod(phase * 1.7, 9.0)), s * 0.15 + std::fmod(phase, 3.0),
                     s * 0.12 + std::fmod(phase * 1.3, 4.0), image, mask);
    char img_name[32], mask_name[32];
    std::snprintf(img_name, sizeof(img_name), "img_%03zu.png", i);
    std::snprintf(mask_name, sizeof(mask_name), "mask_%03zu.png", i);
    write_gray_png(dir / img_name, image);
    eusseg::save_mask_png(dir / mask_name, mask);
    manifest << "{\"image_path\": \"" << img_name << "\", \"mask_path\": \"" << mask_name
             << "\", \"case_id\": \"" << spec.case_ids[i] << "\", \"source_id\": \"synthetic\"}\n";
  }
  return dir / "manifest.jsonl";
}

// n distinct single-record cases named case_0 .. case_{n-1}.
inline ManifestSpec simple_cases(std::size_t n, std::size_t image_size = 64) {
  ManifestSpec spec;
  spec.image_size = image_size;
  for (std::size_t i = 0; i < n; ++i) spec.case_ids.push_back("case_" + std::to_string(i));
  return spec;
}

inline eusseg::BinaryMask random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng,
                                      double density = 0.5) {
  eusseg::BinaryMask m(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : m.pix) p = u(rng) < density ? 1 : 0;
  return m;
}

}  // namespace fixtures
