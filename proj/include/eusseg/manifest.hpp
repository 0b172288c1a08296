#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eusseg/common.hpp"
#include "eusseg/image.hpp"

namespace eusseg {

using json = nlohmann::json;

// Pixel offsets removed from each border before any other processing.
struct CropSpec {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  bool is_zero() const { return left == 0 && top == 0 && right == 0 && bottom == 0; }
};

// Cropping must leave at least this many pixels on each axis.
inline constexpr std::size_t kMinCroppedExtent = 32;

inline void validate_crop(const CropSpec& spec, std::size_t height, std::size_t width,
                          const std::string& context) {
  if (spec.left < 0 || spec.top < 0 || spec.right < 0 || spec.bottom < 0) {
    throw ValidationError(context + ": crop offsets must be non-negative");
  }
  const long long rem_w = static_cast<long long>(width) - spec.left - spec.right;
  const long long rem_h = static_cast<long long>(height) - spec.top - spec.bottom;
  if (rem_w <= 0 || rem_h <= 0) {
    throw ValidationError(context + ": crop exceeds image bounds");
  }
  if (rem_w < static_cast<long long>(kMinCroppedExtent) ||
      rem_h < static_cast<long long>(kMinCroppedExtent)) {
    throw ValidationError(context + ": crop leaves less than " +
                          std::to_string(kMinCroppedExtent) + "x" +
                          std::to_string(kMinCroppedExtent) + " pixels");
  }
}

struct ImageRecord {
  std::filesystem::path image_path;  // resolved against the manifest directory
  std::filesystem::path mask_path;
  std::string case_id;    // patient/video identifier, used for leakage-free splits
  std::string source_id;  // e.g. pancreatic_video, gist514, lep
  std::optional<CropSpec> crop;

  std::string stem() const { return image_path.stem().string(); }
};

struct DatasetManifest {
  std::filesystem::path dir;  // directory the manifest file lives in
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }

  std::vector<std::string> distinct_cases() const {
    std::vector<std::string> cases;
    std::set<std::string> seen;
    for (const auto& r : records) {
      if (seen.insert(r.case_id).second) cases.push_back(r.case_id);
    }
    return cases;
  }
};

namespace detail {

inline ImageRecord parse_manifest_entry(const json& j, const std::filesystem::path& dir,
                                        const std::string& context) {
  for (const char* key : {"image_path", "mask_path", "case_id"}) {
    if (!j.contains(key)) throw ValidationError(context + ": missing key '" + key + "'");
  }
  ImageRecord rec;
  rec.image_path = dir / j.at("image_path").get<std::string>();
  rec.mask_path = dir / j.at("mask_path").get<std::string>();
  rec.case_id = j.at("case_id").get<std::string>();
  rec.source_id = j.value("source_id", std::string{});
  if (rec.case_id.empty()) throw ValidationError(context + ": case_id is empty");
  if (j.contains("crop")) {
    const auto& c = j.at("crop");
    if (!c.is_array() || c.size() != 4) {
      throw ValidationError(context + ": crop must be [left, top, right, bottom]");
    }
    rec.crop = CropSpec{c[0].get<int>(), c[1].get<int>(), c[2].get<int>(), c[3].get<int>()};
  }
  return rec;
}

}  // namespace detail

// Manifest format: one JSON object per line with keys image_path, mask_path,
// case_id, source_id and optional crop [left, top, right, bottom]. Paths are
// relative to the manifest's directory. '#' lines and blank lines are skipped.
inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     bool validate_files = true) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("manifest file does not exist: " + path.string());
  }
  DatasetManifest manifest;
  manifest.dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  std::ifstream in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string context = path.filename().string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(context + ": malformed manifest entry: " + e.what());
    }
    manifest.records.push_back(detail::parse_manifest_entry(j, manifest.dir, context));

    if (validate_files) {
      const ImageRecord& rec = manifest.records.back();
      const auto [ih, iw] = probe_raster(rec.image_path);  // throws naming the file
      probe_raster(rec.mask_path);
      if (rec.crop) validate_crop(*rec.crop, ih, iw, context);
    }
  }
  return manifest;
}

}  // namespace eusseg
