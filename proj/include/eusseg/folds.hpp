#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eusseg/common.hpp"
#include "eusseg/manifest.hpp"

namespace eusseg {

struct FoldAssignment {
  int fold_index = 0;
  std::vector<ImageRecord> train_records;
  std::vector<ImageRecord> val_records;
};

// Deterministic k-fold split. With grouping enabled (the default), whole cases
// are shuffled by seed and dealt round-robin into folds so no case_id ever
// straddles a fold boundary; fold case-counts differ by at most one.
inline std::vector<FoldAssignment> make_folds(const DatasetManifest& manifest, int k,
                                              std::uint64_t seed, bool group_by_case = true) {
  if (k < 2) throw ValidationError("make_folds: k must be at least 2");
  if (manifest.records.empty()) throw ValidationError("make_folds: empty manifest");

  // fold id per record index
  std::vector<int> fold_of(manifest.records.size(), -1);

  Rng rng(derive_seed(seed, {0xF01Du, static_cast<std::uint64_t>(k)}));
  if (group_by_case) {
    std::vector<std::string> cases = manifest.distinct_cases();
    if (static_cast<int>(cases.size()) < k) {
      throw ValidationError("make_folds: " + std::to_string(cases.size()) +
                            " distinct cases cannot fill " + std::to_string(k) + " folds");
    }
    deterministic_shuffle(cases, rng);
    std::map<std::string, int> case_fold;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      case_fold[cases[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      fold_of[i] = case_fold.at(manifest.records[i].case_id);
    }
  } else {
    if (static_cast<int>(manifest.records.size()) < k) {
      throw ValidationError("make_folds: fewer records than folds");
    }
    std::vector<std::size_t> order(manifest.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
  }

  std::vector<FoldAssignment> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) folds[static_cast<std::size_t>(f)].fold_index = f;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    for (int f = 0; f < k; ++f) {
      auto& fold = folds[static_cast<std::size_t>(f)];
      if (fold_of[i] == f) fold.val_records.push_back(manifest.records[i]);
      else fold.train_records.push_back(manifest.records[i]);
    }
  }
  return folds;
}

// Serialized fold assignments, for exact reruns. Records are stored by
// image_path relative to nothing (already-resolved paths as strings).
inline json folds_to_json(const std::vector<FoldAssignment>& folds, std::uint64_t seed,
                          bool group_by_case) {
  json out;
  out["k"] = folds.size();
  out["seed"] = seed;
  out["group_by_case"] = group_by_case;
  out["folds"] = json::array();
  for (const auto& f : folds) {
    json jf;
    jf["fold_index"] = f.fold_index;
    jf["train"] = json::array();
    jf["val"] = json::array();
    for (const auto& r : f.train_records) jf["train"].push_back(r.image_path.string());
    for (const auto& r : f.val_records) jf["val"].push_back(r.image_path.string());
    out["folds"].push_back(std::move(jf));
  }
  return out;
}

inline void save_folds(const std::filesystem::path& path,
                       const std::vector<FoldAssignment>& folds, std::uint64_t seed,
                       bool group_by_case) {
  write_text_file(path, folds_to_json(folds, seed, group_by_case).dump(2) + "\n");
}

// Rebuilds assignments from a saved fold file against a manifest. Every path in
// the file must resolve to a manifest record.
inline std::vector<FoldAssignment> load_folds(const std::filesystem::path& path,
                                              const DatasetManifest& manifest) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed fold file " + path.string() + ": " + e.what());
  }
  std::map<std::string, const ImageRecord*> by_path;
  for (const auto& r : manifest.records) by_path[r.image_path.string()] = &r;

  std::vector<FoldAssignment> folds;
  for (const auto& jf : j.at("folds")) {
    FoldAssignment f;
    f.fold_index = jf.at("fold_index").get<int>();
    for (const char* part : {"train", "val"}) {
      auto& dst = (std::string(part) == "train") ? f.train_records : f.val_records;
      for (const auto& p : jf.at(part)) {
        auto it = by_path.find(p.get<std::string>());
        if (it == by_path.end()) {
          throw ValidationError("fold file references unknown record: " + p.get<std::string>());
        }
        dst.push_back(*it->second);
      }
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace eusseg
