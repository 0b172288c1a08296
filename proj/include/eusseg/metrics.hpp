#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eusseg/analysis.hpp"
#include "eusseg/common.hpp"
#include "eusseg/image.hpp"
#include "eusseg/manifest.hpp"
#include "eusseg/preprocess.hpp"

namespace eusseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ValidationError("confusion: mask shapes differ");
  }
  check_binary(pred, "confusion");
  check_binary(gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.pix.size(); ++i) {
    const bool p = pred.pix[i] != 0;
    const bool g = gt.pix[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct MetricResult {
  double dsc = 0.0;
  double iou = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
};

// Standard pixel-level definitions. A ratio whose denominator is zero scores 1
// (perfect vacuous agreement); in particular dsc = iou = 1 when both masks are
// empty.
inline MetricResult compute_metrics(const ConfusionCounts& c) {
  const auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  MetricResult m;
  m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  return m;
}

inline MetricResult aggregate_mean(const std::vector<MetricResult>& per_image) {
  if (per_image.empty()) throw ValidationError("aggregate_mean: empty input");
  MetricResult m;
  for (const auto& r : per_image) {
    m.dsc += r.dsc;
    m.iou += r.iou;
    m.sensitivity += r.sensitivity;
    m.specificity += r.specificity;
    m.accuracy += r.accuracy;
  }
  const double n = static_cast<double>(per_image.size());
  m.dsc /= n;
  m.iou /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.accuracy /= n;
  return m;
}

struct BootstrapCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::size_t n_resamples = 0;
  std::uint64_t seed = 0;
};

// Percentile bootstrap of the sample mean. Values are copied and sorted first,
// so the interval is invariant to input ordering; resampling is then fully
// determined by the seed.
inline BootstrapCI bootstrap_ci(const std::vector<double>& values, double level,
                                std::size_t n_resamples, std::uint64_t seed) {
  if (values.size() < 2) throw ValidationError("bootstrap_ci: need at least 2 values");
  if (n_resamples < 100) throw ValidationError("bootstrap_ci: need at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap_ci: bad level");

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  double point = 0.0;
  for (double v : sorted) point += v;
  point /= static_cast<double>(n);

  Rng rng(derive_seed(seed, {0xB007u, n, n_resamples}));
  std::vector<double> means(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += sorted[rng.below(n)];
    means[r] = acc / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());

  BootstrapCI ci;
  ci.point = point;
  const double alpha = (1.0 - level) / 2.0;
  ci.lower = sorted_quantile(means, alpha);
  ci.upper = sorted_quantile(means, 1.0 - alpha);
  ci.level = level;
  ci.n_resamples = n_resamples;
  ci.seed = seed;
  return ci;
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

// Anything that maps a preprocessed sample to a binary prediction; the real
// model plugs in here, and tests substitute doubles.
using Predictor = std::function<BinaryMask(const SegSample&)>;

struct PerImageResult {
  std::string image_path;
  bool ok = false;
  std::string error;
  MetricResult metrics;
  std::size_t component_count = 0;
  ConfusionCounts counts;
};

struct EvaluationOptions {
  std::size_t target_h = 512;
  std::size_t target_w = 512;
  std::size_t bootstrap_resamples = 2000;
  std::uint64_t bootstrap_seed = 0;
  unsigned threads = 1;
  // Called with (index, prediction) for rows that evaluated; used by the CLI
  // to persist prediction masks.
  std::function<void(std::size_t, const SegSample&, const BinaryMask&)> on_prediction;
};

struct EvaluationResult {
  std::vector<PerImageResult> per_image;  // one row per record, failures marked
  std::size_t failed_count = 0;
  MetricResult aggregate;                          // over successful rows
  std::map<std::string, BootstrapCI> intervals;    // dsc, iou, sensitivity, specificity
};

// preprocess -> predict -> confusion -> metrics per record. Per-image failures
// are recorded and excluded from aggregates with an explicit count.
inline EvaluationResult evaluate_dataset(const Predictor& predictor,
                                         const std::vector<ImageRecord>& records,
                                         const EvaluationOptions& options) {
  EvaluationResult result;
  result.per_image.resize(records.size());

  parallel_for(records.size(), options.threads, [&](std::size_t i) {
    PerImageResult& row = result.per_image[i];
    row.image_path = records[i].image_path.string();
    try {
      const SegSample sample = preprocess_sample(records[i], options.target_h, options.target_w);
      const BinaryMask pred = predictor(sample);
      if (pred.height != sample.mask.height || pred.width != sample.mask.width) {
        throw RuntimeFailure("prediction shape mismatch");
      }
      row.counts = confusion(pred, sample.mask);
      row.metrics = compute_metrics(row.counts);
      row.component_count = connected_components(pred).component_count;
      row.ok = true;
      if (options.on_prediction) options.on_prediction(i, sample, pred);
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  });

  std::vector<MetricResult> ok_metrics;
  std::vector<double> dsc, iou, sens, spec;
  for (const auto& row : result.per_image) {
    if (!row.ok) {
      ++result.failed_count;
      continue;
    }
    ok_metrics.push_back(row.metrics);
    dsc.push_back(row.metrics.dsc);
    iou.push_back(row.metrics.iou);
    sens.push_back(row.metrics.sensitivity);
    spec.push_back(row.metrics.specificity);
  }
  if (!ok_metrics.empty()) {
    result.aggregate = aggregate_mean(ok_metrics);
    if (ok_metrics.size() >= 2) {
      result.intervals["dsc"] =
          bootstrap_ci(dsc, 0.95, options.bootstrap_resamples, options.bootstrap_seed);
      result.intervals["iou"] =
          bootstrap_ci(iou, 0.95, options.bootstrap_resamples, options.bootstrap_seed);
      result.intervals["sensitivity"] =
          bootstrap_ci(sens, 0.95, options.bootstrap_resamples, options.bootstrap_seed);
      result.intervals["specificity"] =
          bootstrap_ci(spec, 0.95, options.bootstrap_resamples, options.bootstrap_seed);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline std::string per_image_csv(const EvaluationResult& result) {
  std::string out = "image_path,dsc,iou,sensitivity,specificity,accuracy,component_count\n";
  for (const auto& row : result.per_image) {
    if (!row.ok) {
      out += row.image_path + ",error,error,error,error,error,0\n";
      continue;
    }
    out += row.image_path + "," + format_fixed(row.metrics.dsc, 6) + "," +
           format_fixed(row.metrics.iou, 6) + "," + format_fixed(row.metrics.sensitivity, 6) +
           "," + format_fixed(row.metrics.specificity, 6) + "," +
           format_fixed(row.metrics.accuracy, 6) + "," + std::to_string(row.component_count) +
           "\n";
  }
  return out;
}

inline json ci_to_json(const BootstrapCI& ci) {
  return json{{"point", ci.point},   {"lower", ci.lower},
              {"upper", ci.upper},   {"level", ci.level},
              {"n_resamples", ci.n_resamples}, {"seed", ci.seed}};
}

inline json aggregate_report_json(const EvaluationResult& result) {
  json j;
  j["n_images"] = result.per_image.size();
  j["n_failed"] = result.failed_count;
  j["mean"] = {{"dsc", result.aggregate.dsc},
               {"iou", result.aggregate.iou},
               {"sensitivity", result.aggregate.sensitivity},
               {"specificity", result.aggregate.specificity},
               {"accuracy", result.aggregate.accuracy}};
  j["ci95"] = json::object();
  for (const auto& [name, ci] : result.intervals) j["ci95"][name] = ci_to_json(ci);
  return j;
}

}  // namespace eusseg
