#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eusseg/checkpoint.hpp"
#include "eusseg/folds.hpp"
#include "eusseg/metrics.hpp"
#include "eusseg/network.hpp"
#include "eusseg/optim.hpp"
#include "eusseg/preprocess.hpp"
#include "eusseg/schedule.hpp"

namespace eusseg {

struct CheckpointMeta {
  int fold_index = 0;
  std::size_t epoch = 0;              // 1-based epoch of the selected checkpoint
  double validation_dice = 0.0;
  std::filesystem::path checkpoint_path;
  std::string status = "ok";  // ok | diverged | failed
  std::string error;
};

inline json checkpoint_meta_to_json(const CheckpointMeta& m) {
  return json{{"fold_index", m.fold_index},
              {"epoch", m.epoch},
              {"validation_dice", m.validation_dice},
              {"checkpoint_path", m.checkpoint_path.string()},
              {"status", m.status},
              {"error", m.error}};
}

inline CheckpointMeta checkpoint_meta_from_json(const json& j) {
  CheckpointMeta m;
  m.fold_index = j.at("fold_index").get<int>();
  m.epoch = j.at("epoch").get<std::size_t>();
  m.validation_dice = j.at("validation_dice").get<double>();
  m.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  m.status = j.at("status").get<std::string>();
  m.error = j.value("error", "");
  return m;
}

// Wraps model inference as a metrics-module predictor. The parameter set must
// outlive the returned callable.
inline Predictor model_predictor(const ParameterSet<double>& params) {
  return [p = &params](const SegSample& sample) {
    const DecoderOutput out = atm_forward(*p, std::span<const GrayImage>(&sample.image, 1));
    return predict(assemble_logits(out))[0];
  };
}

inline double mean_validation_dice(const ParameterSet<double>& params,
                                   const std::vector<SegSample>& val_samples) {
  if (val_samples.empty()) throw ValidationError("mean_validation_dice: empty validation set");
  double acc = 0.0;
  for (const auto& s : val_samples) {
    const DecoderOutput out = atm_forward(params, std::span<const GrayImage>(&s.image, 1));
    const BinaryMask pred = predict(assemble_logits(out))[0];
    acc += compute_metrics(confusion(pred, s.mask)).dsc;
  }
  return acc / static_cast<double>(val_samples.size());
}

namespace detail {

// Dynamic loss scaling for the reduced-precision path: halve on overflow and
// skip the step, double again after a run of clean steps.
struct LossScaleState {
  double scale = 65536.0;
  std::size_t good_steps = 0;
  static constexpr double kMax = 16777216.0;  // 2^24
  static constexpr std::size_t kGrowEvery = 2000;

  void on_overflow() {
    scale = std::max(1.0, scale * 0.5);
    good_steps = 0;
  }
  void on_good_step() {
    if (++good_steps >= kGrowEvery) {
      scale = std::min(kMax, scale * 2.0);
      good_steps = 0;
    }
  }
};

struct StepOutcome {
  bool applied = false;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One optimizer step in full precision.
inline StepOutcome train_step_full(ParameterSet<double>& params, AdamWState& opt,
                                   const TrainConfig& cfg, double lr,
                                   std::span<const GrayImage> images,
                                   std::span<const BinaryMask> gts) {
  GradStore grads;
  const LossBreakdown bd = atm_loss_and_gradients(params, images, gts, grads);
  if (!finite(bd.total)) throw RuntimeFailure("training diverged: non-finite loss");
  StepOutcome out;
  out.loss = bd.total;
  out.grad_norm = clip_gradients(grads, cfg.grad_clip_norm);  // throws on non-finite
  adamw_step(params, grads, opt, cfg, lr);
  out.applied = true;
  return out;
}

// One step with float32 compute, float64 master weights and dynamic loss
// scaling. Overflowed steps are skipped, not fatal.
inline StepOutcome train_step_mixed(ParameterSet<double>& params, AdamWState& opt,
                                    const TrainConfig& cfg, double lr,
                                    std::span<const GrayImage> images,
                                    std::span<const BinaryMask> gts, LossScaleState& ls) {
  ParameterSet<float> shadow = make_parameter_skeleton<float>(params.config);
  {
    std::vector<const Tensor<double>*> src;
    params.for_each([&](const std::string&, const Tensor<double>& t, int, bool) {
      src.push_back(&t);
    });
    std::size_t i = 0;
    shadow.for_each([&](const std::string&, Tensor<float>& t, int, bool) {
      const Tensor<double>& s = *src[i++];
      for (std::size_t k = 0; k < t.v.size(); ++k) t.v[k] = static_cast<float>(s.v[k]);
    });
  }

  GradStore grads;
  LossBreakdown bd;
  bool overflow = false;
  try {
    bd = atm_loss_and_gradients(shadow, images, gts, grads, ls.scale);
    overflow = !finite(bd.total) || !grads_finite(grads);
  } catch (const RuntimeFailure&) {
    overflow = true;
  }
  StepOutcome out;
  out.loss = bd.total;
  if (overflow) {
    ls.on_overflow();
    return out;  // applied = false
  }
  out.grad_norm = clip_gradients(grads, cfg.grad_clip_norm);
  adamw_step(params, grads, opt, cfg, lr);
  ls.on_good_step();
  out.applied = true;
  return out;
}

inline std::vector<SegSample> preprocess_records(const std::vector<ImageRecord>& records,
                                                 const ModelConfig& cfg) {
  std::vector<SegSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(preprocess_sample(r, cfg.image_size, cfg.image_size));
  }
  return out;
}

}  // namespace detail

struct TrainFoldOptions {
  std::filesystem::path fold_dir;  // checkpoints, loss log and fold meta live here
  bool keep_all_checkpoints = true;
};

// Trains one fold: shuffled mini-batch optimization with the configured
// schedule, validation every val_every_epochs epochs and at the final epoch,
// checkpoint at each validation, best checkpoint selected by highest mean
// validation DSC (ties resolve to the earlier epoch). Divergence aborts the
// fold but keeps the last good checkpoint.
inline CheckpointMeta train_fold(const FoldAssignment& fold, const ModelConfig& model_cfg,
                                 const TrainConfig& train_cfg, const TrainFoldOptions& options) {
  validate_config(model_cfg);
  validate_train_config(train_cfg);
  if (fold.train_records.empty() || fold.val_records.empty()) {
    throw ValidationError("train_fold: fold " + std::to_string(fold.fold_index) +
                          " has an empty train or validation set");
  }

  std::filesystem::create_directories(options.fold_dir);
  std::ofstream log(options.fold_dir / "loss_log.csv", std::ios::trunc);
  log << "fold,epoch,step,loss,lr\n";

  CheckpointMeta best;
  best.fold_index = fold.fold_index;
  best.status = "failed";
  best.validation_dice = -1.0;

  try {
    const std::vector<SegSample> train_samples =
        detail::preprocess_records(fold.train_records, model_cfg);
    const std::vector<SegSample> val_samples =
        detail::preprocess_records(fold.val_records, model_cfg);

    ParameterSet<double> params = init_parameters<double>(
        model_cfg, derive_seed(train_cfg.seed, {0x101Du, static_cast<std::uint64_t>(fold.fold_index)}));
    AdamWState opt = make_adamw_state(params);
    detail::LossScaleState loss_scale;

    const std::size_t steps_per_epoch =
        (train_samples.size() + train_cfg.global_batch_size - 1) / train_cfg.global_batch_size;
    const std::vector<std::size_t> val_epochs =
        validation_epochs(train_cfg.epochs, train_cfg.val_every_epochs);

    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
      std::vector<std::size_t> order(train_samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(derive_seed(train_cfg.seed,
                                  {0x5u, static_cast<std::uint64_t>(fold.fold_index), epoch}));
      deterministic_shuffle(order, shuffle_rng);

      for (std::size_t step = 0; step < steps_per_epoch; ++step) {
        const std::size_t begin = step * train_cfg.global_batch_size;
        const std::size_t end = std::min(begin + train_cfg.global_batch_size, order.size());
        std::vector<GrayImage> images;
        std::vector<BinaryMask> gts;
        for (std::size_t i = begin; i < end; ++i) {
          images.push_back(train_samples[order[i]].image);
          gts.push_back(train_samples[order[i]].mask);
        }
        const double epoch_fraction =
            static_cast<double>(epoch) +
            static_cast<double>(step) / static_cast<double>(steps_per_epoch);
        const double lr = lr_at(epoch_fraction, train_cfg);

        detail::StepOutcome outcome;
        if (train_cfg.precision == Precision::full) {
          outcome = detail::train_step_full(params, opt, train_cfg, lr, images, gts);
        } else {
          outcome = detail::train_step_mixed(params, opt, train_cfg, lr, images, gts, loss_scale);
        }
        log << fold.fold_index << "," << epoch + 1 << "," << step << ","
            << format_fixed(outcome.loss, 8) << "," << format_fixed(lr, 10) << "\n";
      }

      const std::size_t done = epoch + 1;
      if (!std::binary_search(val_epochs.begin(), val_epochs.end(), done)) continue;

      const double dice = mean_validation_dice(params, val_samples);
      const std::filesystem::path ckpt_path =
          options.fold_dir / ("checkpoint_epoch_" + std::to_string(done) + ".ckpt");
      save_checkpoint(ckpt_path, params);
      if (dice > best.validation_dice) {  // strict: ties keep the earlier epoch
        best.epoch = done;
        best.validation_dice = dice;
        best.checkpoint_path = ckpt_path;
        best.status = "ok";
      }
    }
  } catch (const RuntimeFailure& e) {
    best.status = best.checkpoint_path.empty() ? "failed" : "diverged";
    best.error = e.what();
  }

  log.flush();
  write_text_file(options.fold_dir / "fold_meta.json",
                  checkpoint_meta_to_json(best).dump(2) + "\n");
  return best;
}

// ---------------------------------------------------------------------------
// Cross-validation orchestration
// ---------------------------------------------------------------------------

struct CVRunResult {
  std::vector<CheckpointMeta> folds;
  std::vector<MetricResult> fold_metrics;        // per fold, valid where status == ok
  MetricResult aggregate;                        // arithmetic mean of fold means
  std::map<std::string, BootstrapCI> intervals;  // pooled per-image bootstrap
  std::size_t failed_folds = 0;
};

inline json cv_result_to_json(const CVRunResult& r) {
  json j;
  j["folds"] = json::array();
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    json jf = checkpoint_meta_to_json(r.folds[i]);
    if (r.folds[i].status == "ok" && i < r.fold_metrics.size()) {
      jf["val_metrics"] = {{"dsc", r.fold_metrics[i].dsc},
                           {"iou", r.fold_metrics[i].iou},
                           {"sensitivity", r.fold_metrics[i].sensitivity},
                           {"specificity", r.fold_metrics[i].specificity},
                           {"accuracy", r.fold_metrics[i].accuracy}};
    }
    j["folds"].push_back(std::move(jf));
  }
  j["failed_folds"] = r.failed_folds;
  j["aggregate_mean"] = {{"dsc", r.aggregate.dsc},
                         {"iou", r.aggregate.iou},
                         {"sensitivity", r.aggregate.sensitivity},
                         {"specificity", r.aggregate.specificity},
                         {"accuracy", r.aggregate.accuracy}};
  j["ci95"] = json::object();
  for (const auto& [name, ci] : r.intervals) j["ci95"][name] = ci_to_json(ci);
  return j;
}

struct CVOptions {
  std::filesystem::path run_dir;
  bool resume = true;
  std::optional<int> only_fold;  // train a single fold, defer aggregation
  std::size_t bootstrap_resamples = 2000;
  std::uint64_t bootstrap_seed = 0;
};

inline std::filesystem::path cv_fold_dir(const std::filesystem::path& run_dir, int fold) {
  return run_dir / ("fold_" + std::to_string(fold));
}

// Trains each requested fold from a fresh seed-derived initialization, skipping
// folds whose fold_meta.json already reports success (resume). Aggregates
// validation metrics across completed folds; fold failures are recorded and do
// not abort the run.
inline CVRunResult run_cross_validation(const DatasetManifest& manifest, int k,
                                        const ModelConfig& model_cfg,
                                        const TrainConfig& train_cfg, const CVOptions& options,
                                        bool group_by_case = true) {
  std::filesystem::create_directories(options.run_dir);
  const std::filesystem::path folds_path = options.run_dir / "folds.json";

  std::vector<FoldAssignment> folds;
  if (options.resume && std::filesystem::exists(folds_path)) {
    folds = load_folds(folds_path, manifest);
    if (folds.size() != static_cast<std::size_t>(k)) {
      throw ValidationError("existing folds.json disagrees with k; refusing to mix splits");
    }
  } else {
    folds = make_folds(manifest, k, train_cfg.seed, group_by_case);
    save_folds(folds_path, folds, train_cfg.seed, group_by_case);
  }

  CVRunResult result;
  result.folds.resize(folds.size());
  result.fold_metrics.resize(folds.size());

  for (const auto& fold : folds) {
    if (options.only_fold && *options.only_fold != fold.fold_index) continue;
    const std::filesystem::path fold_dir = cv_fold_dir(options.run_dir, fold.fold_index);
    const std::filesystem::path meta_path = fold_dir / "fold_meta.json";
    if (options.resume && std::filesystem::exists(meta_path)) {
      const CheckpointMeta meta = checkpoint_meta_from_json(json::parse(read_text_file(meta_path)));
      if (meta.status == "ok") {
        result.folds[static_cast<std::size_t>(fold.fold_index)] = meta;
        continue;
      }
    }
    TrainFoldOptions fold_options;
    fold_options.fold_dir = fold_dir;
    result.folds[static_cast<std::size_t>(fold.fold_index)] =
        train_fold(fold, model_cfg, train_cfg, fold_options);
  }

  if (options.only_fold) return result;  // aggregation happens on the full run

  // Evaluate each fold's best checkpoint on its validation records.
  std::vector<double> dsc, iou, sens, spec;
  std::vector<MetricResult> fold_means;
  for (const auto& fold : folds) {
    CheckpointMeta& meta = result.folds[static_cast<std::size_t>(fold.fold_index)];
    if (meta.status != "ok") {
      ++result.failed_folds;
      continue;
    }
    const ParameterSet<double> params = load_checkpoint(meta.checkpoint_path);
    EvaluationOptions eval_options;
    eval_options.target_h = model_cfg.image_size;
    eval_options.target_w = model_cfg.image_size;
    eval_options.bootstrap_resamples = options.bootstrap_resamples;
    eval_options.bootstrap_seed = options.bootstrap_seed;
    const EvaluationResult ev =
        evaluate_dataset(model_predictor(params), fold.val_records, eval_options);
    result.fold_metrics[static_cast<std::size_t>(fold.fold_index)] = ev.aggregate;
    fold_means.push_back(ev.aggregate);
    for (const auto& row : ev.per_image) {
      if (!row.ok) continue;
      dsc.push_back(row.metrics.dsc);
      iou.push_back(row.metrics.iou);
      sens.push_back(row.metrics.sensitivity);
      spec.push_back(row.metrics.specificity);
    }
  }
  if (!fold_means.empty()) {
    result.aggregate = aggregate_mean(fold_means);
    if (dsc.size() >= 2) {
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
  write_text_file(options.run_dir / "cv_result.json", cv_result_to_json(result).dump(2) + "\n");
  return result;
}

}  // namespace eusseg
