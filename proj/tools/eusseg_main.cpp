// eusseg: endoscopic-ultrasound tumor segmentation pipeline.
//
// Subcommands: preprocess, split, train, evaluate, analyze. Each run writes
// the exact resolved configuration into its output directory, so a run
// directory is always self-describing.

#include <CLI11.hpp>

#include <cstring>
#include <iostream>
#include <map>
#include <optional>
#include <span>

#include "eusseg/eusseg.hpp"

namespace {

using namespace eusseg;

constexpr char kSampleMagic[8] = {'E', 'U', 'S', 'S', 'M', 'P', '0', '1'};

void write_sample_cache(const std::filesystem::path& path, const SegSample& sample) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write sample cache: " + path.string());
  out.write(kSampleMagic, sizeof(kSampleMagic));
  const std::uint32_t h = static_cast<std::uint32_t>(sample.image.height);
  const std::uint32_t w = static_cast<std::uint32_t>(sample.image.width);
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  out.write(reinterpret_cast<const char*>(&w), sizeof(w));
  out.write(reinterpret_cast<const char*>(sample.image.pix.data()),
            static_cast<std::streamsize>(sample.image.pix.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(sample.mask.pix.data()),
            static_cast<std::streamsize>(sample.mask.pix.size()));
  if (!out) throw RuntimeFailure("short write: " + path.string());
}

struct CommonFlags {
  std::string manifest;
  std::string config_file;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool toy = false;
};

// flag > config file > built-in default
RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig config;
  if (!flags.config_file.empty()) config = load_run_config(flags.config_file, config);
  if (!flags.manifest.empty()) config.manifest = flags.manifest;
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (flags.seed) {
    config.seed = *flags.seed;
    config.train.seed = *flags.seed;
    config.eval_seed = *flags.seed;
  } else {
    config.train.seed = config.seed;
  }
  if (flags.toy) config.toy = true;
  if (config.toy) config.model = ModelConfig::toy();
  return config;
}

int cmd_preprocess(const RunConfig& config) {
  require(!config.manifest.empty(), "preprocess: --manifest is required");
  require(!config.out_dir.empty(), "preprocess: --out is required");
  const DatasetManifest manifest = load_manifest(config.manifest);
  const std::filesystem::path out_dir = config.out_dir;
  std::filesystem::create_directories(out_dir);
  persist_run_config(out_dir, config);

  json index;
  index["target"] = {config.model.image_size, config.model.image_size};
  index["entries"] = json::array();
  std::vector<json> entries(manifest.records.size());

  parallel_for(manifest.records.size(), config.threads, [&](std::size_t i) {
    const ImageRecord& rec = manifest.records[i];
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%06zu.bin", i);
    const SegSample sample =
        preprocess_sample(rec, config.model.image_size, config.model.image_size);
    write_sample_cache(out_dir / name, sample);
    entries[i] = json{{"image_path", rec.image_path.string()},
                      {"mask_path", rec.mask_path.string()},
                      {"case_id", rec.case_id},
                      {"cache_file", name},
                      {"foreground_pixels", sample.mask.foreground_count()}};
  });
  for (auto& e : entries) index["entries"].push_back(std::move(e));
  index["count"] = manifest.records.size();
  write_text_file(out_dir / "summary.json", index.dump(2) + "\n");
  std::cout << "preprocessed " << manifest.records.size() << " samples into " << out_dir.string()
            << "\n";
  return 0;
}

int cmd_split(const RunConfig& config, std::string out_file) {
  require(!config.manifest.empty(), "split: --manifest is required");
  if (out_file.empty()) out_file = config.out_dir;  // --out names the fold file here
  require(!out_file.empty(), "split: --out is required");
  const DatasetManifest manifest = load_manifest(config.manifest);
  const auto folds = make_folds(manifest, config.folds, config.seed, config.group_by_case);
  save_folds(out_file, folds, config.seed, config.group_by_case);
  std::cout << "wrote " << folds.size() << " folds to " << out_file << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, std::optional<int> only_fold, bool fresh) {
  require(!config.manifest.empty(), "train: --manifest is required");
  require(!config.out_dir.empty(), "train: --out is required");
  const DatasetManifest manifest = load_manifest(config.manifest);
  const std::filesystem::path run_dir = config.out_dir;
  std::filesystem::create_directories(run_dir);
  persist_run_config(run_dir, config);

  CVOptions options;
  options.run_dir = run_dir;
  options.resume = !fresh;
  options.only_fold = only_fold;
  options.bootstrap_resamples = config.eval_bootstrap_resamples;
  options.bootstrap_seed = config.eval_seed;

  const CVRunResult result = run_cross_validation(manifest, config.folds, config.model,
                                                  config.train, options, config.group_by_case);
  for (const auto& meta : result.folds) {
    if (only_fold && *only_fold != meta.fold_index) continue;
    std::cout << "fold " << meta.fold_index << ": " << meta.status;
    if (meta.status == "ok") {
      std::cout << " best epoch " << meta.epoch << " val dice "
                << format_fixed(meta.validation_dice, 4);
    } else if (!meta.error.empty()) {
      std::cout << " (" << meta.error << ")";
    }
    std::cout << "\n";
  }
  if (!only_fold) {
    std::cout << "aggregate mean dsc " << format_fixed(result.aggregate.dsc, 4) << " over "
              << (result.folds.size() - result.failed_folds) << " folds\n";
    if (result.failed_folds > 0) {
      std::cerr << result.failed_folds << " fold(s) failed; see cv_result.json\n";
      return 2;
    }
  }
  return 0;
}

int cmd_evaluate(RunConfig config, const std::string& checkpoint_flag, bool dump_predictions) {
  require(!config.manifest.empty(), "evaluate: --manifest is required");
  require(!config.out_dir.empty(), "evaluate: --out is required");
  if (!checkpoint_flag.empty()) config.checkpoint = checkpoint_flag;
  require(!config.checkpoint.empty(), "evaluate: --checkpoint is required");

  const ParameterSet<double> params = load_checkpoint(config.checkpoint);
  const DatasetManifest manifest = load_manifest(config.manifest);
  const std::filesystem::path out_dir = config.out_dir;
  std::filesystem::create_directories(out_dir);
  persist_run_config(out_dir, config);

  const std::filesystem::path pred_dir = out_dir / "predictions";
  EvaluationOptions options;
  options.target_h = params.config.image_size;
  options.target_w = params.config.image_size;
  options.bootstrap_resamples = config.eval_bootstrap_resamples;
  options.bootstrap_seed = config.eval_seed;
  options.threads = config.threads;
  if (dump_predictions) {
    std::filesystem::create_directories(pred_dir);
    options.on_prediction = [&](std::size_t i, const SegSample&, const BinaryMask& pred) {
      char name[32];
      std::snprintf(name, sizeof(name), "pred_%06zu.png", i);
      save_mask_png(pred_dir / name, pred);
    };
  }

  const EvaluationResult result =
      evaluate_dataset(model_predictor(params), manifest.records, options);
  write_text_file(out_dir / "per_image.csv", per_image_csv(result));
  write_text_file(out_dir / "aggregate.json", aggregate_report_json(result).dump(2) + "\n");

  std::cout << "evaluated " << result.per_image.size() - result.failed_count << "/"
            << result.per_image.size() << " images; mean dsc "
            << format_fixed(result.aggregate.dsc, 4) << "\n";
  if (result.failed_count > 0) {
    std::cerr << result.failed_count << " image(s) failed to evaluate\n";
  }
  return 0;
}

struct ResultRow {
  std::string image_path;
  double dsc = 0.0;
  bool ok = false;
};

std::vector<ResultRow> parse_per_image_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open results file: " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 7) throw ValidationError("malformed results row: " + line);
    ResultRow row;
    row.image_path = fields[0];
    row.ok = fields[1] != "error";
    if (row.ok) row.dsc = std::stod(fields[1]);
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_analyze(const RunConfig& config, const std::string& results_file,
                const std::string& predictions_dir) {
  require(!config.manifest.empty(), "analyze: --manifest is required");
  require(!config.out_dir.empty(), "analyze: --out is required");
  require(!results_file.empty(), "analyze: --results is required");
  require(!predictions_dir.empty(), "analyze: --predictions is required");

  const DatasetManifest manifest = load_manifest(config.manifest);
  const std::vector<ResultRow> rows = parse_per_image_csv(results_file);
  const std::filesystem::path pred_dir = predictions_dir;
  const std::filesystem::path out_dir = config.out_dir;
  std::filesystem::create_directories(out_dir);
  persist_run_config(out_dir, config);

  std::map<std::string, const ImageRecord*> by_path;
  for (const auto& r : manifest.records) by_path[r.image_path.string()] = &r;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    index_of[manifest.records[i].image_path.string()] = i;
  }

  std::vector<ImageOutcome> outcomes;
  std::map<std::string, BinaryMask> preds;
  for (const auto& row : rows) {
    if (!row.ok) continue;
    const auto idx_it = index_of.find(row.image_path);
    if (idx_it == index_of.end()) {
      throw ValidationError("results row references unknown record: " + row.image_path);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "pred_%06zu.png", idx_it->second);
    const std::filesystem::path pred_path = pred_dir / name;
    if (!std::filesystem::exists(pred_path)) {
      throw ValidationError("missing prediction file: " + pred_path.string());
    }
    BinaryMask pred = binarize_mask(load_raster(pred_path), name);
    ImageOutcome outcome;
    outcome.image_id = row.image_path;
    outcome.dsc = row.dsc;
    outcome.components = connected_components(pred, config.analysis_connectivity);
    outcomes.push_back(outcome);
    preds.emplace(row.image_path, std::move(pred));
  }

  const FailureReport report = bucket_failures(outcomes);

  // Overlays for every bucketed (complete-failure or poor) image.
  const std::filesystem::path overlay_dir = out_dir / "overlays";
  std::size_t overlays = 0;
  for (const auto& ann : report.annotations) {
    if (ann.bucket == "acceptable") continue;
    const ImageRecord& rec = *by_path.at(ann.image_id);
    const BinaryMask& pred = preds.at(ann.image_id);
    const SegSample sample = preprocess_sample(rec, pred.height, pred.width);
    const RgbImage overlay = render_overlay(sample.image, sample.mask, pred, ann.dsc);
    save_png_rgb8(overlay_dir / (rec.stem() + "_overlay.png"), overlay);
    ++overlays;
  }

  json j;
  j["evaluated_count"] = report.evaluated_count;
  j["complete_failures"] = report.complete_failures;
  j["poor_cases"] = report.poor_cases;
  j["multi_prediction_count"] = report.multi_prediction_count;
  j["multi_prediction_rate"] = report.multi_prediction_rate;
  j["multi_prediction_rate_formatted"] = format_percent(report.multi_prediction_rate);
  j["overlays_rendered"] = overlays;
  j["annotations"] = json::array();
  for (const auto& ann : report.annotations) {
    j["annotations"].push_back(json{{"image_id", ann.image_id},
                                    {"dsc", ann.dsc},
                                    {"component_count", ann.component_count},
                                    {"bucket", ann.bucket}});
  }
  write_text_file(out_dir / "failure_report.json", j.dump(2) + "\n");
  std::cout << "analyzed " << report.evaluated_count << " images: "
            << report.complete_failures.size() << " complete failures, "
            << report.poor_cases.size() << " poor cases, multi-prediction rate "
            << format_percent(report.multi_prediction_rate) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EUS pancreatic tumor segmentation pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string out_file;
  std::string checkpoint_path;
  std::string results_file;
  std::string predictions_dir;
  std::optional<int> only_fold;
  bool fresh = false;
  bool no_predictions = false;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", flags.manifest, "dataset manifest (one JSON record per line)");
    cmd->add_option("--config", flags.config_file, "run configuration JSON");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "master seed override");
    cmd->add_flag("--toy", flags.toy, "use the toy model preset");
  };

  CLI::App* preprocess = app.add_subcommand("preprocess", "preprocess a manifest into a cache");
  add_common(preprocess);

  CLI::App* split = app.add_subcommand("split", "generate cross-validation folds");
  add_common(split);
  split->add_option("--out-file", out_file, "fold assignment output file (alias for --out)");

  CLI::App* train = app.add_subcommand("train", "run k-fold cross-validation training");
  add_common(train);
  train->add_option("--fold", only_fold, "train a single fold index");
  train->add_flag("--fresh", fresh, "ignore existing fold results instead of resuming");

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a manifest");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file");
  evaluate->add_flag("--no-predictions", no_predictions, "skip writing prediction masks");

  CLI::App* analyze = app.add_subcommand("analyze", "failure analysis of evaluation results");
  add_common(analyze);
  analyze->add_option("--results", results_file, "per-image results CSV from evaluate");
  analyze->add_option("--predictions", predictions_dir, "prediction masks from evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    const eusseg::RunConfig config = resolve_config(flags);
    if (preprocess->parsed()) return cmd_preprocess(config);
    if (split->parsed()) return cmd_split(config, out_file);
    if (train->parsed()) return cmd_train(config, only_fold, fresh);
    if (evaluate->parsed()) return cmd_evaluate(config, checkpoint_path, !no_predictions);
    if (analyze->parsed()) return cmd_analyze(config, results_file, predictions_dir);
  } catch (const eusseg::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const eusseg::RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
