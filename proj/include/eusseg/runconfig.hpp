#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "eusseg/checkpoint.hpp"
#include "eusseg/common.hpp"
#include "eusseg/model.hpp"
#include "eusseg/schedule.hpp"

namespace eusseg {

// Declarative run configuration shared by every subcommand. Precedence is
// command-line flag > config file > built-in default, and the resolved config
// is persisted into the output directory of each run.
struct RunConfig {
  std::string manifest;
  std::string out_dir;
  std::string checkpoint;  // evaluate input, persisted so runs are self-describing
  int folds = 5;
  std::uint64_t seed = 0;
  bool group_by_case = true;
  bool toy = false;
  unsigned threads = 1;

  ModelConfig model;
  TrainConfig train;

  std::size_t eval_bootstrap_resamples = 2000;
  std::uint64_t eval_seed = 0;

  double analysis_complete_threshold = 0.1;
  double analysis_poor_threshold = 0.5;
  int analysis_connectivity = 8;
};

inline json train_config_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"base_lr", t.base_lr},
              {"warmup_start_lr", t.warmup_start_lr},
              {"warmup_epochs", t.warmup_epochs},
              {"final_lr", t.final_lr},
              {"weight_decay", t.weight_decay},
              {"layer_decay", t.layer_decay},
              {"grad_clip_norm", t.grad_clip_norm},
              {"global_batch_size", t.global_batch_size},
              {"val_every_epochs", t.val_every_epochs},
              {"seed", t.seed},
              {"precision", to_string(t.precision)}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  base.epochs = j.value("epochs", base.epochs);
  base.base_lr = j.value("base_lr", base.base_lr);
  base.warmup_start_lr = j.value("warmup_start_lr", base.warmup_start_lr);
  base.warmup_epochs = j.value("warmup_epochs", base.warmup_epochs);
  base.final_lr = j.value("final_lr", base.final_lr);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.layer_decay = j.value("layer_decay", base.layer_decay);
  base.grad_clip_norm = j.value("grad_clip_norm", base.grad_clip_norm);
  base.global_batch_size = j.value("global_batch_size", base.global_batch_size);
  base.val_every_epochs = j.value("val_every_epochs", base.val_every_epochs);
  base.seed = j.value("seed", base.seed);
  if (j.contains("precision")) base.precision = precision_from_string(j.at("precision"));
  return base;
}

inline ModelConfig model_config_from_json_partial(const json& j, ModelConfig base = {}) {
  base.image_size = j.value("image_size", base.image_size);
  base.patch_size = j.value("patch_size", base.patch_size);
  base.embed_dim = j.value("embed_dim", base.embed_dim);
  base.depth = j.value("depth", base.depth);
  base.num_heads = j.value("num_heads", base.num_heads);
  if (j.contains("tap_layers")) base.tap_layers = j.at("tap_layers").get<std::vector<std::size_t>>();
  base.decoder_embed_dim = j.value("decoder_embed_dim", base.decoder_embed_dim);
  base.decoder_layers = j.value("decoder_layers", base.decoder_layers);
  base.decoder_heads = j.value("decoder_heads", base.decoder_heads);
  base.num_classes = j.value("num_classes", base.num_classes);
  return base;
}

inline json run_config_to_json(const RunConfig& c) {
  json j;
  j["manifest"] = c.manifest;
  j["out_dir"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["group_by_case"] = c.group_by_case;
  j["toy"] = c.toy;
  j["threads"] = c.threads;
  j["model"] = model_config_to_json(c.model);
  j["train"] = train_config_to_json(c.train);
  j["evaluate"] = {{"bootstrap_resamples", c.eval_bootstrap_resamples}, {"seed", c.eval_seed}};
  j["analysis"] = {{"complete_threshold", c.analysis_complete_threshold},
                   {"poor_threshold", c.analysis_poor_threshold},
                   {"connectivity", c.analysis_connectivity}};
  return j;
}

inline RunConfig run_config_from_json(const json& j, RunConfig base = {}) {
  base.manifest = j.value("manifest", base.manifest);
  base.out_dir = j.value("out_dir", base.out_dir);
  base.checkpoint = j.value("checkpoint", base.checkpoint);
  base.folds = j.value("folds", base.folds);
  base.seed = j.value("seed", base.seed);
  base.group_by_case = j.value("group_by_case", base.group_by_case);
  base.toy = j.value("toy", base.toy);
  base.threads = j.value("threads", base.threads);
  if (j.contains("model")) base.model = model_config_from_json_partial(j.at("model"), base.model);
  if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
  if (j.contains("evaluate")) {
    base.eval_bootstrap_resamples =
        j.at("evaluate").value("bootstrap_resamples", base.eval_bootstrap_resamples);
    base.eval_seed = j.at("evaluate").value("seed", base.eval_seed);
  }
  if (j.contains("analysis")) {
    base.analysis_complete_threshold =
        j.at("analysis").value("complete_threshold", base.analysis_complete_threshold);
    base.analysis_poor_threshold =
        j.at("analysis").value("poor_threshold", base.analysis_poor_threshold);
    base.analysis_connectivity = j.at("analysis").value("connectivity", base.analysis_connectivity);
  }
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, base);
}

inline void persist_run_config(const std::filesystem::path& out_dir, const RunConfig& config) {
  write_text_file(out_dir / "config.json", run_config_to_json(config).dump(2) + "\n");
}

}  // namespace eusseg
