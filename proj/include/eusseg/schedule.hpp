#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "eusseg/common.hpp"

namespace eusseg {

enum class Precision { full, mixed };

inline std::string to_string(Precision p) { return p == Precision::full ? "full" : "mixed"; }

inline Precision precision_from_string(const std::string& s) {
  if (s == "full") return Precision::full;
  if (s == "mixed") return Precision::mixed;
  throw ValidationError("unknown precision '" + s + "' (expected full or mixed)");
}

struct TrainConfig {
  std::size_t epochs = 50;
  double base_lr = 3e-4;
  double warmup_start_lr = 5e-5;
  double warmup_epochs = 20;
  double final_lr = 0.0;
  double weight_decay = 0.05;
  double layer_decay = 0.65;
  double grad_clip_norm = 5.0;
  std::size_t global_batch_size = 16;
  std::size_t val_every_epochs = 5;
  std::uint64_t seed = 0;
  Precision precision = Precision::full;

  // AdamW moments; standard values, not schedule-dependent.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline void validate_train_config(const TrainConfig& c) {
  require(c.epochs >= 1, "TrainConfig: epochs must be at least 1");
  require(c.warmup_epochs < static_cast<double>(c.epochs),
          "TrainConfig: warmup must end before training does");
  require(c.base_lr > 0 && c.warmup_start_lr > 0, "TrainConfig: learning rates must be positive");
  require(c.final_lr >= 0, "TrainConfig: final_lr must be non-negative");
  require(c.global_batch_size >= 1, "TrainConfig: batch size must be at least 1");
  require(c.val_every_epochs >= 1, "TrainConfig: validation cadence must be at least 1");
  require(c.layer_decay > 0 && c.layer_decay <= 1, "TrainConfig: layer_decay must be in (0,1]");
}

// Linear warmup from warmup_start_lr to base_lr over [0, warmup_epochs], then
// cosine decay from base_lr to final_lr over the remaining epochs. Continuous
// at the warmup end by construction.
inline double lr_at(double epoch_fraction, const TrainConfig& cfg) {
  if (epoch_fraction < 0) throw ValidationError("lr_at: negative epoch fraction");
  if (cfg.warmup_epochs > 0 && epoch_fraction < cfg.warmup_epochs) {
    const double t = epoch_fraction / cfg.warmup_epochs;
    return cfg.warmup_start_lr + t * (cfg.base_lr - cfg.warmup_start_lr);
  }
  const double span = static_cast<double>(cfg.epochs) - cfg.warmup_epochs;
  const double t = span > 0 ? (epoch_fraction - cfg.warmup_epochs) / span : 1.0;
  if (t >= 1.0) return cfg.final_lr;
  return cfg.final_lr + (cfg.base_lr - cfg.final_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
}

// Epochs (1-based) after which validation runs: every val_every_epochs epochs
// plus the final epoch. For 50 epochs validated every 5 this is exactly
// {5, 10, ..., 50} — ten events, the final epoch coinciding with the cadence.
inline std::vector<std::size_t> validation_epochs(std::size_t epochs,
                                                  std::size_t val_every_epochs) {
  std::vector<std::size_t> out;
  for (std::size_t done = 1; done <= epochs; ++done) {
    if (done % val_every_epochs == 0 || done == epochs) out.push_back(done);
  }
  return out;
}

// Layer-wise learning-rate multiplier, counting from the top: the head (index
// depth+1) gets 1, block i gets decay^(depth+1-i), the patch embedding (index
// 0) gets decay^(depth+1). Integer exponentiation keeps small powers exact.
inline double layer_lr_multiplier(int param_layer_index, int depth, double decay) {
  if (param_layer_index < 0 || param_layer_index > depth + 1) {
    throw ValidationError("layer_lr_multiplier: layer index out of range");
  }
  const int exponent = depth + 1 - param_layer_index;
  double m = 1.0;
  for (int i = 0; i < exponent; ++i) m *= decay;
  return m;
}

}  // namespace eusseg
