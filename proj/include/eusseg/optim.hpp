#pragma once

#include <cmath>
#include <vector>

#include "eusseg/model.hpp"
#include "eusseg/network.hpp"
#include "eusseg/schedule.hpp"

namespace eusseg {

inline double global_grad_norm(const GradStore& grads) {
  double sq = 0.0;
  for (const auto& g : grads.grads) {
    for (const double x : g.v) sq += x * x;
  }
  return std::sqrt(sq);
}

inline bool grads_finite(const GradStore& grads) {
  for (const auto& g : grads.grads) {
    if (!all_finite(g)) return false;
  }
  return true;
}

// Scales all gradients so the global L2 norm does not exceed max_norm; a
// no-op inside the ball. Returns the pre-clip norm.
inline double clip_gradients(GradStore& grads, double max_norm) {
  if (!grads_finite(grads)) {
    throw RuntimeFailure("clip_gradients: non-finite gradients");
  }
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads.grads) {
      for (auto& x : g.v) x *= s;
    }
  }
  return norm;
}

// Decoupled-weight-decay Adam. Moments are kept in full precision and aligned
// with ParameterSet::for_each order.
struct AdamWState {
  std::vector<Tensor<double>> m;
  std::vector<Tensor<double>> v;
  std::size_t step = 0;
};

template <class T>
AdamWState make_adamw_state(const ParameterSet<T>& params) {
  AdamWState s;
  params.for_each([&](const std::string&, const Tensor<T>& t, int, bool) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  });
  return s;
}

// One optimizer step. The effective per-parameter rate is lr times the layer
// multiplier; weight decay is decoupled and skipped for normalization
// scales/offsets and bias vectors.
inline void adamw_step(ParameterSet<double>& params, const GradStore& grads, AdamWState& state,
                       const TrainConfig& cfg, double lr) {
  const int depth = static_cast<int>(params.config.depth);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor<double>& p, int layer, bool exempt) {
    const Tensor<double>& g = grads.grads[i];
    if (grads.names[i] != name) {
      throw RuntimeFailure("adamw_step: gradient order mismatch at '" + name + "'");
    }
    Tensor<double>& m = state.m[i];
    Tensor<double>& v = state.v[i];
    const double eff_lr = lr * layer_lr_multiplier(layer, depth, cfg.layer_decay);
    const double decay = exempt ? 0.0 : cfg.weight_decay;
    for (std::size_t k = 0; k < p.v.size(); ++k) {
      m.v[k] = cfg.beta1 * m.v[k] + (1.0 - cfg.beta1) * g.v[k];
      v.v[k] = cfg.beta2 * v.v[k] + (1.0 - cfg.beta2) * g.v[k] * g.v[k];
      const double mhat = m.v[k] / bc1;
      const double vhat = v.v[k] / bc2;
      p.v[k] -= eff_lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + decay * p.v[k]);
    }
    ++i;
  });

  params.for_each([&](const std::string& name, const Tensor<double>& p, int, bool) {
    if (!all_finite(p)) throw RuntimeFailure("adamw_step: non-finite update in '" + name + "'");
  });
}

}  // namespace eusseg
