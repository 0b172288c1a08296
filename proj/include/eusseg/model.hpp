#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "eusseg/common.hpp"
#include "eusseg/image.hpp"
#include "eusseg/tensor.hpp"

namespace eusseg {

// Architecture hyperparameters. Defaults are the full-scale configuration;
// toy() shrinks every dimension for CPU-scale verification.
struct ModelConfig {
  std::size_t image_size = 512;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t num_heads = 12;
  std::vector<std::size_t> tap_layers = {5, 7, 11};  // 0-based block outputs
  std::size_t decoder_embed_dim = 384;
  std::size_t decoder_layers = 3;
  std::size_t decoder_heads = 12;
  std::size_t num_classes = 2;

  std::size_t grid_size() const { return image_size / patch_size; }
  std::size_t token_count() const { return grid_size() * grid_size(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t decoder_head_dim() const { return decoder_embed_dim / decoder_heads; }
  std::size_t mlp_dim() const { return embed_dim * 4; }
  std::size_t decoder_mlp_dim() const { return decoder_embed_dim * 4; }
  std::size_t bias_table_rows() const {
    const std::size_t g = grid_size();
    return (2 * g - 1) * (2 * g - 1);
  }

  static ModelConfig toy() {
    ModelConfig c;
    c.image_size = 64;
    c.patch_size = 8;
    c.embed_dim = 32;
    c.depth = 2;
    c.num_heads = 4;
    c.tap_layers = {0, 1};
    c.decoder_embed_dim = 32;
    c.decoder_layers = 2;
    c.decoder_heads = 4;
    c.num_classes = 2;
    return c;
  }
};

inline void validate_config(const ModelConfig& c) {
  require(c.patch_size > 0 && c.image_size % c.patch_size == 0,
          "ModelConfig: image_size must be divisible by patch_size");
  require(c.num_heads > 0 && c.embed_dim % c.num_heads == 0,
          "ModelConfig: embed_dim must be divisible by num_heads");
  require(c.decoder_heads > 0 && c.decoder_embed_dim % c.decoder_heads == 0,
          "ModelConfig: decoder_embed_dim must be divisible by decoder_heads");
  require(c.num_classes >= 1, "ModelConfig: num_classes must be at least 1");
  require(c.depth >= 1, "ModelConfig: depth must be at least 1");
  require(!c.tap_layers.empty(), "ModelConfig: tap_layers must be non-empty");
  require(c.tap_layers.size() == c.decoder_layers,
          "ModelConfig: tap count must equal decoder_layers");
  for (std::size_t i = 0; i < c.tap_layers.size(); ++i) {
    require(c.tap_layers[i] < c.depth, "ModelConfig: tap layer beyond depth");
    if (i > 0) {
      require(c.tap_layers[i] > c.tap_layers[i - 1],
              "ModelConfig: tap_layers must be strictly increasing");
    }
  }
}

// One transformer block's weights. Attention biases are relative-position
// only; there is no absolute positional table anywhere in the model.
template <class T>
struct BlockParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> rel_bias_table;  // [(2G-1)^2, num_heads]
};

template <class T>
struct DecoderLayerParams {
  Tensor<T> feat_ln_gamma, feat_ln_beta;  // tap normalization
  Tensor<T> feat_w, feat_b;               // embed_dim -> decoder_embed_dim
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct ParameterSet {
  ModelConfig config;
  Tensor<T> patch_w, patch_b;  // [patch^2, embed], [embed]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> class_queries;  // [num_classes, decoder_embed_dim]
  std::vector<DecoderLayerParams<T>> decoder;
  Tensor<T> mask_w, mask_b;  // query -> mask embedding projection
  Tensor<T> cls_w, cls_b;    // query -> per-class presence logit

  // Visits every parameter with its name, schedule layer index (patch embed =
  // 0, block i = i+1, decoder and heads = depth+1) and weight-decay exemption
  // (normalization scales/offsets and bias vectors are exempt).
  template <class Fn>
  void for_each(Fn&& fn) {
    const int head_layer = static_cast<int>(config.depth) + 1;
    fn("patch_embed.weight", patch_w, 0, false);
    fn("patch_embed.bias", patch_b, 0, true);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const int layer = static_cast<int>(i) + 1;
      const std::string p = "blocks." + std::to_string(i) + ".";
      fn(p + "ln1.gamma", b.ln1_gamma, layer, true);
      fn(p + "ln1.beta", b.ln1_beta, layer, true);
      fn(p + "attn.wq", b.wq, layer, false);
      fn(p + "attn.bq", b.bq, layer, true);
      fn(p + "attn.wk", b.wk, layer, false);
      fn(p + "attn.bk", b.bk, layer, true);
      fn(p + "attn.wv", b.wv, layer, false);
      fn(p + "attn.bv", b.bv, layer, true);
      fn(p + "attn.wo", b.wo, layer, false);
      fn(p + "attn.bo", b.bo, layer, true);
      fn(p + "attn.rel_bias_table", b.rel_bias_table, layer, false);
      fn(p + "ln2.gamma", b.ln2_gamma, layer, true);
      fn(p + "ln2.beta", b.ln2_beta, layer, true);
      fn(p + "mlp.w1", b.w1, layer, false);
      fn(p + "mlp.b1", b.b1, layer, true);
      fn(p + "mlp.w2", b.w2, layer, false);
      fn(p + "mlp.b2", b.b2, layer, true);
    }
    fn("decoder.class_queries", class_queries, head_layer, false);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      auto& d = decoder[i];
      const std::string p = "decoder." + std::to_string(i) + ".";
      fn(p + "feat_ln.gamma", d.feat_ln_gamma, head_layer, true);
      fn(p + "feat_ln.beta", d.feat_ln_beta, head_layer, true);
      fn(p + "feat_proj.weight", d.feat_w, head_layer, false);
      fn(p + "feat_proj.bias", d.feat_b, head_layer, true);
      fn(p + "ln1.gamma", d.ln1_gamma, head_layer, true);
      fn(p + "ln1.beta", d.ln1_beta, head_layer, true);
      fn(p + "attn.wq", d.wq, head_layer, false);
      fn(p + "attn.bq", d.bq, head_layer, true);
      fn(p + "attn.wk", d.wk, head_layer, false);
      fn(p + "attn.bk", d.bk, head_layer, true);
      fn(p + "attn.wv", d.wv, head_layer, false);
      fn(p + "attn.bv", d.bv, head_layer, true);
      fn(p + "attn.wo", d.wo, head_layer, false);
      fn(p + "attn.bo", d.bo, head_layer, true);
      fn(p + "ln2.gamma", d.ln2_gamma, head_layer, true);
      fn(p + "ln2.beta", d.ln2_beta, head_layer, true);
      fn(p + "mlp.w1", d.w1, head_layer, false);
      fn(p + "mlp.b1", d.b1, head_layer, true);
      fn(p + "mlp.w2", d.w2, head_layer, false);
      fn(p + "mlp.b2", d.b2, head_layer, true);
    }
    fn("head.mask_proj.weight", mask_w, head_layer, false);
    fn("head.mask_proj.bias", mask_b, head_layer, true);
    fn("head.cls.weight", cls_w, head_layer, false);
    fn("head.cls.bias", cls_b, head_layer, true);
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<ParameterSet*>(this)->for_each(
        [&](const std::string& name, Tensor<T>& t, int layer, bool exempt) {
          fn(name, static_cast<const Tensor<T>&>(t), layer, exempt);
        });
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t, int, bool) { n += t.size(); });
    return n;
  }
};

namespace detail {

template <class T>
void init_linear(Tensor<T>& w, Rng& rng) {
  for (auto& x : w.v) x = static_cast<T>(rng.trunc_normal(0.02));
}

template <class T>
BlockParams<T> make_block(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, m = c.mlp_dim();
  BlockParams<T> b;
  b.ln1_gamma = Tensor<T>({d}, T(1));
  b.ln1_beta = Tensor<T>({d});
  b.wq = Tensor<T>({d, d});
  b.bq = Tensor<T>({d});
  b.wk = Tensor<T>({d, d});
  b.bk = Tensor<T>({d});
  b.wv = Tensor<T>({d, d});
  b.bv = Tensor<T>({d});
  b.wo = Tensor<T>({d, d});
  b.bo = Tensor<T>({d});
  b.ln2_gamma = Tensor<T>({d}, T(1));
  b.ln2_beta = Tensor<T>({d});
  b.w1 = Tensor<T>({d, m});
  b.b1 = Tensor<T>({m});
  b.w2 = Tensor<T>({m, d});
  b.b2 = Tensor<T>({d});
  b.rel_bias_table = Tensor<T>({c.bias_table_rows(), c.num_heads});
  return b;
}

template <class T>
DecoderLayerParams<T> make_decoder_layer(const ModelConfig& c) {
  const std::size_t e = c.embed_dim, d = c.decoder_embed_dim, m = c.decoder_mlp_dim();
  DecoderLayerParams<T> l;
  l.feat_ln_gamma = Tensor<T>({e}, T(1));
  l.feat_ln_beta = Tensor<T>({e});
  l.feat_w = Tensor<T>({e, d});
  l.feat_b = Tensor<T>({d});
  l.ln1_gamma = Tensor<T>({d}, T(1));
  l.ln1_beta = Tensor<T>({d});
  l.wq = Tensor<T>({d, d});
  l.bq = Tensor<T>({d});
  l.wk = Tensor<T>({d, d});
  l.bk = Tensor<T>({d});
  l.wv = Tensor<T>({d, d});
  l.bv = Tensor<T>({d});
  l.wo = Tensor<T>({d, d});
  l.bo = Tensor<T>({d});
  l.ln2_gamma = Tensor<T>({d}, T(1));
  l.ln2_beta = Tensor<T>({d});
  l.w1 = Tensor<T>({d, m});
  l.b1 = Tensor<T>({m});
  l.w2 = Tensor<T>({m, d});
  l.b2 = Tensor<T>({d});
  return l;
}

}  // namespace detail

// Allocates every tensor at its configured shape, zero-filled. Used both by
// fresh initialization and by checkpoint loading (which then validates shapes).
template <class T>
ParameterSet<T> make_parameter_skeleton(const ModelConfig& config) {
  validate_config(config);
  ParameterSet<T> p;
  p.config = config;
  p.patch_w = Tensor<T>({config.patch_size * config.patch_size, config.embed_dim});
  p.patch_b = Tensor<T>({config.embed_dim});
  for (std::size_t i = 0; i < config.depth; ++i) p.blocks.push_back(detail::make_block<T>(config));
  p.class_queries = Tensor<T>({config.num_classes, config.decoder_embed_dim});
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    p.decoder.push_back(detail::make_decoder_layer<T>(config));
  }
  p.mask_w = Tensor<T>({config.decoder_embed_dim, config.decoder_embed_dim});
  p.mask_b = Tensor<T>({config.decoder_embed_dim});
  p.cls_w = Tensor<T>({config.decoder_embed_dim, 1});
  p.cls_b = Tensor<T>({1});
  return p;
}

// Truncated-normal (sigma 0.02) projections, unit normalization scales, zero
// biases and zero relative-position tables.
template <class T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet<T> p = make_parameter_skeleton<T>(config);
  Rng rng(derive_seed(seed, {0x1217u}));
  p.for_each([&](const std::string& name, Tensor<T>& t, int, bool) {
    const bool projection = name.ends_with("weight") || name.ends_with("wq") ||
                            name.ends_with("wk") || name.ends_with("wv") ||
                            name.ends_with("wo") || name.ends_with("w1") ||
                            name.ends_with("w2") || name.ends_with("class_queries");
    if (projection) detail::init_linear(t, rng);
  });
  return p;
}

// Relative-position pair index: entry [i*N + j] addresses the bias-table row
// for the 2-D offset between token grid positions i (query) and j (key).
inline std::shared_ptr<const std::vector<std::uint32_t>> relative_position_index(
    std::size_t grid) {
  const std::size_t n = grid * grid;
  const std::size_t span = 2 * grid - 1;
  auto idx = std::make_shared<std::vector<std::uint32_t>>(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const long long ri = static_cast<long long>(i / grid);
    const long long ci = static_cast<long long>(i % grid);
    for (std::size_t j = 0; j < n; ++j) {
      const long long rj = static_cast<long long>(j / grid);
      const long long cj = static_cast<long long>(j % grid);
      const long long dr = rj - ri + static_cast<long long>(grid) - 1;
      const long long dc = cj - ci + static_cast<long long>(grid) - 1;
      (*idx)[i * n + j] = static_cast<std::uint32_t>(dr * static_cast<long long>(span) + dc);
    }
  }
  return idx;
}

// Materialized [N, N] bias matrix for one head; the oracle-facing form of the
// table lookup.
template <class T>
Tensor<T> relative_bias_matrix(const Tensor<T>& table, std::size_t grid, std::size_t head) {
  const std::size_t n = grid * grid;
  const std::size_t span = 2 * grid - 1;
  if (table.rows() != span * span) throw ValidationError("relative_bias_matrix: table size mismatch");
  if (head >= table.cols()) throw ValidationError("relative_bias_matrix: head out of range");
  const auto idx = relative_position_index(grid);
  Tensor<T> out({n, n});
  for (std::size_t k = 0; k < n * n; ++k) out.v[k] = table.at((*idx)[k], head);
  return out;
}

// Flattens non-overlapping patches row-major; tokens are ordered by patch row
// then patch column.
template <class T>
Tensor<T> build_patch_matrix(const GrayImage& image, std::size_t patch) {
  if (image.height != image.width || image.height % patch != 0) {
    throw ValidationError("build_patch_matrix: image incompatible with patch size");
  }
  const std::size_t grid = image.height / patch;
  Tensor<T> out({grid * grid, patch * patch});
  for (std::size_t py = 0; py < grid; ++py) {
    for (std::size_t px = 0; px < grid; ++px) {
      T* dst = out.v.data() + (py * grid + px) * patch * patch;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          dst[y * patch + x] = static_cast<T>(image.at(py * patch + y, px * patch + x));
        }
      }
    }
  }
  return out;
}

}  // namespace eusseg
