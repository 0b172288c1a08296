#pragma once

#include <map>
#include <memory>
#include <span>
#include <vector>

#include "eusseg/autograd.hpp"
#include "eusseg/model.hpp"
#include "eusseg/preprocess.hpp"

namespace eusseg {

// Forward passes are written once against a generic context: Graph<T> records
// a tape for training, Eval<T> runs the same math without one.

template <class Ctx, class T>
class BoundModel {
 public:
  using Var = typename Ctx::Var;

  struct Block {
    Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2, rel_table;
  };
  struct DecoderLayer {
    Var feat_ln_g, feat_ln_b, feat_w, feat_b, ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo,
        ln2_g, ln2_b, w1, b1, w2, b2;
  };

  BoundModel(Ctx& ctx, const ParameterSet<T>& p) : ctx_(ctx) {
    patch_w = reg(p.patch_w);
    patch_b = reg(p.patch_b);
    for (const auto& b : p.blocks) {
      blocks.push_back(Block{reg(b.ln1_gamma), reg(b.ln1_beta), reg(b.wq), reg(b.bq),
                             reg(b.wk), reg(b.bk), reg(b.wv), reg(b.bv), reg(b.wo), reg(b.bo),
                             reg(b.ln2_gamma), reg(b.ln2_beta), reg(b.w1), reg(b.b1),
                             reg(b.w2), reg(b.b2), reg(b.rel_bias_table)});
    }
    class_queries = reg(p.class_queries);
    for (const auto& d : p.decoder) {
      decoder.push_back(DecoderLayer{reg(d.feat_ln_gamma), reg(d.feat_ln_beta), reg(d.feat_w),
                                     reg(d.feat_b), reg(d.ln1_gamma), reg(d.ln1_beta), reg(d.wq),
                                     reg(d.bq), reg(d.wk), reg(d.bk), reg(d.wv), reg(d.bv),
                                     reg(d.wo), reg(d.bo), reg(d.ln2_gamma), reg(d.ln2_beta),
                                     reg(d.w1), reg(d.b1), reg(d.w2), reg(d.b2)});
    }
    mask_w = reg(p.mask_w);
    mask_b = reg(p.mask_b);
    cls_w = reg(p.cls_w);
    cls_b = reg(p.cls_b);
  }

  // Var associated with a parameter tensor, identified by address.
  Var var_of(const Tensor<T>& t) const { return vars_.at(static_cast<const void*>(&t)); }

  Var patch_w, patch_b, class_queries, mask_w, mask_b, cls_w, cls_b;
  std::vector<Block> blocks;
  std::vector<DecoderLayer> decoder;

 private:
  Var reg(const Tensor<T>& t) {
    Var v = ctx_.param(t);
    vars_[static_cast<const void*>(&t)] = v;
    return v;
  }

  Ctx& ctx_;
  std::map<const void*, Var> vars_;
};

// Precomputed per-config lookup structures shared across a forward pass.
struct ForwardPlan {
  std::shared_ptr<const std::vector<std::uint32_t>> rel_index;
  std::shared_ptr<const ag::BilinearPlan> upsample;
};

inline ForwardPlan make_forward_plan(const ModelConfig& c) {
  ForwardPlan p;
  p.rel_index = relative_position_index(c.grid_size());
  p.upsample = std::make_shared<const ag::BilinearPlan>(
      ag::make_bilinear_plan(c.grid_size(), c.grid_size(), c.image_size, c.image_size));
  return p;
}

namespace detail {

// Multi-head attention core. q_in rows attend over kv_in rows; bias_all, when
// present, is the gathered [Nq*Nk, heads] relative-position table.
template <class Ctx>
typename Ctx::Var multihead_attention(Ctx& ctx, typename Ctx::Var q_in, typename Ctx::Var kv_in,
                                      std::size_t heads, std::size_t head_dim,
                                      typename Ctx::Var wq, typename Ctx::Var bq,
                                      typename Ctx::Var wk, typename Ctx::Var bk,
                                      typename Ctx::Var wv, typename Ctx::Var bv,
                                      typename Ctx::Var wo, typename Ctx::Var bo,
                                      const typename Ctx::Var* bias_all, std::size_t nq,
                                      std::size_t nk) {
  using Var = typename Ctx::Var;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var q = ctx.add_rowvec(ctx.matmul(q_in, wq), bq);
  Var k = ctx.add_rowvec(ctx.matmul(kv_in, wk), bk);
  Var v = ctx.add_rowvec(ctx.matmul(kv_in, wv), bv);
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ctx.slice_cols(q, h * head_dim, (h + 1) * head_dim);
    Var kh = ctx.slice_cols(k, h * head_dim, (h + 1) * head_dim);
    Var vh = ctx.slice_cols(v, h * head_dim, (h + 1) * head_dim);
    Var scores = ctx.scale(ctx.matmul(qh, kh, false, true), inv_sqrt);
    if (bias_all) {
      Var bias = ctx.reshape(ctx.slice_cols(*bias_all, h, h + 1), {nq, nk});
      scores = ctx.add(scores, bias);
    }
    head_outs.push_back(ctx.matmul(ctx.softmax_rows(scores), vh));
  }
  return ctx.add_rowvec(ctx.matmul(ctx.concat_cols(head_outs), wo), bo);
}

template <class Ctx>
typename Ctx::Var mlp_block(Ctx& ctx, typename Ctx::Var x, typename Ctx::Var w1,
                            typename Ctx::Var b1, typename Ctx::Var w2, typename Ctx::Var b2) {
  return ctx.add_rowvec(ctx.matmul(ctx.gelu(ctx.add_rowvec(ctx.matmul(x, w1), b1)), w2), b2);
}

}  // namespace detail

// Linear embedding of non-overlapping patches: [N, embed_dim] tokens.
template <class Ctx, class T>
typename Ctx::Var patch_embed_tokens(Ctx& ctx, const BoundModel<Ctx, T>& m,
                                     const ModelConfig& cfg, const GrayImage& image) {
  if (image.height != cfg.image_size || image.width != cfg.image_size) {
    throw ValidationError("patch_embed: image shape does not match ModelConfig");
  }
  auto patches = ctx.constant(build_patch_matrix<T>(image, cfg.patch_size));
  return ctx.add_rowvec(ctx.matmul(patches, m.patch_w), m.patch_b);
}

// Pre-normalization transformer blocks with per-head additive relative
// position bias; returns block outputs at the configured tap layers.
template <class Ctx, class T>
std::vector<typename Ctx::Var> backbone_taps(Ctx& ctx, const BoundModel<Ctx, T>& m,
                                             const ModelConfig& cfg, const ForwardPlan& plan,
                                             typename Ctx::Var tokens) {
  using Var = typename Ctx::Var;
  const std::size_t n = cfg.token_count();
  std::vector<Var> taps;
  Var x = tokens;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const auto& blk = m.blocks[i];
    Var normed = ctx.layer_norm(x, blk.ln1_g, blk.ln1_b);
    Var bias_all = ctx.gather_rows(blk.rel_table, plan.rel_index);
    Var attn = detail::multihead_attention(ctx, normed, normed, cfg.num_heads, cfg.head_dim(),
                                           blk.wq, blk.bq, blk.wk, blk.bk, blk.wv, blk.bv,
                                           blk.wo, blk.bo, &bias_all, n, n);
    x = ctx.add(x, attn);
    Var normed2 = ctx.layer_norm(x, blk.ln2_g, blk.ln2_b);
    x = ctx.add(x, detail::mlp_block(ctx, normed2, blk.w1, blk.b1, blk.w2, blk.b2));
    for (std::size_t t : cfg.tap_layers) {
      if (t == i) taps.push_back(x);
    }
  }
  return taps;
}

// Plain dot-product similarity between mask-projected queries and per-pixel
// feature projections: [num_classes, N] logits on the token grid.
template <class Ctx>
typename Ctx::Var mask_similarity(Ctx& ctx, typename Ctx::Var queries,
                                  typename Ctx::Var pixel_features) {
  return ctx.matmul(queries, pixel_features, false, true);
}

template <class Ctx>
struct LayerHeads {
  typename Ctx::Var class_logits;  // [1, num_classes]
  typename Ctx::Var mask_logits;   // [num_classes, image.pixels] full resolution
};

// Class-query cross-attention decoder. The shallowest tap feeds the first
// layer; each layer refines the queries and emits class + mask logits.
template <class Ctx, class T>
std::vector<LayerHeads<Ctx>> atm_decode_sample(Ctx& ctx, const BoundModel<Ctx, T>& m,
                                               const ModelConfig& cfg, const ForwardPlan& plan,
                                               const std::vector<typename Ctx::Var>& taps) {
  using Var = typename Ctx::Var;
  if (taps.size() != cfg.decoder_layers) {
    throw ValidationError("atm_decode: tap count does not match decoder layers");
  }
  const std::size_t n = cfg.token_count();
  const std::size_t c = cfg.num_classes;
  std::vector<LayerHeads<Ctx>> out;
  Var queries = m.class_queries;
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const auto& dec = m.decoder[l];
    Var feat = ctx.layer_norm(taps[l], dec.feat_ln_g, dec.feat_ln_b);
    feat = ctx.add_rowvec(ctx.matmul(feat, dec.feat_w), dec.feat_b);  // [N, dec_dim]

    Var normed = ctx.layer_norm(queries, dec.ln1_g, dec.ln1_b);
    Var attn = detail::multihead_attention(ctx, normed, feat, cfg.decoder_heads,
                                           cfg.decoder_head_dim(), dec.wq, dec.bq, dec.wk,
                                           dec.bk, dec.wv, dec.bv, dec.wo, dec.bo, nullptr, c, n);
    queries = ctx.add(queries, attn);
    Var normed2 = ctx.layer_norm(queries, dec.ln2_g, dec.ln2_b);
    queries = ctx.add(queries, detail::mlp_block(ctx, normed2, dec.w1, dec.b1, dec.w2, dec.b2));

    LayerHeads<Ctx> heads;
    heads.class_logits = ctx.reshape(
        ctx.add_rowvec(ctx.matmul(queries, m.cls_w), m.cls_b), {std::size_t(1), c});
    Var mask_embed = ctx.add_rowvec(ctx.matmul(queries, m.mask_w), m.mask_b);
    heads.mask_logits = ctx.upsample_bilinear(mask_similarity(ctx, mask_embed, feat),
                                              plan.upsample);
    out.push_back(heads);
  }
  return out;
}

template <class Ctx, class T>
std::vector<LayerHeads<Ctx>> forward_sample(Ctx& ctx, const BoundModel<Ctx, T>& m,
                                            const ModelConfig& cfg, const ForwardPlan& plan,
                                            const GrayImage& image) {
  auto tokens = patch_embed_tokens(ctx, m, cfg, image);
  auto taps = backbone_taps(ctx, m, cfg, plan, tokens);
  return atm_decode_sample(ctx, m, cfg, plan, taps);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossTerms {
  double classification = 0.0;
  double mask_bce = 0.0;
  double mask_dice = 0.0;
};

struct LossBreakdown {
  std::vector<LossTerms> per_layer;  // summed over the batch, one entry per decoder layer
  double total = 0.0;                // batch mean of the summed per-layer losses
};

inline constexpr double kDiceSmooth = 1.0;

// Per decoder layer: class cross-entropy + (BCE + soft Dice) on the
// foreground-channel mask logits, all unit-weighted. The image-level class
// target is foreground presence.
template <class Ctx, class T>
typename Ctx::Var atm_loss_sample(Ctx& ctx, const std::vector<LayerHeads<Ctx>>& layers,
                                  const Tensor<T>& gt_flat, LossBreakdown* breakdown) {
  using Var = typename Ctx::Var;
  double gt_sum = 0.0;
  for (const auto& v : gt_flat.v) gt_sum += static_cast<double>(v);
  const std::size_t target_class = gt_sum > 0.0 ? 1 : 0;
  auto gt = std::make_shared<const Tensor<T>>(gt_flat);

  if (breakdown && breakdown->per_layer.size() < layers.size()) {
    breakdown->per_layer.resize(layers.size());
  }

  Var total;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t classes = ctx.value(layers[l].mask_logits).rows();
    const std::size_t fg_row = classes > 1 ? 1 : 0;
    Var ce = ctx.softmax_ce(layers[l].class_logits, std::min(target_class, classes - 1));
    Var fg = ctx.slice_rows(layers[l].mask_logits, fg_row, fg_row + 1);
    Var bce = ctx.bce_logits_mean(fg, gt);
    Var p = ctx.sigmoid(fg);
    Var numer = ctx.affine(ctx.sum_all(ctx.mul(p, ctx.constant(gt_flat))), 2.0, kDiceSmooth);
    Var denom = ctx.affine(ctx.sum_all(p), 1.0, gt_sum + kDiceSmooth);
    Var dice = ctx.affine(ctx.div_scalar(numer, denom), -1.0, 1.0);
    if (breakdown) {
      breakdown->per_layer[l].classification += ctx.scalar_value(ce);
      breakdown->per_layer[l].mask_bce += ctx.scalar_value(bce);
      breakdown->per_layer[l].mask_dice += ctx.scalar_value(dice);
    }
    Var layer_loss = ctx.add(ce, ctx.add(bce, dice));
    total = (l == 0) ? layer_loss : ctx.add(total, layer_loss);
  }
  return total;
}

template <class T>
Tensor<T> mask_to_flat(const BinaryMask& mask) {
  Tensor<T> t({std::size_t(1), mask.pix.size()});
  for (std::size_t i = 0; i < mask.pix.size(); ++i) t.v[i] = static_cast<T>(mask.pix[i]);
  return t;
}

// ---------------------------------------------------------------------------
// Public tensor-level API (full precision)
// ---------------------------------------------------------------------------

struct DecoderLayerOutput {
  Tensor<double> class_logits;  // [batch, num_classes]
  Tensor<double> mask_logits;   // [batch, num_classes, H, W]
};

struct DecoderOutput {
  std::vector<DecoderLayerOutput> layers;
  std::size_t image_size = 0;
  std::size_t num_classes = 0;
};

struct LogitsMap {
  Tensor<double> values;  // [batch, num_classes, H, W]
};

template <class T>
Tensor<double> patch_embed(const ParameterSet<T>& params, const GrayImage& image) {
  Eval<T> ctx;
  BoundModel<Eval<T>, T> bound(ctx, params);
  auto tokens = patch_embed_tokens(ctx, bound, params.config, image);
  return tensor_cast<double>(ctx.value(tokens));
}

template <class T>
std::vector<Tensor<double>> backbone_forward(const ParameterSet<T>& params,
                                             const GrayImage& image) {
  Eval<T> ctx;
  BoundModel<Eval<T>, T> bound(ctx, params);
  const ForwardPlan plan = make_forward_plan(params.config);
  auto tokens = patch_embed_tokens(ctx, bound, params.config, image);
  auto taps = backbone_taps(ctx, bound, params.config, plan, tokens);
  std::vector<Tensor<double>> out;
  for (auto& t : taps) {
    Tensor<double> feat = tensor_cast<double>(ctx.value(t));
    if (!all_finite(feat)) throw RuntimeFailure("backbone_forward: non-finite activations");
    out.push_back(std::move(feat));
  }
  return out;
}

template <class T>
DecoderOutput atm_forward(const ParameterSet<T>& params, std::span<const GrayImage> batch) {
  const ModelConfig& cfg = params.config;
  const std::size_t hw = cfg.image_size * cfg.image_size;
  DecoderOutput out;
  out.image_size = cfg.image_size;
  out.num_classes = cfg.num_classes;
  out.layers.resize(cfg.decoder_layers);
  for (auto& l : out.layers) {
    l.class_logits = Tensor<double>({batch.size(), cfg.num_classes});
    l.mask_logits =
        Tensor<double>({batch.size(), cfg.num_classes, cfg.image_size, cfg.image_size});
  }
  const ForwardPlan plan = make_forward_plan(cfg);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Eval<T> ctx;
    BoundModel<Eval<T>, T> bound(ctx, params);
    auto layers = forward_sample(ctx, bound, cfg, plan, batch[b]);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Tensor<T>& cls = ctx.value(layers[l].class_logits);
      const Tensor<T>& msk = ctx.value(layers[l].mask_logits);
      if (!all_finite(cls) || !all_finite(msk)) {
        throw RuntimeFailure("atm_forward: non-finite activations");
      }
      for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        out.layers[l].class_logits.v[b * cfg.num_classes + c] = static_cast<double>(cls.v[c]);
        double* dst = out.layers[l].mask_logits.v.data() + (b * cfg.num_classes + c) * hw;
        const T* src = msk.v.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<double>(src[i]);
      }
    }
  }
  return out;
}

// Final map: last layer's mask logits, each class channel weighted by its
// softmax class probability.
inline LogitsMap assemble_logits(const DecoderOutput& out) {
  if (out.layers.empty()) throw ValidationError("assemble_logits: empty decoder output");
  const auto& last = out.layers.back();
  const std::size_t batch = last.class_logits.rows();
  const std::size_t classes = out.num_classes;
  const std::size_t hw = out.image_size * out.image_size;
  LogitsMap map;
  map.values = Tensor<double>({batch, classes, out.image_size, out.image_size});
  for (std::size_t b = 0; b < batch; ++b) {
    // softmax over the class axis
    double m = last.class_logits.v[b * classes];
    for (std::size_t c = 1; c < classes; ++c) {
      m = std::max(m, last.class_logits.v[b * classes + c]);
    }
    double z = 0.0;
    std::vector<double> prob(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      prob[c] = std::exp(last.class_logits.v[b * classes + c] - m);
      z += prob[c];
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const double w = prob[c] / z;
      const double* src = last.mask_logits.v.data() + (b * classes + c) * hw;
      double* dst = map.values.v.data() + (b * classes + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = w * src[i];
    }
  }
  if (!all_finite(map.values)) throw RuntimeFailure("assemble_logits: non-finite logits");
  return map;
}

// Per-pixel argmax over the class axis, ties to background. No filtering or
// post-processing of any kind happens here or downstream of here.
inline std::vector<BinaryMask> predict(const LogitsMap& map) {
  const auto& shape = map.values.shape;
  if (shape.size() != 4 || shape[1] != 2) {
    throw ValidationError("predict: expected [batch, 2, H, W] logits");
  }
  const std::size_t batch = shape[0], h = shape[2], w = shape[3];
  const std::size_t hw = h * w;
  std::vector<BinaryMask> masks;
  masks.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    BinaryMask m(h, w);
    const double* bg = map.values.v.data() + (b * 2 + 0) * hw;
    const double* fg = map.values.v.data() + (b * 2 + 1) * hw;
    for (std::size_t i = 0; i < hw; ++i) m.pix[i] = fg[i] > bg[i] ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

// Loss evaluated from decoder outputs alone (batch mean), reusing the same
// builder the training tape uses.
inline LossBreakdown atm_loss(const DecoderOutput& out, std::span<const BinaryMask> gts) {
  const std::size_t batch = out.layers.at(0).class_logits.rows();
  if (gts.size() != batch) throw ValidationError("atm_loss: batch size mismatch");
  const std::size_t classes = out.num_classes;
  const std::size_t hw = out.image_size * out.image_size;
  LossBreakdown bd;
  double total = 0.0;
  Eval<double> ctx;
  for (std::size_t b = 0; b < batch; ++b) {
    check_binary(gts[b], "atm_loss");
    if (gts[b].height != out.image_size || gts[b].width != out.image_size) {
      throw ValidationError("atm_loss: ground-truth mask shape mismatch");
    }
    std::vector<LayerHeads<Eval<double>>> layers;
    for (const auto& l : out.layers) {
      Tensor<double> cls({std::size_t(1), classes});
      for (std::size_t c = 0; c < classes; ++c) cls.v[c] = l.class_logits.v[b * classes + c];
      Tensor<double> msk({classes, hw});
      std::copy(l.mask_logits.v.data() + b * classes * hw,
                l.mask_logits.v.data() + (b + 1) * classes * hw, msk.v.data());
      layers.push_back(LayerHeads<Eval<double>>{ctx.constant(std::move(cls)),
                                                ctx.constant(std::move(msk))});
    }
    auto loss = atm_loss_sample(ctx, layers, mask_to_flat<double>(gts[b]), &bd);
    total += ctx.scalar_value(loss);
  }
  bd.total = total / static_cast<double>(batch);
  return bd;
}

// Convenience: full forward + loss for a batch, no tape.
template <class T>
LossBreakdown atm_loss_value(const ParameterSet<T>& params, std::span<const GrayImage> images,
                             std::span<const BinaryMask> gts) {
  if (images.size() != gts.size() || images.empty()) {
    throw ValidationError("atm_loss_value: bad batch");
  }
  const ForwardPlan plan = make_forward_plan(params.config);
  LossBreakdown bd;
  double total = 0.0;
  for (std::size_t b = 0; b < images.size(); ++b) {
    Eval<T> ctx;
    BoundModel<Eval<T>, T> bound(ctx, params);
    auto layers = forward_sample(ctx, bound, params.config, plan, images[b]);
    auto loss = atm_loss_sample(ctx, layers, mask_to_flat<T>(gts[b]), &bd);
    total += ctx.scalar_value(loss);
  }
  bd.total = total / static_cast<double>(images.size());
  return bd;
}

// Named gradient store aligned with ParameterSet::for_each order.
struct GradStore {
  std::vector<std::string> names;
  std::vector<Tensor<double>> grads;

  Tensor<double>* find(const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return &grads[i];
    }
    return nullptr;
  }
};

// Batch-mean loss with gradients. loss_scale multiplies the backward seed
// (used by reduced-precision training); gradients are already un-scaled here.
template <class T>
LossBreakdown atm_loss_and_gradients(const ParameterSet<T>& params,
                                     std::span<const GrayImage> images,
                                     std::span<const BinaryMask> gts, GradStore& store,
                                     double loss_scale = 1.0) {
  if (images.size() != gts.size() || images.empty()) {
    throw ValidationError("atm_loss_and_gradients: bad batch");
  }
  const ForwardPlan plan = make_forward_plan(params.config);
  Graph<T> graph;
  BoundModel<Graph<T>, T> bound(graph, params);
  LossBreakdown bd;
  typename Graph<T>::Var total;
  for (std::size_t b = 0; b < images.size(); ++b) {
    auto layers = forward_sample(graph, bound, params.config, plan, images[b]);
    auto loss = atm_loss_sample(graph, layers, mask_to_flat<T>(gts[b]), &bd);
    total = (b == 0) ? loss : graph.add(total, loss);
  }
  total = graph.affine(total, 1.0 / static_cast<double>(images.size()), 0.0);
  bd.total = graph.scalar_value(total);
  graph.backward(total, static_cast<T>(loss_scale));

  const double inv_scale = 1.0 / loss_scale;
  store.names.clear();
  store.grads.clear();
  params.for_each([&](const std::string& name, const Tensor<T>& t, int, bool) {
    const Tensor<T>& g = graph.grad(bound.var_of(t));
    Tensor<double> gd;
    if (g.v.empty()) {
      gd = Tensor<double>(t.shape);  // parameter unused by this graph
    } else {
      gd = tensor_cast<double>(g);
      if (inv_scale != 1.0) {
        for (auto& x : gd.v) x *= inv_scale;
      }
    }
    store.names.push_back(name);
    store.grads.push_back(std::move(gd));
  });
  return bd;
}

}  // namespace eusseg
