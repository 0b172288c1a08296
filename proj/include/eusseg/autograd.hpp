#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "eusseg/tensor.hpp"

namespace eusseg {

// Reverse-mode tape over Tensor<T>. Ops execute eagerly; backward closures are
// replayed in reverse creation order, which is a valid topological order since
// every op only references earlier nodes.
//
// Eval<T> below exposes the same op surface without recording anything, so
// network code written against a generic Ctx runs in either mode.

namespace ag {

inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// Shared forward kernels. Each returns the result tensor; backward logic lives
// in Graph so Eval stays allocation-minimal.

template <class T>
Tensor<T> k_add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw RuntimeFailure("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

template <class T>
Tensor<T> k_mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw RuntimeFailure("mul: shape mismatch");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

template <class T>
Tensor<T> k_add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
  if (v.size() != m.cols()) throw RuntimeFailure("add_rowvec: width mismatch");
  Tensor<T> out = m;
  const std::size_t r = m.rows(), c = m.cols();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.v[i * c + j] += v.v[j];
  }
  return out;
}

template <class T>
Tensor<T> k_affine(const Tensor<T>& a, double k, double c) {
  Tensor<T> out = a;
  for (auto& x : out.v) x = static_cast<T>(k * static_cast<double>(x) + c);
  return out;
}

template <class T>
Tensor<T> k_gelu(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& x : out.v) x = static_cast<T>(gelu_value(static_cast<double>(x)));
  return out;
}

template <class T>
Tensor<T> k_sigmoid(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& x : out.v) {
    x = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
  }
  return out;
}

template <class T>
Tensor<T> k_softmax_rows(const Tensor<T>& a) {
  Tensor<T> out = a;
  const std::size_t r = a.rows(), c = a.cols();
  for (std::size_t i = 0; i < r; ++i) {
    T* row = out.v.data() + i * c;
    T m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - m));
      row[j] = static_cast<T>(e);
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) / z);
  }
  return out;
}

struct LayerNormCache {
  std::vector<double> inv_std;  // per row
};

template <class T>
Tensor<T> k_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       double eps, Tensor<T>* xhat_out, LayerNormCache* cache) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c) throw RuntimeFailure("layer_norm: scale width mismatch");
  Tensor<T> out = x;
  if (xhat_out) *xhat_out = Tensor<T>({r, c});
  if (cache) cache->inv_std.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.v.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += static_cast<double>(row[j]);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = static_cast<double>(row[j]) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (cache) cache->inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (static_cast<double>(row[j]) - mu) * inv;
      if (xhat_out) xhat_out->v[i * c + j] = static_cast<T>(xh);
      out.v[i * c + j] = static_cast<T>(static_cast<double>(gamma.v[j]) * xh +
                                        static_cast<double>(beta.v[j]));
    }
  }
  return out;
}

template <class T>
Tensor<T> k_slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  const std::size_t r = a.rows(), c = a.cols();
  if (c0 >= c1 || c1 > c) throw RuntimeFailure("slice_cols: bad range");
  Tensor<T> out({r, c1 - c0});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(a.v.data() + i * c + c0, a.v.data() + i * c + c1, out.v.data() + i * (c1 - c0));
  }
  return out;
}

template <class T>
Tensor<T> k_slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r0 >= r1 || r1 > r) throw RuntimeFailure("slice_rows: bad range");
  Tensor<T> out({r1 - r0, c});
  std::copy(a.v.data() + r0 * c, a.v.data() + r1 * c, out.v.data());
  return out;
}

template <class T>
Tensor<T> k_concat_cols(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw RuntimeFailure("concat_cols: no inputs");
  const std::size_t r = parts[0]->rows();
  std::size_t total = 0;
  for (const auto* p : parts) {
    if (p->rows() != r) throw RuntimeFailure("concat_cols: row mismatch");
    total += p->cols();
  }
  Tensor<T> out({r, total});
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t off = 0;
    for (const auto* p : parts) {
      const std::size_t c = p->cols();
      std::copy(p->v.data() + i * c, p->v.data() + (i + 1) * c, out.v.data() + i * total + off);
      off += c;
    }
  }
  return out;
}

template <class T>
Tensor<T> k_gather_rows(const Tensor<T>& table, const std::vector<std::uint32_t>& idx) {
  const std::size_t c = table.cols();
  Tensor<T> out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table.rows()) throw RuntimeFailure("gather_rows: index out of range");
    std::copy(table.v.data() + idx[i] * c, table.v.data() + (idx[i] + 1) * c,
              out.v.data() + i * c);
  }
  return out;
}

// Bilinear interpolation plan from a (gh x gw) grid to (oh x ow), half-pixel
// centers, edge clamped. Shared by forward gather and backward scatter.
struct BilinearPlan {
  std::size_t gh, gw, oh, ow;
  std::vector<std::size_t> i00, i01, i10, i11;  // source offsets per output pixel
  std::vector<double> w00, w01, w10, w11;
};

inline BilinearPlan make_bilinear_plan(std::size_t gh, std::size_t gw, std::size_t oh,
                                       std::size_t ow) {
  BilinearPlan p{gh, gw, oh, ow, {}, {}, {}, {}, {}, {}, {}, {}};
  const std::size_t n = oh * ow;
  p.i00.resize(n); p.i01.resize(n); p.i10.resize(n); p.i11.resize(n);
  p.w00.resize(n); p.w01.resize(n); p.w10.resize(n); p.w11.resize(n);
  const double sy = static_cast<double>(gh) / static_cast<double>(oh);
  const double sx = static_cast<double>(gw) / static_cast<double>(ow);
  for (std::size_t y = 0; y < oh; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::max(fy, 0.0);
    std::size_t y0 = std::min(static_cast<std::size_t>(fy), gh - 1);
    const std::size_t y1 = std::min(y0 + 1, gh - 1);
    const double wy = std::min(fy - static_cast<double>(y0), 1.0);
    for (std::size_t x = 0; x < ow; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::max(fx, 0.0);
      std::size_t x0 = std::min(static_cast<std::size_t>(fx), gw - 1);
      const std::size_t x1 = std::min(x0 + 1, gw - 1);
      const double wx = std::min(fx - static_cast<double>(x0), 1.0);
      const std::size_t o = y * ow + x;
      p.i00[o] = y0 * gw + x0;
      p.i01[o] = y0 * gw + x1;
      p.i10[o] = y1 * gw + x0;
      p.i11[o] = y1 * gw + x1;
      p.w00[o] = (1.0 - wy) * (1.0 - wx);
      p.w01[o] = (1.0 - wy) * wx;
      p.w10[o] = wy * (1.0 - wx);
      p.w11[o] = wy * wx;
    }
  }
  return p;
}

// x: [channels, gh*gw] -> [channels, oh*ow]
template <class T>
Tensor<T> k_upsample_bilinear(const Tensor<T>& x, const BilinearPlan& p) {
  if (x.cols() != p.gh * p.gw) throw RuntimeFailure("upsample: grid size mismatch");
  const std::size_t ch = x.rows();
  const std::size_t n = p.oh * p.ow;
  Tensor<T> out({ch, n});
  for (std::size_t c = 0; c < ch; ++c) {
    const T* src = x.v.data() + c * x.cols();
    T* dst = out.v.data() + c * n;
    for (std::size_t o = 0; o < n; ++o) {
      dst[o] = static_cast<T>(p.w00[o] * static_cast<double>(src[p.i00[o]]) +
                              p.w01[o] * static_cast<double>(src[p.i01[o]]) +
                              p.w10[o] * static_cast<double>(src[p.i10[o]]) +
                              p.w11[o] * static_cast<double>(src[p.i11[o]]));
    }
  }
  return out;
}

template <class T>
Tensor<T> k_sum_all(const Tensor<T>& a) {
  double acc = 0.0;
  for (const auto& x : a.v) acc += static_cast<double>(x);
  Tensor<T> out({1});
  out.v[0] = static_cast<T>(acc);
  return out;
}

// Stable binary cross-entropy with logits, mean over all elements.
template <class T>
Tensor<T> k_bce_logits_mean(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (!logits.same_shape(targets)) throw RuntimeFailure("bce: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.v.size(); ++i) {
    const double x = static_cast<double>(logits.v[i]);
    const double t = static_cast<double>(targets.v[i]);
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> out({1});
  out.v[0] = static_cast<T>(acc / static_cast<double>(logits.v.size()));
  return out;
}

// Softmax cross-entropy of a single-row logit vector against a class index.
template <class T>
Tensor<T> k_softmax_ce(const Tensor<T>& logits, std::size_t target) {
  if (logits.rows() != 1) throw RuntimeFailure("softmax_ce: expected a single row");
  if (target >= logits.cols()) throw RuntimeFailure("softmax_ce: target out of range");
  double m = static_cast<double>(logits.v[0]);
  for (const auto& x : logits.v) m = std::max(m, static_cast<double>(x));
  double z = 0.0;
  for (const auto& x : logits.v) z += std::exp(static_cast<double>(x) - m);
  Tensor<T> out({1});
  out.v[0] = static_cast<T>(std::log(z) + m - static_cast<double>(logits.v[target]));
  return out;
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Recording context
// ---------------------------------------------------------------------------

template <class T>
class Graph {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  // Leaf whose gradient is wanted. The tensor is copied in; read the gradient
  // back through grad() after backward().
  Var param(const Tensor<T>& value) { return push(value, true, {}); }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].val; }
  const Tensor<T>& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar_value(Var v) const { return static_cast<double>(nodes_[v.id].val.v[0]); }

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    Tensor<T> out = eusseg::matmul(val(a), val(b), trans_a, trans_b);
    Var r = push(std::move(out), needs(a) || needs(b), [=](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      if (g.needs(a)) {
        // dA for every transpose combination of C = op(A) op(B)
        if (!trans_a && !trans_b) matmul_acc(g.mut_grad(a), dy, g.val(b), false, true);
        else if (!trans_a && trans_b) matmul_acc(g.mut_grad(a), dy, g.val(b), false, false);
        else if (trans_a && !trans_b) matmul_acc(g.mut_grad(a), g.val(b), dy, false, true);
        else matmul_acc(g.mut_grad(a), g.val(b), dy, true, true);
      }
      if (g.needs(b)) {
        if (!trans_a && !trans_b) matmul_acc(g.mut_grad(b), g.val(a), dy, true, false);
        else if (!trans_a && trans_b) matmul_acc(g.mut_grad(b), dy, g.val(a), true, false);
        else if (trans_a && !trans_b) matmul_acc(g.mut_grad(b), g.val(a), dy, false, false);
        else matmul_acc(g.mut_grad(b), dy, g.val(a), true, true);
      }
    });
    return r;
  }

  Var add(Var a, Var b) {
    Var r = push(ag::k_add(val(a), val(b)), needs(a) || needs(b), [=](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      if (g.needs(a)) g.axpy(a, dy, 1.0);
      if (g.needs(b)) g.axpy(b, dy, 1.0);
    });
    return r;
  }

  Var mul(Var a, Var b) {
    Var r = push(ag::k_mul(val(a), val(b)), needs(a) || needs(b), [=](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      if (g.needs(a)) {
        Tensor<T>& da = g.mut_grad(a);
        const Tensor<T>& bv = g.val(b);
        for (std::size_t i = 0; i < dy.v.size(); ++i) da.v[i] += dy.v[i] * bv.v[i];
      }
      if (g.needs(b)) {
        Tensor<T>& db = g.mut_grad(b);
        const Tensor<T>& av = g.val(a);
        for (std::size_t i = 0; i < dy.v.size(); ++i) db.v[i] += dy.v[i] * av.v[i];
      }
    });
    return r;
  }

  Var add_rowvec(Var m, Var v) {
    Var r = push(ag::k_add_rowvec(val(m), val(v)), needs(m) || needs(v), [=](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      if (g.needs(m)) g.axpy(m, dy, 1.0);
      if (g.needs(v)) {
        Tensor<T>& dv = g.mut_grad(v);
        const std::size_t rows = dy.rows(), cols = dy.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) dv.v[j] += dy.v[i * cols + j];
        }
      }
    });
    return r;
  }

  Var affine(Var a, double k, double c) {
    Var r = push(ag::k_affine(val(a), k, c), needs(a), [=](Graph& g) {
      if (g.needs(a)) g.axpy(a, g.nodes_[g.cursor_].grad, k);
    });
    return r;
  }

  Var scale(Var a, double k) { return affine(a, k, 0.0); }

  Var gelu(Var a) {
    Var r = push(ag::k_gelu(val(a)), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      const Tensor<T>& x = g.val(a);
      Tensor<T>& da = g.mut_grad(a);
      for (std::size_t i = 0; i < dy.v.size(); ++i) {
        da.v[i] += dy.v[i] * static_cast<T>(ag::gelu_derivative(static_cast<double>(x.v[i])));
      }
    });
    return r;
  }

  Var sigmoid(Var a) {
    Var r = push(ag::k_sigmoid(val(a)), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      const Tensor<T>& y = g.nodes_[g.cursor_].val;
      Tensor<T>& da = g.mut_grad(a);
      for (std::size_t i = 0; i < dy.v.size(); ++i) {
        da.v[i] += dy.v[i] * y.v[i] * (T(1) - y.v[i]);
      }
    });
    return r;
  }

  Var softmax_rows(Var a) {
    Var r = push(ag::k_softmax_rows(val(a)), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      const Tensor<T>& y = g.nodes_[g.cursor_].val;
      Tensor<T>& da = g.mut_grad(a);
      const std::size_t rows = y.rows(), cols = y.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          dot += static_cast<double>(dy.v[i * cols + j]) * static_cast<double>(y.v[i * cols + j]);
        }
        for (std::size_t j = 0; j < cols; ++j) {
          da.v[i * cols + j] += y.v[i * cols + j] * (dy.v[i * cols + j] - static_cast<T>(dot));
        }
      }
    });
    return r;
  }

  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
    auto xhat = std::make_shared<Tensor<T>>();
    auto cache = std::make_shared<ag::LayerNormCache>();
    Tensor<T> out = ag::k_layer_norm(val(x), val(gamma), val(beta), eps, xhat.get(), cache.get());
    Var r = push(std::move(out), needs(x) || needs(gamma) || needs(beta), [=](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      const std::size_t rows = dy.rows(), cols = dy.cols();
      const Tensor<T>& gm = g.val(gamma);
      if (g.needs(gamma)) {
        Tensor<T>& dg = g.mut_grad(gamma);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            dg.v[j] += dy.v[i * cols + j] * xhat->v[i * cols + j];
          }
        }
      }
      if (g.needs(beta)) {
        Tensor<T>& db = g.mut_grad(beta);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) db.v[j] += dy.v[i * cols + j];
        }
      }
      if (g.needs(x)) {
        Tensor<T>& dx = g.mut_grad(x);
        for (std::size_t i = 0; i < rows; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const double dxh = static_cast<double>(dy.v[i * cols + j]) * static_cast<double>(gm.v[j]);
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * static_cast<double>(xhat->v[i * cols + j]);
          }
          mean_dxhat /= static_cast<double>(cols);
          mean_dxhat_xhat /= static_cast<double>(cols);
          const double inv = cache->inv_std[i];
          for (std::size_t j = 0; j < cols; ++j) {
            const double dxh = static_cast<double>(dy.v[i * cols + j]) * static_cast<double>(gm.v[j]);
            dx.v[i * cols + j] += static_cast<T>(
                inv * (dxh - mean_dxhat -
                       static_cast<double>(xhat->v[i * cols + j]) * mean_dxhat_xhat));
          }
        }
      }
    });
    return r;
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    Var r = push(ag::k_slice_cols(val(a), c0, c1), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      Tensor<T>& da = g.mut_grad(a);
      const std::size_t cols = da.cols(), w = c1 - c0;
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        for (std::size_t j = 0; j < w; ++j) da.v[i * cols + c0 + j] += dy.v[i * w + j];
      }
    });
    return r;
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    Var r = push(ag::k_slice_rows(val(a), r0, r1), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      Tensor<T>& da = g.mut_grad(a);
      const std::size_t cols = da.cols();
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) da.v[(r0 + i) * cols + j] += dy.v[i * cols + j];
      }
    });
    return r;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    std::vector<const Tensor<T>*> ptrs;
    bool any = false;
    for (Var p : parts) {
      ptrs.push_back(&val(p));
      any = any || needs(p);
    }
    Var r = push(ag::k_concat_cols(ptrs), any, [parts](Graph& g) {
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      const std::size_t total = dy.cols();
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t c = g.val(p).cols();
        if (g.needs(p)) {
          Tensor<T>& dp = g.mut_grad(p);
          for (std::size_t i = 0; i < dy.rows(); ++i) {
            for (std::size_t j = 0; j < c; ++j) dp.v[i * c + j] += dy.v[i * total + off + j];
          }
        }
        off += c;
      }
    });
    return r;
  }

  Var reshape(Var a, std::vector<std::size_t> shape) {
    Tensor<T> out = val(a);
    if (Tensor<T>::count(shape) != out.size()) throw RuntimeFailure("reshape: size mismatch");
    out.shape = std::move(shape);
    Var r = push(std::move(out), needs(a), [=](Graph& g) {
      if (g.needs(a)) g.axpy(a, g.nodes_[g.cursor_].grad, 1.0);
    });
    return r;
  }

  Var gather_rows(Var table, std::shared_ptr<const std::vector<std::uint32_t>> idx) {
    Var r = push(ag::k_gather_rows(val(table), *idx), needs(table), [=](Graph& g) {
      if (!g.needs(table)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      Tensor<T>& dt = g.mut_grad(table);
      const std::size_t c = dt.cols();
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::size_t row = (*idx)[i];
        for (std::size_t j = 0; j < c; ++j) dt.v[row * c + j] += dy.v[i * c + j];
      }
    });
    return r;
  }

  Var upsample_bilinear(Var x, std::shared_ptr<const ag::BilinearPlan> plan) {
    Var r = push(ag::k_upsample_bilinear(val(x), *plan), needs(x), [=](Graph& g) {
      if (!g.needs(x)) return;
      const Tensor<T>& dy = g.nodes_[g.cursor_].grad;
      Tensor<T>& dx = g.mut_grad(x);
      const std::size_t ch = dx.rows();
      const std::size_t n = plan->oh * plan->ow;
      for (std::size_t c = 0; c < ch; ++c) {
        const T* dyp = dy.v.data() + c * n;
        T* dxp = dx.v.data() + c * dx.cols();
        for (std::size_t o = 0; o < n; ++o) {
          const double d = static_cast<double>(dyp[o]);
          dxp[plan->i00[o]] += static_cast<T>(plan->w00[o] * d);
          dxp[plan->i01[o]] += static_cast<T>(plan->w01[o] * d);
          dxp[plan->i10[o]] += static_cast<T>(plan->w10[o] * d);
          dxp[plan->i11[o]] += static_cast<T>(plan->w11[o] * d);
        }
      }
    });
    return r;
  }

  Var sum_all(Var a) {
    Var r = push(ag::k_sum_all(val(a)), needs(a), [=](Graph& g) {
      if (!g.needs(a)) return;
      const T dy = g.nodes_[g.cursor_].grad.v[0];
      Tensor<T>& da = g.mut_grad(a);
      for (auto& x : da.v) x += dy;
    });
    return r;
  }

  Var bce_logits_mean(Var logits, std::shared_ptr<const Tensor<T>> targets) {
    Var r = push(ag::k_bce_logits_mean(val(logits), *targets), needs(logits), [=](Graph& g) {
      if (!g.needs(logits)) return;
      const T dy = g.nodes_[g.cursor_].grad.v[0];
      const Tensor<T>& x = g.val(logits);
      Tensor<T>& dx = g.mut_grad(logits);
      const double inv_n = 1.0 / static_cast<double>(x.v.size());
      for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.v[i])));
        dx.v[i] += static_cast<T>(static_cast<double>(dy) * (s - static_cast<double>(targets->v[i])) * inv_n);
      }
    });
    return r;
  }

  Var softmax_ce(Var logits, std::size_t target) {
    Var r = push(ag::k_softmax_ce(val(logits), target), needs(logits), [=](Graph& g) {
      if (!g.needs(logits)) return;
      const T dy = g.nodes_[g.cursor_].grad.v[0];
      const Tensor<T> sm = ag::k_softmax_rows(g.val(logits));
      Tensor<T>& dx = g.mut_grad(logits);
      for (std::size_t j = 0; j < sm.v.size(); ++j) {
        const double onehot = (j == target) ? 1.0 : 0.0;
        dx.v[j] += static_cast<T>(static_cast<double>(dy) * (static_cast<double>(sm.v[j]) - onehot));
      }
    });
    return r;
  }

  // y = a / b on scalar nodes.
  Var div_scalar(Var a, Var b) {
    const double av = scalar_value(a), bv = scalar_value(b);
    Tensor<T> out({1});
    out.v[0] = static_cast<T>(av / bv);
    Var r = push(std::move(out), needs(a) || needs(b), [=](Graph& g) {
      const double dy = static_cast<double>(g.nodes_[g.cursor_].grad.v[0]);
      const double aval = g.scalar_value(a), bval = g.scalar_value(b);
      if (g.needs(a)) g.mut_grad(a).v[0] += static_cast<T>(dy / bval);
      if (g.needs(b)) g.mut_grad(b).v[0] += static_cast<T>(-dy * aval / (bval * bval));
    });
    return r;
  }

  // Seeds d(root)/d(root) = seed and replays the tape. root must be scalar.
  void backward(Var root, T seed = T(1)) {
    if (nodes_[root.id].val.size() != 1) throw RuntimeFailure("backward: root must be scalar");
    for (auto& n : nodes_) {
      if (n.needs_grad && n.grad.v.empty()) n.grad = Tensor<T>(n.val.shape);
    }
    if (nodes_[root.id].grad.v.empty()) nodes_[root.id].grad = Tensor<T>(nodes_[root.id].val.shape);
    nodes_[root.id].grad.v[0] = seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!nodes_[i].back || !nodes_[i].needs_grad) continue;
      cursor_ = i;
      nodes_[i].back(*this);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&)> back;
  };

  const Tensor<T>& val(Var v) const { return nodes_[v.id].val; }
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Tensor<T>& mut_grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.v.empty()) n.grad = Tensor<T>(n.val.shape);
    return n.grad;
  }

  void axpy(Var v, const Tensor<T>& dy, double k) {
    Tensor<T>& g = mut_grad(v);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += static_cast<T>(k * static_cast<double>(dy.v[i]));
  }

  Var push(Tensor<T> value, bool needs_grad, std::function<void(Graph&)> back) {
    Node n;
    n.val = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Immediate context: same surface, no tape. Var is a shared tensor, so
// intermediates free themselves as soon as the network code drops them —
// full-resolution inference stays within a bounded working set.
// ---------------------------------------------------------------------------

template <class T>
class Eval {
 public:
  using Var = std::shared_ptr<const Tensor<T>>;

  Var constant(Tensor<T> value) { return std::make_shared<Tensor<T>>(std::move(value)); }

  // Aliases the caller's tensor; no copy. The parameter must outlive its use.
  Var param(const Tensor<T>& value) {
    return Var(&value, [](const Tensor<T>*) {});
  }

  const Tensor<T>& value(Var v) const { return *v; }
  double scalar_value(Var v) const { return static_cast<double>(v->v[0]); }

  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    return wrap(eusseg::matmul(*a, *b, trans_a, trans_b));
  }
  Var add(Var a, Var b) { return wrap(ag::k_add(*a, *b)); }
  Var mul(Var a, Var b) { return wrap(ag::k_mul(*a, *b)); }
  Var add_rowvec(Var m, Var v) { return wrap(ag::k_add_rowvec(*m, *v)); }
  Var affine(Var a, double k, double c) { return wrap(ag::k_affine(*a, k, c)); }
  Var scale(Var a, double k) { return affine(a, k, 0.0); }
  Var gelu(Var a) { return wrap(ag::k_gelu(*a)); }
  Var sigmoid(Var a) { return wrap(ag::k_sigmoid(*a)); }
  Var softmax_rows(Var a) { return wrap(ag::k_softmax_rows(*a)); }
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
    return wrap(ag::k_layer_norm<T>(*x, *gamma, *beta, eps, nullptr, nullptr));
  }
  Var slice_cols(Var a, std::size_t c0, std::size_t c1) { return wrap(ag::k_slice_cols(*a, c0, c1)); }
  Var slice_rows(Var a, std::size_t r0, std::size_t r1) { return wrap(ag::k_slice_rows(*a, r0, r1)); }
  Var concat_cols(const std::vector<Var>& parts) {
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(p.get());
    return wrap(ag::k_concat_cols(ptrs));
  }
  Var reshape(Var a, std::vector<std::size_t> shape) {
    Tensor<T> out = *a;
    if (Tensor<T>::count(shape) != out.size()) throw RuntimeFailure("reshape: size mismatch");
    out.shape = std::move(shape);
    return wrap(std::move(out));
  }
  Var gather_rows(Var table, std::shared_ptr<const std::vector<std::uint32_t>> idx) {
    return wrap(ag::k_gather_rows(*table, *idx));
  }
  Var upsample_bilinear(Var x, std::shared_ptr<const ag::BilinearPlan> plan) {
    return wrap(ag::k_upsample_bilinear(*x, *plan));
  }
  Var sum_all(Var a) { return wrap(ag::k_sum_all(*a)); }
  Var bce_logits_mean(Var logits, std::shared_ptr<const Tensor<T>> targets) {
    return wrap(ag::k_bce_logits_mean(*logits, *targets));
  }
  Var softmax_ce(Var logits, std::size_t target) { return wrap(ag::k_softmax_ce(*logits, target)); }
  Var div_scalar(Var a, Var b) {
    Tensor<T> out({1});
    out.v[0] = static_cast<T>(static_cast<double>(a->v[0]) / static_cast<double>(b->v[0]));
    return wrap(std::move(out));
  }

 private:
  Var wrap(Tensor<T> t) { return std::make_shared<Tensor<T>>(std::move(t)); }
};

}  // namespace eusseg
