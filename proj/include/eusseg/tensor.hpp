#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eusseg/common.hpp"

namespace eusseg {

// Dense row-major tensor. Most math treats it as 2-D (shape[0] x shape[1]);
// higher ranks are storage-only (e.g. batched logit maps).
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.assign(count(shape), T(0));
  }
  Tensor(std::vector<std::size_t> s, T fill) : shape(std::move(s)) {
    v.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t size() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : size() / shape[0]; }

  T& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (const T& x : t.v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.v.resize(t.v.size());
  for (std::size_t i = 0; i < t.v.size(); ++i) out.v[i] = static_cast<To>(t.v[i]);
  return out;
}

namespace detail {

template <class T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapConst = Eigen::Map<const EigenMat<T>>;
template <class T>
using Map = Eigen::Map<EigenMat<T>>;

template <class T>
MapConst<T> as_matrix(const Tensor<T>& t) {
  return MapConst<T>(t.v.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

template <class T>
Map<T> as_matrix(Tensor<T>& t) {
  return Map<T>(t.v.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

}  // namespace detail

// C = op(A) * op(B) where op optionally transposes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  const std::size_t am = trans_a ? a.cols() : a.rows();
  const std::size_t ak = trans_a ? a.rows() : a.cols();
  const std::size_t bk = trans_b ? b.cols() : b.rows();
  const std::size_t bn = trans_b ? b.rows() : b.cols();
  if (ak != bk) {
    throw RuntimeFailure("matmul: inner dimensions differ " + a.shape_str() + " x " +
                         b.shape_str());
  }
  Tensor<T> c({am, bn});
  auto cm = detail::as_matrix(c);
  const auto ma = detail::as_matrix(a);
  const auto mb = detail::as_matrix(b);
  if (!trans_a && !trans_b) cm.noalias() = ma * mb;
  else if (!trans_a && trans_b) cm.noalias() = ma * mb.transpose();
  else if (trans_a && !trans_b) cm.noalias() = ma.transpose() * mb;
  else cm.noalias() = ma.transpose() * mb.transpose();
  return c;
}

// C += alpha * op(A) * op(B); used by backward passes to accumulate grads.
template <class T>
void matmul_acc(Tensor<T>& c, const Tensor<T>& a, const Tensor<T>& b, bool trans_a,
                bool trans_b, T alpha = T(1)) {
  auto cm = detail::as_matrix(c);
  const auto ma = detail::as_matrix(a);
  const auto mb = detail::as_matrix(b);
  if (!trans_a && !trans_b) cm.noalias() += alpha * (ma * mb);
  else if (!trans_a && trans_b) cm.noalias() += alpha * (ma * mb.transpose());
  else if (trans_a && !trans_b) cm.noalias() += alpha * (ma.transpose() * mb);
  else cm.noalias() += alpha * (ma.transpose() * mb.transpose());
}

}  // namespace eusseg
