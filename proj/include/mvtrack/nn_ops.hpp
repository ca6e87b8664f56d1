#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "mvtrack/errors.hpp"
#include "mvtrack/tensor.hpp"

// Differentiable building blocks. Forward kernels parallelize over disjoint
// output elements (bit-deterministic for any thread count); backward scatter
// loops with shared accumulation run serially or over disjoint slices so the
// reduction order is fixed.
namespace mvtrack {

inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeMismatchError(msg);
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_shape(a.shape() == b.shape(), "add: shapes differ");
  std::vector<T> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return TensorT<T>::make_op(
      a.shape(), std::move(out), {a, b},
      [](auto&, const std::vector<T>& g, const auto& gp) {
        for (int k = 0; k < 2; ++k)
          if (gp[k])
            for (size_t i = 0; i < g.size(); ++i) (*gp[k])[i] += g[i];
      });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  std::vector<T> out(a.data());
  for (auto& v : out) v += c;
  return TensorT<T>::make_op(a.shape(), std::move(out), {a},
                             [](auto&, const std::vector<T>& g, const auto& gp) {
                               if (gp[0])
                                 for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i];
                             });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  std::vector<T> out(a.data());
  for (auto& v : out) v *= c;
  return TensorT<T>::make_op(a.shape(), std::move(out), {a},
                             [c](auto&, const std::vector<T>& g, const auto& gp) {
                               if (gp[0])
                                 for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += c * g[i];
                             });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_shape(a.shape() == b.shape(), "mul: shapes differ");
  std::vector<T> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return TensorT<T>::make_op(
      a.shape(), std::move(out), {a, b},
      [](auto& self, const std::vector<T>& g, const auto& gp) {
        const auto& ad = self.parents[0]->data;
        const auto& bd2 = self.parents[1]->data;
        if (gp[0])
          for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] * bd2[i];
        if (gp[1])
          for (size_t i = 0; i < g.size(); ++i) (*gp[1])[i] += g[i] * ad[i];
      });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
  return TensorT<T>::make_op({}, {s}, {a},
                             [](auto&, const std::vector<T>& g, const auto& gp) {
                               if (gp[0])
                                 for (auto& v : *gp[0]) v += g[0];
                             });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
  check_shape(a.numel() > 0, "mean: empty tensor");
  T s = std::accumulate(a.data().begin(), a.data().end(), T(0)) / T(a.numel());
  return TensorT<T>::make_op({}, {s}, {a},
                             [](auto& self, const std::vector<T>& g, const auto& gp) {
                               if (gp[0]) {
                                 T inv = T(1) / T(self.parents[0]->data.size());
                                 for (auto& v : *gp[0]) v += g[0] * inv;
                               }
                             });
}

// Adds a constant (non-learned) array elementwise.
template <typename T>
TensorT<T> add_const(const TensorT<T>& a, const std::vector<T>& c) {
  check_shape(static_cast<int64_t>(c.size()) == a.numel(), "add_const: size mismatch");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return TensorT<T>::make_op(a.shape(), std::move(out), {a},
                             [](auto&, const std::vector<T>& g, const auto& gp) {
                               if (gp[0])
                                 for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i];
                             });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return TensorT<T>::make_op(
      a.shape(), std::move(out), {a},
      [](auto& self, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        const auto& x = self.parents[0]->data;
        for (size_t i = 0; i < g.size(); ++i)
          if (x[i] > T(0)) (*gp[0])[i] += g[i];
      });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
  return TensorT<T>::make_op(
      a.shape(), std::move(out), {a},
      [](auto& self, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        const auto& y = self.data;
        for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = std::exp(v);
  return TensorT<T>::make_op(a.shape(), std::move(out), {a},
                             [](auto& self, const std::vector<T>& g, const auto& gp) {
                               if (!gp[0]) return;
                               const auto& y = self.data;
                               for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i] * y[i];
                             });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int64_t> shape) {
  check_shape(detail::shape_numel(shape) == a.numel(), "reshape: numel changed");
  return TensorT<T>::make_op(std::move(shape), std::vector<T>(a.data()), {a},
                             [](auto&, const std::vector<T>& g, const auto& gp) {
                               if (gp[0])
                                 for (size_t i = 0; i < g.size(); ++i) (*gp[0])[i] += g[i];
                             });
}

// Concatenates [N_i x D] blocks along dim 0.
template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
  check_shape(!parts.empty(), "concat_rows: no inputs");
  int64_t d = parts[0].rank() >= 2 ? parts[0].dim(parts[0].rank() - 1) : 1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    check_shape(p.rank() == 2 && p.dim(1) == d, "concat_rows: inner dim mismatch");
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(static_cast<size_t>(rows * d));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return TensorT<T>::make_op(
      {rows, d}, std::move(out), parts,
      [](auto& self, const std::vector<T>& g, const auto& gp) {
        size_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
          size_t n = self.parents[k]->data.size();
          if (gp[k])
            for (size_t i = 0; i < n; ++i) (*gp[k])[i] += g[off + i];
          off += n;
        }
      });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, int64_t begin, int64_t count) {
  check_shape(a.rank() == 2, "slice_rows: rank-2 input expected");
  check_shape(begin >= 0 && begin + count <= a.dim(0), "slice_rows: out of range");
  int64_t d = a.dim(1);
  std::vector<T> out(a.data().begin() + begin * d, a.data().begin() + (begin + count) * d);
  return TensorT<T>::make_op(
      {count, d}, std::move(out), {a},
      [begin, d](auto&, const std::vector<T>& g, const auto& gp) {
        if (gp[0])
          for (size_t i = 0; i < g.size(); ++i) (*gp[0])[static_cast<size_t>(begin * d) + i] += g[i];
      });
}

// Repeats row l of `emb` counts[l] times; used for per-level embeddings on a
// flattened multi-scale token list.
template <typename T>
TensorT<T> embed_rows(const TensorT<T>& emb, const std::vector<int64_t>& counts) {
  check_shape(emb.rank() == 2, "embed_rows: [L x D] expected");
  check_shape(static_cast<int64_t>(counts.size()) == emb.dim(0), "embed_rows: counts size");
  int64_t d = emb.dim(1);
  int64_t rows = 0;
  for (auto c : counts) rows += c;
  std::vector<T> out(static_cast<size_t>(rows * d));
  size_t o = 0;
  for (size_t l = 0; l < counts.size(); ++l)
    for (int64_t r = 0; r < counts[l]; ++r)
      for (int64_t j = 0; j < d; ++j) out[o++] = emb.data()[l * d + j];
  return TensorT<T>::make_op(
      {rows, d}, std::move(out), {emb},
      [counts, d](auto&, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        size_t o = 0;
        for (size_t l = 0; l < counts.size(); ++l)
          for (int64_t r = 0; r < counts[l]; ++r)
            for (int64_t j = 0; j < d; ++j) (*gp[0])[l * d + j] += g[o++];
      });
}

// Scales each row of [N x D] by a constant per-row factor.
template <typename T>
TensorT<T> scale_rows(const TensorT<T>& x, const std::vector<T>& factors) {
  check_shape(x.rank() == 2, "scale_rows: rank-2 input expected");
  int64_t n = x.dim(0), d = x.dim(1);
  check_shape(static_cast<int64_t>(factors.size()) == n, "scale_rows: factor count");
  std::vector<T> out(x.data());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out[i * d + j] *= factors[i];
  return TensorT<T>::make_op(x.shape(), std::move(out), {x},
                             [factors, d](auto&, const std::vector<T>& g, const auto& gp) {
                               if (!gp[0]) return;
                               for (size_t i = 0; i < factors.size(); ++i)
                                 for (int64_t j = 0; j < d; ++j)
                                   (*gp[0])[i * d + j] += g[i * d + j] * factors[i];
                             });
}

// ---------------------------------------------------------------------------
// Linear / normalization
// ---------------------------------------------------------------------------

// y[..., o] = b[o] + sum_k x[..., k] * w[o, k]; w is [Dout x Din].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  check_shape(x.rank() >= 1 && w.rank() == 2, "linear: bad ranks");
  int64_t din = x.dim(x.rank() - 1);
  check_shape(w.dim(1) == din, "linear: input dim mismatch");
  int64_t dout = w.dim(0);
  check_shape(!b.defined() || (b.rank() == 1 && b.dim(0) == dout), "linear: bias dim mismatch");
  int64_t n = din > 0 ? x.numel() / din : 0;
  std::vector<int64_t> oshape(x.shape());
  oshape.back() = dout;
  std::vector<T> out(static_cast<size_t>(n * dout), T(0));
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  const T* bd = b.defined() ? b.data().data() : nullptr;
#pragma omp parallel for if (n * dout > 4096)
  for (int64_t i = 0; i < n; ++i) {
    const T* xr = xd + i * din;
    T* yr = out.data() + i * dout;
    for (int64_t o = 0; o < dout; ++o) {
      T acc = bd ? bd[o] : T(0);
      const T* wr = wd + o * din;
      for (int64_t k = 0; k < din; ++k) acc += xr[k] * wr[k];
      yr[o] = acc;
    }
  }
  std::vector<TensorT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return TensorT<T>::make_op(
      std::move(oshape), std::move(out), std::move(parents),
      [n, din, dout](auto& self, const std::vector<T>& g, const auto& gp) {
        const auto& xd2 = self.parents[0]->data;
        const auto& wd2 = self.parents[1]->data;
        if (gp[0]) {
          auto& gx = *gp[0];
#pragma omp parallel for if (n * din > 4096)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t o = 0; o < dout; ++o) {
              T gv = g[i * dout + o];
              for (int64_t k = 0; k < din; ++k) gx[i * din + k] += gv * wd2[o * din + k];
            }
        }
        if (gp[1]) {
          auto& gw = *gp[1];
#pragma omp parallel for if (dout * din > 4096)
          for (int64_t o = 0; o < dout; ++o)
            for (int64_t i = 0; i < n; ++i) {
              T gv = g[i * dout + o];
              for (int64_t k = 0; k < din; ++k) gw[o * din + k] += gv * xd2[i * din + k];
            }
        }
        if (gp.size() > 2 && gp[2]) {
          auto& gb = *gp[2];
          for (int64_t i = 0; i < n; ++i)
            for (int64_t o = 0; o < dout; ++o) gb[o] += g[i * dout + o];
        }
      });
}

// Normalizes the last dimension; gamma/beta are [D].
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
  int64_t d = x.dim(x.rank() - 1);
  check_shape(gamma.numel() == d && beta.numel() == d, "layer_norm: param dim mismatch");
  int64_t n = d > 0 ? x.numel() / d : 0;
  std::vector<T> out(x.data().size());
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
#pragma omp parallel for if (n > 256)
  for (int64_t i = 0; i < n; ++i) {
    const T* xr = xd + i * d;
    T mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) out[i * d + j] = gd[j] * (xr[j] - mu) * inv + bd[j];
  }
  return TensorT<T>::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, d, eps](auto& self, const std::vector<T>& g, const auto& gp) {
        const auto& xd2 = self.parents[0]->data;
        const auto& gd2 = self.parents[1]->data;
        for (int64_t i = 0; i < n; ++i) {
          const T* xr = xd2.data() + i * d;
          T mu = 0;
          for (int64_t j = 0; j < d; ++j) mu += xr[j];
          mu /= T(d);
          T var = 0;
          for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= T(d);
          T inv = T(1) / std::sqrt(var + eps);
          T mg = 0, mgx = 0;
          for (int64_t j = 0; j < d; ++j) {
            T xh = (xr[j] - mu) * inv;
            T dxh = g[i * d + j] * gd2[j];
            mg += dxh;
            mgx += dxh * xh;
          }
          mg /= T(d);
          mgx /= T(d);
          for (int64_t j = 0; j < d; ++j) {
            T xh = (xr[j] - mu) * inv;
            T dxh = g[i * d + j] * gd2[j];
            if (gp[0]) (*gp[0])[i * d + j] += inv * (dxh - mg - xh * mgx);
            if (gp[1]) (*gp[1])[j] += g[i * d + j] * xh;
            if (gp[2]) (*gp[2])[j] += g[i * d + j];
          }
        }
      });
}

// Softmax over contiguous blocks of `block` elements (rows of a flattened
// view). Throws NaNDetected when an input is non-finite.
template <typename T>
TensorT<T> softmax_blocks(const TensorT<T>& x, int64_t block) {
  check_shape(block > 0 && x.numel() % block == 0, "softmax_blocks: block size");
  int64_t n = x.numel() / block;
  std::vector<T> out(x.data().size());
  const T* xd = x.data().data();
  for (int64_t i = 0; i < n * block; ++i)
    if (!std::isfinite(xd[i])) throw NaNDetectedError("softmax input not finite");
#pragma omp parallel for if (n > 256)
  for (int64_t i = 0; i < n; ++i) {
    const T* xr = xd + i * block;
    T mx = xr[0];
    for (int64_t j = 1; j < block; ++j) mx = std::max(mx, xr[j]);
    T z = 0;
    for (int64_t j = 0; j < block; ++j) {
      T e = std::exp(xr[j] - mx);
      out[i * block + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < block; ++j) out[i * block + j] /= z;
  }
  return TensorT<T>::make_op(
      x.shape(), std::move(out), {x},
      [n, block](auto& self, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        const auto& y = self.data;
        for (int64_t i = 0; i < n; ++i) {
          T dot = 0;
          for (int64_t j = 0; j < block; ++j) dot += g[i * block + j] * y[i * block + j];
          for (int64_t j = 0; j < block; ++j)
            (*gp[0])[i * block + j] += y[i * block + j] * (g[i * block + j] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution / resampling
// ---------------------------------------------------------------------------

// Direct cross-correlation. x is [H x W x Cin], w is [k x k x Cin x Cout],
// pad must be 0 or k/2, k odd.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                  int pad) {
  check_shape(x.rank() == 3 && w.rank() == 4, "conv2d: bad ranks");
  int64_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  int64_t k = w.dim(0);
  check_shape(w.dim(1) == k && (k % 2) == 1, "conv2d: kernel must be square and odd");
  check_shape(w.dim(2) == cin, "conv2d: input channel mismatch");
  check_shape(pad == 0 || pad == k / 2, "conv2d: pad must be 0 or k/2");
  check_shape(stride >= 1, "conv2d: stride");
  int64_t cout = w.dim(3);
  check_shape(!b.defined() || b.numel() == cout, "conv2d: bias dim mismatch");
  int64_t oh = (h + 2 * pad - k) / stride + 1;
  int64_t ow = (wd + 2 * pad - k) / stride + 1;
  check_shape(oh > 0 && ow > 0, "conv2d: empty output");
  std::vector<T> out(static_cast<size_t>(oh * ow * cout), T(0));
  const T* xd = x.data().data();
  const T* kd = w.data().data();
  const T* bd = b.defined() ? b.data().data() : nullptr;
#pragma omp parallel for if (oh * ow * cout > 2048)
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      T* orow = out.data() + (oy * ow + ox) * cout;
      if (bd)
        for (int64_t c = 0; c < cout; ++c) orow[c] = bd[c];
      for (int64_t ky = 0; ky < k; ++ky) {
        int64_t iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int64_t kx = 0; kx < k; ++kx) {
          int64_t ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= wd) continue;
          const T* xrow = xd + (iy * wd + ix) * cin;
          const T* krow = kd + (ky * k + kx) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            T xv = xrow[ci];
            const T* kc = krow + ci * cout;
            for (int64_t c = 0; c < cout; ++c) orow[c] += xv * kc[c];
          }
        }
      }
    }
  }
  std::vector<TensorT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  int64_t st = stride, pd = pad;
  return TensorT<T>::make_op(
      {oh, ow, cout}, std::move(out), std::move(parents),
      [h, wd, cin, k, cout, oh, ow, st, pd](auto& self, const std::vector<T>& g, const auto& gp) {
        const auto& xd2 = self.parents[0]->data;
        const auto& kd2 = self.parents[1]->data;
        if (gp[0]) {
          auto& gx = *gp[0];
#pragma omp parallel for if (h * wd > 2048)
          for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < wd; ++ix) {
              T* gxr = gx.data() + (iy * wd + ix) * cin;
              for (int64_t ky = 0; ky < k; ++ky) {
                int64_t t = iy + pd - ky;
                if (t < 0 || t % st != 0) continue;
                int64_t oy = t / st;
                if (oy >= oh) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                  int64_t u = ix + pd - kx;
                  if (u < 0 || u % st != 0) continue;
                  int64_t ox = u / st;
                  if (ox >= ow) continue;
                  const T* grow = g.data() + (oy * ow + ox) * cout;
                  const T* krow = kd2.data() + (ky * k + kx) * cin * cout;
                  for (int64_t ci = 0; ci < cin; ++ci) {
                    T acc = 0;
                    const T* kc = krow + ci * cout;
                    for (int64_t c = 0; c < cout; ++c) acc += grow[c] * kc[c];
                    gxr[ci] += acc;
                  }
                }
              }
            }
          }
        }
        if (gp[1]) {
          auto& gw = *gp[1];
#pragma omp parallel for collapse(2) if (k * k > 4)
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              T* gslot = gw.data() + (ky * k + kx) * cin * cout;
              for (int64_t oy = 0; oy < oh; ++oy) {
                int64_t iy = oy * st + ky - pd;
                if (iy < 0 || iy >= h) continue;
                for (int64_t ox = 0; ox < ow; ++ox) {
                  int64_t ix = ox * st + kx - pd;
                  if (ix < 0 || ix >= wd) continue;
                  const T* xrow = xd2.data() + (iy * wd + ix) * cin;
                  const T* grow = g.data() + (oy * ow + ox) * cout;
                  for (int64_t ci = 0; ci < cin; ++ci)
                    for (int64_t c = 0; c < cout; ++c) gslot[ci * cout + c] += xrow[ci] * grow[c];
                }
              }
            }
          }
        }
        if (gp.size() > 2 && gp[2]) {
          auto& gb = *gp[2];
          for (int64_t i = 0; i < oh * ow; ++i)
            for (int64_t c = 0; c < cout; ++c) gb[c] += g[i * cout + c];
        }
      });
}

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
  check_shape(x.rank() == 3, "upsample_nearest2: [H x W x C] expected");
  int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  std::vector<T> out(static_cast<size_t>(4 * h * w * c));
  const T* xd = x.data().data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx) {
      const T* src = xd + (y * w + xx) * c;
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          T* dst = out.data() + ((2 * y + a) * 2 * w + (2 * xx + bb)) * c;
          for (int64_t j = 0; j < c; ++j) dst[j] = src[j];
        }
    }
  return TensorT<T>::make_op(
      {2 * h, 2 * w, c}, std::move(out), {x},
      [h, w, c](auto&, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        for (int64_t y = 0; y < h; ++y)
          for (int64_t xx = 0; xx < w; ++xx) {
            T* dst = gp[0]->data() + (y * w + xx) * c;
            for (int a = 0; a < 2; ++a)
              for (int bb = 0; bb < 2; ++bb) {
                const T* src = g.data() + ((2 * y + a) * 2 * w + (2 * xx + bb)) * c;
                for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
              }
          }
      });
}

// Shared bilinear kernel: value and d/du, d/dv of a [H x W x C] map at index
// coordinates (u, v). Outside [0, W-1] x [0, H-1] the sample is zero/invalid.
template <typename T>
struct BilinearTap {
  bool valid = false;
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  T fx = 0, fy = 0;  // fractional parts
};

template <typename T>
inline BilinearTap<T> bilinear_tap(T u, T v, int64_t h, int64_t w) {
  BilinearTap<T> t;
  if (!(u >= T(0) && u <= T(w - 1) && v >= T(0) && v <= T(h - 1))) return t;  // also rejects NaN
  t.valid = true;
  t.x0 = static_cast<int64_t>(std::floor(u));
  t.y0 = static_cast<int64_t>(std::floor(v));
  if (t.x0 > w - 2) t.x0 = std::max<int64_t>(0, w - 2);
  if (t.y0 > h - 2) t.y0 = std::max<int64_t>(0, h - 2);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = u - T(t.x0);
  t.fy = v - T(t.y0);
  return t;
}

// Differentiable bilinear sampling of `map` [H x W x C] at `uv` [N x 2] index
// coordinates. Out-of-bounds samples are zero; `valid_out`, when given,
// receives one flag per row.
template <typename T>
TensorT<T> grid_bilinear(const TensorT<T>& map, const TensorT<T>& uv,
                         std::vector<uint8_t>* valid_out = nullptr) {
  check_shape(map.rank() == 3, "grid_bilinear: map is [H x W x C]");
  check_shape(uv.rank() == 2 && uv.dim(1) == 2, "grid_bilinear: uv is [N x 2]");
  check_shape(map.numel() > 0, "grid_bilinear: empty map");
  int64_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  int64_t n = uv.dim(0);
  std::vector<T> out(static_cast<size_t>(n * c), T(0));
  if (valid_out) valid_out->assign(static_cast<size_t>(n), 0);
  const T* md = map.data().data();
  const T* pd = uv.data().data();
  for (int64_t i = 0; i < n; ++i) {
    auto t = bilinear_tap<T>(pd[i * 2], pd[i * 2 + 1], h, w);
    if (!t.valid) continue;
    if (valid_out) (*valid_out)[i] = 1;
    const T w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
    const T w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
    const T* p00 = md + (t.y0 * w + t.x0) * c;
    const T* p10 = md + (t.y0 * w + t.x1) * c;
    const T* p01 = md + (t.y1 * w + t.x0) * c;
    const T* p11 = md + (t.y1 * w + t.x1) * c;
    for (int64_t j = 0; j < c; ++j)
      out[i * c + j] = w00 * p00[j] + w10 * p10[j] + w01 * p01[j] + w11 * p11[j];
  }
  return TensorT<T>::make_op(
      {n, c}, std::move(out), {map, uv},
      [h, w, c, n](auto& self, const std::vector<T>& g, const auto& gp) {
        const auto& md2 = self.parents[0]->data;
        const auto& pd2 = self.parents[1]->data;
        for (int64_t i = 0; i < n; ++i) {
          auto t = bilinear_tap<T>(pd2[i * 2], pd2[i * 2 + 1], h, w);
          if (!t.valid) continue;
          const T w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
          const T w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
          int64_t i00 = (t.y0 * w + t.x0) * c, i10 = (t.y0 * w + t.x1) * c;
          int64_t i01 = (t.y1 * w + t.x0) * c, i11 = (t.y1 * w + t.x1) * c;
          T du = 0, dv = 0;
          for (int64_t j = 0; j < c; ++j) {
            T gv = g[i * c + j];
            if (gp[0]) {
              (*gp[0])[i00 + j] += gv * w00;
              (*gp[0])[i10 + j] += gv * w10;
              (*gp[0])[i01 + j] += gv * w01;
              (*gp[0])[i11 + j] += gv * w11;
            }
            if (gp[1]) {
              T v00 = md2[i00 + j], v10 = md2[i10 + j], v01 = md2[i01 + j], v11 = md2[i11 + j];
              du += gv * ((1 - t.fy) * (v10 - v00) + t.fy * (v11 - v01));
              dv += gv * ((1 - t.fx) * (v01 - v00) + t.fx * (v11 - v10));
            }
          }
          if (gp[1]) {
            (*gp[1])[i * 2] += du;
            (*gp[1])[i * 2 + 1] += dv;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention cores
// ---------------------------------------------------------------------------

// Multi-head scaled dot-product attention without projections. mask, when
// non-null, holds one byte per (query, key): nonzero = key allowed. A fully
// masked query row yields a zero output row. Throws NaNDetected when a score
// is non-finite.
template <typename T>
TensorT<T> mha_core(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                    const std::vector<uint8_t>* mask, int heads) {
  check_shape(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "mha_core: rank-2 inputs");
  int64_t nq = q.dim(0), d = q.dim(1), nk = k.dim(0);
  check_shape(k.dim(1) == d && v.dim(1) == d && v.dim(0) == nk, "mha_core: dim mismatch");
  check_shape(heads > 0 && d % heads == 0, "mha_core: embed dim not divisible by heads");
  check_shape(!mask || static_cast<int64_t>(mask->size()) == nq * nk, "mha_core: mask size");
  int64_t dh = d / heads;
  T scl = T(1) / std::sqrt(T(dh));
  std::vector<T> out(static_cast<size_t>(nq * d), T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  auto run_head = [&](int64_t i, int64_t m, T* orow, std::vector<T>& alpha) {
    // softmax over allowed keys for (query i, head m); returns allowed count
    int64_t base = m * dh;
    T mx = -std::numeric_limits<T>::infinity();
    int64_t cnt = 0;
    for (int64_t j = 0; j < nk; ++j) {
      alpha[j] = 0;
      if (mask && !(*mask)[i * nk + j]) continue;
      T s = 0;
      for (int64_t e = 0; e < dh; ++e) s += qd[i * d + base + e] * kd[j * d + base + e];
      s *= scl;
      if (!std::isfinite(s)) throw NaNDetectedError("attention score not finite");
      alpha[j] = s;
      mx = std::max(mx, s);
      ++cnt;
    }
    if (cnt == 0) return int64_t(0);
    T z = 0;
    for (int64_t j = 0; j < nk; ++j) {
      if (mask && !(*mask)[i * nk + j]) continue;
      alpha[j] = std::exp(alpha[j] - mx);
      z += alpha[j];
    }
    for (int64_t j = 0; j < nk; ++j) {
      if (mask && !(*mask)[i * nk + j]) {
        alpha[j] = 0;
        continue;
      }
      alpha[j] /= z;
      if (orow)
        for (int64_t e = 0; e < dh; ++e) orow[base + e] += alpha[j] * vd[j * d + base + e];
    }
    return cnt;
  };
  {
    std::vector<T> alpha(static_cast<size_t>(nk));
    for (int64_t i = 0; i < nq; ++i)
      for (int64_t m = 0; m < heads; ++m) run_head(i, m, out.data() + i * d, alpha);
  }
  std::vector<uint8_t> mask_copy;
  if (mask) mask_copy = *mask;
  bool has_mask = mask != nullptr;
  return TensorT<T>::make_op(
      {nq, d}, std::move(out), {q, k, v},
      [nq, nk, d, dh, heads, scl, mask_copy, has_mask](auto& self, const std::vector<T>& g,
                                                       const auto& gp) {
        const auto& qd2 = self.parents[0]->data;
        const auto& kd2 = self.parents[1]->data;
        const auto& vd2 = self.parents[2]->data;
        std::vector<T> alpha(static_cast<size_t>(nk));
        for (int64_t i = 0; i < nq; ++i) {
          for (int64_t m = 0; m < heads; ++m) {
            int64_t base = m * dh;
            // recompute softmax
            T mx = -std::numeric_limits<T>::infinity();
            int64_t cnt = 0;
            for (int64_t j = 0; j < nk; ++j) {
              alpha[j] = 0;
              if (has_mask && !mask_copy[i * nk + j]) continue;
              T s = 0;
              for (int64_t e = 0; e < dh; ++e) s += qd2[i * d + base + e] * kd2[j * d + base + e];
              alpha[j] = s * scl;
              mx = std::max(mx, alpha[j]);
              ++cnt;
            }
            if (cnt == 0) continue;
            T z = 0;
            for (int64_t j = 0; j < nk; ++j) {
              if (has_mask && !mask_copy[i * nk + j]) continue;
              alpha[j] = std::exp(alpha[j] - mx);
              z += alpha[j];
            }
            T dot = 0;  // sum_j alpha_j * dalpha_j
            std::vector<T> dal(static_cast<size_t>(nk), T(0));
            for (int64_t j = 0; j < nk; ++j) {
              if (has_mask && !mask_copy[i * nk + j]) {
                alpha[j] = 0;
                continue;
              }
              alpha[j] /= z;
              T da = 0;
              for (int64_t e = 0; e < dh; ++e) da += g[i * d + base + e] * vd2[j * d + base + e];
              dal[j] = da;
              dot += alpha[j] * da;
              if (gp[2])
                for (int64_t e = 0; e < dh; ++e)
                  (*gp[2])[j * d + base + e] += alpha[j] * g[i * d + base + e];
            }
            for (int64_t j = 0; j < nk; ++j) {
              if (has_mask && !mask_copy[i * nk + j]) continue;
              T ds = alpha[j] * (dal[j] - dot) * scl;
              if (gp[0])
                for (int64_t e = 0; e < dh; ++e)
                  (*gp[0])[i * d + base + e] += ds * kd2[j * d + base + e];
              if (gp[1])
                for (int64_t e = 0; e < dh; ++e)
                  (*gp[1])[j * d + base + e] += ds * qd2[i * d + base + e];
            }
          }
        }
      });
}

// Multi-scale deformable sampling core. For each query, head, level and
// point: sample the level's value map at (ref + offset / level_size), mapped
// to pixel indices via u = t_x * W - 0.5, and blend with the given weights.
//
//   values: L maps, each [H_l x W_l x D] (head h owns channels h*dh..)
//   offsets: [Nq x (M*L*P*2)] in level cell units, layout (m, l, p, xy)
//   weights: [Nq x (M*L*P)] already softmaxed per head
//   ref: flat [Nq*2] normalized (0..1) reference points, treated as constant
template <typename T>
TensorT<T> msda_core(const std::vector<TensorT<T>>& values, const TensorT<T>& offsets,
                     const TensorT<T>& weights, const std::vector<T>& ref, int heads,
                     int points) {
  check_shape(!values.empty(), "msda_core: no value maps");
  int64_t L = static_cast<int64_t>(values.size());
  int64_t d = values[0].dim(2);
  for (const auto& vm : values)
    check_shape(vm.rank() == 3 && vm.dim(2) == d, "msda_core: value map shape");
  check_shape(heads > 0 && d % heads == 0, "msda_core: embed dim not divisible by heads");
  int64_t M = heads, P = points;
  int64_t nq = offsets.dim(0);
  check_shape(offsets.rank() == 2 && offsets.dim(1) == M * L * P * 2, "msda_core: offsets dim");
  check_shape(weights.rank() == 2 && weights.dim(0) == nq && weights.dim(1) == M * L * P,
              "msda_core: weights dim");
  check_shape(static_cast<int64_t>(ref.size()) == nq * 2, "msda_core: ref size");
  int64_t dh = d / M;
  std::vector<T> out(static_cast<size_t>(nq * d), T(0));
  std::vector<const T*> vdat(values.size());
  std::vector<int64_t> hs(values.size()), ws(values.size());
  for (size_t l = 0; l < values.size(); ++l) {
    vdat[l] = values[l].data().data();
    hs[l] = values[l].dim(0);
    ws[l] = values[l].dim(1);
  }
  const T* od = offsets.data().data();
  const T* wd = weights.data().data();
#pragma omp parallel for if (nq > 64)
  for (int64_t i = 0; i < nq; ++i) {
    T rx = ref[i * 2], ry = ref[i * 2 + 1];
    for (int64_t m = 0; m < M; ++m) {
      T* orow = out.data() + i * d + m * dh;
      for (int64_t l = 0; l < L; ++l) {
        for (int64_t p = 0; p < P; ++p) {
          int64_t s = ((m * L + l) * P + p);
          T u = rx * T(ws[l]) + od[i * (M * L * P * 2) + s * 2] - T(0.5);
          T v = ry * T(hs[l]) + od[i * (M * L * P * 2) + s * 2 + 1] - T(0.5);
          auto t = bilinear_tap<T>(u, v, hs[l], ws[l]);
          if (!t.valid) continue;
          T wgt = wd[i * (M * L * P) + s];
          const T w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
          const T w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
          const T* p00 = vdat[l] + (t.y0 * ws[l] + t.x0) * d + m * dh;
          const T* p10 = vdat[l] + (t.y0 * ws[l] + t.x1) * d + m * dh;
          const T* p01 = vdat[l] + (t.y1 * ws[l] + t.x0) * d + m * dh;
          const T* p11 = vdat[l] + (t.y1 * ws[l] + t.x1) * d + m * dh;
          for (int64_t e = 0; e < dh; ++e)
            orow[e] += wgt * (w00 * p00[e] + w10 * p10[e] + w01 * p01[e] + w11 * p11[e]);
        }
      }
    }
  }
  std::vector<TensorT<T>> parents(values);
  parents.push_back(offsets);
  parents.push_back(weights);
  std::vector<T> ref_copy = ref;
  return TensorT<T>::make_op(
      {nq, d}, std::move(out), std::move(parents),
      [L, M, P, d, dh, nq, hs, ws, ref_copy](auto& self, const std::vector<T>& g,
                                             const auto& gp) {
        const size_t iv = 0;                           // value parents start
        const size_t io = static_cast<size_t>(L);      // offsets parent
        const size_t iw = static_cast<size_t>(L) + 1;  // weights parent
        const auto& od2 = self.parents[io]->data;
        const auto& wd2 = self.parents[iw]->data;
        for (int64_t i = 0; i < nq; ++i) {
          T rx = ref_copy[i * 2], ry = ref_copy[i * 2 + 1];
          for (int64_t m = 0; m < M; ++m) {
            const T* grow = g.data() + i * d + m * dh;
            for (int64_t l = 0; l < L; ++l) {
              const auto& vald = self.parents[iv + l]->data;
              for (int64_t p = 0; p < P; ++p) {
                int64_t s = ((m * L + l) * P + p);
                T u = rx * T(ws[l]) + od2[i * (M * L * P * 2) + s * 2] - T(0.5);
                T v = ry * T(hs[l]) + od2[i * (M * L * P * 2) + s * 2 + 1] - T(0.5);
                auto t = bilinear_tap<T>(u, v, hs[l], ws[l]);
                if (!t.valid) continue;
                T wgt = wd2[i * (M * L * P) + s];
                const T w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
                const T w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
                int64_t b00 = (t.y0 * ws[l] + t.x0) * d + m * dh;
                int64_t b10 = (t.y0 * ws[l] + t.x1) * d + m * dh;
                int64_t b01 = (t.y1 * ws[l] + t.x0) * d + m * dh;
                int64_t b11 = (t.y1 * ws[l] + t.x1) * d + m * dh;
                T du = 0, dv = 0, dw = 0;
                for (int64_t e = 0; e < dh; ++e) {
                  T gv = grow[e];
                  T v00 = vald[b00 + e], v10 = vald[b10 + e], v01 = vald[b01 + e],
                    v11 = vald[b11 + e];
                  T sample = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11;
                  dw += gv * sample;
                  du += gv * wgt * ((1 - t.fy) * (v10 - v00) + t.fy * (v11 - v01));
                  dv += gv * wgt * ((1 - t.fx) * (v01 - v00) + t.fx * (v11 - v10));
                  if (gp[iv + l]) {
                    auto& gval = *gp[iv + l];
                    gval[b00 + e] += gv * wgt * w00;
                    gval[b10 + e] += gv * wgt * w10;
                    gval[b01 + e] += gv * wgt * w01;
                    gval[b11 + e] += gv * wgt * w11;
                  }
                }
                if (gp[io]) {
                  (*gp[io])[i * (M * L * P * 2) + s * 2] += du;
                  (*gp[io])[i * (M * L * P * 2) + s * 2 + 1] += dv;
                }
                if (gp[iw]) (*gp[iw])[i * (M * L * P) + s] += dw;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Parameter structs and composite blocks
// ---------------------------------------------------------------------------

struct MsdaConfig {
  int num_heads = 4;
  int num_points = 4;
  int num_levels = 3;
  int embed_dim = 64;

  void validate() const {
    if (num_heads < 1 || num_points < 1 || num_levels < 1)
      throw ConfigInvalidError("MsdaConfig: counts must be >= 1");
    if (embed_dim % num_heads != 0)
      throw ConfigInvalidError("MsdaConfig: embed_dim not divisible by num_heads");
  }
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

template <typename T>
void init_uniform(TensorT<T>& t, std::mt19937_64& rng, T limit) {
  std::uniform_real_distribution<double> dist(-double(limit), double(limit));
  for (auto& v : t.data()) v = T(dist(rng));
}

template <typename T>
struct LinearParamsT {
  TensorT<T> weight;  // [out x in]
  TensorT<T> bias;    // [out]

  LinearParamsT() = default;
  LinearParamsT(int64_t in, int64_t out, std::mt19937_64& rng, T gain = T(1)) {
    weight = TensorT<T>({out, in}, true);
    bias = TensorT<T>({out}, true);
    T limit = gain * std::sqrt(T(6) / T(in + out));
    init_uniform(weight, rng, limit);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv2dParamsT {
  TensorT<T> weight;  // [k x k x cin x cout]
  TensorT<T> bias;    // [cout]

  Conv2dParamsT() = default;
  Conv2dParamsT(int64_t k, int64_t cin, int64_t cout, std::mt19937_64& rng, T gain = T(1)) {
    weight = TensorT<T>({k, k, cin, cout}, true);
    bias = TensorT<T>({cout}, true);
    T limit = gain * std::sqrt(T(6) / T(k * k * cin + cout));
    init_uniform(weight, rng, limit);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormParamsT {
  TensorT<T> gamma;
  TensorT<T> beta;

  LayerNormParamsT() = default;
  explicit LayerNormParamsT(int64_t d) {
    gamma = TensorT<T>::full({d}, T(1), true);
    beta = TensorT<T>({d}, true);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

// Pre-normalized feed-forward block with residual:
//   y = x + fc2(relu(fc1(norm(x))))
// Zeroed fc2 makes the block an exact identity, which the encoder and the
// interaction module rely on for their zero-init contracts.
template <typename T>
struct FfnParamsT {
  LayerNormParamsT<T> norm;
  LinearParamsT<T> fc1, fc2;

  FfnParamsT() = default;
  FfnParamsT(int64_t d, int64_t hidden, std::mt19937_64& rng)
      : norm(d), fc1(d, hidden, rng), fc2(hidden, d, rng, T(0.1)) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    norm.visit(prefix + ".norm", fn);
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

template <typename T>
TensorT<T> ffn_forward(const TensorT<T>& x, FfnParamsT<T>& p) {
  check_shape(x.rank() >= 1 && x.dim(x.rank() - 1) == p.fc1.weight.dim(1),
              "ffn_forward: last dim mismatch");
  if (x.numel() == 0) return x;
  auto h = layer_norm(x, p.norm.gamma, p.norm.beta);
  h = linear(h, p.fc1.weight, p.fc1.bias);
  h = relu(h);
  h = linear(h, p.fc2.weight, p.fc2.bias);
  return add(x, h);
}

template <typename T>
struct AttnParamsT {
  LayerNormParamsT<T> norm;  // applied to the query path
  LinearParamsT<T> q, k, v, out;

  AttnParamsT() = default;
  AttnParamsT(int64_t d, std::mt19937_64& rng)
      : norm(d), q(d, d, rng), k(d, d, rng), v(d, d, rng), out(d, d, rng, T(0.1)) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    norm.visit(prefix + ".norm", fn);
    q.visit(prefix + ".q", fn);
    k.visit(prefix + ".k", fn);
    v.visit(prefix + ".v", fn);
    out.visit(prefix + ".out", fn);
  }
};

// Multi-head cross attention with residual:
//   y = q + Wo(MHA(Wq(norm(q)), Wk(kv), Wv(kv), mask))
// A fully masked query row contributes zero attention, so the residual
// passes the query through unchanged.
template <typename T>
TensorT<T> cross_attention(const TensorT<T>& queries, const TensorT<T>& keys_values,
                           const std::vector<uint8_t>* mask, AttnParamsT<T>& p, int heads) {
  check_shape(queries.rank() == 2 && keys_values.rank() == 2, "cross_attention: rank-2 inputs");
  check_shape(queries.dim(1) == p.q.weight.dim(1), "cross_attention: query dim mismatch");
  check_shape(keys_values.dim(1) == p.k.weight.dim(1), "cross_attention: key dim mismatch");
  if (queries.dim(0) == 0) return queries;
  auto qn = layer_norm(queries, p.norm.gamma, p.norm.beta);
  auto qq = linear(qn, p.q.weight, p.q.bias);
  auto kk = linear(keys_values, p.k.weight, p.k.bias);
  auto vv = linear(keys_values, p.v.weight, p.v.bias);
  auto ctx = mha_core(qq, kk, vv, mask, heads);
  auto o = linear(ctx, p.out.weight, p.out.bias);
  return add(queries, o);
}

template <typename T>
struct MsdaParamsT {
  LayerNormParamsT<T> norm;
  LinearParamsT<T> value_proj;
  LinearParamsT<T> offset_net;  // d -> M*L*P*2
  LinearParamsT<T> weight_net;  // d -> M*L*P
  LinearParamsT<T> out_proj;

  MsdaParamsT() = default;
  MsdaParamsT(const MsdaConfig& cfg, std::mt19937_64& rng)
      : norm(cfg.embed_dim),
        value_proj(cfg.embed_dim, cfg.embed_dim, rng),
        offset_net(cfg.embed_dim, int64_t(cfg.num_heads) * cfg.num_levels * cfg.num_points * 2,
                   rng, T(0)),
        weight_net(cfg.embed_dim, int64_t(cfg.num_heads) * cfg.num_levels * cfg.num_points, rng,
                   T(0)),
        out_proj(cfg.embed_dim, cfg.embed_dim, rng, T(0.1)) {
    // Spread initial sampling points on a small ring, one direction per
    // (head, point), shared across levels; weights start uniform.
    auto& ob = offset_net.bias.data();
    int M = cfg.num_heads, L = cfg.num_levels, P = cfg.num_points;
    for (int m = 0; m < M; ++m)
      for (int l = 0; l < L; ++l)
        for (int p = 0; p < P; ++p) {
          double ang = 2.0 * M_PI * (m * P + p) / double(M * P);
          int64_t s = (int64_t(m) * L + l) * P + p;
          ob[s * 2] = T((p + 1) * std::cos(ang));
          ob[s * 2 + 1] = T((p + 1) * std::sin(ang));
        }
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    norm.visit(prefix + ".norm", fn);
    value_proj.visit(prefix + ".value_proj", fn);
    offset_net.visit(prefix + ".offset_net", fn);
    weight_net.visit(prefix + ".weight_net", fn);
    out_proj.visit(prefix + ".out_proj", fn);
  }
};

// Multi-scale deformable attention with residual. `value_flat` is the
// flattened multi-scale map [sum H_l*W_l x D] in level order described by
// `level_shapes` (pairs H_l, W_l); `ref` holds one normalized reference point
// per query; `pos`, when defined, is added to the normalized query before the
// offset/weight nets (positional information enters queries, not values).
template <typename T>
TensorT<T> msda_forward(const TensorT<T>& queries, const TensorT<T>& pos,
                        const std::vector<T>& ref, const TensorT<T>& value_flat,
                        const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                        const MsdaConfig& cfg, MsdaParamsT<T>& p) {
  cfg.validate();
  check_shape(queries.rank() == 2 && queries.dim(1) == cfg.embed_dim, "msda_forward: query dim");
  check_shape(static_cast<int>(level_shapes.size()) == cfg.num_levels,
              "msda_forward: level count mismatch");
  int64_t total = 0;
  for (auto& [h, w] : level_shapes) total += h * w;
  check_shape(value_flat.rank() == 2 && value_flat.dim(0) == total &&
                  value_flat.dim(1) == cfg.embed_dim,
              "msda_forward: value shape");
  for (T r : ref)
    if (!std::isfinite(r)) throw NaNDetectedError("msda_forward: reference point not finite");
  if (queries.dim(0) == 0) return queries;

  auto qn = layer_norm(queries, p.norm.gamma, p.norm.beta);
  auto z = pos.defined() ? add(qn, pos) : qn;
  auto off = linear(z, p.offset_net.weight, p.offset_net.bias);
  auto wraw = linear(z, p.weight_net.weight, p.weight_net.bias);
  auto wsm = softmax_blocks(wraw, int64_t(cfg.num_levels) * cfg.num_points);
  auto val = linear(value_flat, p.value_proj.weight, p.value_proj.bias);
  std::vector<TensorT<T>> maps;
  int64_t begin = 0;
  for (auto& [h, w] : level_shapes) {
    maps.push_back(reshape(slice_rows(val, begin, h * w), {h, w, cfg.embed_dim}));
    begin += h * w;
  }
  auto core = msda_core(maps, off, wsm, ref, cfg.num_heads, cfg.num_points);
  auto o = linear(core, p.out_proj.weight, p.out_proj.bias);
  return add(queries, o);
}

template <typename T>
struct MlpHeadParamsT {
  LinearParamsT<T> fc1, fc2;

  MlpHeadParamsT() = default;
  MlpHeadParamsT(int64_t d, int64_t out, std::mt19937_64& rng)
      : fc1(d, d, rng), fc2(d, out, rng) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

// linear -> relu -> linear, no residual; used for offset regression.
template <typename T>
TensorT<T> mlp_head_forward(const TensorT<T>& x, MlpHeadParamsT<T>& p) {
  check_shape(x.rank() == 2 && x.dim(1) == p.fc1.weight.dim(1), "mlp_head: last dim mismatch");
  if (x.dim(0) == 0) return TensorT<T>({0, p.fc2.weight.dim(0)});
  auto h = linear(x, p.fc1.weight, p.fc1.bias);
  h = relu(h);
  return linear(h, p.fc2.weight, p.fc2.bias);
}

}  // namespace mvtrack
