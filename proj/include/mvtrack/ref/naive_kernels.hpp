#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

// Straight-line serial re-implementations of the numeric kernels, written
// against raw arrays with no shared helpers. Tests hold the fast kernels to
// these, and the benchmark times the two sides against each other.
namespace mvtrack::ref {

template <typename T>
std::vector<T> linear_naive(const std::vector<T>& x, int64_t n, int64_t din,
                            const std::vector<T>& w, int64_t dout, const std::vector<T>& b) {
  std::vector<T> y(static_cast<size_t>(n * dout), T(0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < dout; ++o) {
      T acc = b.empty() ? T(0) : b[static_cast<size_t>(o)];
      for (int64_t k = 0; k < din; ++k) acc += x[i * din + k] * w[o * din + k];
      y[i * dout + o] = acc;
    }
  return y;
}

template <typename T>
std::vector<T> layer_norm_naive(const std::vector<T>& x, int64_t n, int64_t d,
                                const std::vector<T>& gamma, const std::vector<T>& beta,
                                T eps = T(1e-5)) {
  std::vector<T> y(x.size());
  for (int64_t i = 0; i < n; ++i) {
    T mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= T(d);
    T var = 0;
    for (int64_t j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
    var /= T(d);
    for (int64_t j = 0; j < d; ++j)
      y[i * d + j] = gamma[j] * (x[i * d + j] - mu) / std::sqrt(var + eps) + beta[j];
  }
  return y;
}

template <typename T>
void softmax_inplace_naive(T* v, int64_t n) {
  T mx = v[0];
  for (int64_t i = 1; i < n; ++i)
    if (v[i] > mx) mx = v[i];
  T z = 0;
  for (int64_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    z += v[i];
  }
  for (int64_t i = 0; i < n; ++i) v[i] /= z;
}

// Value and validity of one bilinear sample; zero outside [0,w-1]x[0,h-1].
template <typename T>
T bilinear_one_naive(const std::vector<T>& map, int64_t h, int64_t w, int64_t c, T u, T v,
                     int64_t channel, bool* valid = nullptr) {
  if (valid) *valid = false;
  if (!(u >= 0 && u <= T(w - 1) && v >= 0 && v <= T(h - 1))) return T(0);
  if (valid) *valid = true;
  int64_t x0 = static_cast<int64_t>(std::floor(double(u)));
  int64_t y0 = static_cast<int64_t>(std::floor(double(v)));
  if (x0 > w - 2) x0 = w >= 2 ? w - 2 : 0;
  if (y0 > h - 2) y0 = h >= 2 ? h - 2 : 0;
  int64_t x1 = x0 + 1 < w ? x0 + 1 : w - 1;
  int64_t y1 = y0 + 1 < h ? y0 + 1 : h - 1;
  T fx = u - T(x0), fy = v - T(y0);
  T v00 = map[(y0 * w + x0) * c + channel];
  T v10 = map[(y0 * w + x1) * c + channel];
  T v01 = map[(y1 * w + x0) * c + channel];
  T v11 = map[(y1 * w + x1) * c + channel];
  return (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
}

// ---------------------------------------------------------------------------

// Full cross-attention block: y = q + Wo(MHA(Wq(LN(q)), Wk(kv), Wv(kv))).
// All weight matrices are [out x in]; mask is row-major [nq x nk].
template <typename T>
struct AttnWeightsNaive {
  std::vector<T> ln_gamma, ln_beta;
  std::vector<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
std::vector<T> cross_attention_naive(const std::vector<T>& q, int64_t nq,
                                     const std::vector<T>& kv, int64_t nk, int64_t d, int heads,
                                     const std::vector<uint8_t>* mask,
                                     const AttnWeightsNaive<T>& wts) {
  auto qn = layer_norm_naive(q, nq, d, wts.ln_gamma, wts.ln_beta);
  auto qq = linear_naive(qn, nq, d, wts.wq, d, wts.bq);
  auto kk = linear_naive(kv, nk, d, wts.wk, d, wts.bk);
  auto vv = linear_naive(kv, nk, d, wts.wv, d, wts.bv);
  int64_t dh = d / heads;
  std::vector<T> ctx(static_cast<size_t>(nq * d), T(0));
  for (int64_t i = 0; i < nq; ++i) {
    for (int m = 0; m < heads; ++m) {
      std::vector<T> scores;
      std::vector<int64_t> keys;
      for (int64_t j = 0; j < nk; ++j) {
        if (mask && !(*mask)[i * nk + j]) continue;
        T s = 0;
        for (int64_t e = 0; e < dh; ++e) s += qq[i * d + m * dh + e] * kk[j * d + m * dh + e];
        scores.push_back(s / std::sqrt(T(dh)));
        keys.push_back(j);
      }
      if (scores.empty()) continue;
      softmax_inplace_naive(scores.data(), static_cast<int64_t>(scores.size()));
      for (size_t si = 0; si < keys.size(); ++si)
        for (int64_t e = 0; e < dh; ++e)
          ctx[i * d + m * dh + e] += scores[si] * vv[keys[si] * d + m * dh + e];
    }
  }
  auto o = linear_naive(ctx, nq, d, wts.wo, d, wts.bo);
  std::vector<T> y(q);
  for (size_t i = 0; i < y.size(); ++i) y[i] += o[i];
  return y;
}

// ---------------------------------------------------------------------------

// Full multi-scale deformable attention block, mirroring the documented
// contract: per-head softmax over level*point weights, sampling at
// (ref + offset / level_size) mapped through u = t * W - 0.5, zero padding
// outside the map, residual output projection.
template <typename T>
struct MsdaWeightsNaive {
  std::vector<T> ln_gamma, ln_beta;
  std::vector<T> w_value, b_value;    // [d x d], [d]
  std::vector<T> w_offset, b_offset;  // [M*L*P*2 x d]
  std::vector<T> w_weight, b_weight;  // [M*L*P x d]
  std::vector<T> w_out, b_out;        // [d x d], [d]
};

template <typename T>
std::vector<T> msda_forward_naive(const std::vector<T>& q, int64_t nq, const std::vector<T>& pos,
                                  const std::vector<T>& ref, const std::vector<T>& value_flat,
                                  const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                                  int64_t d, int heads, int points,
                                  const MsdaWeightsNaive<T>& wts) {
  int64_t L = static_cast<int64_t>(level_shapes.size());
  int64_t M = heads, P = points, dh = d / M;
  auto z = layer_norm_naive(q, nq, d, wts.ln_gamma, wts.ln_beta);
  if (!pos.empty())
    for (size_t i = 0; i < z.size(); ++i) z[i] += pos[i];
  auto off = linear_naive(z, nq, d, wts.w_offset, M * L * P * 2, wts.b_offset);
  auto wl = linear_naive(z, nq, d, wts.w_weight, M * L * P, wts.b_weight);
  for (int64_t i = 0; i < nq; ++i)
    for (int64_t m = 0; m < M; ++m)
      softmax_inplace_naive(wl.data() + i * (M * L * P) + m * L * P, L * P);
  int64_t total = 0;
  for (auto& [h, w] : level_shapes) total += h * w;
  auto val = linear_naive(value_flat, total, d, wts.w_value, d, wts.b_value);
  std::vector<std::vector<T>> level_vals;
  int64_t lvl_begin = 0;
  for (auto& [hl, wlv] : level_shapes) {
    level_vals.emplace_back(val.begin() + lvl_begin * d, val.begin() + (lvl_begin + hl * wlv) * d);
    lvl_begin += hl * wlv;
  }
  std::vector<T> core(static_cast<size_t>(nq * d), T(0));
  for (int64_t i = 0; i < nq; ++i) {
    for (int64_t m = 0; m < M; ++m) {
      for (int64_t l = 0; l < L; ++l) {
        auto [hl, wlv] = level_shapes[static_cast<size_t>(l)];
        for (int64_t p = 0; p < P; ++p) {
          int64_t s = (m * L + l) * P + p;
          T u = ref[i * 2] * T(wlv) + off[i * (M * L * P * 2) + s * 2] - T(0.5);
          T v = ref[i * 2 + 1] * T(hl) + off[i * (M * L * P * 2) + s * 2 + 1] - T(0.5);
          T wgt = wl[i * (M * L * P) + s];
          for (int64_t e = 0; e < dh; ++e)
            core[i * d + m * dh + e] +=
                wgt * bilinear_one_naive(level_vals[static_cast<size_t>(l)], hl, wlv, d, u, v,
                                         m * dh + e);
        }
      }
    }
  }
  auto o = linear_naive(core, nq, d, wts.w_out, d, wts.b_out);
  std::vector<T> y(q);
  for (size_t i = 0; i < y.size(); ++i) y[i] += o[i];
  return y;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> conv2d_naive(const std::vector<T>& x, int64_t h, int64_t w, int64_t cin,
                            const std::vector<T>& kern, int64_t k, int64_t cout,
                            const std::vector<T>& bias, int stride, int pad) {
  int64_t oh = (h + 2 * pad - k) / stride + 1;
  int64_t ow = (w + 2 * pad - k) / stride + 1;
  std::vector<T> y(static_cast<size_t>(oh * ow * cout), T(0));
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t co = 0; co < cout; ++co) {
        T acc = bias.empty() ? T(0) : bias[static_cast<size_t>(co)];
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t iy = oy * stride + ky - pad;
            int64_t ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int64_t ci = 0; ci < cin; ++ci)
              acc += x[(iy * w + ix) * cin + ci] * kern[((ky * k + kx) * cin + ci) * cout + co];
          }
        y[(oy * ow + ox) * cout + co] = acc;
      }
  return y;
}

// ---------------------------------------------------------------------------

// Per-voxel lift with the projection written as an explicit 4x4 homogeneous
// matrix product (independent of the library's 3x3+T formulation).
template <typename T>
std::vector<T> lift_naive(const std::vector<std::vector<T>>& views,
                          const std::vector<int64_t>& fh, const std::vector<int64_t>& fw,
                          int64_t c, const std::vector<std::array<double, 16>>& proj4x4,
                          int64_t cells_x, int64_t cells_y, double mpc, double ox, double oy,
                          const std::vector<double>& heights, double stride) {
  int64_t nh = static_cast<int64_t>(heights.size());
  std::vector<T> out(static_cast<size_t>(nh * cells_y * cells_x * c), T(0));
  for (int64_t hz = 0; hz < nh; ++hz)
    for (int64_t gy = 0; gy < cells_y; ++gy)
      for (int64_t gx = 0; gx < cells_x; ++gx) {
        double pw[4] = {ox + gx * mpc, oy + gy * mpc, heights[static_cast<size_t>(hz)], 1.0};
        std::vector<T> acc(static_cast<size_t>(c), T(0));
        int cnt = 0;
        for (size_t cam = 0; cam < views.size(); ++cam) {
          const auto& m = proj4x4[cam];
          double r[4] = {0, 0, 0, 0};
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) r[i] += m[i * 4 + j] * pw[j];
          if (r[2] <= 1e-9) continue;
          T u = T(r[0] / r[2] / stride);
          T v = T(r[1] / r[2] / stride);
          bool valid = false;
          std::vector<T> sample(static_cast<size_t>(c));
          for (int64_t j = 0; j < c; ++j)
            sample[static_cast<size_t>(j)] =
                bilinear_one_naive(views[cam], fh[cam], fw[cam], c, u, v, j, &valid);
          if (!valid) continue;
          ++cnt;
          for (int64_t j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += sample[static_cast<size_t>(j)];
        }
        if (cnt > 0) {
          T* orow = out.data() + ((hz * cells_y + gy) * cells_x + gx) * c;
          for (int64_t j = 0; j < c; ++j) orow[j] = acc[static_cast<size_t>(j)] / T(cnt);
        }
      }
  return out;
}

}  // namespace mvtrack::ref
