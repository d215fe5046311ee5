#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "mdae/blas.hpp"
#include "mdae/common.hpp"
#include "mdae/tensor.hpp"

// Differentiable primitives. Every op comes as forward + backward; forwards
// optionally record a cache, backwards consume it exactly once and ADD
// parameter gradients into caller-provided accumulators.

namespace mdae {

enum class Mode { train, infer };

namespace detail {

inline void mark_consumed(bool& consumed, const char* op) {
  if (consumed)
    throw contract_error(std::string(op) + ": cache already consumed");
  consumed = true;
}

// Unpacks one sample's receptive fields into a (c*kh*kw) x (h*w) matrix.
// Zero padding, stride 1, odd kernel, output spatially equal to input.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, T* col) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t row = 0;
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x + static_cast<std::size_t>(ch) * hw;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v, ++row) {
        T* dst = col + row * hw;
        const int di = u - ph, dj = v - pw;
        for (int i = 0; i < h; ++i) {
          const int si = i + di;
          if (si < 0 || si >= h) {
            for (int j = 0; j < w; ++j) dst[i * w + j] = T(0);
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(si) * w;
          for (int j = 0; j < w; ++j) {
            const int sj = j + dj;
            dst[i * w + j] = (sj < 0 || sj >= w) ? T(0) : src[sj];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column matrix back onto an image.
template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, T* x) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t row = 0;
  for (int ch = 0; ch < c; ++ch) {
    T* xc = x + static_cast<std::size_t>(ch) * hw;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v, ++row) {
        const T* src = col + row * hw;
        const int di = u - ph, dj = v - pw;
        for (int i = 0; i < h; ++i) {
          const int si = i + di;
          if (si < 0 || si >= h) continue;
          for (int j = 0; j < w; ++j) {
            const int sj = j + dj;
            if (sj < 0 || sj >= w) continue;
            xc[static_cast<std::size_t>(si) * w + sj] += src[i * w + j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride 1, zero "same" padding, odd kernels.

template <typename T>
struct ConvCache {
  Tensor4<T> x;  // forward input, needed for the weight gradient
  int out_channels = 0, kh = 0, kw = 0;
  bool consumed = false;
};

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight,
                  std::span<const std::type_identity_t<T>> bias, ConvCache<T>* cache = nullptr) {
  const int oc = weight.n(), ic = weight.c(), kh = weight.h(), kw = weight.w();
  if (x.c() != ic)
    throw shape_error("conv2d: input channels " + std::to_string(x.c()) +
                      " != weight in_channels " + std::to_string(ic) +
                      " (x " + x.dims() + ", w " + weight.dims() + ")");
  if (static_cast<int>(bias.size()) != oc)
    throw shape_error("conv2d: bias size " + std::to_string(bias.size()) +
                      " != out_channels " + std::to_string(oc));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw shape_error("conv2d: even kernel " + weight.dims() +
                      " has no symmetric same-padding");

  const int n = x.n(), h = x.h(), w = x.w();
  const int k = ic * kh * kw;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor4<T> y(n, oc, h, w);
  std::vector<T> col(static_cast<std::size_t>(k) * hw);
  for (int s = 0; s < n; ++s) {
    detail::im2col(x.data() + x.flat(s, 0, 0, 0), ic, h, w, kh, kw,
                   col.data());
    detail::gemm(false, false, oc, static_cast<int>(hw), k, T(1),
                 weight.data(), k, col.data(), static_cast<int>(hw), T(0),
                 y.data() + y.flat(s, 0, 0, 0), static_cast<int>(hw));
    for (int o = 0; o < oc; ++o) {
      T* yo = y.data() + y.flat(s, o, 0, 0);
      for (std::size_t i = 0; i < hw; ++i) yo[i] += bias[o];
    }
  }
  if (cache) {
    cache->x = x;
    cache->out_channels = oc;
    cache->kh = kh;
    cache->kw = kw;
    cache->consumed = false;
  }
  return y;
}

// Adds into g_weight/g_bias; returns the input gradient (skipped when
// need_gx is false, e.g. the first layer of the network).
template <typename T>
Tensor4<T> conv2d_backward(ConvCache<T>& cache, const Tensor4<T>& g_out,
                           const Tensor4<T>& weight, Tensor4<T>& g_weight,
                           std::span<std::type_identity_t<T>> g_bias, bool need_gx = true) {
  detail::mark_consumed(cache.consumed, "conv2d_backward");
  const Tensor4<T>& x = cache.x;
  const int oc = weight.n(), ic = weight.c(), kh = weight.h(), kw = weight.w();
  if (g_out.n() != x.n() || g_out.c() != oc || g_out.h() != x.h() ||
      g_out.w() != x.w())
    throw shape_error("conv2d_backward: g_out " + g_out.dims() +
                      " does not match forward output (" +
                      dims_str(x.n(), oc, x.h(), x.w()) + ")");
  if (!g_weight.same_dims(weight) || static_cast<int>(g_bias.size()) != oc)
    throw shape_error("conv2d_backward: gradient accumulators mismatch w " +
                      weight.dims());

  const int n = x.n(), h = x.h(), w = x.w();
  const int k = ic * kh * kw;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor4<T> g_x;
  if (need_gx) g_x = Tensor4<T>(n, ic, h, w);

  std::vector<T> col(static_cast<std::size_t>(k) * hw);
  std::vector<T> g_col(need_gx ? static_cast<std::size_t>(k) * hw : 0);
  for (int s = 0; s < n; ++s) {
    const T* go = g_out.data() + g_out.flat(s, 0, 0, 0);
    // dW += g_out_s * col_s^T
    detail::im2col(x.data() + x.flat(s, 0, 0, 0), ic, h, w, kh, kw,
                   col.data());
    detail::gemm(false, true, oc, k, static_cast<int>(hw), T(1), go,
                 static_cast<int>(hw), col.data(), static_cast<int>(hw), T(1),
                 g_weight.data(), k);
    // db += row sums of g_out_s
    for (int o = 0; o < oc; ++o) {
      const T* row = go + static_cast<std::size_t>(o) * hw;
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += row[i];
      g_bias[o] += acc;
    }
    // dX_s = col2im(W^T * g_out_s)
    if (need_gx) {
      detail::gemm(true, false, k, static_cast<int>(hw), oc, T(1),
                   weight.data(), k, go, static_cast<int>(hw), T(0),
                   g_col.data(), static_cast<int>(hw));
      detail::col2im_add(g_col.data(), ic, h, w, kh, kw,
                         g_x.data() + g_x.flat(s, 0, 0, 0));
    }
  }
  return g_x;
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 windows, stride 2. Ties go to the smallest flat index so
// backward routing is deterministic.

struct PoolCache {
  std::vector<std::size_t> argmax;  // flat index into the forward input
  int n = 0, c = 0, h = 0, w = 0;
  bool consumed = false;
};

template <typename T>
Tensor4<T> maxpool2(const Tensor4<T>& x, PoolCache* cache = nullptr) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0)
    throw shape_error("maxpool2: h and w must be even, got " + x.dims());
  const int n = x.n(), c = x.c(), oh = x.h() / 2, ow = x.w() / 2;
  Tensor4<T> y(n, c, oh, ow);
  if (cache) {
    cache->argmax.assign(y.size(), 0);
    cache->n = x.n();
    cache->c = x.c();
    cache->h = x.h();
    cache->w = x.w();
    cache->consumed = false;
  }
  std::size_t out = 0;
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++out) {
          std::size_t best = x.flat(s, ch, 2 * i, 2 * j);
          T bv = x[best];
          const std::size_t idx[3] = {x.flat(s, ch, 2 * i, 2 * j + 1),
                                      x.flat(s, ch, 2 * i + 1, 2 * j),
                                      x.flat(s, ch, 2 * i + 1, 2 * j + 1)};
          for (std::size_t cand : idx)
            if (x[cand] > bv) {
              bv = x[cand];
              best = cand;
            }
          y[out] = bv;
          if (cache) cache->argmax[out] = best;
        }
  return y;
}

template <typename T>
Tensor4<T> maxpool2_backward(PoolCache& cache, const Tensor4<T>& g_out) {
  detail::mark_consumed(cache.consumed, "maxpool2_backward");
  if (g_out.n() != cache.n || g_out.c() != cache.c ||
      g_out.h() != cache.h / 2 || g_out.w() != cache.w / 2)
    throw shape_error("maxpool2_backward: g_out " + g_out.dims() +
                      " vs expected " +
                      dims_str(cache.n, cache.c, cache.h / 2, cache.w / 2));
  Tensor4<T> g_x(cache.n, cache.c, cache.h, cache.w);
  for (std::size_t i = 0; i < g_out.size(); ++i)
    g_x[cache.argmax[i]] += g_out[i];
  return g_x;
}

// ---------------------------------------------------------------------------
// upsample_nearest2: each pixel becomes a 2x2 block.

struct UpsampleCache {
  int n = 0, c = 0, h = 0, w = 0;  // input dims
  bool consumed = false;
};

template <typename T>
Tensor4<T> upsample_nearest2(const Tensor4<T>& x,
                             UpsampleCache* cache = nullptr) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  Tensor4<T> y(n, c, 2 * h, 2 * w);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i) {
        const T* src = x.data() + x.flat(s, ch, i, 0);
        T* d0 = y.data() + y.flat(s, ch, 2 * i, 0);
        T* d1 = y.data() + y.flat(s, ch, 2 * i + 1, 0);
        for (int j = 0; j < w; ++j) {
          d0[2 * j] = d0[2 * j + 1] = src[j];
          d1[2 * j] = d1[2 * j + 1] = src[j];
        }
      }
  if (cache) *cache = UpsampleCache{n, c, h, w, false};
  return y;
}

template <typename T>
Tensor4<T> upsample_nearest2_backward(UpsampleCache& cache,
                                      const Tensor4<T>& g_out) {
  detail::mark_consumed(cache.consumed, "upsample_nearest2_backward");
  if (g_out.n() != cache.n || g_out.c() != cache.c ||
      g_out.h() != 2 * cache.h || g_out.w() != 2 * cache.w)
    throw shape_error("upsample_nearest2_backward: g_out " + g_out.dims() +
                      " vs expected " +
                      dims_str(cache.n, cache.c, 2 * cache.h, 2 * cache.w));
  Tensor4<T> g_x(cache.n, cache.c, cache.h, cache.w);
  for (int s = 0; s < cache.n; ++s)
    for (int ch = 0; ch < cache.c; ++ch)
      for (int i = 0; i < cache.h; ++i) {
        const T* g0 = g_out.data() + g_out.flat(s, ch, 2 * i, 0);
        const T* g1 = g_out.data() + g_out.flat(s, ch, 2 * i + 1, 0);
        T* dst = g_x.data() + g_x.flat(s, ch, i, 0);
        for (int j = 0; j < cache.w; ++j)
          dst[j] = g0[2 * j] + g0[2 * j + 1] + g1[2 * j] + g1[2 * j + 1];
      }
  return g_x;
}

// ---------------------------------------------------------------------------
// concat_channels: a's channels first.

struct ConcatCache {
  int c_a = 0, c_b = 0;
  bool consumed = false;
};

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b,
                           ConcatCache* cache = nullptr) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw shape_error("concat_channels: dims " + a.dims() + " vs " + b.dims());
  Tensor4<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t hw = static_cast<std::size_t>(a.h()) * a.w();
  for (int s = 0; s < a.n(); ++s) {
    std::copy_n(a.data() + a.flat(s, 0, 0, 0), a.c() * hw,
                y.data() + y.flat(s, 0, 0, 0));
    if (b.c() > 0)
      std::copy_n(b.data() + b.flat(s, 0, 0, 0), b.c() * hw,
                  y.data() + y.flat(s, a.c(), 0, 0));
  }
  if (cache) *cache = ConcatCache{a.c(), b.c(), false};
  return y;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(
    ConcatCache& cache, const Tensor4<T>& g_out) {
  detail::mark_consumed(cache.consumed, "concat_channels_backward");
  if (g_out.c() != cache.c_a + cache.c_b)
    throw shape_error("concat_channels_backward: g_out channels " +
                      std::to_string(g_out.c()) + " != " +
                      std::to_string(cache.c_a + cache.c_b));
  Tensor4<T> g_a(g_out.n(), cache.c_a, g_out.h(), g_out.w());
  Tensor4<T> g_b(g_out.n(), cache.c_b, g_out.h(), g_out.w());
  const std::size_t hw = static_cast<std::size_t>(g_out.h()) * g_out.w();
  for (int s = 0; s < g_out.n(); ++s) {
    std::copy_n(g_out.data() + g_out.flat(s, 0, 0, 0), cache.c_a * hw,
                g_a.data() + g_a.flat(s, 0, 0, 0));
    if (cache.c_b > 0)
      std::copy_n(g_out.data() + g_out.flat(s, cache.c_a, 0, 0),
                  cache.c_b * hw, g_b.data() + g_b.flat(s, 0, 0, 0));
  }
  return {std::move(g_a), std::move(g_b)};
}

// ---------------------------------------------------------------------------
// batchnorm over (n, h, w) per channel. eps 1e-5, running-stat momentum 0.9.

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

template <typename T>
struct BnCache {
  Tensor4<T> x_hat;
  std::vector<double> inv_std;  // per channel
  bool consumed = false;
};

// Train mode normalizes by batch statistics and folds them into the running
// buffers; infer mode uses the running buffers (stats_ready guards that at
// least one train batch has populated them).
template <typename T>
Tensor4<T> batchnorm(const Tensor4<T>& x, std::span<const std::type_identity_t<T>> gamma,
                     std::span<const std::type_identity_t<T>> beta, std::span<std::type_identity_t<T>> run_mean,
                     std::span<std::type_identity_t<T>> run_var, bool stats_ready, Mode mode,
                     BnCache<T>* cache = nullptr) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (static_cast<int>(gamma.size()) != c ||
      static_cast<int>(beta.size()) != c ||
      static_cast<int>(run_mean.size()) != c ||
      static_cast<int>(run_var.size()) != c)
    throw shape_error("batchnorm: parameter size != channels " +
                      std::to_string(c) + " for x " + x.dims());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t cnt = static_cast<std::size_t>(n) * hw;
  if (mode == Mode::train && cnt < 2)
    throw shape_error("batchnorm: train mode needs n*h*w >= 2 per channel, x " +
                      x.dims());
  if (mode == Mode::infer && !stats_ready)
    throw contract_error("batchnorm: infer mode with uninitialized running stats");

  Tensor4<T> y(n, c, h, w);
  if (cache) {
    cache->x_hat = Tensor4<T>(n, c, h, w);
    cache->inv_std.assign(c, 0.0);
    cache->consumed = false;
  }
  for (int ch = 0; ch < c; ++ch) {
    double mean, inv_std;
    if (mode == Mode::train) {
      double sum = 0.0, sq = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* xs = x.data() + x.flat(s, ch, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) {
          const double v = static_cast<double>(xs[i]);
          sum += v;
          sq += v * v;
        }
      }
      mean = sum / static_cast<double>(cnt);
      double var = sq / static_cast<double>(cnt) - mean * mean;
      if (var < 0.0) var = 0.0;  // cancellation guard
      inv_std = 1.0 / std::sqrt(var + kBnEps);
      run_mean[ch] = static_cast<T>(kBnMomentum * static_cast<double>(run_mean[ch]) +
                                    (1.0 - kBnMomentum) * mean);
      run_var[ch] = static_cast<T>(kBnMomentum * static_cast<double>(run_var[ch]) +
                                   (1.0 - kBnMomentum) * var);
    } else {
      mean = static_cast<double>(run_mean[ch]);
      inv_std = 1.0 / std::sqrt(static_cast<double>(run_var[ch]) + kBnEps);
    }
    const T g = gamma[ch], b = beta[ch];
    const T fmean = static_cast<T>(mean), finv = static_cast<T>(inv_std);
    for (int s = 0; s < n; ++s) {
      const T* xs = x.data() + x.flat(s, ch, 0, 0);
      T* ys = y.data() + y.flat(s, ch, 0, 0);
      T* xh = cache ? cache->x_hat.data() + cache->x_hat.flat(s, ch, 0, 0)
                    : nullptr;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = (xs[i] - fmean) * finv;
        if (xh) xh[i] = xhat;
        ys[i] = g * xhat + b;
      }
    }
    if (cache) cache->inv_std[ch] = inv_std;
  }
  return y;
}

template <typename T>
Tensor4<T> batchnorm_backward(BnCache<T>& cache, const Tensor4<T>& g_out,
                              std::span<const std::type_identity_t<T>> gamma, std::span<std::type_identity_t<T>> g_gamma,
                              std::span<std::type_identity_t<T>> g_beta) {
  detail::mark_consumed(cache.consumed, "batchnorm_backward");
  require_same_dims(g_out, cache.x_hat, "batchnorm_backward");
  const int n = g_out.n(), c = g_out.c(), h = g_out.h(), w = g_out.w();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const double cnt = static_cast<double>(n) * static_cast<double>(hw);
  Tensor4<T> g_x(n, c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int s = 0; s < n; ++s) {
      const T* go = g_out.data() + g_out.flat(s, ch, 0, 0);
      const T* xh = cache.x_hat.data() + cache.x_hat.flat(s, ch, 0, 0);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += static_cast<double>(go[i]);
        sum_gx += static_cast<double>(go[i]) * static_cast<double>(xh[i]);
      }
    }
    g_beta[ch] += static_cast<T>(sum_g);
    g_gamma[ch] += static_cast<T>(sum_gx);
    const T scale =
        static_cast<T>(static_cast<double>(gamma[ch]) * cache.inv_std[ch]);
    const T mean_g = static_cast<T>(sum_g / cnt);
    const T mean_gx = static_cast<T>(sum_gx / cnt);
    for (int s = 0; s < n; ++s) {
      const T* go = g_out.data() + g_out.flat(s, ch, 0, 0);
      const T* xh = cache.x_hat.data() + cache.x_hat.flat(s, ch, 0, 0);
      T* gx = g_x.data() + g_x.flat(s, ch, 0, 0);
      for (std::size_t i = 0; i < hw; ++i)
        gx[i] = scale * (go[i] - mean_g - xh[i] * mean_gx);
    }
  }
  return g_x;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

template <typename T>
struct ActCache {
  Tensor4<T> y;
  bool consumed = false;
};

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x, ActCache<T>* cache = nullptr) {
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (cache) {
    cache->y = y;
    cache->consumed = false;
  }
  return y;
}

template <typename T>
Tensor4<T> relu_backward(ActCache<T>& cache, const Tensor4<T>& g_out) {
  detail::mark_consumed(cache.consumed, "relu_backward");
  require_same_dims(g_out, cache.y, "relu_backward");
  Tensor4<T> g_x(g_out.n(), g_out.c(), g_out.h(), g_out.w());
  for (std::size_t i = 0; i < g_out.size(); ++i)
    g_x[i] = cache.y[i] > T(0) ? g_out[i] : T(0);
  return g_x;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x, ActCache<T>* cache = nullptr) {
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      const T e = std::exp(-v);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  if (cache) {
    cache->y = y;
    cache->consumed = false;
  }
  return y;
}

template <typename T>
Tensor4<T> sigmoid_backward(ActCache<T>& cache, const Tensor4<T>& g_out) {
  detail::mark_consumed(cache.consumed, "sigmoid_backward");
  require_same_dims(g_out, cache.y, "sigmoid_backward");
  Tensor4<T> g_x(g_out.n(), g_out.c(), g_out.h(), g_out.w());
  for (std::size_t i = 0; i < g_out.size(); ++i)
    g_x[i] = g_out[i] * cache.y[i] * (T(1) - cache.y[i]);
  return g_x;
}

// ---------------------------------------------------------------------------
// Mean squared error over all elements.

template <typename T>
struct MseCache {
  Tensor4<T> diff;  // pred - target
  bool consumed = false;
};

template <typename T>
double mse(const Tensor4<T>& pred, const Tensor4<T>& target,
           MseCache<T>* cache = nullptr) {
  require_same_dims(pred, target, "mse");
  double acc = 0.0;
  Tensor4<T> diff(pred.n(), pred.c(), pred.h(), pred.w());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    diff[i] = d;
    acc += static_cast<double>(d) * static_cast<double>(d);
  }
  if (cache) {
    cache->diff = std::move(diff);
    cache->consumed = false;
  }
  return pred.size() == 0 ? 0.0 : acc / static_cast<double>(pred.size());
}

template <typename T>
Tensor4<T> mse_backward(MseCache<T>& cache) {
  detail::mark_consumed(cache.consumed, "mse_backward");
  const Tensor4<T>& diff = cache.diff;
  Tensor4<T> g(diff.n(), diff.c(), diff.h(), diff.w());
  const T scale = static_cast<T>(2.0 / static_cast<double>(diff.size()));
  for (std::size_t i = 0; i < diff.size(); ++i) g[i] = scale * diff[i];
  return g;
}

}  // namespace mdae
