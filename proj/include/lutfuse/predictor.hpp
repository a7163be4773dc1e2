// Two-head weight predictor over a fixed-size downsampled input, with manual
// forward and backward passes.
//
// Conv architecture (arch id 1), spatial sizes for the standard 256 input:
//   e0: conv3x3(in->w0, stride 1) + leaky          256x256
//   e1: conv3x3(w0->w1, stride 2) + leaky          128x128
//   e2: conv3x3(w1->w2, stride 2) + leaky           64x64
//   e3: conv3x3(w2->w3, stride 2) + leaky           32x32
//   omega head: global-average-pool -> fc(w3->T) -> softmax
//   d2: conv3x3(w3->w1, stride 1)(up2(e3) + e2) + leaky   64x64
//   d1: conv3x3(w1->w0, stride 1) + leaky                 64x64
//   alpha head: conv1x1(w0->M) -> per-pixel softmax       64x64
// The skip addition requires w2 == w3. All convolutions zero-pad.
//
// Direct-grid architecture (arch id 2) holds T logits plus a learnable
// grid_size^2 x M logit grid and ignores the input content; it isolates the
// LUT side of training from conv dynamics.
//
// Parameters live in one flat vector. Conv kernels are laid out
// [out][ky][kx][in] so the innermost products run over contiguous input
// channels; layer order is e0,e1,e2,e3,fc,d2,d1,head (weights then bias each).

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace lutfuse {

enum class PredictorArch : std::uint16_t { kConv = 1, kGrid = 2 };

template <typename T>
struct PredictorConfigT {
  int in_size = 256;  // divisible by 8
  int in_channels = 3;
  int w0 = 16, w1 = 32, w2 = 64, w3 = 64;  // w2 == w3
  int t_scenarios = 3;
  int m_categories = 10;
  T leaky_slope = T(0.1);

  int alpha_size() const { return in_size / 4; }
};
using PredictorConfig = PredictorConfigT<float>;

template <typename T>
struct PredictorOutputT {
  std::vector<T> omega_logits;  // T
  std::vector<T> alpha_logits;  // A*A*M, [y][x][m]
  std::vector<T> omega;         // post softmax
  std::vector<T> alpha;         // post per-pixel softmax
};
using PredictorOutput = PredictorOutputT<float>;

namespace detail {

template <typename T>
struct PredictorCacheT {
  bool valid = false;
  std::vector<T> input;
  std::vector<T> a0, a1, a2, a3;  // encoder post-activations
  std::vector<T> pooled;
  std::vector<T> ad2, ad1;  // decoder post-activations
  std::vector<T> omega, alpha;
};

struct LayerSpan {
  std::size_t w_off, w_len, b_off, b_len;
};

// Offsets of the eight conv-arch layers inside the flat parameter vector.
template <typename T>
inline std::vector<LayerSpan> conv_layout(const PredictorConfigT<T>& c) {
  std::vector<LayerSpan> spans;
  std::size_t off = 0;
  auto push = [&](std::size_t wlen, std::size_t blen) {
    spans.push_back({off, wlen, off + wlen, blen});
    off += wlen + blen;
  };
  push(std::size_t(c.w0) * 9 * c.in_channels, c.w0);          // e0
  push(std::size_t(c.w1) * 9 * c.w0, c.w1);                   // e1
  push(std::size_t(c.w2) * 9 * c.w1, c.w2);                   // e2
  push(std::size_t(c.w3) * 9 * c.w2, c.w3);                   // e3
  push(std::size_t(c.t_scenarios) * c.w3, c.t_scenarios);     // fc
  push(std::size_t(c.w1) * 9 * c.w3, c.w1);                   // d2
  push(std::size_t(c.w0) * 9 * c.w1, c.w0);                   // d1
  push(std::size_t(c.m_categories) * c.w0, c.m_categories);   // head (1x1)
  return spans;
}

template <typename T>
inline std::size_t conv_param_count(const PredictorConfigT<T>& c) {
  auto spans = conv_layout(c);
  return spans.back().b_off + spans.back().b_len;
}

}  // namespace detail

template <typename T>
struct PredictorNetT {
  PredictorArch arch = PredictorArch::kConv;
  PredictorConfigT<T> config;  // conv arch; grid uses t/m fields only
  int grid_size = 64;
  std::vector<T> params;
  detail::PredictorCacheT<T> cache;

  int t_scenarios() const { return config.t_scenarios; }
  int m_categories() const { return config.m_categories; }
  int alpha_size() const {
    return arch == PredictorArch::kGrid ? grid_size : config.alpha_size();
  }
};
using PredictorNet = PredictorNetT<float>;

namespace detail {

template <typename T>
void check_predictor_config(const PredictorConfigT<T>& c) {
  if (c.in_size < 8 || c.in_size % 8 != 0)
    throw InvalidArgument("predictor input size must be a positive multiple of 8");
  if (c.in_channels < 1 || c.w0 < 1 || c.w1 < 1 || c.w2 < 1 || c.w3 < 1)
    throw InvalidArgument("channel widths must be positive");
  if (c.w2 != c.w3)
    throw InvalidArgument("skip addition requires matching e2/e3 widths");
  if (c.t_scenarios < 1 || c.m_categories < 1)
    throw InvalidArgument("head sizes must be positive");
  if (!(c.leaky_slope >= T(0)) || !std::isfinite(double(c.leaky_slope)))
    throw InvalidArgument("leaky slope must be finite and non-negative");
}

// conv3x3, zero padding 1. Output rows are independent, so the row range can
// be split across workers without changing any result.
template <typename T>
void conv3x3_forward(const T* in, int in_h, int in_w, int cin, const T* w,
                     const T* b, T* out, int stride, int cout, T slope,
                     ThreadPool* pool) {
  const int out_h = in_h / stride, out_w = in_w / stride;
  auto rows = [&](int, int row_begin, int row_end) {
    for (int oy = row_begin; oy < row_end; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        T* dst = out + (std::size_t(oy) * out_w + ox) * cout;
        for (int o = 0; o < cout; ++o) {
          T acc = b[o];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride - 1 + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride - 1 + kx;
              if (ix < 0 || ix >= in_w) continue;
              const T* src = in + (std::size_t(iy) * in_w + ix) * cin;
              const T* ker = w + (std::size_t(o) * 9 + ky * 3 + kx) * cin;
              for (int i = 0; i < cin; ++i) acc += ker[i] * src[i];
            }
          }
          dst[o] = acc > T(0) ? acc : slope * acc;
        }
      }
  };
  if (pool)
    pool->run_parts(out_h, std::min<std::size_t>(out_h, 2 * kReductionStripes), rows);
  else
    rows(0, 0, out_h);
}

// Backward through leaky + conv3x3. d_out arrives with the activation
// gradient already gated; this routine produces d_w, d_b, d_in.
template <typename T>
void conv3x3_backward(const T* in, int in_h, int in_w, int cin, const T* w,
                      const T* d_out, int stride, int cout, T* d_w, T* d_b,
                      T* d_in) {
  const int out_h = in_h / stride, out_w = in_w / stride;
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const T* g = d_out + (std::size_t(oy) * out_w + ox) * cout;
      for (int o = 0; o < cout; ++o) {
        const T go = g[o];
        if (go == T(0)) continue;
        d_b[o] += go;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride - 1 + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride - 1 + kx;
            if (ix < 0 || ix >= in_w) continue;
            const T* src = in + (std::size_t(iy) * in_w + ix) * cin;
            const std::size_t koff = (std::size_t(o) * 9 + ky * 3 + kx) * cin;
            T* dst = d_in ? d_in + (std::size_t(iy) * in_w + ix) * cin : nullptr;
            for (int i = 0; i < cin; ++i) {
              d_w[koff + i] += go * src[i];
              if (dst) dst[i] += go * w[koff + i];
            }
          }
        }
      }
    }
}

// Gate an upstream gradient by the leaky activation, reading the sign of the
// cached post-activation (positive iff the pre-activation was).
template <typename T>
void leaky_gate(const std::vector<T>& post, std::vector<T>& d, T slope) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(post[i] > T(0))) d[i] *= slope;
}

template <typename T>
void softmax(const T* z, int n, T* out) {
  T mx = z[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

// d_logits = s .* (d - <d, s>) for one softmax vector s.
template <typename T>
void softmax_backward(const T* s, const T* d, int n, T* d_logits) {
  T dot = T(0);
  for (int i = 0; i < n; ++i) dot += d[i] * s[i];
  for (int i = 0; i < n; ++i) d_logits[i] = s[i] * (d[i] - dot);
}

}  // namespace detail

template <typename T>
PredictorNetT<T> make_conv_predictor(const PredictorConfigT<T>& config) {
  detail::check_predictor_config(config);
  PredictorNetT<T> net;
  net.arch = PredictorArch::kConv;
  net.config = config;
  net.params.assign(detail::conv_param_count(config), T(0));
  return net;
}

template <typename T>
PredictorNetT<T> make_grid_predictor(int t_scenarios, int m_categories,
                                     int grid_size = 64) {
  if (t_scenarios < 1 || m_categories < 1 || grid_size < 1)
    throw InvalidArgument("grid predictor sizes must be positive");
  PredictorNetT<T> net;
  net.arch = PredictorArch::kGrid;
  net.config.t_scenarios = t_scenarios;
  net.config.m_categories = m_categories;
  net.grid_size = grid_size;
  net.params.assign(std::size_t(t_scenarios) +
                        std::size_t(grid_size) * grid_size * m_categories,
                    T(0));
  return net;
}

// Kaiming-uniform kernels scaled for the leaky slope, zero biases, and both
// head layers zeroed so a fresh net emits uniform weights (identity-bank
// start therefore reproduces the input).
template <typename T>
PredictorNetT<T> init_predictor(const PredictorConfigT<T>& config,
                                std::uint32_t seed) {
  auto net = make_conv_predictor(config);
  std::mt19937 rng(seed);
  auto uniform01 = [&rng] { return T(double(rng() >> 8) * (1.0 / 16777216.0)); };
  const auto spans = detail::conv_layout(config);
  const int fan_in[8] = {9 * config.in_channels, 9 * config.w0, 9 * config.w1,
                         9 * config.w2,          config.w3,     9 * config.w3,
                         9 * config.w1,          config.w0};
  for (int layer = 0; layer < 8; ++layer) {
    if (layer == 4 || layer == 7) continue;  // heads stay zero
    const double gain2 = 2.0 / (1.0 + double(config.leaky_slope) * config.leaky_slope);
    const T bound = T(std::sqrt(3.0 * gain2 / fan_in[layer]));
    for (std::size_t i = 0; i < spans[layer].w_len; ++i)
      net.params[spans[layer].w_off + i] = (T(2) * uniform01() - T(1)) * bound;
  }
  return net;
}

template <typename T = float>
PredictorNetT<T> init_predictor(std::uint32_t seed) {
  return init_predictor(PredictorConfigT<T>{}, seed);
}

template <typename T>
PredictorOutputT<T> predictor_forward(PredictorNetT<T>& net,
                                      const ImagePlaneT<T>& input,
                                      ThreadPool* pool = nullptr) {
  PredictorOutputT<T> out;
  auto& cache = net.cache;

  if (net.arch == PredictorArch::kGrid) {
    if (input.height < 1 || input.width < 1 ||
        input.data.size() != input.pixel_count() * 3)
      throw InvalidArgument("predictor input does not match its dimensions");
    const int t = net.config.t_scenarios, m = net.config.m_categories;
    const int a = net.grid_size;
    out.omega_logits.assign(net.params.begin(), net.params.begin() + t);
    out.alpha_logits.assign(net.params.begin() + t, net.params.end());
    out.omega.resize(t);
    detail::softmax(out.omega_logits.data(), t, out.omega.data());
    out.alpha.resize(out.alpha_logits.size());
    for (int p = 0; p < a * a; ++p)
      detail::softmax(out.alpha_logits.data() + std::size_t(p) * m, m,
                      out.alpha.data() + std::size_t(p) * m);
    cache = {};
    cache.valid = true;
    cache.input = input.data;
    cache.omega = out.omega;
    cache.alpha = out.alpha;
    return out;
  }

  // The input buffer carries in_channels values per pixel; the standard
  // configuration is the usual 3-channel plane.
  const auto& c = net.config;
  if (input.height != c.in_size || input.width != c.in_size)
    throw InvalidArgument("predictor input size does not match the architecture");
  if (input.data.size() != std::size_t(c.in_size) * c.in_size * c.in_channels)
    throw InvalidArgument("predictor input channels do not match");
  if (net.params.size() != detail::conv_param_count(c))
    throw InvalidState("parameter vector does not match the architecture");

  const auto spans = detail::conv_layout(c);
  const T* P = net.params.data();
  const int s = c.in_size, s2 = s / 2, s4 = s / 4, s8 = s / 8;

  cache = {};
  cache.input = input.data;
  cache.a0.resize(std::size_t(s) * s * c.w0);
  cache.a1.resize(std::size_t(s2) * s2 * c.w1);
  cache.a2.resize(std::size_t(s4) * s4 * c.w2);
  cache.a3.resize(std::size_t(s8) * s8 * c.w3);

  detail::conv3x3_forward(input.data.data(), s, s, c.in_channels,
                          P + spans[0].w_off, P + spans[0].b_off,
                          cache.a0.data(), 1, c.w0, c.leaky_slope, pool);
  detail::conv3x3_forward(cache.a0.data(), s, s, c.w0, P + spans[1].w_off,
                          P + spans[1].b_off, cache.a1.data(), 2, c.w1,
                          c.leaky_slope, pool);
  detail::conv3x3_forward(cache.a1.data(), s2, s2, c.w1, P + spans[2].w_off,
                          P + spans[2].b_off, cache.a2.data(), 2, c.w2,
                          c.leaky_slope, pool);
  detail::conv3x3_forward(cache.a2.data(), s4, s4, c.w2, P + spans[3].w_off,
                          P + spans[3].b_off, cache.a3.data(), 2, c.w3,
                          c.leaky_slope, pool);

  // omega head
  cache.pooled.assign(c.w3, T(0));
  const std::size_t npix3 = std::size_t(s8) * s8;
  for (std::size_t p = 0; p < npix3; ++p)
    for (int ch = 0; ch < c.w3; ++ch) cache.pooled[ch] += cache.a3[p * c.w3 + ch];
  for (int ch = 0; ch < c.w3; ++ch) cache.pooled[ch] /= T(npix3);
  out.omega_logits.resize(c.t_scenarios);
  for (int t = 0; t < c.t_scenarios; ++t) {
    T acc = P[spans[4].b_off + t];
    const T* row = P + spans[4].w_off + std::size_t(t) * c.w3;
    for (int ch = 0; ch < c.w3; ++ch) acc += row[ch] * cache.pooled[ch];
    out.omega_logits[t] = acc;
  }
  out.omega.resize(c.t_scenarios);
  detail::softmax(out.omega_logits.data(), c.t_scenarios, out.omega.data());

  // decoder: nearest-up2(a3) + a2, then two stride-1 convs
  std::vector<T> skip(cache.a2.size());
  for (int y = 0; y < s4; ++y)
    for (int x = 0; x < s4; ++x) {
      const T* up = cache.a3.data() +
                    (std::size_t(y / 2) * s8 + std::size_t(x / 2)) * c.w3;
      const T* e2 = cache.a2.data() + (std::size_t(y) * s4 + x) * c.w2;
      T* dst = skip.data() + (std::size_t(y) * s4 + x) * c.w2;
      for (int ch = 0; ch < c.w2; ++ch) dst[ch] = up[ch] + e2[ch];
    }
  cache.ad2.resize(std::size_t(s4) * s4 * c.w1);
  detail::conv3x3_forward(skip.data(), s4, s4, c.w3, P + spans[5].w_off,
                          P + spans[5].b_off, cache.ad2.data(), 1, c.w1,
                          c.leaky_slope, pool);
  cache.ad1.resize(std::size_t(s4) * s4 * c.w0);
  detail::conv3x3_forward(cache.ad2.data(), s4, s4, c.w1, P + spans[6].w_off,
                          P + spans[6].b_off, cache.ad1.data(), 1, c.w0,
                          c.leaky_slope, pool);

  // alpha head: 1x1 conv, logits then per-pixel softmax
  const std::size_t apix = std::size_t(s4) * s4;
  out.alpha_logits.resize(apix * c.m_categories);
  for (std::size_t p = 0; p < apix; ++p) {
    const T* src = cache.ad1.data() + p * c.w0;
    for (int m = 0; m < c.m_categories; ++m) {
      T acc = P[spans[7].b_off + m];
      const T* row = P + spans[7].w_off + std::size_t(m) * c.w0;
      for (int ch = 0; ch < c.w0; ++ch) acc += row[ch] * src[ch];
      out.alpha_logits[p * c.m_categories + m] = acc;
    }
  }
  out.alpha.resize(out.alpha_logits.size());
  for (std::size_t p = 0; p < apix; ++p)
    detail::softmax(out.alpha_logits.data() + p * c.m_categories, c.m_categories,
                    out.alpha.data() + p * c.m_categories);

  cache.omega = out.omega;
  cache.alpha = out.alpha;
  cache.valid = true;
  return out;
}

// Gradients for every parameter given upstream gradients on the post-softmax
// outputs. Requires the cache of a forward call on the same input.
template <typename T>
std::vector<T> predictor_backward(PredictorNetT<T>& net, const ImagePlaneT<T>& input,
                                  std::type_identity_t<std::span<const T>> d_omega,
                                  std::type_identity_t<std::span<const T>> d_alpha) {
  auto& cache = net.cache;
  if (!cache.valid) throw InvalidState("predictor_backward without a cached forward");
  if (cache.input != input.data)
    throw InvalidState("predictor_backward input differs from the cached forward");
  const int tcount = net.config.t_scenarios, mcount = net.config.m_categories;
  const int a = net.alpha_size();
  if ((int)d_omega.size() != tcount)
    throw InvalidArgument("d_omega length does not match");
  if (d_alpha.size() != std::size_t(a) * a * mcount)
    throw InvalidArgument("d_alpha length does not match");

  std::vector<T> grads(net.params.size(), T(0));

  if (net.arch == PredictorArch::kGrid) {
    detail::softmax_backward(cache.omega.data(), d_omega.data(), tcount,
                             grads.data());
    for (int p = 0; p < a * a; ++p)
      detail::softmax_backward(cache.alpha.data() + std::size_t(p) * mcount,
                               d_alpha.data() + std::size_t(p) * mcount, mcount,
                               grads.data() + tcount + std::size_t(p) * mcount);
    return grads;
  }

  const auto& c = net.config;
  const auto spans = detail::conv_layout(c);
  const T* P = net.params.data();
  const int s = c.in_size, s2 = s / 2, s4 = s / 4, s8 = s / 8;
  const std::size_t apix = std::size_t(s4) * s4;

  // alpha head
  std::vector<T> dz_alpha(apix * c.m_categories);
  for (std::size_t p = 0; p < apix; ++p)
    detail::softmax_backward(cache.alpha.data() + p * mcount,
                             d_alpha.data() + p * mcount, mcount,
                             dz_alpha.data() + p * mcount);
  std::vector<T> d_ad1(cache.ad1.size(), T(0));
  for (std::size_t p = 0; p < apix; ++p) {
    const T* src = cache.ad1.data() + p * c.w0;
    T* dsrc = d_ad1.data() + p * c.w0;
    for (int m = 0; m < mcount; ++m) {
      const T g = dz_alpha[p * mcount + m];
      if (g == T(0)) continue;
      grads[spans[7].b_off + m] += g;
      const std::size_t row = spans[7].w_off + std::size_t(m) * c.w0;
      for (int ch = 0; ch < c.w0; ++ch) {
        grads[row + ch] += g * src[ch];
        dsrc[ch] += g * P[row + ch];
      }
    }
  }

  // d1, then d2
  detail::leaky_gate(cache.ad1, d_ad1, c.leaky_slope);
  std::vector<T> d_ad2(cache.ad2.size(), T(0));
  detail::conv3x3_backward(cache.ad2.data(), s4, s4, c.w1, P + spans[6].w_off,
                           d_ad1.data(), 1, c.w0, grads.data() + spans[6].w_off,
                           grads.data() + spans[6].b_off, d_ad2.data());

  detail::leaky_gate(cache.ad2, d_ad2, c.leaky_slope);
  std::vector<T> skip(cache.a2.size());
  for (int y = 0; y < s4; ++y)
    for (int x = 0; x < s4; ++x) {
      const T* up = cache.a3.data() +
                    (std::size_t(y / 2) * s8 + std::size_t(x / 2)) * c.w3;
      const T* e2 = cache.a2.data() + (std::size_t(y) * s4 + x) * c.w2;
      T* dst = skip.data() + (std::size_t(y) * s4 + x) * c.w2;
      for (int ch = 0; ch < c.w2; ++ch) dst[ch] = up[ch] + e2[ch];
    }
  std::vector<T> d_skip(skip.size(), T(0));
  detail::conv3x3_backward(skip.data(), s4, s4, c.w3, P + spans[5].w_off,
                           d_ad2.data(), 1, c.w1, grads.data() + spans[5].w_off,
                           grads.data() + spans[5].b_off, d_skip.data());

  // the skip sum feeds both e2 directly and e3 through the nearest upsample
  std::vector<T> d_a2 = d_skip;
  std::vector<T> d_a3(cache.a3.size(), T(0));
  for (int y = 0; y < s4; ++y)
    for (int x = 0; x < s4; ++x) {
      const T* g = d_skip.data() + (std::size_t(y) * s4 + x) * c.w3;
      T* dst = d_a3.data() + (std::size_t(y / 2) * s8 + std::size_t(x / 2)) * c.w3;
      for (int ch = 0; ch < c.w3; ++ch) dst[ch] += g[ch];
    }

  // omega head: softmax -> fc -> global average pool
  std::vector<T> dz_omega(tcount);
  detail::softmax_backward(cache.omega.data(), d_omega.data(), tcount,
                           dz_omega.data());
  std::vector<T> d_pooled(c.w3, T(0));
  for (int t = 0; t < tcount; ++t) {
    const T g = dz_omega[t];
    grads[spans[4].b_off + t] += g;
    const std::size_t row = spans[4].w_off + std::size_t(t) * c.w3;
    for (int ch = 0; ch < c.w3; ++ch) {
      grads[row + ch] += g * cache.pooled[ch];
      d_pooled[ch] += g * P[row + ch];
    }
  }
  const std::size_t npix3 = std::size_t(s8) * s8;
  for (std::size_t p = 0; p < npix3; ++p)
    for (int ch = 0; ch < c.w3; ++ch)
      d_a3[p * c.w3 + ch] += d_pooled[ch] / T(npix3);

  // encoder chain
  detail::leaky_gate(cache.a3, d_a3, c.leaky_slope);
  std::vector<T> d_a2_enc(cache.a2.size(), T(0));
  detail::conv3x3_backward(cache.a2.data(), s4, s4, c.w2, P + spans[3].w_off,
                           d_a3.data(), 2, c.w3, grads.data() + spans[3].w_off,
                           grads.data() + spans[3].b_off, d_a2_enc.data());
  for (std::size_t i = 0; i < d_a2.size(); ++i) d_a2[i] += d_a2_enc[i];

  detail::leaky_gate(cache.a2, d_a2, c.leaky_slope);
  std::vector<T> d_a1(cache.a1.size(), T(0));
  detail::conv3x3_backward(cache.a1.data(), s2, s2, c.w1, P + spans[2].w_off,
                           d_a2.data(), 2, c.w2, grads.data() + spans[2].w_off,
                           grads.data() + spans[2].b_off, d_a1.data());

  detail::leaky_gate(cache.a1, d_a1, c.leaky_slope);
  std::vector<T> d_a0(cache.a0.size(), T(0));
  detail::conv3x3_backward(cache.a0.data(), s, s, c.w0, P + spans[1].w_off,
                           d_a1.data(), 2, c.w1, grads.data() + spans[1].w_off,
                           grads.data() + spans[1].b_off, d_a0.data());

  detail::leaky_gate(cache.a0, d_a0, c.leaky_slope);
  detail::conv3x3_backward(cache.input.data(), s, s, c.in_channels,
                           P + spans[0].w_off, d_a0.data(), 1, c.w0,
                           grads.data() + spans[0].w_off,
                           grads.data() + spans[0].b_off, static_cast<T*>(nullptr));
  return grads;
}

}  // namespace lutfuse
