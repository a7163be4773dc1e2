#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lutfuse/error.hpp"

// One bilinear definition shared by image resizing and weight-map upsampling:
// half-pixel centers (source coordinate (x+0.5)*src/dst - 0.5), edge clamp,
// channels independent. The lerp form a + f*(b-a) preserves constant inputs
// exactly; a final clamp to the corner hull keeps each output inside the
// source value range despite rounding.

namespace lutfuse {

namespace detail {

struct AxisTap {
  int lo, hi;
  double f;
};

inline AxisTap resample_tap(int out_index, int out_size, int src_size) {
  double s = (out_index + 0.5) * (double(src_size) / out_size) - 0.5;
  double fl = std::floor(s);
  int lo = int(fl);
  double f = s - fl;
  int hi = lo + 1;
  if (lo < 0) lo = 0;
  if (hi < 0) hi = 0;
  if (lo > src_size - 1) lo = src_size - 1;
  if (hi > src_size - 1) hi = src_size - 1;
  return {lo, hi, f};
}

}  // namespace detail

// src is src_h x src_w x channels, row-major interleaved; result is
// out_h x out_w x channels under the convention above.
template <typename T>
std::vector<T> resample_bilinear(const T* src, int src_h, int src_w, int channels,
                                 int out_h, int out_w) {
  if (src_h < 1 || src_w < 1 || channels < 1)
    throw InvalidArgument("resample source dimensions must be positive");
  if (out_h < 1 || out_w < 1)
    throw InvalidArgument("resample target dimensions must be positive");
  std::vector<detail::AxisTap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = detail::resample_tap(x, out_w, src_w);
  std::vector<T> out(std::size_t(out_h) * out_w * channels);
  for (int y = 0; y < out_h; ++y) {
    const detail::AxisTap ty = detail::resample_tap(y, out_h, src_h);
    const T* row0 = src + std::size_t(ty.lo) * src_w * channels;
    const T* row1 = src + std::size_t(ty.hi) * src_w * channels;
    const T fy = T(ty.f);
    T* orow = out.data() + std::size_t(y) * out_w * channels;
    for (int x = 0; x < out_w; ++x) {
      const detail::AxisTap& tx = xs[x];
      const T fx = T(tx.f);
      for (int c = 0; c < channels; ++c) {
        const T v00 = row0[std::size_t(tx.lo) * channels + c];
        const T v01 = row0[std::size_t(tx.hi) * channels + c];
        const T v10 = row1[std::size_t(tx.lo) * channels + c];
        const T v11 = row1[std::size_t(tx.hi) * channels + c];
        const T top = v00 + fx * (v01 - v00);
        const T bot = v10 + fx * (v11 - v10);
        T v = top + fy * (bot - top);
        T lo = v00, hi = v00;
        if (v01 < lo) lo = v01;
        if (v01 > hi) hi = v01;
        if (v10 < lo) lo = v10;
        if (v10 > hi) hi = v10;
        if (v11 < lo) lo = v11;
        if (v11 > hi) hi = v11;
        if (v < lo) v = lo;
        if (v > hi) v = hi;
        orow[std::size_t(x) * channels + c] = v;
      }
    }
  }
  return out;
}

// Adjoint of the (unclamped) map above: scatters each output gradient onto
// its four source taps with the bilinear weights. Sequential accumulation in
// output scan order keeps results deterministic.
template <typename T>
std::vector<T> resample_bilinear_backward(const T* d_out, int out_h, int out_w,
                                          int channels, int src_h, int src_w) {
  if (src_h < 1 || src_w < 1 || channels < 1 || out_h < 1 || out_w < 1)
    throw InvalidArgument("resample dimensions must be positive");
  std::vector<detail::AxisTap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = detail::resample_tap(x, out_w, src_w);
  std::vector<T> d_src(std::size_t(src_h) * src_w * channels, T(0));
  for (int y = 0; y < out_h; ++y) {
    const detail::AxisTap ty = detail::resample_tap(y, out_h, src_h);
    const T fy = T(ty.f);
    T* drow0 = d_src.data() + std::size_t(ty.lo) * src_w * channels;
    T* drow1 = d_src.data() + std::size_t(ty.hi) * src_w * channels;
    const T* grow = d_out + std::size_t(y) * out_w * channels;
    for (int x = 0; x < out_w; ++x) {
      const detail::AxisTap& tx = xs[x];
      const T fx = T(tx.f);
      const T w00 = (T(1) - fy) * (T(1) - fx);
      const T w01 = (T(1) - fy) * fx;
      const T w10 = fy * (T(1) - fx);
      const T w11 = fy * fx;
      for (int c = 0; c < channels; ++c) {
        const T g = grow[std::size_t(x) * channels + c];
        drow0[std::size_t(tx.lo) * channels + c] += w00 * g;
        drow0[std::size_t(tx.hi) * channels + c] += w01 * g;
        drow1[std::size_t(tx.lo) * channels + c] += w10 * g;
        drow1[std::size_t(tx.hi) * channels + c] += w11 * g;
      }
    }
  }
  return d_src;
}

}  // namespace lutfuse
