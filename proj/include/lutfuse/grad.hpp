#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lutfuse/core.hpp"
#include "lutfuse/parallel.hpp"
#include "lutfuse/resample.hpp"

// Reverse-mode gradients of the spatial-aware apply. The forward map is
// multilinear in (cells, alpha, omega), so the adjoints are exact:
//
//   d_cell[t,m,v,c]  = sum_p  w_v(p) * (omega_t*alpha_pm) * g[p,c]
//   d_alpha[p,m]     = sum_t  omega_t * <sample_tm(p), g[p,:]>
//   d_omega[t]       = sum_p sum_m alpha_pm * <sample_tm(p), g[p,:]>
//
// Accumulation into shared buffers (cells, omega) goes through
// kReductionStripes row-stripe buffers merged in stripe order, which makes
// the result a pure function of the inputs, independent of the worker count.

namespace lutfuse {

template <typename T>
struct ApplyGradientsT {
  std::vector<std::vector<T>> d_luts;  // index t*M+m, each N^3*3
  std::vector<T> d_alpha;              // H*W*M
  std::vector<T> d_omega;              // T
};
using ApplyGradients = ApplyGradientsT<float>;

template <typename T>
ApplyGradientsT<T> backward_apply(const LutBankT<T>& bank, const WeightMapT<T>& weights,
                                  const ImagePlaneT<T>& image,
                                  const ImagePlaneT<T>& d_output,
                                  ThreadPool* pool = nullptr) {
  detail::check_bank(bank);
  if (image.height < 1 || image.width < 1 ||
      image.data.size() != image.pixel_count() * 3)
    throw InvalidArgument("image dimensions do not match its data");
  if (d_output.height != image.height || d_output.width != image.width ||
      d_output.data.size() != image.data.size())
    throw InvalidArgument("d_output shape does not match image");
  if (weights.height != image.height || weights.width != image.width)
    throw InvalidArgument("weight map does not match image dimensions");
  if (weights.m_categories != bank.m_categories ||
      weights.alpha.size() != image.pixel_count() * bank.m_categories)
    throw InvalidArgument("alpha shape does not match bank categories");
  if ((int)weights.omega.size() != bank.t_scenarios)
    throw InvalidArgument("omega length does not match bank scenarios");

  const int n = bank.n_bins();
  const int tcount = bank.t_scenarios, mcount = bank.m_categories;
  const std::size_t tm = std::size_t(tcount) * mcount;
  const std::size_t lut_len = bank.luts[0].values.size();
  const std::vector<T> nodes = grid_nodes<T>(n);

  std::vector<T> interleaved;
  const T* cells = bank.luts[0].values.data();
  if (tm > 1) {
    interleaved = detail::interleave_bank(bank);
    cells = interleaved.data();
  }

  const int stripes = kReductionStripes;
  // Stripe-private accumulators, laid out [stripe][q][cell values].
  std::vector<T> lut_acc(std::size_t(stripes) * tm * lut_len, T(0));
  std::vector<T> omega_acc(std::size_t(stripes) * tcount, T(0));

  ApplyGradientsT<T> out;
  out.d_alpha.assign(weights.alpha.size(), T(0));
  out.d_omega.assign(tcount, T(0));

  auto rows = [&](int stripe, std::int64_t y0, std::int64_t y1) {
    T* lacc = lut_acc.data() + std::size_t(stripe) * tm * lut_len;
    T* oacc = omega_acc.data() + std::size_t(stripe) * tcount;
    std::vector<T> coef(tm), sample(tm * 3), dot(tm);
    for (std::int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const std::size_t p = std::size_t(y) * image.width + x;
        const T* px = image.data.data() + p * 3;
        const T* g = d_output.data.data() + p * 3;
        if (g[0] != g[0] || g[1] != g[1] || g[2] != g[2])
          throw InvalidArgument("NaN in d_output");
        const AxisPos<T> r = locate(px[0], n, nodes.data());
        const AxisPos<T> gg = locate(px[1], n, nodes.data());
        const AxisPos<T> b = locate(px[2], n, nodes.data());
        const auto cs = detail::corners(r, gg, b, n);
        const T* ap = weights.alpha.data() + p * mcount;
        for (int t = 0; t < tcount; ++t)
          for (int m = 0; m < mcount; ++m)
            coef[std::size_t(t) * mcount + m] = weights.omega[t] * ap[m];

        // Per-(t,m) trilinear samples, then their inner products with g.
        for (std::size_t q = 0; q < tm * 3; ++q) sample[q] = T(0);
        for (int v = 0; v < 8; ++v) {
          const T* blk = cells + cs.cell[v] * tm * 3;
          const T w = cs.w[v];
          for (std::size_t q = 0; q < tm; ++q) {
            sample[q * 3 + 0] += w * blk[q * 3 + 0];
            sample[q * 3 + 1] += w * blk[q * 3 + 1];
            sample[q * 3 + 2] += w * blk[q * 3 + 2];
          }
        }
        for (std::size_t q = 0; q < tm; ++q)
          dot[q] = sample[q * 3 + 0] * g[0] + sample[q * 3 + 1] * g[1] +
                   sample[q * 3 + 2] * g[2];

        // d_alpha: disjoint per pixel, written directly.
        T* da = out.d_alpha.data() + p * mcount;
        for (int m = 0; m < mcount; ++m) {
          T acc = T(0);
          for (int t = 0; t < tcount; ++t)
            acc += weights.omega[t] * dot[std::size_t(t) * mcount + m];
          da[m] = acc;
        }
        // d_omega into the stripe accumulator.
        for (int t = 0; t < tcount; ++t) {
          T acc = T(0);
          for (int m = 0; m < mcount; ++m) acc += ap[m] * dot[std::size_t(t) * mcount + m];
          oacc[t] += acc;
        }
        // Cell scatter: at most 8*T*M cells per pixel.
        for (int v = 0; v < 8; ++v) {
          const T w = cs.w[v];
          const std::size_t cell3 = cs.cell[v] * 3;
          for (std::size_t q = 0; q < tm; ++q) {
            const T wc = w * coef[q];
            T* dst = lacc + q * lut_len + cell3;
            dst[0] += wc * g[0];
            dst[1] += wc * g[1];
            dst[2] += wc * g[2];
          }
        }
      }
    }
  };
  if (pool)
    pool->run_parts(image.height, stripes, rows);
  else
    for (int s = 0; s < stripes; ++s)
      rows(s, part_begin(image.height, stripes, s),
           part_begin(image.height, stripes, s + 1));

  // Merge stripes in index order.
  out.d_luts.assign(tm, std::vector<T>(lut_len, T(0)));
  for (std::size_t q = 0; q < tm; ++q) {
    T* dst = out.d_luts[q].data();
    for (int s = 0; s < stripes; ++s) {
      const T* src = lut_acc.data() + (std::size_t(s) * tm + q) * lut_len;
      for (std::size_t i = 0; i < lut_len; ++i) dst[i] += src[i];
    }
  }
  for (int t = 0; t < tcount; ++t)
    for (int s = 0; s < stripes; ++s)
      out.d_omega[t] += omega_acc[std::size_t(s) * tcount + t];
  return out;
}

// Weight-map upsampling to the enhancement resolution and its adjoint; the
// bilinear convention lives in resample.hpp.
template <typename T>
std::vector<T> upsample_bilinear(std::span<const T> map_lowres, int src_h, int src_w,
                                 int channels, int out_h, int out_w) {
  if (map_lowres.size() != std::size_t(src_h) * src_w * channels)
    throw InvalidArgument("low-res map size does not match its dimensions");
  return resample_bilinear(map_lowres.data(), src_h, src_w, channels, out_h, out_w);
}

template <typename T>
std::vector<T> upsample_bilinear_backward(std::span<const T> d_output, int out_h,
                                          int out_w, int channels, int src_h,
                                          int src_w) {
  if (d_output.size() != std::size_t(out_h) * out_w * channels)
    throw InvalidArgument("d_output size does not match its dimensions");
  return resample_bilinear_backward(d_output.data(), out_h, out_w, channels, src_h,
                                    src_w);
}

// Central-difference validation of an analytic gradient. `forward` is a
// nullary closure reading the parameter vector, which is perturbed in place
// and restored. Relative error uses max(|analytic|, |numeric|, 1e-8).
template <typename T, typename F>
double finite_diff_check(F&& forward, std::span<T> params, std::span<const T> analytic,
                         double step) {
  if (step <= 0) throw InvalidArgument("step must be positive");
  if (params.size() != analytic.size())
    throw InvalidArgument("analytic gradient length does not match parameters");
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T saved = params[i];
    params[i] = T(double(saved) + step);
    const double f_plus = double(forward());
    params[i] = T(double(saved) - step);
    const double f_minus = double(forward());
    params[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw InvalidArgument("non-finite closure output in finite_diff_check");
    const double fd = (f_plus - f_minus) / (2.0 * step);
    const double a = double(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, std::abs(a - fd) / denom);
  }
  return max_rel;
}

}  // namespace lutfuse
