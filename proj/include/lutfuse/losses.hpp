// Training losses over image pairs and LUT banks, each returning its value
// together with analytic gradients for every differentiable input.
//
// Conventions kept throughout:
//   - image losses (mse, cie94) average over the image and differentiate with
//     respect to the prediction only;
//   - regularizers (smooth, monotonicity) run over the raw bank cells, the
//     scenario weights, and optionally the pixel-wise category map;
//   - reductions are plain sequential sums in a double accumulator, so every
//     value is a pure function of its inputs.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "core.hpp"
#include "error.hpp"

namespace lutfuse {

template <typename T>
struct LossWeightsT {
  T w_mse = T(1);
  T w_smooth = T(1e-4);
  T w_mono = T(10);
  T w_color = T(5e-3);
  T w_perceptual = T(5e-2);
};
using LossWeights = LossWeightsT<float>;

template <typename T>
struct LabColorT {
  T L;  // lightness, [0,100]
  T a;
  T b;
};
using LabColor = LabColorT<float>;

template <typename T>
struct ImageLossT {
  T value;
  std::vector<T> d_pred;  // H*W*3
};
using ImageLoss = ImageLossT<float>;

template <typename T>
struct SmoothLossT {
  T value;
  T lut_term;
  T omega_term;
  T alpha_term;
  std::vector<std::vector<T>> d_luts;  // index t*M+m
  std::vector<T> d_omega;
  std::vector<T> d_alpha;  // H*W*M, zero when the alpha term is disabled
};
using SmoothLoss = SmoothLossT<float>;

template <typename T>
struct MonoLossT {
  T value;
  std::vector<std::vector<T>> d_luts;
};
using MonoLoss = MonoLossT<float>;

namespace detail {

template <typename T>
void check_image_pair(const ImagePlaneT<T>& pred, const ImagePlaneT<T>& target) {
  if (pred.height != target.height || pred.width != target.width)
    throw InvalidArgument("image dimensions do not match");
  if (pred.data.size() != pred.pixel_count() * 3 ||
      target.data.size() != target.pixel_count() * 3)
    throw InvalidArgument("image buffer does not match its dimensions");
}

}  // namespace detail

// Mean squared error over all H*W*3 components.
template <typename T>
ImageLossT<T> mse_loss(const ImagePlaneT<T>& pred, const ImagePlaneT<T>& target) {
  detail::check_image_pair(pred, target);
  const std::size_t n = pred.data.size();
  ImageLossT<T> out;
  out.d_pred.resize(n);
  double acc = 0.0;
  const T scale = T(2.0 / double(n));
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = pred.data[i] - target.data[i];
    acc += double(diff) * double(diff);
    out.d_pred[i] = scale * diff;
  }
  out.value = T(acc / double(n));
  return out;
}

// Squared adjacent-cell differences along each grid axis and channel for every
// LUT, plus ||omega||^2, plus (optionally) the mean over pixels of ||alpha||^2.
// The alpha term is normalized per pixel so its weight does not depend on the
// image resolution the map was predicted at.
template <typename T>
SmoothLossT<T> smooth_loss(const LutBankT<T>& bank, const WeightMapT<T>& weights,
                           bool alpha_term = true) {
  detail::check_bank(bank);
  if ((int)weights.omega.size() != bank.t_scenarios)
    throw InvalidArgument("omega length does not match bank scenarios");
  if (weights.m_categories != bank.m_categories ||
      weights.alpha.size() !=
          std::size_t(weights.height) * weights.width * weights.m_categories)
    throw InvalidArgument("alpha shape does not match its dimensions");

  const int n = bank.n_bins();
  SmoothLossT<T> out;
  out.d_luts.resize(bank.luts.size());

  double lut_acc = 0.0;
  for (std::size_t q = 0; q < bank.luts.size(); ++q) {
    const auto& lut = bank.luts[q];
    auto& grad = out.d_luts[q];
    grad.assign(lut.values.size(), T(0));
    auto pair_term = [&](std::size_t lo, std::size_t hi) {
      for (int c = 0; c < 3; ++c) {
        const T diff = lut.values[hi + c] - lut.values[lo + c];
        lut_acc += double(diff) * double(diff);
        grad[hi + c] += T(2) * diff;
        grad[lo + c] -= T(2) * diff;
      }
    };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const std::size_t base = (std::size_t(i) * n + j) * n + k;
          if (i + 1 < n) pair_term(base * 3, (base + std::size_t(n) * n) * 3);
          if (j + 1 < n) pair_term(base * 3, (base + n) * 3);
          if (k + 1 < n) pair_term(base * 3, (base + 1) * 3);
        }
  }

  double omega_acc = 0.0;
  out.d_omega.resize(weights.omega.size());
  for (std::size_t t = 0; t < weights.omega.size(); ++t) {
    omega_acc += double(weights.omega[t]) * double(weights.omega[t]);
    out.d_omega[t] = T(2) * weights.omega[t];
  }

  double alpha_acc = 0.0;
  out.d_alpha.assign(weights.alpha.size(), T(0));
  if (alpha_term) {
    const double inv_pixels = 1.0 / (double(weights.height) * weights.width);
    const T gscale = T(2.0 * inv_pixels);
    for (std::size_t i = 0; i < weights.alpha.size(); ++i) {
      alpha_acc += double(weights.alpha[i]) * double(weights.alpha[i]);
      out.d_alpha[i] = gscale * weights.alpha[i];
    }
    alpha_acc *= inv_pixels;
  }

  out.lut_term = T(lut_acc);
  out.omega_term = T(omega_acc);
  out.alpha_term = T(alpha_acc);
  out.value = T(lut_acc + omega_acc + alpha_acc);
  return out;
}

// Hinge on every decrease between adjacent cells along an increasing input
// axis, per channel. Ties contribute neither value nor gradient.
template <typename T>
MonoLossT<T> monotonicity_loss(const LutBankT<T>& bank) {
  detail::check_bank(bank);
  const int n = bank.n_bins();
  MonoLossT<T> out;
  out.d_luts.resize(bank.luts.size());
  double acc = 0.0;
  for (std::size_t q = 0; q < bank.luts.size(); ++q) {
    const auto& lut = bank.luts[q];
    auto& grad = out.d_luts[q];
    grad.assign(lut.values.size(), T(0));
    auto pair_term = [&](std::size_t lo, std::size_t hi) {
      for (int c = 0; c < 3; ++c) {
        const T drop = lut.values[lo + c] - lut.values[hi + c];
        if (drop > T(0)) {
          acc += double(drop);
          grad[lo + c] += T(1);
          grad[hi + c] -= T(1);
        }
      }
    };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const std::size_t base = (std::size_t(i) * n + j) * n + k;
          if (i + 1 < n) pair_term(base * 3, (base + std::size_t(n) * n) * 3);
          if (j + 1 < n) pair_term(base * 3, (base + n) * 3);
          if (k + 1 < n) pair_term(base * 3, (base + 1) * 3);
        }
  }
  out.value = T(acc);
  return out;
}

namespace detail {

// sRGB decode -> XYZ (D65) -> CIELAB, in double, with the 3x3 Jacobian
// d(L,a,b)/d(r,g,b). Shared by srgb_to_lab and the cie94 chain rule.
inline void srgb_to_lab_jac(const double rgb[3], double lab[3], double jac[3][3]) {
  constexpr double kM[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                               {0.2126729, 0.7151522, 0.0721750},
                               {0.0193339, 0.1191920, 0.9503041}};
  constexpr double kWhite[3] = {0.95047, 1.0, 1.08883};
  constexpr double kDelta = 6.0 / 29.0;
  constexpr double kDelta3 = kDelta * kDelta * kDelta;

  double lin[3], dlin[3];
  for (int c = 0; c < 3; ++c) {
    const double v = rgb[c];
    if (std::isnan(v)) throw InvalidArgument("NaN color component");
    if (v <= 0.04045) {
      lin[c] = v / 12.92;
      dlin[c] = 1.0 / 12.92;
    } else {
      const double base = (v + 0.055) / 1.055;
      lin[c] = std::pow(base, 2.4);
      dlin[c] = 2.4 * std::pow(base, 1.4) / 1.055;
    }
  }

  double fx[3], dfx[3];  // f(XYZ_i / white_i) and its derivative w.r.t. XYZ_i
  for (int i = 0; i < 3; ++i) {
    double xyz = 0.0;
    for (int c = 0; c < 3; ++c) xyz += kM[i][c] * lin[c];
    const double t = xyz / kWhite[i];
    if (t > kDelta3) {
      fx[i] = std::cbrt(t);
      dfx[i] = 1.0 / (3.0 * fx[i] * fx[i] * kWhite[i]);
    } else {
      fx[i] = t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
      dfx[i] = 1.0 / (3.0 * kDelta * kDelta * kWhite[i]);
    }
  }

  lab[0] = 116.0 * fx[1] - 16.0;
  lab[1] = 500.0 * (fx[0] - fx[1]);
  lab[2] = 200.0 * (fx[1] - fx[2]);

  // d lab / d lin passes through the matrix row feeding each f term.
  for (int c = 0; c < 3; ++c) {
    const double dX = kM[0][c] * dfx[0], dY = kM[1][c] * dfx[1],
                 dZ = kM[2][c] * dfx[2];
    jac[0][c] = 116.0 * dY * dlin[c];
    jac[1][c] = 500.0 * (dX - dY) * dlin[c];
    jac[2][c] = 200.0 * (dY - dZ) * dlin[c];
  }
}

}  // namespace detail

template <typename T>
LabColorT<T> srgb_to_lab(const std::array<T, 3>& color) {
  double rgb[3] = {double(color[0]), double(color[1]), double(color[2])};
  double lab[3], jac[3][3];
  detail::srgb_to_lab_jac(rgb, lab, jac);
  return {T(lab[0]), T(lab[1]), T(lab[2])};
}

// CIE94 color difference, averaged over pixels. The asymmetric S_C and S_H
// terms take the reference chroma from the target, so the gradient only flows
// through the prediction's LAB coordinates.
template <typename T>
ImageLossT<T> cie94_loss(const ImagePlaneT<T>& pred, const ImagePlaneT<T>& target) {
  detail::check_image_pair(pred, target);
  constexpr double kK1 = 0.045, kK2 = 0.015, kEps = 1e-8;
  const std::size_t pixels = pred.pixel_count();
  ImageLossT<T> out;
  out.d_pred.assign(pred.data.size(), T(0));
  double acc = 0.0;
  const double inv_pixels = 1.0 / double(pixels);

  for (std::size_t p = 0; p < pixels; ++p) {
    double rgb1[3], rgb2[3];
    for (int c = 0; c < 3; ++c) {
      rgb1[c] = double(target.data[p * 3 + c]);
      rgb2[c] = double(pred.data[p * 3 + c]);
    }
    double lab1[3], lab2[3], jac_unused[3][3], jac2[3][3];
    detail::srgb_to_lab_jac(rgb1, lab1, jac_unused);
    detail::srgb_to_lab_jac(rgb2, lab2, jac2);

    const double dL = lab1[0] - lab2[0];
    const double c1 = std::hypot(lab1[1], lab1[2]);
    const double c2 = std::hypot(lab2[1], lab2[2]);
    const double dC = c1 - c2;
    const double da = lab1[1] - lab2[1], db = lab1[2] - lab2[2];
    const double resid = da * da + db * db - dC * dC;
    const double dh2 = std::max(0.0, resid);
    const double sc = 1.0 + kK1 * c1;
    const double sh = 1.0 + kK2 * c1;
    const double dist2 =
        dL * dL + (dC / sc) * (dC / sc) + dh2 / (sh * sh) + kEps;
    const double dist = std::sqrt(dist2);
    acc += dist;

    // d dist / d lab2, with subgradient 0 on the dh2 clamp and at zero
    // prediction chroma.
    const double dDdL2 = -2.0 * dL;
    double dC_da2 = 0.0, dC_db2 = 0.0;
    if (c2 > 0.0) {
      dC_da2 = -lab2[1] / c2;
      dC_db2 = -lab2[2] / c2;
    }
    double dD_da2 = 2.0 * (dC / (sc * sc)) * dC_da2;
    double dD_db2 = 2.0 * (dC / (sc * sc)) * dC_db2;
    if (resid > 0.0) {
      dD_da2 += (-2.0 * da - 2.0 * dC * dC_da2) / (sh * sh);
      dD_db2 += (-2.0 * db - 2.0 * dC * dC_db2) / (sh * sh);
    }
    const double scale = inv_pixels / (2.0 * dist);
    const double g_lab[3] = {scale * dDdL2, scale * dD_da2, scale * dD_db2};
    for (int c = 0; c < 3; ++c)
      out.d_pred[p * 3 + c] = T(g_lab[0] * jac2[0][c] + g_lab[1] * jac2[1][c] +
                                g_lab[2] * jac2[2][c]);
  }
  out.value = T(acc * inv_pixels);
  return out;
}

// Optional differentiable image-pair term (value plus d_pred). When empty the
// perceptual slot contributes nothing regardless of its weight.
template <typename T>
using PerceptualHookT =
    std::function<ImageLossT<T>(const ImagePlaneT<T>&, const ImagePlaneT<T>&)>;
using PerceptualHook = PerceptualHookT<float>;

template <typename T>
struct TotalLossT {
  T value;
  T mse, smooth, mono, color, perceptual;  // unweighted component values
  std::vector<T> d_pred;
  std::vector<std::vector<T>> d_luts;
  std::vector<T> d_omega;
  std::vector<T> d_alpha;
};
using TotalLoss = TotalLossT<float>;

// Weighted sum of the component losses. Components with weight zero are
// skipped entirely and reported as zero.
template <typename T>
TotalLossT<T> total_loss(const ImagePlaneT<T>& pred, const ImagePlaneT<T>& target,
                         const LutBankT<T>& bank, const WeightMapT<T>& weights,
                         const LossWeightsT<T>& lw,
                         const PerceptualHookT<T>& hook = {}) {
  for (T w : {lw.w_mse, lw.w_smooth, lw.w_mono, lw.w_color, lw.w_perceptual}) {
    if (!(w >= T(0)) || !std::isfinite(double(w)))
      throw InvalidArgument("loss weights must be finite and non-negative");
  }
  detail::check_image_pair(pred, target);

  TotalLossT<T> out;
  out.mse = out.smooth = out.mono = out.color = out.perceptual = T(0);
  out.d_pred.assign(pred.data.size(), T(0));
  out.d_luts.resize(bank.luts.size());
  for (std::size_t q = 0; q < bank.luts.size(); ++q)
    out.d_luts[q].assign(bank.luts[q].values.size(), T(0));
  out.d_omega.assign(weights.omega.size(), T(0));
  out.d_alpha.assign(weights.alpha.size(), T(0));

  double total = 0.0;
  auto add_image_term = [&](const ImageLossT<T>& term, T w, T& slot) {
    slot = term.value;
    total += double(w) * double(term.value);
    for (std::size_t i = 0; i < out.d_pred.size(); ++i)
      out.d_pred[i] += w * term.d_pred[i];
  };

  if (lw.w_mse != T(0)) add_image_term(mse_loss(pred, target), lw.w_mse, out.mse);
  if (lw.w_color != T(0))
    add_image_term(cie94_loss(pred, target), lw.w_color, out.color);
  if (lw.w_perceptual != T(0) && hook)
    add_image_term(hook(pred, target), lw.w_perceptual, out.perceptual);

  if (lw.w_smooth != T(0)) {
    auto s = smooth_loss(bank, weights);
    out.smooth = s.value;
    total += double(lw.w_smooth) * double(s.value);
    for (std::size_t q = 0; q < out.d_luts.size(); ++q)
      for (std::size_t i = 0; i < out.d_luts[q].size(); ++i)
        out.d_luts[q][i] += lw.w_smooth * s.d_luts[q][i];
    for (std::size_t t = 0; t < out.d_omega.size(); ++t)
      out.d_omega[t] += lw.w_smooth * s.d_omega[t];
    for (std::size_t i = 0; i < out.d_alpha.size(); ++i)
      out.d_alpha[i] += lw.w_smooth * s.d_alpha[i];
  }

  if (lw.w_mono != T(0)) {
    auto m = monotonicity_loss(bank);
    out.mono = m.value;
    total += double(lw.w_mono) * double(m.value);
    for (std::size_t q = 0; q < out.d_luts.size(); ++q)
      for (std::size_t i = 0; i < out.d_luts[q].size(); ++i)
        out.d_luts[q][i] += lw.w_mono * m.d_luts[q][i];
  }

  out.value = T(total);
  return out;
}

}  // namespace lutfuse
