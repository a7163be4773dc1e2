#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lutfuse/error.hpp"
#include "lutfuse/parallel.hpp"

// Forward enhancement path: 3D LUT types, trilinear sampling, per-pixel
// category fusion, scenario fusion, and constant-weight flattening.
//
// Summation-order contract. Several operations promise bit-identical results
// against each other (apply vs. flatten+sample, fuse vs. one-hot sample, the
// naive reference in the test suite). All of them therefore evaluate one
// canonical sequence per pixel and channel:
//
//   1. locate() each axis: interval i0 and fraction f measured against the
//      stored node values.
//   2. fused corners F[v], v = dr*4 + dg*2 + db ascending:
//        F[v] = sum over t (outer), m (inner) of (omega_t * alpha_m) * cell
//      accumulated left to right.
//   3. clamped-lerp tree, blue axis innermost:
//        e[dr][dg] = L(F[dr,dg,0], F[dr,dg,1], fb)
//        q[dr]     = L(e[dr][0],   e[dr][1],   fg)
//        out       = L(q[0],       q[1],       fr)
//      with L(a,b,f) = b when f == 1, else clamp(a + f*(b-a)) to the [a,b]
//      hull. The hull clamp (at most one ulp) keeps convex data convex; the
//      f == 1 branch makes the top grid node exact; f == 0 is exact already.
//
// No fused multiply-add anywhere (the build sets -ffp-contract=off). Any
// change here is a format-level break: flattened LUTs written by older builds
// would stop matching the kernel bit-for-bit.

namespace lutfuse {

template <typename T>
struct Lut3dT {
  // values[((i*N + j)*N + k)*3 + c]; i indexes red, j green, k blue.
  // Nominal range [0,1]; not clamped during training.
  int n_bins = 0;
  std::vector<T> values;

  T* cell(int i, int j, int k) {
    return values.data() + (std::size_t(3) * (((std::size_t)i * n_bins + j) * n_bins + k));
  }
  const T* cell(int i, int j, int k) const {
    return values.data() + (std::size_t(3) * (((std::size_t)i * n_bins + j) * n_bins + k));
  }
};
using Lut3d = Lut3dT<float>;

template <typename T>
struct LutBankT {
  int t_scenarios = 0;
  int m_categories = 0;
  std::vector<Lut3dT<T>> luts;  // index t*m_categories + m

  int n_bins() const { return luts.empty() ? 0 : luts.front().n_bins; }
  Lut3dT<T>& lut(int t, int m) { return luts[std::size_t(t) * m_categories + m]; }
  const Lut3dT<T>& lut(int t, int m) const { return luts[std::size_t(t) * m_categories + m]; }
};
using LutBank = LutBankT<float>;

template <typename T>
struct ImagePlaneT {
  int height = 0;
  int width = 0;
  std::vector<T> data;  // (y*width + x)*3 + c, components nominally in [0,1]

  T* pixel(int y, int x) { return data.data() + (std::size_t(3) * ((std::size_t)y * width + x)); }
  const T* pixel(int y, int x) const {
    return data.data() + (std::size_t(3) * ((std::size_t)y * width + x));
  }
  std::size_t pixel_count() const { return std::size_t(height) * width; }
};
using ImagePlane = ImagePlaneT<float>;

template <typename T>
ImagePlaneT<T> make_image(int height, int width, T fill = T(0)) {
  if (height < 1 || width < 1) throw InvalidArgument("image dimensions must be positive");
  return ImagePlaneT<T>{height, width,
                        std::vector<T>(std::size_t(height) * width * 3, fill)};
}

template <typename T>
struct WeightMapT {
  std::vector<T> omega;  // T entries, simplex
  int height = 0;
  int width = 0;
  int m_categories = 0;
  std::vector<T> alpha;  // (y*width + x)*m_categories + m, per-pixel simplex
};
using WeightMap = WeightMapT<float>;

// Lattice node positions i/(N-1), i = 0..N-1, evaluated in T precision.
// These exact stored values anchor interval location below.
template <typename T>
std::vector<T> grid_nodes(int n_bins) {
  if (n_bins < 2) throw InvalidArgument("n_bins must be >= 2");
  std::vector<T> nodes(n_bins);
  for (int i = 0; i < n_bins; ++i) nodes[i] = T(i) / T(n_bins - 1);
  return nodes;
}

template <typename T>
Lut3dT<T> identity_lut(int n_bins) {
  std::vector<T> nodes = grid_nodes<T>(n_bins);
  Lut3dT<T> lut;
  lut.n_bins = n_bins;
  lut.values.resize(std::size_t(n_bins) * n_bins * n_bins * 3);
  std::size_t p = 0;
  for (int i = 0; i < n_bins; ++i)
    for (int j = 0; j < n_bins; ++j)
      for (int k = 0; k < n_bins; ++k) {
        lut.values[p++] = nodes[i];
        lut.values[p++] = nodes[j];
        lut.values[p++] = nodes[k];
      }
  return lut;
}

template <typename T>
LutBankT<T> identity_bank(int t_scenarios, int m_categories, int n_bins) {
  if (t_scenarios < 1 || m_categories < 1)
    throw InvalidArgument("bank dimensions must be >= 1");
  LutBankT<T> bank;
  bank.t_scenarios = t_scenarios;
  bank.m_categories = m_categories;
  bank.luts.assign(std::size_t(t_scenarios) * m_categories, identity_lut<T>(n_bins));
  return bank;
}

// Position of a clamped coordinate within the node lattice: the interval
// index i0 in [0, N-2] with nodes[i0] <= c, and the fractional offset
// f = (c - nodes[i0]) / (nodes[i0+1] - nodes[i0]).
//
// f is measured against the stored node values rather than as c*(N-1) - i0:
// the scaled form is not exactly 0 at the nodes for many N (the round trip
// (i/(N-1))*(N-1) already fails at N = 14, 20, 23, ...), while this form is
// 0 at every interior node and exactly 1 at c == 1 for any N. Monotonicity
// of rounding bounds f to [0, 1].
template <typename T>
struct AxisPos {
  int i0;
  T f;
};

template <typename T>
inline AxisPos<T> locate(T c, int n_bins, const T* nodes) {
  if (c != c) throw InvalidArgument("NaN color component");
  if (c < T(0)) c = T(0);
  if (c > T(1)) c = T(1);
  int i0 = int(c * T(n_bins - 1));
  if (i0 > n_bins - 2) i0 = n_bins - 2;
  while (i0 < n_bins - 2 && nodes[i0 + 1] <= c) ++i0;
  while (i0 > 0 && nodes[i0] > c) --i0;
  T f = (c - nodes[i0]) / (nodes[i0 + 1] - nodes[i0]);
  return {i0, f};
}

namespace detail {

// The canonical interpolation step (contract item 3).
template <typename T>
inline T clamped_lerp(T a, T b, T f) {
  if (f == T(1)) return b;
  T v = a + f * (b - a);
  const T lo = a < b ? a : b;
  const T hi = a < b ? b : a;
  if (v < lo) v = lo;
  if (v > hi) v = hi;
  return v;
}

// F holds the 8 fused corner values of one channel, indexed dr*4 + dg*2 + db.
template <typename T>
inline T lerp_tree(const T* F, T fr, T fg, T fb) {
  const T e00 = clamped_lerp(F[0], F[1], fb);
  const T e01 = clamped_lerp(F[2], F[3], fb);
  const T e10 = clamped_lerp(F[4], F[5], fb);
  const T e11 = clamped_lerp(F[6], F[7], fb);
  const T q0 = clamped_lerp(e00, e01, fg);
  const T q1 = clamped_lerp(e10, e11, fg);
  return clamped_lerp(q0, q1, fr);
}

// Corner cell offsets plus the (wr*wg)*wb product weights. The forward path
// interpolates through the lerp tree; the product weights express the same
// linear map and drive the backward scatter.
template <typename T>
struct CornerSet {
  std::size_t cell[8];  // cell index (not scaled by channel count)
  T w[8];
};

template <typename T>
inline CornerSet<T> corners(const AxisPos<T>& r, const AxisPos<T>& g, const AxisPos<T>& b,
                            int n) {
  const T wr[2] = {T(1) - r.f, r.f};
  const T wg[2] = {T(1) - g.f, g.f};
  const T wb[2] = {T(1) - b.f, b.f};
  const std::size_t base = ((std::size_t)r.i0 * n + g.i0) * n + b.i0;
  const std::size_t dr = std::size_t(n) * n, dg = n, db = 1;
  CornerSet<T> cs;
  int v = 0;
  for (int a = 0; a < 2; ++a)
    for (int bb = 0; bb < 2; ++bb)
      for (int cc = 0; cc < 2; ++cc) {
        cs.cell[v] = base + a * dr + bb * dg + cc * db;
        cs.w[v] = (wr[a] * wg[bb]) * wb[cc];
        ++v;
      }
  return cs;
}

template <typename T>
inline void check_lut(const Lut3dT<T>& lut) {
  if (lut.n_bins < 2) throw InvalidArgument("n_bins must be >= 2");
  if (lut.values.size() != std::size_t(lut.n_bins) * lut.n_bins * lut.n_bins * 3)
    throw InvalidArgument("LUT value count does not match n_bins^3 * 3");
}

template <typename T>
inline void check_bank(const LutBankT<T>& bank) {
  if (bank.t_scenarios < 1 || bank.m_categories < 1)
    throw InvalidArgument("bank dimensions must be >= 1");
  if (bank.luts.size() != std::size_t(bank.t_scenarios) * bank.m_categories)
    throw InvalidArgument("bank LUT count does not match T*M");
  for (const auto& lut : bank.luts) {
    check_lut(lut);
    if (lut.n_bins != bank.n_bins())
      throw InvalidArgument("bank LUTs must share one n_bins");
  }
}

}  // namespace detail

template <typename T>
std::array<T, 3> trilinear_sample(const Lut3dT<T>& lut, std::array<T, 3> color) {
  detail::check_lut(lut);
  std::vector<T> nodes = grid_nodes<T>(lut.n_bins);
  const AxisPos<T> r = locate(color[0], lut.n_bins, nodes.data());
  const AxisPos<T> g = locate(color[1], lut.n_bins, nodes.data());
  const AxisPos<T> b = locate(color[2], lut.n_bins, nodes.data());
  const auto cs = detail::corners(r, g, b, lut.n_bins);
  std::array<T, 3> out;
  T F[8];
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 8; ++v) F[v] = lut.values[cs.cell[v] * 3 + c];
    out[c] = detail::lerp_tree(F, r.f, g.f, b.f);
  }
  return out;
}

// Per-pixel category fusion: interpolates the LUT whose cells are the
// alpha-weighted sum of the row's cells, fused corner-locally.
template <typename T>
std::array<T, 3> fuse_category(std::span<const Lut3dT<T>> bank_row,
                               std::span<const T> alpha_pixel, std::array<T, 3> color) {
  if (bank_row.empty()) throw InvalidArgument("bank row is empty");
  if (alpha_pixel.size() != bank_row.size())
    throw InvalidArgument("alpha length does not match category count");
  const int n = bank_row[0].n_bins;
  for (const auto& lut : bank_row) {
    detail::check_lut(lut);
    if (lut.n_bins != n) throw InvalidArgument("bank LUTs must share one n_bins");
  }
  std::vector<T> nodes = grid_nodes<T>(n);
  const AxisPos<T> r = locate(color[0], n, nodes.data());
  const AxisPos<T> g = locate(color[1], n, nodes.data());
  const AxisPos<T> b = locate(color[2], n, nodes.data());
  const auto cs = detail::corners(r, g, b, n);
  std::array<T, 3> out;
  T F[8];
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 8; ++v) {
      T acc = T(0);
      for (std::size_t m = 0; m < bank_row.size(); ++m)
        acc += alpha_pixel[m] * bank_row[m].values[cs.cell[v] * 3 + c];
      F[v] = acc;
    }
    out[c] = detail::lerp_tree(F, r.f, g.f, b.f);
  }
  return out;
}

namespace detail {

// Bank cells regrouped as [cell][t*M+m][channel] so the 8 corner reads per
// pixel touch 8 contiguous blocks. Pure relayout; arithmetic order unchanged.
template <typename T>
std::vector<T> interleave_bank(const LutBankT<T>& bank) {
  const std::size_t tm = bank.luts.size();
  const std::size_t cells = bank.luts[0].values.size() / 3;
  std::vector<T> out(cells * tm * 3);
  for (std::size_t q = 0; q < tm; ++q) {
    const T* src = bank.luts[q].values.data();
    for (std::size_t cidx = 0; cidx < cells; ++cidx) {
      T* dst = out.data() + (cidx * tm + q) * 3;
      dst[0] = src[cidx * 3 + 0];
      dst[1] = src[cidx * 3 + 1];
      dst[2] = src[cidx * 3 + 2];
    }
  }
  return out;
}

}  // namespace detail

// Spatial-aware enhancement: per pixel, scenario-and-category fused corner
// values interpolated through the canonical lerp tree. Pixels are
// independent; `pool` may parallelize over rows without affecting results.
// Output is not clamped.
template <typename T>
ImagePlaneT<T> apply_spatial_aware(const LutBankT<T>& bank, const WeightMapT<T>& weights,
                                   const ImagePlaneT<T>& image, ThreadPool* pool = nullptr) {
  detail::check_bank(bank);
  if (image.height < 1 || image.width < 1 ||
      image.data.size() != image.pixel_count() * 3)
    throw InvalidArgument("image dimensions do not match its data");
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
  const std::vector<T> nodes = grid_nodes<T>(n);

  // tm == 1 already has the interleaved layout.
  std::vector<T> interleaved;
  const T* cells = bank.luts[0].values.data();
  if (tm > 1) {
    interleaved = detail::interleave_bank(bank);
    cells = interleaved.data();
  }

  ImagePlaneT<T> out = make_image<T>(image.height, image.width);
  auto rows = [&](int, std::int64_t y0, std::int64_t y1) {
    std::vector<T> coef(tm);
    for (std::int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const std::size_t p = std::size_t(y) * image.width + x;
        const T* px = image.data.data() + p * 3;
        const AxisPos<T> r = locate(px[0], n, nodes.data());
        const AxisPos<T> g = locate(px[1], n, nodes.data());
        const AxisPos<T> b = locate(px[2], n, nodes.data());
        const auto cs = detail::corners(r, g, b, n);
        const T* ap = weights.alpha.data() + p * mcount;
        for (int t = 0; t < tcount; ++t)
          for (int m = 0; m < mcount; ++m)
            coef[std::size_t(t) * mcount + m] = weights.omega[t] * ap[m];
        T F0[8], F1[8], F2[8];
        for (int v = 0; v < 8; ++v) {
          const T* blk = cells + cs.cell[v] * tm * 3;
          T f0 = T(0), f1 = T(0), f2 = T(0);
          for (std::size_t q = 0; q < tm; ++q) {
            const T cq = coef[q];
            f0 += cq * blk[0];
            f1 += cq * blk[1];
            f2 += cq * blk[2];
            blk += 3;
          }
          F0[v] = f0;
          F1[v] = f1;
          F2[v] = f2;
        }
        T* op = out.data.data() + p * 3;
        op[0] = detail::lerp_tree(F0, r.f, g.f, b.f);
        op[1] = detail::lerp_tree(F1, r.f, g.f, b.f);
        op[2] = detail::lerp_tree(F2, r.f, g.f, b.f);
      }
    }
  };
  if (pool)
    pool->run_parts(image.height, kReductionStripes, rows);
  else
    rows(0, 0, image.height);
  return out;
}

// Collapses the bank under spatially constant weights. Sampling the result
// matches apply_spatial_aware with those weights bit-for-bit: the cell sum
// below is the same t-outer m-inner accumulation the kernel performs per
// corner, and both finish through the same lerp tree.
template <typename T>
Lut3dT<T> flatten_bank(const LutBankT<T>& bank, std::span<const T> omega,
                       std::span<const T> alpha_const) {
  detail::check_bank(bank);
  if ((int)omega.size() != bank.t_scenarios)
    throw InvalidArgument("omega length does not match bank scenarios");
  if ((int)alpha_const.size() != bank.m_categories)
    throw InvalidArgument("alpha length does not match bank categories");
  auto check_simplex = [](std::span<const T> w, const char* name) {
    T sum = T(0);
    for (T v : w) {
      if (v < T(-1e-4)) throw InvalidArgument(std::string(name) + " has a negative entry");
      sum += v;
    }
    if (std::abs(double(sum) - 1.0) > 1e-4)
      throw InvalidArgument(std::string(name) + " does not sum to 1");
  };
  check_simplex(omega, "omega");
  check_simplex(alpha_const, "alpha");

  const std::size_t tm = bank.luts.size();
  std::vector<T> coef(tm);
  for (int t = 0; t < bank.t_scenarios; ++t)
    for (int m = 0; m < bank.m_categories; ++m)
      coef[std::size_t(t) * bank.m_categories + m] = omega[t] * alpha_const[m];

  Lut3dT<T> out;
  out.n_bins = bank.n_bins();
  out.values.assign(bank.luts[0].values.size(), T(0));
  const std::size_t cells = out.values.size() / 3;
  for (std::size_t cidx = 0; cidx < cells; ++cidx) {
    T f0 = T(0), f1 = T(0), f2 = T(0);
    for (std::size_t q = 0; q < tm; ++q) {
      const T* cell = bank.luts[q].values.data() + cidx * 3;
      const T cq = coef[q];
      f0 += cq * cell[0];
      f1 += cq * cell[1];
      f2 += cq * cell[2];
    }
    out.values[cidx * 3 + 0] = f0;
    out.values[cidx * 3 + 1] = f1;
    out.values[cidx * 3 + 2] = f2;
  }
  return out;
}

}  // namespace lutfuse
