#include "lutfuse/predictor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lutfuse/grad.hpp"
#include "lutfuse/losses.hpp"
#include "reference.hpp"

using namespace lutfuse;

namespace {

template <typename T>
PredictorConfigT<T> tiny_config(int channels, T slope = T(0.1)) {
  PredictorConfigT<T> c;
  c.in_size = 8;
  c.in_channels = channels;
  c.w0 = 2;
  c.w1 = 3;
  c.w2 = 4;
  c.w3 = 4;
  c.t_scenarios = 2;
  c.m_categories = 2;
  c.leaky_slope = slope;
  return c;
}

template <typename T>
void randomize_params(PredictorNetT<T>& net, std::mt19937& rng) {
  for (auto& p : net.params) p = T(ref::runif(rng, -0.5f, 0.5f));
}

template <typename T>
ImagePlaneT<T> random_plane(int h, int w, int ch, std::mt19937& rng) {
  ImagePlaneT<T> img;
  img.height = h;
  img.width = w;
  img.data.resize(std::size_t(h) * w * ch);
  for (auto& v : img.data) v = T(ref::runif(rng));
  return img;
}

// Straight-line re-evaluation of the tiny architecture in planar layout,
// independent of the library's buffer and kernel ordering.
struct RefPlanes {
  int size, ch;
  std::vector<double> v;  // [ch][y][x]
  double at(int c, int y, int x) const {
    return v[(std::size_t(c) * size + y) * size + x];
  }
};

struct RefTiny {
  int cin, w0 = 2, w1 = 3, w2 = 4, w3 = 4, t = 2, m = 2;
  double slope = 0.1;
  const std::vector<double>& p;
  std::size_t pos = 0;

  explicit RefTiny(int channels, const std::vector<double>& params)
      : cin(channels), p(params) {}

  double kernel(std::size_t base, int cin_total, int o, int ky, int kx, int i) {
    return p[base + ((std::size_t(o) * 3 + ky) * 3 + kx) * cin_total + i];
  }

  RefPlanes conv3(const RefPlanes& in, std::size_t wbase, std::size_t bbase,
                  int cout, int stride) {
    RefPlanes out{in.size / stride, cout, {}};
    out.v.resize(std::size_t(cout) * out.size * out.size);
    for (int o = 0; o < cout; ++o)
      for (int oy = 0; oy < out.size; ++oy)
        for (int ox = 0; ox < out.size; ++ox) {
          double acc = p[bbase + o];
          for (int i = 0; i < in.ch; ++i)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                if (iy < 0 || iy >= in.size || ix < 0 || ix >= in.size) continue;
                acc += kernel(wbase, in.ch, o, ky, kx, i) * in.at(i, iy, ix);
              }
          out.v[(std::size_t(o) * out.size + oy) * out.size + ox] =
              acc > 0 ? acc : slope * acc;
        }
    return out;
  }

  void run(const std::vector<double>& input, std::vector<double>& omega,
           std::vector<double>& alpha) {
    RefPlanes in{8, cin, {}};
    in.v.resize(std::size_t(cin) * 64);
    for (int c = 0; c < cin; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          in.v[(std::size_t(c) * 8 + y) * 8 + x] = input[(y * 8 + x) * cin + c];

    std::size_t off = 0;
    auto take = [&](std::size_t wlen, std::size_t blen, std::size_t& w,
                    std::size_t& b) {
      w = off;
      b = off + wlen;
      off += wlen + blen;
    };
    std::size_t e0w, e0b, e1w, e1b, e2w, e2b, e3w, e3b, fcw, fcb, d2w, d2b, d1w,
        d1b, hw, hb;
    take(std::size_t(w0) * 9 * cin, w0, e0w, e0b);
    take(std::size_t(w1) * 9 * w0, w1, e1w, e1b);
    take(std::size_t(w2) * 9 * w1, w2, e2w, e2b);
    take(std::size_t(w3) * 9 * w2, w3, e3w, e3b);
    take(std::size_t(t) * w3, t, fcw, fcb);
    take(std::size_t(w1) * 9 * w3, w1, d2w, d2b);
    take(std::size_t(w0) * 9 * w1, w0, d1w, d1b);
    take(std::size_t(m) * w0, m, hw, hb);

    auto a0 = conv3(in, e0w, e0b, w0, 1);    // 8
    auto a1 = conv3(a0, e1w, e1b, w1, 2);    // 4
    auto a2 = conv3(a1, e2w, e2b, w2, 2);    // 2
    auto a3 = conv3(a2, e3w, e3b, w3, 2);    // 1

    std::vector<double> pooled(w3, 0.0);
    for (int c = 0; c < w3; ++c) {
      for (int y = 0; y < a3.size; ++y)
        for (int x = 0; x < a3.size; ++x) pooled[c] += a3.at(c, y, x);
      pooled[c] /= double(a3.size) * a3.size;
    }
    std::vector<double> wl(t);
    for (int i = 0; i < t; ++i) {
      wl[i] = p[fcb + i];
      for (int c = 0; c < w3; ++c) wl[i] += p[fcw + std::size_t(i) * w3 + c] * pooled[c];
    }
    auto soft = [](std::vector<double> z) {
      double mx = z[0];
      for (double v : z) mx = std::max(mx, v);
      double s = 0;
      for (auto& v : z) {
        v = std::exp(v - mx);
        s += v;
      }
      for (auto& v : z) v /= s;
      return z;
    };
    omega = soft(wl);

    RefPlanes skip{2, w2, std::vector<double>(std::size_t(w2) * 4)};
    for (int c = 0; c < w2; ++c)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
          skip.v[(std::size_t(c) * 2 + y) * 2 + x] =
              a3.at(c, y / 2, x / 2) + a2.at(c, y, x);
    auto ad2 = conv3(skip, d2w, d2b, w1, 1);  // 2
    auto ad1 = conv3(ad2, d1w, d1b, w0, 1);   // 2

    alpha.resize(std::size_t(4) * m);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        std::vector<double> logits(m);
        for (int o = 0; o < m; ++o) {
          logits[o] = p[hb + o];
          for (int c = 0; c < w0; ++c)
            logits[o] += p[hw + std::size_t(o) * w0 + c] * ad1.at(c, y, x);
        }
        auto sm = soft(logits);
        for (int o = 0; o < m; ++o) alpha[(std::size_t(y) * 2 + x) * m + o] = sm[o];
      }
  }
};

}  // namespace

TEST(InitPredictor, DeterministicGivenSeed) {
  auto a = init_predictor<float>(tiny_config<float>(3), 42);
  auto b = init_predictor<float>(tiny_config<float>(3), 42);
  EXPECT_EQ(a.params, b.params);
  auto c = init_predictor<float>(tiny_config<float>(3), 43);
  EXPECT_NE(a.params, c.params);
}

TEST(InitPredictor, HeadsStartAtZeroSoOutputsAreUniform) {
  std::mt19937 rng(301);
  auto net = init_predictor<float>(tiny_config<float>(3), 7);
  auto input = random_plane<float>(8, 8, 3, rng);
  auto out = predictor_forward(net, input);
  for (float w : out.omega) EXPECT_EQ(w, 0.5f);
  for (float a : out.alpha) EXPECT_EQ(a, 0.5f);
}

TEST(InitPredictor, FreshNetWithIdentityBankReproducesImage) {
  std::mt19937 rng(303);
  auto net = init_predictor<float>(tiny_config<float>(3), 11);
  auto lowres = random_plane<float>(8, 8, 3, rng);
  auto out = predictor_forward(net, lowres);

  const int h = 16, w = 12;
  auto img = ref::random_image(h, w, rng);
  WeightMap wm;
  wm.omega = out.omega;
  wm.alpha = upsample_bilinear(std::span<const float>(out.alpha), 2, 2, 2, h, w);
  wm.height = h;
  wm.width = w;
  wm.m_categories = 2;
  auto bank = identity_bank<float>(2, 2, 9);
  auto enhanced = apply_spatial_aware(bank, wm, img);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    ASSERT_NEAR(enhanced.data[i], img.data[i], 1e-6);
}

TEST(PredictorForward, OutputsLieOnSimplices) {
  std::mt19937 rng(307);
  auto net = make_conv_predictor(tiny_config<float>(3));
  randomize_params(net, rng);
  auto input = random_plane<float>(8, 8, 3, rng);
  auto out = predictor_forward(net, input);
  float sw = 0.0f;
  for (float v : out.omega) {
    EXPECT_GE(v, 0.0f);
    sw += v;
  }
  EXPECT_NEAR(sw, 1.0f, 1e-6);
  for (int p = 0; p < 4; ++p) {
    float sa = 0.0f;
    for (int m = 0; m < 2; ++m) sa += out.alpha[p * 2 + m];
    EXPECT_NEAR(sa, 1.0f, 1e-6);
  }
}

TEST(PredictorForward, TinyNetMatchesStraightLineReference) {
  std::mt19937 rng(311);
  auto net = make_conv_predictor(tiny_config<double>(1));
  for (auto& p : net.params) p = double(ref::runif(rng, -0.5f, 0.5f));
  ImagePlaneT<double> input;
  input.height = input.width = 8;
  input.data.resize(64);
  for (auto& v : input.data) v = double(ref::runif(rng));

  auto out = predictor_forward(net, input);

  RefTiny reference(1, net.params);
  std::vector<double> omega, alpha;
  reference.run(input.data, omega, alpha);
  ASSERT_EQ(out.omega.size(), omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i)
    EXPECT_NEAR(out.omega[i], omega[i], 1e-12);
  ASSERT_EQ(out.alpha.size(), alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i)
    EXPECT_NEAR(out.alpha[i], alpha[i], 1e-12);
}

TEST(PredictorForward, RejectsWrongInputSize) {
  std::mt19937 rng(313);
  auto net = make_conv_predictor(tiny_config<float>(3));
  auto input = random_plane<float>(8, 9, 3, rng);
  EXPECT_THROW(predictor_forward(net, input), InvalidArgument);
}

TEST(PredictorForward, IndependentOfWorkerCount) {
  std::mt19937 rng(317);
  auto net = make_conv_predictor(tiny_config<float>(3));
  randomize_params(net, rng);
  auto input = random_plane<float>(8, 8, 3, rng);
  auto seq = predictor_forward(net, input);
  ThreadPool pool(4);
  auto par = predictor_forward(net, input, &pool);
  EXPECT_EQ(seq.omega, par.omega);
  EXPECT_EQ(seq.alpha, par.alpha);
  EXPECT_EQ(seq.omega_logits, par.omega_logits);
  EXPECT_EQ(seq.alpha_logits, par.alpha_logits);
}

TEST(PredictorBackward, RequiresCachedForward) {
  std::mt19937 rng(331);
  auto net = make_conv_predictor(tiny_config<float>(3));
  auto input = random_plane<float>(8, 8, 3, rng);
  std::vector<float> dw(2, 0.1f), da(8, 0.1f);
  EXPECT_THROW(predictor_backward(net, input, dw, da), InvalidState);

  predictor_forward(net, input);
  auto other = random_plane<float>(8, 8, 3, rng);
  EXPECT_THROW(predictor_backward(net, other, dw, da), InvalidState);
  EXPECT_NO_THROW(predictor_backward(net, input, dw, da));
}

TEST(PredictorBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937 rng(337);
  auto net = make_conv_predictor(tiny_config<float>(3));
  randomize_params(net, rng);
  auto input = random_plane<float>(8, 8, 3, rng);
  predictor_forward(net, input);
  std::vector<float> dw(2, 0.0f), da(8, 0.0f);
  auto grads = predictor_backward(net, input, dw, da);
  for (float g : grads) ASSERT_EQ(g, 0.0f);
}

TEST(PredictorBackward, TinyGradientsMatchFiniteDifferences) {
  std::mt19937 rng(341);
  auto net = make_conv_predictor(tiny_config<double>(1));
  for (auto& p : net.params) p = double(ref::runif(rng, -0.5f, 0.5f));
  ImagePlaneT<double> input;
  input.height = input.width = 8;
  input.data.resize(64);
  for (auto& v : input.data) v = double(ref::runif(rng));

  std::vector<double> dw(2), da(8);
  for (auto& v : dw) v = double(ref::runif(rng, -1.0f, 1.0f));
  for (auto& v : da) v = double(ref::runif(rng, -1.0f, 1.0f));

  predictor_forward(net, input);
  auto analytic = predictor_backward(net, input, dw, da);

  auto fwd = [&] {
    auto out = predictor_forward(net, input);
    double s = 0.0;
    for (int i = 0; i < 2; ++i) s += dw[i] * out.omega[i];
    for (int i = 0; i < 8; ++i) s += da[i] * out.alpha[i];
    return s;
  };
  double err = finite_diff_check(fwd, std::span<double>(net.params),
                                 std::span<const double>(analytic), 1e-6);
  EXPECT_LT(err, 1e-3);
}

TEST(PredictorBackward, DeadActivationRegionBlocksBiasGradient) {
  // Plain-ReLU variant: a strongly negative first-layer bias silences its
  // channel everywhere, so nothing can flow back into that bias.
  std::mt19937 rng(347);
  auto net = make_conv_predictor(tiny_config<float>(3, 0.0f));
  randomize_params(net, rng);
  const auto spans = detail::conv_layout(net.config);
  net.params[spans[0].b_off + 0] = -10.0f;
  auto input = random_plane<float>(8, 8, 3, rng);
  predictor_forward(net, input);
  std::vector<float> dw(2), da(8);
  for (auto& v : dw) v = ref::runif(rng, -1.0f, 1.0f);
  for (auto& v : da) v = ref::runif(rng, -1.0f, 1.0f);
  auto grads = predictor_backward(net, input, dw, da);
  EXPECT_EQ(grads[spans[0].b_off + 0], 0.0f);
  EXPECT_NE(grads[spans[0].b_off + 1], 0.0f);
}

TEST(GridPredictor, IgnoresInputContentAndExposesLogits) {
  std::mt19937 rng(353);
  auto net = make_grid_predictor<float>(2, 3, 4);
  randomize_params(net, rng);
  auto a = ref::random_image(5, 5, rng);
  auto b = ref::random_image(9, 2, rng);
  auto out_a = predictor_forward(net, a);
  auto out_b = predictor_forward(net, b);
  EXPECT_EQ(out_a.omega, out_b.omega);
  EXPECT_EQ(out_a.alpha, out_b.alpha);
  for (int t = 0; t < 2; ++t) EXPECT_EQ(out_a.omega_logits[t], net.params[t]);
}

TEST(GridPredictor, ZeroInitEmitsUniformWeights) {
  auto net = make_grid_predictor<float>(3, 4, 2);
  auto input = ImagePlane{1, 1, {0.5f, 0.5f, 0.5f}};
  auto out = predictor_forward(net, input);
  for (float w : out.omega) EXPECT_FLOAT_EQ(w, 1.0f / 3.0f);
  for (float a : out.alpha) EXPECT_EQ(a, 0.25f);
}

TEST(GridPredictor, BackwardMatchesFiniteDifferences) {
  std::mt19937 rng(359);
  auto net = make_grid_predictor<double>(2, 2, 2);
  for (auto& p : net.params) p = double(ref::runif(rng, -1.0f, 1.0f));
  ImagePlaneT<double> input{1, 1, {0.1, 0.2, 0.3}};
  std::vector<double> dw(2), da(8);
  for (auto& v : dw) v = double(ref::runif(rng, -1.0f, 1.0f));
  for (auto& v : da) v = double(ref::runif(rng, -1.0f, 1.0f));
  predictor_forward(net, input);
  auto analytic = predictor_backward(net, input, dw, da);
  auto fwd = [&] {
    auto out = predictor_forward(net, input);
    double s = 0.0;
    for (int i = 0; i < 2; ++i) s += dw[i] * out.omega[i];
    for (int i = 0; i < 8; ++i) s += da[i] * out.alpha[i];
    return s;
  };
  double err = finite_diff_check(fwd, std::span<double>(net.params),
                                 std::span<const double>(analytic), 1e-6);
  EXPECT_LT(err, 1e-8);
}

TEST(PredictorInvariants, PermutingCategoriesAndLutsTogetherIsNeutral) {
  std::mt19937 rng(367);
  auto net = make_conv_predictor(tiny_config<float>(3));
  randomize_params(net, rng);
  auto lowres = random_plane<float>(8, 8, 3, rng);
  auto out = predictor_forward(net, lowres);

  const int h = 10, w = 7, m = 2;
  auto img = ref::random_image(h, w, rng);
  auto bank = ref::random_bank(2, m, 3, rng);

  auto build = [&](const std::vector<float>& alpha_low) {
    WeightMap wm;
    wm.omega = out.omega;
    wm.alpha = upsample_bilinear(std::span<const float>(alpha_low), 2, 2, m, h, w);
    wm.height = h;
    wm.width = w;
    wm.m_categories = m;
    return wm;
  };
  auto base = apply_spatial_aware(bank, build(out.alpha), img);

  // swap the two categories in both the map and every scenario row
  std::vector<float> swapped(out.alpha.size());
  for (int p = 0; p < 4; ++p) {
    swapped[p * m + 0] = out.alpha[p * m + 1];
    swapped[p * m + 1] = out.alpha[p * m + 0];
  }
  auto perm_bank = bank;
  for (int t = 0; t < 2; ++t)
    std::swap(perm_bank.luts[t * m + 0], perm_bank.luts[t * m + 1]);
  auto permuted = apply_spatial_aware(perm_bank, build(swapped), img);
  for (std::size_t i = 0; i < base.data.size(); ++i)
    ASSERT_NEAR(base.data[i], permuted.data[i], 1e-6);
}

TEST(PredictorInvariants, EndToEndChainMatchesFiniteDifferences) {
  std::mt19937 rng(373);
  const int h = 16, w = 16, t = 2, m = 2, n = 3;
  auto net = make_conv_predictor(tiny_config<double>(3));
  for (auto& p : net.params) p = double(ref::runif(rng, -0.5f, 0.5f));

  auto fimg = ref::random_image(h, w, rng);
  auto ftgt = ref::random_image(h, w, rng);
  ImagePlaneT<double> image{h, w, {fimg.data.begin(), fimg.data.end()}};
  ImagePlaneT<double> target{h, w, {ftgt.data.begin(), ftgt.data.end()}};
  auto fbank = ref::random_bank(t, m, n, rng);
  LutBankT<double> bank;
  bank.t_scenarios = t;
  bank.m_categories = m;
  for (const auto& lut : fbank.luts)
    bank.luts.push_back({lut.n_bins, {lut.values.begin(), lut.values.end()}});

  LossWeightsT<double> lw;
  lw.w_color = 0.0;  // keep the objective on one smooth piece for the check
  lw.w_perceptual = 0.0;
  // The monotonicity term does not depend on the predictor, but its large
  // constant value would swamp the central differences with rounding noise.
  lw.w_mono = 0.0;

  auto pipeline = [&](bool want_grads, std::vector<double>* grads) {
    auto lowres_data = resample_bilinear(image.data.data(), h, w, 3, 8, 8);
    ImagePlaneT<double> lowres{8, 8, std::move(lowres_data)};
    auto pf = predictor_forward(net, lowres);
    WeightMapT<double> wm_low;
    wm_low.omega = pf.omega;
    wm_low.alpha = pf.alpha;
    wm_low.height = wm_low.width = 2;
    wm_low.m_categories = m;
    WeightMapT<double> wm;
    wm.omega = pf.omega;
    wm.alpha = upsample_bilinear(std::span<const double>(pf.alpha), 2, 2, m, h, w);
    wm.height = h;
    wm.width = w;
    wm.m_categories = m;
    auto pred = apply_spatial_aware(bank, wm, image);
    auto tl = total_loss(pred, target, bank, wm_low, lw);
    if (want_grads) {
      ImagePlaneT<double> d_out{h, w, tl.d_pred};
      auto ag = backward_apply(bank, wm, image, d_out);
      auto d_alpha_low = upsample_bilinear_backward(
          std::span<const double>(ag.d_alpha), h, w, m, 2, 2);
      for (std::size_t i = 0; i < d_alpha_low.size(); ++i)
        d_alpha_low[i] += tl.d_alpha[i];
      std::vector<double> d_omega(t);
      for (int i = 0; i < t; ++i) d_omega[i] = ag.d_omega[i] + tl.d_omega[i];
      *grads = predictor_backward(net, lowres, d_omega, d_alpha_low);
    }
    return tl.value;
  };

  std::vector<double> analytic;
  pipeline(true, &analytic);
  auto fwd = [&] { return pipeline(false, nullptr); };
  // Several deep-encoder gradients sit below 1e-9 on this miniature setup,
  // where central differences carry a few e-12 of rounding noise against the
  // absolute comparison floor; structural errors would show up as O(1).
  double err = finite_diff_check(fwd, std::span<double>(net.params),
                                 std::span<const double>(analytic), 1e-5);
  EXPECT_LT(err, 5e-3);
}
