// End-to-end optimization: bias-corrected Adam over the LUT bank and the
// predictor parameters, cosine-annealed learning rate with warm restarts,
// deterministic per-epoch shuffling, per-epoch metrics, and resumable
// checkpoints.
//
// Determinism contract: a fixed seed and fixed file order give a bit-identical
// loss trajectory, independent of the worker pool. Everything order-sensitive
// (shuffle, Adam, reductions) runs over fixed sequences.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bundle.hpp"
#include "core.hpp"
#include "error.hpp"
#include "grad.hpp"
#include "imageio.hpp"
#include "losses.hpp"
#include "parallel.hpp"
#include "predictor.hpp"

namespace lutfuse {

struct TrainConfig {
  int epochs = 400;
  int batch = 1;
  float lr_amplitude = 2e-4f;
  int lr_period_epochs = 20;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  std::uint32_t seed = 0;
  LossWeights loss_weights;
  int t_scenarios = 3;
  int m_categories = 10;
  int n_bins = 33;
  PredictorArch arch = PredictorArch::kConv;
  // Half-width of seeded uniform noise applied to the weight-head parameters
  // at trainer init. With an identity bank every LUT is the same, so any
  // simplex of weights still reproduces the input exactly; the noise only
  // de-symmetrizes the per-category gradients so the categories can
  // specialize. Zero keeps the heads exactly as the predictor initializes
  // them.
  float head_init_noise = 0.0f;
  // Ordered spread of the category LUTs at trainer init. Category m is
  // offset by s_m * spread * x * (1 - x) per channel, s_m in [-1, 1] evenly
  // spaced, so lower categories start uniformly darker and higher ones
  // brighter at every interior color. This gives pixels a consistent
  // category preference from the first step, which per-pixel fusion needs
  // to escape the all-categories-identical stationary point. The offset
  // vanishes at 0 and 1, keeps each axis monotone for spread < 1, and
  // cancels under uniform weights up to rounding, so a fresh trainer still
  // maps any image to itself within float precision. M = 1 is never offset.
  float bank_init_spread = 0.0f;
};

inline void check_train_config(const TrainConfig& c) {
  if (c.epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (c.batch < 1) throw InvalidArgument("batch size must be at least 1");
  if (!(c.lr_amplitude > 0.0f))
    throw InvalidArgument("learning-rate amplitude must be positive");
  if (c.lr_period_epochs < 1)
    throw InvalidArgument("learning-rate period must be at least 1 epoch");
  if (c.t_scenarios < 1 || c.m_categories < 1)
    throw InvalidArgument("scenario and category counts must be positive");
  if (c.n_bins < 2) throw InvalidArgument("lattice needs at least two nodes");
  if (c.arch != PredictorArch::kConv && c.arch != PredictorArch::kGrid)
    throw InvalidArgument("unknown predictor architecture");
  if (!(c.head_init_noise >= 0.0f))
    throw InvalidArgument("head init noise must be non-negative");
  if (!(c.bank_init_spread >= 0.0f) || c.bank_init_spread >= 1.0f)
    throw InvalidArgument("bank init spread must be in [0, 1)");
}

// lr(step) = amplitude * 0.5 * (1 + cos(pi * (step mod P) / P)), restarting
// every P = period_epochs * steps_per_epoch optimizer steps.
inline float cosine_lr(std::int64_t step, int steps_per_epoch,
                       const TrainConfig& c) {
  if (step < 0) throw InvalidArgument("step must be non-negative");
  if (steps_per_epoch < 1)
    throw InvalidArgument("steps per epoch must be positive");
  const std::int64_t period = std::int64_t(c.lr_period_epochs) * steps_per_epoch;
  const double phase = double(step % period) / double(period);
  return float(double(c.lr_amplitude) * 0.5 *
               (1.0 + std::cos(std::numbers::pi * phase)));
}

struct AdamState {
  std::vector<float> m, v;
  std::int64_t t = 0;  // completed steps
};

// Standard bias-corrected Adam. The step is rejected wholesale on any
// non-finite gradient so a numeric failure cannot corrupt the parameters.
inline void adam_step(std::span<float> params, std::span<const float> grads,
                      AdamState& state, float lr, const TrainConfig& c) {
  if (params.size() != grads.size())
    throw InvalidArgument("gradient length does not match the parameters");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  if (state.m.size() != params.size())
    throw InvalidArgument("optimizer state does not match the parameters");
  for (float g : grads)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in Adam step");

  ++state.t;
  const float bc1 = float(1.0 - std::pow(double(c.beta1), double(state.t)));
  const float bc2 = float(1.0 - std::pow(double(c.beta2), double(state.t)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0f - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0f - c.beta2) * g * g;
    const float mhat = state.m[i] / bc1;
    const float vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + c.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Dataset

struct TrainPair {
  std::string name;
  ImagePlane input;
  ImagePlane target;
};

struct Dataset {
  std::vector<TrainPair> pairs;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
};

inline std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 16777619u;
  }
  return h;
}

// Deterministic 90/10 validation split by filename hash. Callers may edit the
// index lists afterwards to override the split.
inline void split_dataset(Dataset& ds) {
  ds.train_idx.clear();
  ds.val_idx.clear();
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    if (fnv1a(ds.pairs[i].name) % 10 == 0)
      ds.val_idx.push_back(i);
    else
      ds.train_idx.push_back(i);
  }
  if (ds.train_idx.empty()) {
    ds.train_idx = ds.val_idx;
    ds.val_idx.clear();
  }
}

// Layout: <dir>/input/NAME.png paired with <dir>/target/NAME.png. Unreadable
// or mismatched pairs are skipped with a warning; an empty result is an error.
inline Dataset load_dataset(const std::string& dir,
                            std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  const fs::path in_dir = fs::path(dir) / "input";
  const fs::path tg_dir = fs::path(dir) / "target";
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  if (!fs::is_directory(in_dir) || !fs::is_directory(tg_dir))
    throw IoError("dataset needs input/ and target/ under " + dir);

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());

  Dataset ds;
  for (const std::string& name : names) {
    const fs::path tg = tg_dir / name;
    if (!fs::exists(tg)) {
      warn("skipping " + name + ": no matching target");
      continue;
    }
    TrainPair pair;
    pair.name = name;
    try {
      pair.input = load_png((in_dir / name).string());
      pair.target = load_png(tg.string());
    } catch (const Error& e) {
      warn("skipping " + name + ": " + e.what());
      continue;
    }
    if (pair.input.height != pair.target.height ||
        pair.input.width != pair.target.width) {
      warn("skipping " + name + ": input and target dimensions differ");
      continue;
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (ds.pairs.empty()) throw IoError("no usable training pairs in " + dir);
  split_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Quality metrics

inline double psnr(const ImagePlane& a, const ImagePlane& b) {
  if (a.height != b.height || a.width != b.width ||
      a.data.size() != b.data.size())
    throw InvalidArgument("psnr needs images of identical dimensions");
  if (a.data.empty()) throw InvalidArgument("psnr of an empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  const double mse = acc / double(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(11 * 11);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double dy = y - 5, dx = x - 5;
        k[y * 11 + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        sum += k[y * 11 + x];
      }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

inline std::vector<double> luma_plane(const ImagePlane& img) {
  std::vector<double> out(img.pixel_count());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const float* px = img.data.data() + p * 3;
    out[p] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
  }
  return out;
}

}  // namespace detail

// Mean SSIM on luma over all fully valid 11x11 Gaussian windows.
inline double ssim(const ImagePlane& a, const ImagePlane& b) {
  if (a.height != b.height || a.width != b.width ||
      a.data.size() != b.data.size())
    throw InvalidArgument("ssim needs images of identical dimensions");
  if (a.height < 11 || a.width < 11)
    throw InvalidArgument("ssim needs at least 11x11 pixels");
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  const std::vector<double> la = detail::luma_plane(a);
  const std::vector<double> lb = detail::luma_plane(b);
  const std::vector<double>& win = detail::ssim_window();
  const int w = a.width;
  double acc = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y + 11 <= a.height; ++y)
    for (int x = 0; x + 11 <= a.width; ++x) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = 0; dy < 11; ++dy)
        for (int dx = 0; dx < 11; ++dx) {
          const double k = win[dy * 11 + dx];
          const double va = la[(y + dy) * w + (x + dx)];
          const double vb = lb[(y + dy) * w + (x + dx)];
          ma += k * va;
          mb += k * vb;
          aa += k * va * va;
          bb += k * vb * vb;
          ab += k * va * vb;
        }
      const double var_a = aa - ma * ma;
      const double var_b = bb - mb * mb;
      const double cov = ab - ma * mb;
      acc += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
             ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
      ++count;
    }
  return acc / double(count);
}

// ---------------------------------------------------------------------------
// Metrics log

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double l_total = 0, l_r = 0, l_s = 0, l_m = 0, l_c = 0;
  double val_psnr = 0, val_ssim = 0;
  double wall_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch\tlr\tL_total\tL_r\tL_s\tL_m\tL_c\tval_psnr\tval_ssim\twall_ms";

inline std::string format_metrics(const EpochMetrics& m) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g",
                m.epoch, m.lr, m.l_total, m.l_r, m.l_s, m.l_m, m.l_c,
                m.val_psnr, m.val_ssim, m.wall_ms);
  return buf;
}

inline void write_metrics(const std::vector<EpochMetrics>& metrics,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << kMetricsHeader << "\n";
  for (const EpochMetrics& m : metrics) out << format_metrics(m) << "\n";
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Trainer state and step

struct TrainerState {
  LutBundle bundle;
  AdamState adam_bank, adam_pred;
  int epoch = 0;          // completed epochs
  std::int64_t step = 0;  // completed optimizer steps
  std::mt19937 rng;
};

inline TrainerState init_trainer(const TrainConfig& c) {
  check_train_config(c);
  TrainerState s;
  s.bundle.bank = identity_bank<float>(c.t_scenarios, c.m_categories, c.n_bins);
  if (c.bank_init_spread > 0.0f && c.m_categories > 1) {
    for (int t = 0; t < c.t_scenarios; ++t)
      for (int m = 0; m < c.m_categories; ++m) {
        const float s_m = -1.0f + 2.0f * float(m) / float(c.m_categories - 1);
        Lut3d& lut = s.bundle.bank.lut(t, m);
        for (float& v : lut.values)
          v += s_m * c.bank_init_spread * v * (1.0f - v);
      }
  }
  if (c.arch == PredictorArch::kConv)
    s.bundle.predictor = init_predictor(
        standard_conv_config(c.t_scenarios, c.m_categories), c.seed);
  else
    s.bundle.predictor =
        make_grid_predictor<float>(c.t_scenarios, c.m_categories);
  if (c.head_init_noise > 0.0f) {
    std::mt19937 rng(c.seed ^ 0x9e3779b9u);
    auto jitter = [&](std::size_t off, std::size_t len) {
      for (std::size_t i = 0; i < len; ++i) {
        float u = float((rng() >> 8) * (1.0 / 16777216.0));
        s.bundle.predictor.params[off + i] += (2.0f * u - 1.0f) * c.head_init_noise;
      }
    };
    if (c.arch == PredictorArch::kConv) {
      auto spans = detail::conv_layout(s.bundle.predictor.config);
      for (std::size_t l : {std::size_t(4), std::size_t(7)}) {
        jitter(spans[l].w_off, spans[l].w_len);
        jitter(spans[l].b_off, spans[l].b_len);
      }
    } else {
      jitter(0, s.bundle.predictor.params.size());
    }
  }
  s.rng.seed(c.seed);
  return s;
}

namespace detail {

inline std::vector<float> gather_bank(const LutBank& bank) {
  std::vector<float> flat;
  flat.reserve(bank.luts.size() * bank.luts.front().values.size());
  for (const Lut3d& lut : bank.luts)
    flat.insert(flat.end(), lut.values.begin(), lut.values.end());
  return flat;
}

inline void scatter_bank(LutBank& bank, std::span<const float> flat) {
  std::size_t off = 0;
  for (Lut3d& lut : bank.luts) {
    std::copy_n(flat.begin() + off, lut.values.size(), lut.values.begin());
    off += lut.values.size();
  }
}

}  // namespace detail

// Forward pipeline shared by training, validation, and the apply command:
// resize to the predictor's input size, predict weights, upsample alpha to
// the full resolution, fuse.
struct ForwardRun {
  ImagePlane low;         // predictor input
  PredictorOutput pred;   // omega/alpha at predictor resolution
  WeightMap weights;      // full-resolution weight map
  ImagePlane enhanced;
};

inline ForwardRun run_forward(LutBundle& bundle, const ImagePlane& image,
                              ThreadPool* pool = nullptr) {
  PredictorNet& net = bundle.predictor;
  const int in_size = net.arch == PredictorArch::kGrid ? net.grid_size
                                                       : net.config.in_size;
  const int a = net.alpha_size();
  const int m = net.m_categories();
  ForwardRun fr;
  fr.low = resize_bilinear(image, in_size, in_size);
  fr.pred = predictor_forward(net, fr.low, pool);
  fr.weights.omega = fr.pred.omega;
  fr.weights.height = image.height;
  fr.weights.width = image.width;
  fr.weights.m_categories = m;
  fr.weights.alpha = upsample_bilinear(std::span<const float>(fr.pred.alpha),
                                       a, a, m, image.height, image.width);
  fr.enhanced = apply_spatial_aware(bundle.bank, fr.weights, image, pool);
  return fr;
}

namespace detail {

struct StepAccum {
  std::vector<float> bank_grads;
  std::vector<float> pred_grads;
  double l_total = 0, l_r = 0, l_s = 0, l_m = 0, l_c = 0;
};

// One pair's full backward chain. The smooth/weight regularizers see the
// low-resolution alpha map (the optimized object); the fidelity losses flow
// through the full-resolution apply and are pulled back through the bilinear
// upsample adjoint.
inline TotalLoss train_pair_grads(TrainerState& state, const TrainPair& pair,
                                  const TrainConfig& c, ThreadPool* pool,
                                  StepAccum& accum) {
  LutBundle& bundle = state.bundle;
  PredictorNet& net = bundle.predictor;
  const int a = net.alpha_size();
  const int m = net.m_categories();

  ForwardRun fr = run_forward(bundle, pair.input, pool);

  WeightMap low_weights;
  low_weights.omega = fr.pred.omega;
  low_weights.height = a;
  low_weights.width = a;
  low_weights.m_categories = m;
  low_weights.alpha = fr.pred.alpha;

  TotalLoss tl = total_loss(fr.enhanced, pair.target, bundle.bank, low_weights,
                            c.loss_weights);

  ImagePlane d_pred;
  d_pred.height = pair.input.height;
  d_pred.width = pair.input.width;
  d_pred.data = tl.d_pred;
  ApplyGradients ag =
      backward_apply(bundle.bank, fr.weights, pair.input, d_pred, pool);

  std::vector<float> d_alpha_low = upsample_bilinear_backward(
      std::span<const float>(ag.d_alpha), pair.input.height, pair.input.width,
      m, a, a);
  for (std::size_t i = 0; i < d_alpha_low.size(); ++i)
    d_alpha_low[i] += tl.d_alpha[i];

  std::vector<float> d_omega = ag.d_omega;
  for (std::size_t i = 0; i < d_omega.size(); ++i) d_omega[i] += tl.d_omega[i];

  const std::vector<float> pred_grads =
      predictor_backward(net, fr.low, std::span<const float>(d_omega),
                         std::span<const float>(d_alpha_low));

  if (accum.pred_grads.empty()) {
    accum.pred_grads.assign(net.params.size(), 0.0f);
    accum.bank_grads.assign(gather_bank(bundle.bank).size(), 0.0f);
  }
  for (std::size_t i = 0; i < pred_grads.size(); ++i)
    accum.pred_grads[i] += pred_grads[i];
  std::size_t off = 0;
  for (std::size_t l = 0; l < bundle.bank.luts.size(); ++l) {
    const std::vector<float>& reg = tl.d_luts[l];
    const std::vector<float>& fit = ag.d_luts[l];
    for (std::size_t i = 0; i < reg.size(); ++i)
      accum.bank_grads[off + i] += reg[i] + fit[i];
    off += reg.size();
  }

  accum.l_total += tl.value;
  accum.l_r += tl.mse;
  accum.l_s += tl.smooth;
  accum.l_m += tl.mono;
  accum.l_c += tl.color;
  return tl;
}

}  // namespace detail

// Runs `epochs` epochs, appending one metrics record per epoch. Validation
// metrics come from the held-out split, or from the training pairs when the
// split is empty; SSIM is NaN for images smaller than its window.
inline std::vector<EpochMetrics> train_epochs(TrainerState& state,
                                              const Dataset& ds,
                                              const TrainConfig& c, int epochs,
                                              ThreadPool* pool = nullptr) {
  check_train_config(c);
  if (ds.train_idx.empty()) throw InvalidArgument("dataset has no training pairs");
  const int steps_per_epoch =
      int((ds.train_idx.size() + std::size_t(c.batch) - 1) / c.batch);

  std::vector<EpochMetrics> log;
  for (int e = 0; e < epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = ds.train_idx;
    std::shuffle(order.begin(), order.end(), state.rng);

    EpochMetrics em;
    em.epoch = state.epoch + 1;
    double lr_sum = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += std::size_t(c.batch)) {
      const std::size_t end =
          std::min(order.size(), begin + std::size_t(c.batch));
      detail::StepAccum accum;
      for (std::size_t i = begin; i < end; ++i)
        detail::train_pair_grads(state, ds.pairs[order[i]], c, pool, accum);
      const float inv = 1.0f / float(end - begin);
      for (float& g : accum.bank_grads) g *= inv;
      for (float& g : accum.pred_grads) g *= inv;

      const float lr = cosine_lr(state.step, steps_per_epoch, c);
      std::vector<float> bank_flat = detail::gather_bank(state.bundle.bank);
      adam_step(bank_flat, accum.bank_grads, state.adam_bank, lr, c);
      detail::scatter_bank(state.bundle.bank, bank_flat);
      adam_step(state.bundle.predictor.params, accum.pred_grads,
                state.adam_pred, lr, c);
      ++state.step;

      const double n = double(end - begin);
      em.l_total += accum.l_total / n;
      em.l_r += accum.l_r / n;
      em.l_s += accum.l_s / n;
      em.l_m += accum.l_m / n;
      em.l_c += accum.l_c / n;
      lr_sum += lr;
      ++steps;
    }
    em.l_total /= steps;
    em.l_r /= steps;
    em.l_s /= steps;
    em.l_m /= steps;
    em.l_c /= steps;
    em.lr = lr_sum / steps;

    const std::vector<std::size_t>& val =
        ds.val_idx.empty() ? ds.train_idx : ds.val_idx;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    bool ssim_ok = true;
    for (std::size_t i : val) {
      ForwardRun fr = run_forward(state.bundle, ds.pairs[i].input, pool);
      psnr_sum += psnr(fr.enhanced, ds.pairs[i].target);
      if (ds.pairs[i].input.height >= 11 && ds.pairs[i].input.width >= 11)
        ssim_sum += ssim(fr.enhanced, ds.pairs[i].target);
      else
        ssim_ok = false;
    }
    em.val_psnr = psnr_sum / double(val.size());
    em.val_ssim = ssim_ok ? ssim_sum / double(val.size())
                          : std::numeric_limits<double>::quiet_NaN();

    ++state.epoch;
    em.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    log.push_back(em);
  }
  return log;
}

struct TrainResult {
  TrainerState state;
  std::vector<EpochMetrics> metrics;
};

inline TrainResult train(const Dataset& ds, const TrainConfig& c,
                         ThreadPool* pool = nullptr) {
  TrainResult r;
  r.state = init_trainer(c);
  r.metrics = train_epochs(r.state, ds, c, c.epochs, pool);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SLCK" | version u16 | epoch u32 | step u64 | rng text blob |
// two Adam groups (t, count, m[], v[]) | embedded bundle | CRC32.

inline std::vector<unsigned char> encode_checkpoint(const TrainerState& s) {
  std::vector<unsigned char> out = {'S', 'L', 'C', 'K'};
  detail::put_u16(out, 1);
  detail::put_u32(out, std::uint32_t(s.epoch));
  detail::put_u64(out, std::uint64_t(s.step));
  std::ostringstream rng_text;
  rng_text << s.rng;
  const std::string rng_str = rng_text.str();
  detail::put_u32(out, std::uint32_t(rng_str.size()));
  out.insert(out.end(), rng_str.begin(), rng_str.end());
  for (const AdamState* g : {&s.adam_bank, &s.adam_pred}) {
    detail::put_u64(out, std::uint64_t(g->t));
    detail::put_u64(out, g->m.size());
    for (float v : g->m) detail::put_f32(out, v);
    for (float v : g->v) detail::put_f32(out, v);
  }
  const std::vector<unsigned char> bundle_bytes = encode_bundle(s.bundle);
  detail::put_u64(out, bundle_bytes.size());
  out.insert(out.end(), bundle_bytes.begin(), bundle_bytes.end());
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

inline TrainerState decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 8 + 4 + 4)
    throw DecodeError("checkpoint is truncated");
  if (bytes[0] != 'S' || bytes[1] != 'L' || bytes[2] != 'C' || bytes[3] != 'K')
    throw DecodeError("not a checkpoint file");
  if (detail::get_u16(&bytes[4]) != 1)
    throw DecodeError("unsupported checkpoint version");
  if (detail::crc32_of(bytes.data(), bytes.size() - 4) !=
      detail::get_u32(&bytes[bytes.size() - 4]))
    throw DecodeError("checkpoint CRC mismatch");

  std::size_t off = 6;
  auto need = [&](std::size_t n) {
    if (bytes.size() - 4 - off < n) throw DecodeError("checkpoint is truncated");
  };
  TrainerState s;
  need(4 + 8 + 4);
  s.epoch = int(detail::get_u32(&bytes[off]));
  off += 4;
  s.step = std::int64_t(detail::get_u64(&bytes[off]));
  off += 8;
  const std::uint32_t rng_len = detail::get_u32(&bytes[off]);
  off += 4;
  need(rng_len);
  std::istringstream rng_text(
      std::string(reinterpret_cast<const char*>(&bytes[off]), rng_len));
  rng_text >> s.rng;
  if (!rng_text) throw DecodeError("corrupt RNG state in checkpoint");
  off += rng_len;
  for (AdamState* g : {&s.adam_bank, &s.adam_pred}) {
    need(8 + 8);
    g->t = std::int64_t(detail::get_u64(&bytes[off]));
    off += 8;
    const std::uint64_t count = detail::get_u64(&bytes[off]);
    off += 8;
    if (count > (bytes.size() - off) / 4)
      throw DecodeError("checkpoint payload length mismatch");
    need(std::size_t(count) * 8);
    g->m.resize(std::size_t(count));
    g->v.resize(std::size_t(count));
    for (auto* vec : {&g->m, &g->v}) {
      for (std::size_t i = 0; i < count; ++i)
        (*vec)[i] = detail::get_f32(&bytes[off + i * 4]);
      off += std::size_t(count) * 4;
    }
  }
  need(8);
  const std::uint64_t bundle_len = detail::get_u64(&bytes[off]);
  off += 8;
  if (bundle_len != bytes.size() - 4 - off)
    throw DecodeError("checkpoint payload length mismatch");
  s.bundle = decode_bundle(bytes.subspan(off, std::size_t(bundle_len)));

  const std::size_t bank_count = detail::gather_bank(s.bundle.bank).size();
  if (!s.adam_bank.m.empty() && s.adam_bank.m.size() != bank_count)
    throw DecodeError("checkpoint optimizer state does not match the bank");
  if (!s.adam_pred.m.empty() &&
      s.adam_pred.m.size() != s.bundle.predictor.params.size())
    throw DecodeError("checkpoint optimizer state does not match the predictor");
  return s;
}

inline void save_checkpoint(const TrainerState& s, const std::string& path) {
  const std::vector<unsigned char> bytes = encode_checkpoint(s);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline TrainerState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return decode_checkpoint(bytes);
}

}  // namespace lutfuse
