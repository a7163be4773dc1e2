// lutfuse command line front end.
//
// Subcommands: train, apply, eval, bench, gradcheck, export-cube, inspect,
// dump-weights, msweep. Stdout carries data (tab-separated where tabular),
// stderr carries diagnostics.
//
// Exit codes: 0 success, 2 invalid arguments (including bundle headers that
// declare zero dimensions), 3 data errors (I/O, decode, CRC), 4 numeric
// failure, 5 gradient-check failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "lutfuse/bundle.hpp"
#include "lutfuse/core.hpp"
#include "lutfuse/cube.hpp"
#include "lutfuse/error.hpp"
#include "lutfuse/grad.hpp"
#include "lutfuse/imageio.hpp"
#include "lutfuse/losses.hpp"
#include "lutfuse/parallel.hpp"
#include "lutfuse/predictor.hpp"
#include "lutfuse/synthetic.hpp"
#include "lutfuse/trainer.hpp"

namespace {

using namespace lutfuse;

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
int guard(F&& body, CLI::App* usage = nullptr) {
  try {
    return body();
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (usage) std::fprintf(stderr, "%s", usage->help().c_str());
    return 2;
  } catch (const InvalidState& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const IoError& e) {  // DecodeError included
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

// Forward pass split into the two timed stages reported by apply and bench.
// Mirrors run_forward exactly so outputs match the library path bit for bit.
struct StagedApply {
  ImagePlane enhanced;
  double predictor_ms = 0;
  double interp_ms = 0;
};

StagedApply staged_apply(LutBundle& bundle, const ImagePlane& image,
                         ThreadPool* pool) {
  PredictorNet& net = bundle.predictor;
  const int in_size = net.arch == PredictorArch::kGrid ? net.grid_size
                                                       : net.config.in_size;
  const int a = net.alpha_size();
  const int m = net.m_categories();
  StagedApply r;
  double t0 = now_ms();
  const ImagePlane low = resize_bilinear(image, in_size, in_size);
  const PredictorOutput pred = predictor_forward(net, low, pool);
  r.predictor_ms = now_ms() - t0;
  t0 = now_ms();
  WeightMap weights;
  weights.omega = pred.omega;
  weights.height = image.height;
  weights.width = image.width;
  weights.m_categories = m;
  weights.alpha = upsample_bilinear(std::span<const float>(pred.alpha), a, a, m,
                                    image.height, image.width);
  r.enhanced = apply_spatial_aware(bundle.bank, weights, image, pool);
  r.interp_ms = now_ms() - t0;
  return r;
}

LutBundle fresh_standard_bundle(int t, int m, int n, std::uint32_t seed) {
  LutBundle b;
  b.bank = identity_bank<float>(t, m, n);
  b.predictor = init_predictor(standard_conv_config(t, m), seed);
  return b;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out, metrics, checkpoint;
  TrainConfig config;
  std::string predictor = "conv";
  int threads = 0;
};

int cmd_train(TrainArgs& a) {
  a.config.arch =
      a.predictor == "grid" ? PredictorArch::kGrid : PredictorArch::kConv;
  check_train_config(a.config);
  if (a.metrics.empty()) a.metrics = a.out + ".metrics.tsv";
  if (a.checkpoint.empty()) a.checkpoint = a.out + ".ckpt";

  ThreadPool pool(resolve_threads(a.threads));
  std::vector<std::string> warnings;
  const Dataset ds = load_dataset(a.data, &warnings);
  for (const std::string& w : warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());

  TrainerState state = init_trainer(a.config);
  std::vector<EpochMetrics> log;
  log.reserve(std::size_t(a.config.epochs));
  for (int e = 0; e < a.config.epochs; ++e) {
    const auto chunk = train_epochs(state, ds, a.config, 1, &pool);
    log.insert(log.end(), chunk.begin(), chunk.end());
    save_checkpoint(state, a.checkpoint);
  }
  save_bundle(state.bundle, a.out);
  write_metrics(log, a.metrics);
  std::fprintf(stderr, "wrote %s after %d epochs (metrics: %s)\n",
               a.out.c_str(), a.config.epochs, a.metrics.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// apply

int cmd_apply(const std::string& bundle_path, const std::string& in_path,
              const std::string& out_path, int threads) {
  LutBundle bundle = load_bundle(bundle_path);
  const ImagePlane image = load_png(in_path);
  ThreadPool pool(resolve_threads(threads));
  const StagedApply r = staged_apply(bundle, image, &pool);
  save_png(r.enhanced, out_path);
  std::printf("predictor_ms\t%.3f\n", r.predictor_ms);
  std::printf("interp_ms\t%.3f\n", r.interp_ms);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& bundle_path, const std::string& data_dir,
             int threads) {
  LutBundle bundle = load_bundle(bundle_path);
  ThreadPool pool(resolve_threads(threads));
  std::vector<std::string> warnings;
  const Dataset ds = load_dataset(data_dir, &warnings);
  for (const std::string& w : warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());

  std::printf("name\tpsnr\tssim\n");
  double psum = 0, ssum = 0;
  for (const TrainPair& pair : ds.pairs) {
    const ForwardRun fr = run_forward(bundle, pair.input, &pool);
    const double p = psnr(fr.enhanced, pair.target);
    const double s = ssim(fr.enhanced, pair.target);
    psum += p;
    ssum += s;
    std::printf("%s\t%.9g\t%.9g\n", pair.name.c_str(), p, s);
  }
  const double n = double(ds.pairs.size());
  std::printf("mean\t%.9g\t%.9g\n", psum / n, ssum / n);
  return 0;
}

// ---------------------------------------------------------------------------
// bench

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double p95_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t idx =
      std::min(v.size() - 1, std::size_t(std::ceil(0.95 * double(v.size()))) - 1);
  return v[idx];
}

int cmd_bench(const std::string& bundle_path,
              const std::vector<std::string>& res_args, int reps,
              std::uint32_t seed, int threads) {
  if (reps < 1) throw InvalidArgument("repetitions must be positive");
  LutBundle bundle = bundle_path.empty() ? fresh_standard_bundle(3, 10, 33, seed)
                                         : load_bundle(bundle_path);
  std::vector<std::pair<int, int>> resolutions;  // width, height
  if (res_args.empty()) {
    resolutions = {{640, 480}, {1920, 1080}, {3840, 2160}};
  } else {
    for (const std::string& r : res_args) {
      int w = 0, h = 0;
      if (std::sscanf(r.c_str(), "%dx%d", &w, &h) != 2 || w < 1 || h < 1)
        throw InvalidArgument("resolution must look like 1920x1080: " + r);
      resolutions.emplace_back(w, h);
    }
  }
  ThreadPool pool(resolve_threads(threads));

  std::printf("# context: 2.27 ms @ 640x480 and 4.39 ms @ 3840x2160 on a V100 GPU; not targets for this CPU build\n");
  std::printf(
      "resolution\tpredictor_ms\tpredictor_p95\tinterp_ms\tinterp_p95\ttotal_ms\ttotal_p95\n");
  int ridx = 0;
  for (const auto& [w, h] : resolutions) {
    const ImagePlane img = make_noise_image(h, w, seed + std::uint32_t(ridx++));
    for (int i = 0; i < 2; ++i) staged_apply(bundle, img, &pool);  // warm
    std::vector<double> pred_t, interp_t, total_t;
    pred_t.reserve(reps);
    interp_t.reserve(reps);
    total_t.reserve(reps);
    for (int i = 0; i < reps; ++i) {
      const StagedApply r = staged_apply(bundle, img, &pool);
      pred_t.push_back(r.predictor_ms);
      interp_t.push_back(r.interp_ms);
      total_t.push_back(r.predictor_ms + r.interp_ms);
    }
    std::printf("%dx%d\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\n", w, h,
                median_of(pred_t), p95_of(pred_t), median_of(interp_t),
                p95_of(interp_t), median_of(total_t), p95_of(total_t));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

template <typename T>
T unit_rand(std::mt19937& rng) {  // [0,1)
  return T((rng() >> 8) * (1.0 / 16777216.0));
}

template <typename T>
T sym_rand(std::mt19937& rng) {  // [-1,1)
  return T(2) * unit_rand<T>(rng) - T(1);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

template <typename T>
LutBankT<T> random_bank(int t, int m, int n, std::mt19937& rng) {
  LutBankT<T> bank = identity_bank<T>(t, m, n);
  for (auto& lut : bank.luts)
    for (T& v : lut.values) v = unit_rand<T>(rng);
  return bank;
}

template <typename T>
ImagePlaneT<T> random_image(int h, int w, std::mt19937& rng) {
  ImagePlaneT<T> img;
  img.height = h;
  img.width = w;
  img.data.resize(std::size_t(h) * w * 3);
  for (T& v : img.data) v = unit_rand<T>(rng);
  return img;
}

template <typename T>
std::vector<T> random_simplex(int n, std::mt19937& rng) {
  std::vector<T> w(static_cast<std::size_t>(n));
  T sum = T(0);
  for (T& v : w) {
    v = T(0.25) + unit_rand<T>(rng);  // bounded away from 0
    sum += v;
  }
  for (T& v : w) v /= sum;
  return w;
}

template <typename T>
WeightMapT<T> random_weights(int t, int m, int h, int w, std::mt19937& rng) {
  WeightMapT<T> wm;
  wm.omega = random_simplex<T>(t, rng);
  wm.height = h;
  wm.width = w;
  wm.m_categories = m;
  wm.alpha.reserve(std::size_t(h) * w * m);
  for (int p = 0; p < h * w; ++p) {
    const std::vector<T> s = random_simplex<T>(m, rng);
    wm.alpha.insert(wm.alpha.end(), s.begin(), s.end());
  }
  return wm;
}

struct CheckRow {
  std::string group;
  const char* precision;
  double max_rel;
  double tol;
};

// Objective J = <g, apply(bank, weights, image)>; its exact gradients are the
// backward_apply outputs, checked here coordinate by coordinate against
// central differences.
template <typename T>
void check_apply_grads(double h, double tol, bool inject,
                       std::vector<CheckRow>& rows) {
  std::mt19937 rng(11);
  const int t = 2, m = 2, n = 3, H = 5, W = 4;
  LutBankT<T> bank = random_bank<T>(t, m, n, rng);
  const ImagePlaneT<T> image = random_image<T>(H, W, rng);
  WeightMapT<T> weights = random_weights<T>(t, m, H, W, rng);
  ImagePlaneT<T> g;
  g.height = H;
  g.width = W;
  g.data.resize(std::size_t(H) * W * 3);
  for (T& v : g.data) v = sym_rand<T>(rng);

  const auto objective = [&]() -> double {
    const ImagePlaneT<T> out = apply_spatial_aware(bank, weights, image);
    double j = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      j += double(out.data[i]) * double(g.data[i]);
    return j;
  };
  ApplyGradientsT<T> an = backward_apply(bank, weights, image, g);
  if (inject) {
    // Test hook: corrupt the largest cell gradient so the check must fail.
    T* worst = nullptr;
    for (auto& lg : an.d_luts)
      for (T& v : lg)
        if (!worst || std::abs(double(v)) > std::abs(double(*worst))) worst = &v;
    if (worst) *worst = -*worst;
  }

  const auto fd = [&](T& slot) {
    const T keep = slot;
    slot = keep + T(h);
    const double jp = objective();
    slot = keep - T(h);
    const double jm = objective();
    slot = keep;
    return (jp - jm) / (2 * h);
  };

  double worst_cells = 0, worst_alpha = 0, worst_omega = 0;
  for (std::size_t l = 0; l < bank.luts.size(); ++l)
    for (std::size_t i = 0; i < bank.luts[l].values.size(); ++i)
      worst_cells = std::max(
          worst_cells, rel_err(fd(bank.luts[l].values[i]), double(an.d_luts[l][i])));
  for (std::size_t i = 0; i < weights.alpha.size(); ++i)
    worst_alpha =
        std::max(worst_alpha, rel_err(fd(weights.alpha[i]), double(an.d_alpha[i])));
  for (std::size_t i = 0; i < weights.omega.size(); ++i)
    worst_omega =
        std::max(worst_omega, rel_err(fd(weights.omega[i]), double(an.d_omega[i])));

  const char* prec = sizeof(T) == 4 ? "f32" : "f64";
  rows.push_back({"cells", prec, worst_cells, tol});
  rows.push_back({"alpha", prec, worst_alpha, tol});
  rows.push_back({"omega", prec, worst_omega, tol});
}

template <typename T>
void check_upsample_grads(double h, double tol, std::vector<CheckRow>& rows) {
  std::mt19937 rng(12);
  const int sh = 3, sw = 3, ch = 2, oh = 5, ow = 7;
  std::vector<T> x(std::size_t(sh) * sw * ch), y(std::size_t(oh) * ow * ch);
  for (T& v : x) v = sym_rand<T>(rng);
  for (T& v : y) v = sym_rand<T>(rng);

  const auto objective = [&]() -> double {
    const std::vector<T> up = upsample_bilinear<T>(x, sh, sw, ch, oh, ow);
    double j = 0;
    for (std::size_t i = 0; i < up.size(); ++i)
      j += double(up[i]) * double(y[i]);
    return j;
  };
  const std::vector<T> an = upsample_bilinear_backward<T>(y, oh, ow, ch, sh, sw);

  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T keep = x[i];
    x[i] = keep + T(h);
    const double jp = objective();
    x[i] = keep - T(h);
    const double jm = objective();
    x[i] = keep;
    worst = std::max(worst, rel_err((jp - jm) / (2 * h), double(an[i])));
  }
  rows.push_back({"upsample", sizeof(T) == 4 ? "f32" : "f64", worst, tol});
}

template <typename T>
void check_loss_grads(double h, double tol, std::vector<CheckRow>& rows) {
  std::mt19937 rng(13);
  const int t = 2, m = 2, n = 3, H = 5, W = 4;
  // The monotonicity hinge is linear with a gradient jump at zero drop, per
  // channel on every axis-adjacent pair, so finite differences break down
  // whenever any such drop lands within the step. Build LUTs as affine ramps
  // with nonzero slope for every (channel, axis): lattice step 0.5 and
  // |slope| in [0.3, 0.4] keep |drop| >= 0.11 after the 0.02 cell jitter.
  LutBankT<T> bank = identity_bank<T>(t, m, n);
  const std::vector<T> nodes = grid_nodes<T>(n);
  for (auto& lut : bank.luts) {
    T slope[3][3];  // [channel][axis]
    for (auto& row : slope)
      for (T& s : row)
        s = (unit_rand<T>(rng) < T(0.5) ? T(-1) : T(1)) *
            (T(0.3) + T(0.1) * unit_rand<T>(rng));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const std::size_t base = ((std::size_t(i) * n + j) * n + k) * 3;
          for (int c = 0; c < 3; ++c)
            lut.values[base + c] = T(0.5) + slope[c][0] * (nodes[i] - T(0.5)) +
                                   slope[c][1] * (nodes[j] - T(0.5)) +
                                   slope[c][2] * (nodes[k] - T(0.5)) +
                                   T(0.02) * sym_rand<T>(rng);
        }
  }
  ImagePlaneT<T> target = random_image<T>(H, W, rng);
  ImagePlaneT<T> pred = target;
  // Keep both images interior so the LAB conversion stays smooth, and give
  // every channel a difference well above the step so the color term stays
  // away from its cone point at zero difference.
  for (T& v : target.data) v = T(0.1) + T(0.7) * v;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const T sign = unit_rand<T>(rng) < T(0.5) ? T(-1) : T(1);
    pred.data[i] =
        target.data[i] + sign * (T(0.05) + T(0.1) * unit_rand<T>(rng));
  }
  WeightMapT<T> weights = random_weights<T>(t, m, H, W, rng);
  // Moderate monotonicity weight keeps the total small enough that float
  // roundoff of the objective stays below the finite-difference resolution.
  const LossWeightsT<T> lw{T(1), T(1e-2), T(0.1), T(1e-2), T(0)};

  const auto objective = [&]() -> double {
    return double(total_loss(pred, target, bank, weights, lw).value);
  };
  const TotalLossT<T> an = total_loss(pred, target, bank, weights, lw);

  const auto fd = [&](T& slot) {
    const T keep = slot;
    slot = keep + T(h);
    const double jp = objective();
    slot = keep - T(h);
    const double jm = objective();
    slot = keep;
    return (jp - jm) / (2 * h);
  };

  double worst = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    worst = std::max(worst, rel_err(fd(pred.data[i]), double(an.d_pred[i])));
  for (std::size_t l = 0; l < bank.luts.size(); ++l)
    for (std::size_t i = 0; i < bank.luts[l].values.size(); ++i)
      worst = std::max(
          worst, rel_err(fd(bank.luts[l].values[i]), double(an.d_luts[l][i])));
  for (std::size_t i = 0; i < weights.alpha.size(); ++i)
    worst = std::max(worst, rel_err(fd(weights.alpha[i]), double(an.d_alpha[i])));
  for (std::size_t i = 0; i < weights.omega.size(); ++i)
    worst = std::max(worst, rel_err(fd(weights.omega[i]), double(an.d_omega[i])));
  rows.push_back({"losses", sizeof(T) == 4 ? "f32" : "f64", worst, tol});
}

template <typename T>
void check_predictor_grads(double h, double tol, PredictorArch arch,
                           std::vector<CheckRow>& rows) {
  std::mt19937 rng(17);
  PredictorNetT<T> net;
  int in_size = 0;
  if (arch == PredictorArch::kConv) {
    PredictorConfigT<T> pc;
    pc.in_size = 16;
    pc.w0 = 4;
    pc.w1 = 6;
    pc.w2 = 8;
    pc.w3 = 8;
    pc.t_scenarios = 2;
    pc.m_categories = 3;
    net = init_predictor(pc, 17);
    in_size = pc.in_size;
  } else {
    net = make_grid_predictor<T>(2, 3, 4);
    for (T& v : net.params) v = T(0.5) * sym_rand<T>(rng);
    in_size = net.grid_size;
  }
  const ImagePlaneT<T> input = random_image<T>(in_size, in_size, rng);
  const int a = net.alpha_size();
  std::vector<T> wo(std::size_t(net.t_scenarios()));
  std::vector<T> wa(std::size_t(a) * a * net.m_categories());
  for (T& v : wo) v = sym_rand<T>(rng);
  for (T& v : wa) v = sym_rand<T>(rng);

  const auto objective = [&]() -> double {
    const PredictorOutputT<T> out = predictor_forward(net, input);
    double j = 0;
    for (std::size_t i = 0; i < out.omega.size(); ++i)
      j += double(out.omega[i]) * double(wo[i]);
    for (std::size_t i = 0; i < out.alpha.size(); ++i)
      j += double(out.alpha[i]) * double(wa[i]);
    return j;
  };
  objective();  // prime the cache for the backward pass
  const std::vector<T> an = predictor_backward(net, input, wo, wa);

  double worst = 0;
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const T keep = net.params[i];
    net.params[i] = keep + T(h);
    const double jp = objective();
    net.params[i] = keep - T(h);
    const double jm = objective();
    net.params[i] = keep;
    worst = std::max(worst, rel_err((jp - jm) / (2 * h), double(an[i])));
  }
  rows.push_back({arch == PredictorArch::kConv ? "conv" : "grid",
                  sizeof(T) == 4 ? "f32" : "f64", worst, tol});
}

int cmd_gradcheck(bool inject_fault) {
  std::vector<CheckRow> rows;
  // 32-bit path at 1e-3, 64-bit path at 1e-6.
  check_apply_grads<float>(1e-3, 1e-3, inject_fault, rows);
  check_upsample_grads<float>(1e-3, 1e-3, rows);
  check_loss_grads<float>(4e-3, 1e-3, rows);
  check_predictor_grads<float>(1e-3, 1e-3, PredictorArch::kConv, rows);
  check_predictor_grads<float>(1e-3, 1e-3, PredictorArch::kGrid, rows);
  check_apply_grads<double>(1e-6, 1e-6, false, rows);
  check_upsample_grads<double>(1e-6, 1e-6, rows);
  check_loss_grads<double>(1e-6, 1e-6, rows);
  check_predictor_grads<double>(1e-6, 1e-6, PredictorArch::kConv, rows);
  check_predictor_grads<double>(1e-6, 1e-6, PredictorArch::kGrid, rows);

  bool ok = true;
  std::printf("group\tprecision\tmax_rel_err\tthreshold\tstatus\n");
  for (const CheckRow& r : rows) {
    const bool pass = r.max_rel <= r.tol;
    ok = ok && pass;
    std::printf("%s\t%s\t%.3g\t%.0e\t%s\n", r.group.c_str(), r.precision,
                r.max_rel, r.tol, pass ? "pass" : "FAIL");
  }
  return ok ? 0 : 5;
}

// ---------------------------------------------------------------------------
// export-cube / inspect / dump-weights

int cmd_export_cube(const std::string& bundle_path, const std::string& out_path,
                    std::vector<float> omega, std::vector<float> alpha) {
  const LutBundle bundle = load_bundle(bundle_path);
  const int t = bundle.bank.t_scenarios, m = bundle.bank.m_categories;
  if (omega.empty()) omega.assign(std::size_t(t), 1.0f / float(t));
  if (alpha.empty()) alpha.assign(std::size_t(m), 1.0f / float(m));
  if (int(omega.size()) != t)
    throw InvalidArgument("--omega needs exactly " + std::to_string(t) +
                          " entries");
  if (int(alpha.size()) != m)
    throw InvalidArgument("--alpha needs exactly " + std::to_string(m) +
                          " entries");
  const Lut3d flat = flatten_bank<float>(bundle.bank, omega, alpha);
  write_cube(flat, out_path);
  return 0;
}

int cmd_inspect(const std::string& bundle_path) {
  const LutBundle bundle = load_bundle(bundle_path);
  const std::uintmax_t bytes = std::filesystem::file_size(bundle_path);
  std::printf("version\t1\n");
  std::printf("flags\t%u\n", unsigned(bundle.flags));
  std::printf("t_scenarios\t%d\n", bundle.bank.t_scenarios);
  std::printf("m_categories\t%d\n", bundle.bank.m_categories);
  std::printf("n_bins\t%d\n", bundle.bank.n_bins());
  std::printf("predictor\t%s\n",
              bundle.predictor.arch == PredictorArch::kGrid ? "grid" : "conv");
  std::printf("parameters\t%zu\n", bundle.predictor.params.size());
  std::printf("file_bytes\t%ju\n", std::uintmax_t(bytes));
  std::printf("crc\tok\n");
  return 0;
}

int cmd_dump_weights(const std::string& bundle_path, const std::string& in_path,
                     const std::string& out_dir, int threads) {
  LutBundle bundle = load_bundle(bundle_path);
  const ImagePlane image = load_png(in_path);
  ThreadPool pool(resolve_threads(threads));
  const ForwardRun fr = run_forward(bundle, image, &pool);

  std::filesystem::create_directories(out_dir);
  const int m = fr.weights.m_categories;
  const std::size_t pixels = std::size_t(image.height) * image.width;
  std::vector<float> channel(pixels);
  for (int k = 0; k < m; ++k) {
    for (std::size_t p = 0; p < pixels; ++p)
      channel[p] = fr.weights.alpha[p * std::size_t(m) + std::size_t(k)];
    const std::string path =
        (std::filesystem::path(out_dir) / ("alpha_" + std::to_string(k) + ".png"))
            .string();
    save_png_gray(channel, image.height, image.width, path);
  }
  const std::string omega_path =
      (std::filesystem::path(out_dir) / "omega.txt").string();
  std::ofstream out(omega_path);
  if (!out) throw IoError("cannot write " + omega_path);
  char buf[64];
  for (const float w : fr.weights.omega) {
    std::snprintf(buf, sizeof buf, "%.9g\n", double(w));
    out << buf;
  }
  out.flush();
  if (!out) throw IoError("write failed: " + omega_path);
  return 0;
}

// ---------------------------------------------------------------------------
// msweep

int cmd_msweep(int m_max, int steps, int size, int threads) {
  if (m_max < 1) throw InvalidArgument("--m-max must be at least 1");
  ThreadPool pool(resolve_threads(threads));
  std::printf("m\tpsnr\n");
  for (int m = 1; m <= m_max; ++m) {
    const Dataset ds = make_two_zone_dataset(size, 7);
    const TrainConfig c = zone_overfit_config(m, steps);
    const TrainResult r = train(ds, c, &pool);
    std::printf("%d\t%.2f\n", m, r.metrics.back().val_psnr);
    std::fflush(stdout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-aware 3D LUT image enhancement"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand too

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = auto)")
      ->envname("LUTFUSE_THREADS");

  // train
  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "fit a bundle to paired images");
  train_cmd->add_option("--data", ta.data, "dataset dir with input/ and target/")
      ->required();
  train_cmd->add_option("--out", ta.out, "output bundle path")->required();
  train_cmd->add_option("--metrics", ta.metrics, "metrics TSV path (default <out>.metrics.tsv)");
  train_cmd->add_option("--checkpoint", ta.checkpoint, "checkpoint path (default <out>.ckpt)");
  train_cmd->add_option("--t", ta.config.t_scenarios, "scenario count");
  train_cmd->add_option("--m", ta.config.m_categories, "category count");
  train_cmd->add_option("--n", ta.config.n_bins, "lattice nodes per axis");
  train_cmd->add_option("--epochs", ta.config.epochs, "training epochs");
  train_cmd->add_option("--batch", ta.config.batch, "pairs per optimizer step");
  train_cmd->add_option("--lr", ta.config.lr_amplitude, "cosine learning-rate amplitude");
  train_cmd->add_option("--period", ta.config.lr_period_epochs, "cosine restart period in epochs");
  train_cmd->add_option("--seed", ta.config.seed, "rng seed");
  train_cmd->add_option("--predictor", ta.predictor, "weight predictor")
      ->check(CLI::IsMember({"conv", "grid"}));
  train_cmd->add_option("--loss-w-mse", ta.config.loss_weights.w_mse, "fidelity weight");
  train_cmd->add_option("--loss-w-smooth", ta.config.loss_weights.w_smooth, "smoothness weight");
  train_cmd->add_option("--loss-w-mono", ta.config.loss_weights.w_mono, "monotonicity weight");
  train_cmd->add_option("--loss-w-color", ta.config.loss_weights.w_color, "color-difference weight");
  train_cmd->add_option("--loss-w-perceptual", ta.config.loss_weights.w_perceptual, "perceptual weight");

  // apply
  std::string ap_bundle, ap_in, ap_out;
  CLI::App* apply_cmd = app.add_subcommand("apply", "enhance one image with a bundle");
  apply_cmd->add_option("--bundle", ap_bundle, "bundle path")->required();
  apply_cmd->add_option("--in", ap_in, "input PNG")->required();
  apply_cmd->add_option("--out", ap_out, "output PNG")->required();

  // eval
  std::string ev_bundle, ev_data;
  CLI::App* eval_cmd = app.add_subcommand("eval", "report PSNR/SSIM over a paired dataset");
  eval_cmd->add_option("--bundle", ev_bundle, "bundle path")->required();
  eval_cmd->add_option("--data", ev_data, "dataset dir with input/ and target/")
      ->required();

  // bench
  std::string be_bundle;
  std::vector<std::string> be_res;
  int be_reps = 9;
  std::uint32_t be_seed = 0;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time the forward path");
  bench_cmd->add_option("--bundle", be_bundle, "bundle path (default: fresh T=3 M=10 N=33)");
  bench_cmd->add_option("--res", be_res, "resolutions WxH (default 640x480 1920x1080 3840x2160)");
  bench_cmd->add_option("--reps", be_reps, "timed repetitions per resolution");
  bench_cmd->add_option("--seed", be_seed, "noise seed");

  // gradcheck
  bool gc_inject = false;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  grad_cmd->add_flag("--inject-fault", gc_inject, "corrupt one gradient (must exit 5)");

  // export-cube
  std::string ec_bundle, ec_out;
  std::vector<float> ec_omega, ec_alpha;
  CLI::App* cube_cmd = app.add_subcommand("export-cube", "flatten the bank to a .cube file");
  cube_cmd->add_option("--bundle", ec_bundle, "bundle path")->required();
  cube_cmd->add_option("--out", ec_out, "output .cube path")->required();
  cube_cmd->add_option("--omega", ec_omega, "T scenario weights (default uniform)")
      ->delimiter(',');
  cube_cmd->add_option("--alpha", ec_alpha, "M category weights (default uniform)")
      ->delimiter(',');

  // inspect
  std::string in_bundle;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "print bundle header fields");
  inspect_cmd->add_option("--bundle", in_bundle, "bundle path")->required();

  // dump-weights
  std::string dw_bundle, dw_in, dw_dir;
  CLI::App* dump_cmd = app.add_subcommand("dump-weights", "write weight-map visualizations");
  dump_cmd->add_option("--bundle", dw_bundle, "bundle path")->required();
  dump_cmd->add_option("--in", dw_in, "input PNG")->required();
  dump_cmd->add_option("--outdir", dw_dir, "output directory")->required();

  // msweep
  int ms_mmax = 4, ms_steps = 2000, ms_size = 128;
  CLI::App* sweep_cmd = app.add_subcommand(
      "msweep", "category-count sweep on the two-zone synthetic task");
  sweep_cmd->add_option("--m-max", ms_mmax, "largest category count");
  sweep_cmd->add_option("--steps", ms_steps, "optimizer steps per run");
  sweep_cmd->add_option("--size", ms_size, "synthetic image size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage
    return 2;
  }

  if (*train_cmd) {
    ta.threads = threads;
    return guard([&] { return cmd_train(ta); }, train_cmd);
  }
  if (*apply_cmd)
    return guard([&] { return cmd_apply(ap_bundle, ap_in, ap_out, threads); });
  if (*eval_cmd)
    return guard([&] { return cmd_eval(ev_bundle, ev_data, threads); });
  if (*bench_cmd)
    return guard(
        [&] { return cmd_bench(be_bundle, be_res, be_reps, be_seed, threads); });
  if (*grad_cmd) return guard([&] { return cmd_gradcheck(gc_inject); });
  if (*cube_cmd)
    return guard(
        [&] { return cmd_export_cube(ec_bundle, ec_out, ec_omega, ec_alpha); });
  if (*inspect_cmd) return guard([&] { return cmd_inspect(in_bundle); });
  if (*dump_cmd)
    return guard(
        [&] { return cmd_dump_weights(dw_bundle, dw_in, dw_dir, threads); });
  if (*sweep_cmd)
    return guard([&] { return cmd_msweep(ms_mmax, ms_steps, ms_size, threads); });
  return 2;
}
