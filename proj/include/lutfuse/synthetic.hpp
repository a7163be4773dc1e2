// Synthetic data for benchmarks and the spatial-awareness demonstration.
// Deterministic across platforms: pixels come from mt19937 words reduced to
// 24-bit fractions, never from distribution adapters.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "core.hpp"
#include "error.hpp"
#include "trainer.hpp"

namespace lutfuse {

inline ImagePlane make_noise_image(int height, int width, std::uint32_t seed) {
  if (height < 1 || width < 1)
    throw InvalidArgument("noise image dimensions must be positive");
  ImagePlane img;
  img.height = height;
  img.width = width;
  img.data.resize(std::size_t(height) * width * 3);
  std::mt19937 rng(seed);
  for (float& v : img.data)
    v = float((rng() >> 8) * (1.0 / 16777216.0));
  return img;
}

// A single pair whose target cannot be produced by one global LUT: the image
// is split into equal vertical stripes and each stripe applies its own gamma
// to the shared noise input. Every color occurs in every stripe, so the
// stripes conflict everywhere and only pixel-wise category weights can
// separate them; capacity saturates once M reaches the stripe count.
inline TrainPair make_zone_pair(int size, std::uint32_t seed,
                                std::span<const double> gammas) {
  const int zones = int(gammas.size());
  if (zones < 1) throw InvalidArgument("zone pair needs at least one gamma");
  if (size < zones)
    throw InvalidArgument("zone image needs at least one column per zone");
  TrainPair pair;
  pair.name = "zones.png";
  pair.input = make_noise_image(size, size, seed);
  pair.target = pair.input;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double gamma = gammas[std::size_t(x) * zones / size];
      float* px = pair.target.data.data() + (std::size_t(y) * size + x) * 3;
      for (int c = 0; c < 3; ++c)
        px[c] = float(std::pow(double(px[c]), gamma));
    }
  return pair;
}

inline Dataset make_zone_dataset(int size, std::uint32_t seed,
                                 std::span<const double> gammas) {
  Dataset ds;
  ds.pairs.push_back(make_zone_pair(size, seed, gammas));
  ds.train_idx = {0};
  return ds;
}

// Left half brightened (gamma 0.45), right half crushed (gamma 2.2).
inline constexpr double kTwoZoneGammas[] = {0.45, 2.2};
// The four-stripe variant gives every capacity step from M=1 to M=4 a
// structural effect to measure.
inline constexpr double kFourZoneGammas[] = {0.45, 0.8, 1.4, 2.2};

inline TrainPair make_two_zone_pair(int size, std::uint32_t seed) {
  TrainPair pair = make_zone_pair(size, seed, kTwoZoneGammas);
  pair.name = "two_zone.png";
  return pair;
}

inline Dataset make_two_zone_dataset(int size, std::uint32_t seed) {
  Dataset ds;
  ds.pairs.push_back(make_two_zone_pair(size, seed));
  ds.train_idx = {0};
  return ds;
}

// Training configuration for fitting a zone pair with the direct logit
// grid: one scenario, a single cosine decay across the whole run, and a
// learning rate large enough to move lattice cells in a few thousand steps.
// The coarse 9-node lattice keeps every cell supported by many pixels, so
// the run converges to a stable lattice-limited optimum instead of chasing
// per-pixel noise, and capacity differences stay visible and reproducible.
inline TrainConfig zone_overfit_config(int m_categories, int steps = 2000) {
  TrainConfig c;
  c.arch = PredictorArch::kGrid;
  c.t_scenarios = 1;
  c.m_categories = m_categories;
  c.n_bins = 9;
  c.epochs = steps;  // one pair, so one optimizer step per epoch
  c.lr_period_epochs = steps;
  c.lr_amplitude = 1e-2f;
  c.seed = 7;
  c.bank_init_spread = 0.1f;
  // Pure fidelity: with one pair the per-cell data gradient is sparse
  // enough that the bank regularizers would dominate it and flatten the
  // steep half of the target. The regularizers get their own coverage.
  c.loss_weights.w_smooth = 0.0f;
  c.loss_weights.w_mono = 0.0f;
  c.loss_weights.w_color = 0.0f;
  c.loss_weights.w_perceptual = 0.0f;
  return c;
}

}  // namespace lutfuse
