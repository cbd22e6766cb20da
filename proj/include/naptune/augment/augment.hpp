#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/signal/prep.hpp"

namespace naptune {

struct AugmentConfig {
  std::size_t segments_r = 4;
  double warp_sigma_pct = 25.0;
  std::array<double, 2> snr_db_range{5.0, 15.0};
  std::array<double, 2> scale_range{0.5, 2.0};
  std::uint64_t seed = 0;

  void validate() const {
    if (segments_r < 2 || segments_r % 2 != 0) throw ConfigError("augment.segments_r must be a positive even number");
    if (!(warp_sigma_pct >= 0.0 && warp_sigma_pct < 100.0)) throw ConfigError("augment.warp_sigma_pct must be in [0, 100)");
    if (snr_db_range[0] > snr_db_range[1]) throw ConfigError("augment.snr_db_range must be [low, high] with low <= high");
    if (!(scale_range[0] > 0.0) || scale_range[0] > scale_range[1]) {
      throw ConfigError("augment.scale_range must be positive with min <= max");
    }
  }
};

enum class Augmentation { TimeWarp, GaussianNoise, RandomScale };

/// Splits x into r near-equal segments, stretches a random half by sigma% and
/// squeezes the rest by sigma% (segment length rounded half away from zero),
/// concatenates, and zero-pads one sample when the result is odd. Output
/// length is therefore len(x) or len(x) + 1 for even segment lengths.
inline std::vector<float> time_warp(std::span<const float> x, std::size_t r, double sigma_pct, Rng& rng) {
  if (r == 0 || r % 2 != 0) throw ConfigError("time_warp: segment count must be positive and even");
  if (x.size() < 2 * r) {
    throw ContractError("time_warp: input of " + std::to_string(x.size()) + " samples is shorter than 2r = " +
                        std::to_string(2 * r));
  }
  std::vector<std::size_t> order(r);
  for (std::size_t i = 0; i < r; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> stretched(r, false);
  for (std::size_t i = 0; i < r / 2; ++i) stretched[order[i]] = true;

  const double factor = sigma_pct / 100.0;
  std::vector<float> out;
  out.reserve(x.size() + r);
  const std::size_t n = x.size();
  for (std::size_t s = 0; s < r; ++s) {
    const std::size_t begin = s * n / r;
    const std::size_t end = (s + 1) * n / r;
    const auto seg = x.subspan(begin, end - begin);
    const double scale = stretched[s] ? 1.0 + factor : 1.0 - factor;
    const auto target = static_cast<std::size_t>(std::max<long>(1, std::lround(static_cast<double>(seg.size()) * scale)));
    auto warped = resample_to_length(seg, target);
    out.insert(out.end(), warped.begin(), warped.end());
  }
  if (out.size() % 2 != 0) out.push_back(0.0f);
  return out;
}

/// Adds white noise at a signal-to-noise ratio of `snr_db`:
/// noise std = std(x) / 10^(snr_db / 20).
inline std::vector<float> add_gaussian_noise_at(std::span<const float> x, double snr_db, Rng& rng) {
  if (x.empty()) throw ContractError("add_gaussian_noise: empty input");
  double mu = 0.0;
  for (float v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  if (sd < kConstantSignalEps) throw ContractError("add_gaussian_noise: SNR is undefined for a constant signal");
  const double noise_sd = sd / std::pow(10.0, snr_db / 20.0);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] + noise_sd * rng.normal());
  return out;
}

/// Draws the target SNR uniformly from [low, high] dB, then adds noise.
inline std::vector<float> add_gaussian_noise(std::span<const float> x, std::array<double, 2> snr_db_range, Rng& rng) {
  const double snr = rng.uniform(snr_db_range[0], snr_db_range[1]);
  return add_gaussian_noise_at(x, snr, rng);
}

inline std::vector<float> random_scale(std::span<const float> x, std::array<double, 2> scale_range, Rng& rng) {
  if (!(scale_range[0] > 0.0) || scale_range[0] > scale_range[1]) {
    throw ConfigError("random_scale: scale range must be positive with min <= max");
  }
  const double alpha = rng.uniform(scale_range[0], scale_range[1]);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(alpha * x[i]);
  return out;
}

inline std::vector<float> apply_augmentation(Augmentation kind, std::span<const float> x, const AugmentConfig& cfg,
                                             Rng& rng) {
  switch (kind) {
    case Augmentation::TimeWarp: return time_warp(x, cfg.segments_r, cfg.warp_sigma_pct, rng);
    case Augmentation::GaussianNoise: return add_gaussian_noise(x, cfg.snr_db_range, rng);
    case Augmentation::RandomScale: return random_scale(x, cfg.scale_range, rng);
  }
  return {x.begin(), x.end()};
}

/// Crops or zero-pads to exactly `length` samples.
inline std::vector<float> fit_length(std::vector<float> x, std::size_t length) {
  x.resize(length, 0.0f);
  return x;
}

/// Two views of x, each produced by one augmentation drawn uniformly and
/// independently from the family, clamped to [-1, 1] and fitted back to the
/// input length. A second view identical to the first is redrawn.
inline std::pair<std::vector<float>, std::vector<float>> make_view_pair(std::span<const float> x,
                                                                        const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  auto view = [&](Rng& r) {
    const auto kind = static_cast<Augmentation>(r.below(3));
    // A flat window has no defined SNR; it passes through unchanged.
    const bool flat = std::all_of(x.begin(), x.end(), [&](float v) { return v == x.front(); });
    auto v = (flat && kind == Augmentation::GaussianNoise) ? std::vector<float>(x.begin(), x.end())
                                                          : apply_augmentation(kind, x, cfg, r);
    for (auto& s : v) s = std::clamp(s, -1.0f, 1.0f);
    return fit_length(std::move(v), x.size());
  };
  auto first = view(rng);
  auto second = view(rng);
  // Time warp has only C(r, r/2) outcomes, so two draws can coincide; the
  // views must differ, so redraw (bounded: a flat window can never differ).
  for (int retry = 0; retry < 8 && second == first; ++retry) second = view(rng);
  return {std::move(first), std::move(second)};
}

}  // namespace naptune
