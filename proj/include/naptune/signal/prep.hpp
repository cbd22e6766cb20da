#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/signal/butterworth.hpp"

namespace naptune {

enum class Modality { ECG, PPG, EDA };

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::ECG: return "ECG";
    case Modality::PPG: return "PPG";
    case Modality::EDA: return "EDA";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "ECG") return Modality::ECG;
  if (s == "PPG") return Modality::PPG;
  if (s == "EDA") return Modality::EDA;
  throw ConfigError("unknown modality '" + std::string(s) + "' (expected ECG, PPG or EDA)");
}

/// Native wearable sampling rate per modality.
inline double native_rate_hz(Modality m) {
  switch (m) {
    case Modality::ECG: return 512.0;
    case Modality::PPG: return 64.0;
    case Modality::EDA: return 4.0;
  }
  return 0.0;
}

/// EDA is upsampled so every modality clears the six-block conv stack.
inline constexpr double kEdaResampleHz = 64.0;
inline constexpr double kWindowSeconds = 10.0;

/// Rate of the windows that reach the encoder.
inline double effective_rate_hz(Modality m) { return m == Modality::EDA ? kEdaResampleHz : native_rate_hz(m); }

inline std::size_t window_length(Modality m, double window_seconds = kWindowSeconds) {
  return static_cast<std::size_t>(std::lround(window_seconds * effective_rate_hz(m)));
}

struct RawRecording {
  std::string subject_id;
  Modality modality = Modality::ECG;
  double sampling_rate_hz = 0.0;
  std::vector<float> samples;
};

struct TimeSeriesWindow {
  std::string subject_id;
  Modality modality = Modality::ECG;
  double sampling_rate_hz = 0.0;
  std::vector<float> samples;
  std::size_t window_index = 0;
};

/// Piecewise-linear resampling. Output length is round(n * fs_out / fs_in) and
/// the grid is endpoint-aligned: output i sits at input position
/// i * (n - 1) / (m - 1), so first and last samples are preserved exactly.
/// For example [0, 2] taken from 1 Hz to 2 Hz gives [0, 2/3, 4/3, 2].
inline std::vector<float> resample_to_length(std::span<const float> x, std::size_t m) {
  if (x.empty()) throw ContractError("resample: empty input");
  if (m == 0) throw ContractError("resample: output length must be positive");
  const std::size_t n = x.size();
  if (m == n) return {x.begin(), x.end()};
  std::vector<float> out(m);
  if (n == 1 || m == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), n - 1);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= n || frac == 0.0) {
      out[i] = x[lo];
    } else {
      out[i] = static_cast<float>(x[lo] + frac * (static_cast<double>(x[lo + 1]) - x[lo]));
    }
  }
  return out;
}

inline std::vector<float> resample_linear(std::span<const float> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0 && fs_out > 0.0)) throw ContractError("resample: sampling rates must be positive");
  if (x.empty()) throw ContractError("resample: empty input");
  const auto m = static_cast<std::size_t>(
      std::max<long>(1, std::lround(static_cast<double>(x.size()) * fs_out / fs_in)));
  return resample_to_length(x, m);
}

inline constexpr double kConstantSignalEps = 1e-8;

/// Z-score followed by min-max scaling into [-1, 1]. A non-constant input
/// attains -1 and +1 exactly; a constant input maps to zeros.
inline std::vector<float> zscore_then_minmax(std::span<const float> x) {
  if (x.size() < 2) throw ContractError("zscore_then_minmax: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (float v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (float v : x) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / n);
  std::vector<float> out(x.size(), 0.0f);
  if (sd < kConstantSignalEps) return out;
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mu) / sd;
  const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
  const double zmin = *lo, range = *hi - *lo;
  if (range < kConstantSignalEps) return out;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(2.0 * (z[i] - zmin) / range - 1.0, -1.0, 1.0));
  }
  return out;
}

/// Non-overlapping consecutive windows; the trailing partial window is dropped.
inline std::vector<std::vector<float>> segment_windows(std::span<const float> x, double fs,
                                                       double window_seconds = kWindowSeconds) {
  const long len = std::lround(fs * window_seconds);
  if (len < 1) throw ContractError("segment_windows: fs * window_seconds must be >= 1");
  const auto w = static_cast<std::size_t>(len);
  std::vector<std::vector<float>> out;
  for (std::size_t start = 0; start + w <= x.size(); start += w) {
    out.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(start),
                     x.begin() + static_cast<std::ptrdiff_t>(start + w));
  }
  return out;
}

/// ECG: 0.5 Hz high-pass. PPG: 0.5-8 Hz band-pass. EDA: unfiltered, then
/// upsampled to 64 Hz. Then z-score, min-max to [-1, 1], and 10 s windows.
/// Normalization statistics are per recording.
inline std::vector<TimeSeriesWindow> preprocess(const RawRecording& rec, int filter_order = 4) {
  if (!(rec.sampling_rate_hz > 0.0)) throw ContractError("recording sampling rate must be positive");
  if (rec.samples.empty()) throw ContractError("recording for subject '" + rec.subject_id + "' has no samples");
  std::vector<float> x;
  double fs = rec.sampling_rate_hz;
  switch (rec.modality) {
    case Modality::ECG: {
      const double fc[] = {0.5};
      x = butterworth_filter(rec.samples, fs, FilterKind::Highpass, fc, filter_order);
      break;
    }
    case Modality::PPG: {
      const double band[] = {0.5, 8.0};
      x = butterworth_filter(rec.samples, fs, FilterKind::Bandpass, band, filter_order);
      break;
    }
    case Modality::EDA:
      x = resample_linear(rec.samples, fs, kEdaResampleHz);
      fs = kEdaResampleHz;
      break;
  }
  if (x.size() < 2) return {};
  x = zscore_then_minmax(x);
  std::vector<TimeSeriesWindow> windows;
  auto pieces = segment_windows(x, fs);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    windows.push_back({rec.subject_id, rec.modality, fs, std::move(pieces[i]), i});
  }
  return windows;
}

}  // namespace naptune
