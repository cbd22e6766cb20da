#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "naptune/core/error.hpp"

namespace naptune {

enum class FilterKind { Highpass, Bandpass };

/// One second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

/// Cascade of biquads run in transposed direct form II with double state.
class SosFilter {
 public:
  SosFilter() = default;
  explicit SosFilter(std::vector<Biquad> sections) : sections_(std::move(sections)) {}

  const std::vector<Biquad>& sections() const { return sections_; }

  std::complex<double> response(double freq_hz, double fs) const {
    const std::complex<double> zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs);
    std::complex<double> h = 1.0;
    for (const auto& s : sections_) {
      h *= (s.b0 + zinv * (s.b1 + zinv * s.b2)) / (1.0 + zinv * (s.a1 + zinv * s.a2));
    }
    return h;
  }

  double gain_db(double freq_hz, double fs) const { return 20.0 * std::log10(std::abs(response(freq_hz, fs))); }

  /// Causal, zero initial state. Output length equals input length.
  std::vector<float> apply(std::span<const float> x) const {
    std::vector<double> buf(x.begin(), x.end());
    for (const auto& s : sections_) {
      double z1 = 0.0, z2 = 0.0;
      for (double& v : buf) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
      }
    }
    return {buf.begin(), buf.end()};
  }

 private:
  std::vector<Biquad> sections_;
};

namespace detail {

using cplx = std::complex<double>;

inline cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

// Prewarped analog frequency for a digital cutoff.
inline double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

}  // namespace detail

/// Butterworth high-pass (one cutoff) or band-pass (two cutoffs) designed by
/// the prewarped bilinear transform and factored into second-order sections.
/// Band-pass of order n has 2n poles. Passband gain is normalized to 1 at
/// Nyquist (high-pass) or at the geometric center (band-pass).
inline SosFilter design_butterworth(FilterKind kind, double fs, std::span<const double> cutoffs, int order) {
  if (fs <= 0.0) throw ConfigError("butterworth: sampling rate must be positive");
  if (order < 1) throw ConfigError("butterworth: order must be >= 1");
  const std::size_t want = kind == FilterKind::Highpass ? 1 : 2;
  if (cutoffs.size() != want) {
    throw ConfigError("butterworth: expected " + std::to_string(want) + " cutoff(s), got " +
                      std::to_string(cutoffs.size()));
  }
  for (double f : cutoffs) {
    if (!(f > 0.0 && f < fs / 2.0)) {
      throw ConfigError("butterworth: cutoff " + std::to_string(f) + " Hz must lie strictly inside (0, " +
                        std::to_string(fs / 2.0) + ") Hz");
    }
  }
  if (kind == FilterKind::Bandpass && !(cutoffs[0] < cutoffs[1])) {
    throw ConfigError("butterworth: band-pass cutoffs must be increasing");
  }

  using detail::cplx;
  const int n = order;
  std::vector<cplx> proto;
  for (int k = 0; k < n; ++k) {
    proto.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n)));
  }

  std::vector<cplx> poles;  // digital
  double ref_freq = 0.0;    // where |H| is normalized to 1
  int zeros_at_one = 0;     // zeros at z = 1 (DC)
  int zeros_at_minus_one = 0;
  if (kind == FilterKind::Highpass) {
    const double wc = detail::prewarp(cutoffs[0], fs);
    for (auto p : proto) poles.push_back(detail::bilinear(wc / p, fs));
    zeros_at_one = n;
    ref_freq = fs / 2.0;
  } else {
    const double w1 = detail::prewarp(cutoffs[0], fs);
    const double w2 = detail::prewarp(cutoffs[1], fs);
    const double bw = w2 - w1;
    const double w0sq = w1 * w2;
    for (auto p : proto) {
      const cplx b = p * bw;
      const cplx disc = std::sqrt(b * b - 4.0 * w0sq);
      poles.push_back(detail::bilinear((b + disc) / 2.0, fs));
      poles.push_back(detail::bilinear((b - disc) / 2.0, fs));
    }
    zeros_at_one = n;
    zeros_at_minus_one = n;
    ref_freq = fs / std::numbers::pi * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  }

  // Pair conjugate poles; leftover real poles are paired with each other.
  std::vector<cplx> upper;
  std::vector<double> reals;
  for (auto p : poles) {
    if (std::abs(p.imag()) < 1e-12 * std::max(1.0, std::abs(p))) {
      reals.push_back(p.real());
    } else if (p.imag() > 0) {
      upper.push_back(p);
    }
  }
  std::sort(reals.begin(), reals.end());
  std::vector<Biquad> sections;
  for (auto p : upper) sections.push_back({1, 0, 0, -2.0 * p.real(), std::norm(p)});
  for (std::size_t i = 0; i < reals.size(); i += 2) {
    if (i + 1 < reals.size()) {
      sections.push_back({1, 0, 0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]});
    } else {
      sections.push_back({1, 0, 0, -reals[i], 0});
    }
  }

  // Distribute zeros: two per section while available.
  for (auto& s : sections) {
    const int order_here = s.a2 == 0.0 ? 1 : 2;
    std::vector<double> num{1.0};
    auto multiply = [&num](double root) {  // (1 - root z^-1)
      std::vector<double> next(num.size() + 1, 0.0);
      for (std::size_t i = 0; i < num.size(); ++i) {
        next[i] += num[i];
        next[i + 1] -= root * num[i];
      }
      num = std::move(next);
    };
    for (int z = 0; z < order_here; ++z) {
      if (zeros_at_one >= zeros_at_minus_one && zeros_at_one > 0) {
        multiply(1.0);
        --zeros_at_one;
      } else if (zeros_at_minus_one > 0) {
        multiply(-1.0);
        --zeros_at_minus_one;
      }
    }
    num.resize(3, 0.0);
    s.b0 = num[0];
    s.b1 = num[1];
    s.b2 = num[2];
  }

  SosFilter unnormalized(sections);
  const double mag = std::abs(unnormalized.response(ref_freq, fs));
  const double per_section = std::pow(1.0 / mag, 1.0 / static_cast<double>(sections.size()));
  for (auto& s : sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return SosFilter(std::move(sections));
}

inline std::vector<float> butterworth_filter(std::span<const float> x, double fs, FilterKind kind,
                                             std::span<const double> cutoffs, int order = 4) {
  return design_butterworth(kind, fs, cutoffs, order).apply(x);
}

}  // namespace naptune
