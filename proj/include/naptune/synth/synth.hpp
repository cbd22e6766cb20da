#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/signal/dataset.hpp"
#include "naptune/signal/prep.hpp"
#include "naptune/tune/sleep.hpp"

namespace naptune {

using SleepWeightMatrix = std::array<std::array<double, kSleepMeasureCount>, kMoodCount>;

/// Population reference used to standardize sleep measures inside the mood
/// model. Mean and stddev of the default sleep generator (Monte Carlo, 10^6 draws).
struct SleepReference {
  std::array<double, kSleepMeasureCount> mean{8.0, 7.04, 1.407, 3.884, 1.748, 0.961, 0.501, 0.88, 3.0};
  std::array<double, kSleepMeasureCount> stddev{1.0, 0.944, 0.372, 0.658, 0.46, 0.362, 0.198, 0.0423, 3.0};
};

inline SleepWeightMatrix default_sleep_weights() {
  using namespace sleep_index;
  SleepWeightMatrix w{};
  w[0][deep] = -2.0;                            // tension
  w[1][wake] = 1.5;                             // anger
  w[2][duration] = -2.5, w[2][rem] = -2.0;      // fatigue
  w[3][rem] = -4.5;                             // depression
  w[4][deep] = 2.0, w[4][rem] = 3.0;            // vigor
  w[5][deep_onset] = 2.5, w[5][efficiency] = -1.5;  // confusion
  w[6][rem] = 3.0;                              // esteem
  return w;
}

struct GeneratorConfig {
  std::size_t n_subjects = 40;
  std::size_t windows_per_subject = 30;
  std::size_t nights_per_subject = 10;
  Modality modality = Modality::PPG;
  std::uint64_t seed = 0;
  SleepWeightMatrix sleep_weights = default_sleep_weights();
  std::array<double, kMoodCount> signal_weights{3.0, 3.0, 0.0, 0.0, 0.0, 0.0, -2.5};
  std::array<double, kMoodCount> label_bias{};
  double noise = 0.05;
  // Share of the pulse-rate latent's variance that is constant per subject.
  double subject_share = 0.5;
  std::size_t uninformative_measure = sleep_index::apnea;
  SleepReference reference;

  void validate() const {
    if (n_subjects < 1) throw ConfigError("generator.n_subjects must be >= 1");
    if (nights_per_subject < 1 || windows_per_subject < nights_per_subject ||
        windows_per_subject % nights_per_subject != 0) {
      throw ConfigError("generator.windows_per_subject must be a positive multiple of generator.nights_per_subject");
    }
    if (!(noise >= 0.0)) throw ConfigError("generator.noise must be >= 0");
    if (!(subject_share >= 0.0 && subject_share <= 1.0)) throw ConfigError("generator.subject_share must be in [0, 1]");
    if (uninformative_measure >= kSleepMeasureCount) throw ConfigError("generator.uninformative_measure outside 0..8");
    for (const auto& row : sleep_weights) {
      if (row[uninformative_measure] != 0.0) {
        throw ConfigError("generator.sleep_weights column " +
                          std::string(kSleepMeasureNames[uninformative_measure]) + " must be zero for every label");
      }
    }
    bool rem_dominant = false;
    for (const auto& row : sleep_weights) {
      double total = 0.0;
      for (double x : row) total += std::abs(x);
      if (total > 0.0 && std::abs(row[sleep_index::rem]) >= 0.5 * total) rem_dominant = true;
    }
    if (!rem_dominant) throw ConfigError("generator.sleep_weights needs a label dominated by rem_sleep_h");
    for (double s : reference.stddev)
      if (!(s > 0.0)) throw ConfigError("generator.reference stddev values must be positive");
  }
};

struct SubjectProfile {
  std::string id;
  double rate_latent = 0.0;  // subject part of the pulse-rate latent
  double amplitude = 1.0;
  double noise = 0.05;
  double time_in_bed_offset_h = 0.0;
  double efficiency_mean = 0.88;
  double rem_fraction_offset = 0.0;
};

inline double pulse_rate_bpm(double latent) { return std::clamp(70.0 + 15.0 * latent, 40.0, 140.0); }

inline SubjectProfile make_profile(const std::string& id, const GeneratorConfig& cfg, Rng& rng) {
  SubjectProfile p;
  p.id = id;
  p.rate_latent = rng.normal();
  p.amplitude = rng.uniform(0.8, 1.2);
  p.noise = cfg.noise * rng.uniform(0.8, 1.2);
  p.time_in_bed_offset_h = rng.normal(0.0, 0.6);
  p.efficiency_mean = std::clamp(rng.normal(0.88, 0.03), 0.75, 0.97);
  p.rem_fraction_offset = rng.normal(0.0, 0.03);
  return p;
}

/// Gaussian pulse train at `rate_bpm` with 2% beat-interval jitter, 0.15 Hz
/// baseline wander and white noise.
inline RawRecording gen_signal(const SubjectProfile& profile, double rate_bpm, Modality modality, double fs,
                               double seconds, Rng& rng) {
  if (!(fs > 0.0 && seconds > 0.0)) throw ConfigError("gen_signal: fs and duration must be positive");
  const auto n = static_cast<std::size_t>(std::lround(fs * seconds));
  const double period = 60.0 / std::clamp(rate_bpm, 40.0, 140.0);
  // Bumps narrower than ~0.1 period push energy into harmonics, which can
  // then outweigh the fundamental.
  const double width = (modality == Modality::EDA ? 0.25 : 0.1) * period;

  std::vector<double> beats;
  for (double t = rng.uniform(0.0, period) - period; t < seconds + period;
       t += period * (1.0 + 0.02 * rng.normal())) {
    beats.push_back(t);
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  RawRecording rec{profile.id, modality, fs, std::vector<float>(n)};
  std::size_t first = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    while (first < beats.size() && beats[first] < t - 5.0 * width) ++first;
    double v = 0.0;
    for (std::size_t k = first; k < beats.size() && beats[k] <= t + 5.0 * width; ++k) {
      const double d = (t - beats[k]) / width;
      v += std::exp(-0.5 * d * d);
    }
    v *= profile.amplitude;
    v += 0.1 * profile.amplitude * std::sin(2.0 * std::numbers::pi * 0.15 * t + phase);
    v += profile.noise * rng.normal();
    rec.samples[i] = static_cast<float>(v);
  }
  return rec;
}

/// One night of sleep: stages rescaled to the sleep duration, efficiency the
/// exact duration / time-in-bed ratio.
inline SleepMeasures gen_sleep(const SubjectProfile& p, Rng& rng) {
  using namespace sleep_index;
  SleepMeasures s;
  const double tib = std::clamp(8.0 + p.time_in_bed_offset_h + rng.normal(0.0, 0.8), 4.0, 12.0);
  const double eff = std::clamp(rng.normal(p.efficiency_mean, 0.03), 0.6, 0.99);
  const double dur = eff * tib;
  double fd = std::clamp(rng.normal(0.2, 0.05), 0.05, 0.4);
  double fl = std::clamp(rng.normal(0.55, 0.07), 0.3, 0.8);
  double fr = std::clamp(rng.normal(0.25 + p.rem_fraction_offset, 0.06), 0.05, 0.45);
  const double sum = fd + fl + fr;
  s[time_in_bed] = tib;
  s[duration] = dur;
  s[deep] = dur * fd / sum;
  s[light] = dur * fl / sum;
  s[rem] = dur * fr / sum;
  s[wake] = tib - dur;
  s[deep_onset] = std::clamp(rng.normal(0.5, 0.2), 0.05, 2.0);
  s[efficiency] = dur / tib;
  s[apnea] = std::clamp(rng.exponential(3.0), 0.0, 30.0);
  return s;
}

/// label_j ~ Bernoulli(sigmoid(W_j . standardized sleep + v_j * latent + b_j)).
inline MoodLabels gen_mood(const SleepMeasures& sleep, double signal_latent, const GeneratorConfig& cfg, Rng& rng) {
  MoodLabels out{};
  for (std::size_t j = 0; j < kMoodCount; ++j) {
    double logit = cfg.label_bias[j] + cfg.signal_weights[j] * signal_latent;
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
      logit += cfg.sleep_weights[j][i] * (sleep[i] - cfg.reference.mean[i]) / cfg.reference.stddev[i];
    }
    out[j] = rng.bernoulli(1.0 / (1.0 + std::exp(-logit))) ? 1 : 0;
  }
  return out;
}

/// Ground truth behind one subject-night, kept for learnability checks.
struct SyntheticNight {
  std::string subject_id;
  std::size_t night = 0;
  double signal_latent = 0.0;
  double pulse_rate_bpm = 0.0;
  SleepMeasures sleep;
  MoodLabels mood{};
};

struct SyntheticData {
  Dataset dataset;
  std::vector<SyntheticNight> nights;
};

inline std::string subject_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "S%03zu", i + 1);
  return buf;
}

/// Each subject-night gets one recording of (windows per night) x 10 s at the
/// modality's native rate, preprocessed into windows that all share that
/// night's sleep and mood.
inline SyntheticData gen_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  SyntheticData out;
  out.dataset.modality = cfg.modality;
  out.dataset.sampling_rate_hz = effective_rate_hz(cfg.modality);
  out.dataset.window_seconds = kWindowSeconds;
  const std::size_t per_night = cfg.windows_per_subject / cfg.nights_per_subject;
  const double fs = native_rate_hz(cfg.modality);
  const double a = std::sqrt(cfg.subject_share), b = std::sqrt(1.0 - cfg.subject_share);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    Rng rng(derive_seed(cfg.seed, 1000 + s));
    const auto profile = make_profile(subject_id(s), cfg, rng);
    for (std::size_t night = 0; night < cfg.nights_per_subject; ++night) {
      SyntheticNight sn;
      sn.subject_id = profile.id;
      sn.night = night;
      sn.signal_latent = a * profile.rate_latent + b * rng.normal();
      sn.pulse_rate_bpm = pulse_rate_bpm(sn.signal_latent);
      sn.sleep = gen_sleep(profile, rng);
      sn.mood = gen_mood(sn.sleep, sn.signal_latent, cfg, rng);
      const auto rec = gen_signal(profile, sn.pulse_rate_bpm, cfg.modality, fs,
                                  static_cast<double>(per_night) * kWindowSeconds, rng);
      auto windows = preprocess(rec);
      for (auto& w : windows) {
        w.window_index += night * per_night;
        out.dataset.records.push_back({std::move(w), sn.sleep, sn.mood});
      }
      out.nights.push_back(sn);
    }
  }
  return out;
}

inline Dataset gen_dataset(const GeneratorConfig& cfg) { return gen_synthetic(cfg).dataset; }

}  // namespace naptune
