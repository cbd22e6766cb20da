#pragma once

#include <array>
#include <bitset>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "naptune/core/error.hpp"

namespace naptune {

inline constexpr std::size_t kSleepMeasureCount = 9;
inline constexpr std::size_t kMoodCount = 7;

inline constexpr std::array<std::string_view, kSleepMeasureCount> kSleepMeasureNames = {
    "time_in_bed_h",  "sleep_duration_h", "deep_sleep_h",       "light_sleep_h", "rem_sleep_h",
    "wake_time_h",    "deep_sleep_onset_h", "sleep_efficiency", "apnea_index"};

inline constexpr std::array<std::string_view, kMoodCount> kMoodNames = {
    "tension", "anger", "fatigue", "depression", "vigor", "confusion", "esteem"};

namespace sleep_index {
inline constexpr std::size_t time_in_bed = 0;
inline constexpr std::size_t duration = 1;
inline constexpr std::size_t deep = 2;
inline constexpr std::size_t light = 3;
inline constexpr std::size_t rem = 4;
inline constexpr std::size_t wake = 5;
inline constexpr std::size_t deep_onset = 6;
inline constexpr std::size_t efficiency = 7;
inline constexpr std::size_t apnea = 8;
}  // namespace sleep_index

inline std::size_t sleep_measure_index(std::string_view name) {
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i)
    if (kSleepMeasureNames[i] == name) return i;
  throw ConfigError("unknown sleep measure '" + std::string(name) + "'");
}

/// Previous-night sleep summary. Hours for durations, a ratio for
/// efficiency, events/hour for the apnea index. A set bit in `missing` means
/// the value was not recorded.
struct SleepMeasures {
  std::array<double, kSleepMeasureCount> values{};
  std::bitset<kSleepMeasureCount> missing;

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  /// Checks the physical consistency rules; returns an empty string when valid.
  std::string violation() const {
    using namespace sleep_index;
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
      if (!missing[i] && (!std::isfinite(values[i]) || values[i] < 0.0)) {
        return std::string(kSleepMeasureNames[i]) + " must be finite and non-negative";
      }
    }
    if (missing.any()) return {};
    if (values[duration] > values[time_in_bed] + 1e-9) return "sleep duration exceeds time in bed";
    if (values[efficiency] > 1.0) return "sleep efficiency exceeds 1";
    if (values[time_in_bed] > 0.0 &&
        std::abs(values[efficiency] - values[duration] / values[time_in_bed]) > 0.05) {
      return "sleep efficiency inconsistent with duration / time in bed";
    }
    if (values[deep] + values[light] + values[rem] > values[duration] + 0.25) {
      return "stage durations exceed sleep duration";
    }
    return {};
  }
};

/// Seven binary mood labels in kMoodNames order.
using MoodLabels = std::array<int, kMoodCount>;

}  // namespace naptune
