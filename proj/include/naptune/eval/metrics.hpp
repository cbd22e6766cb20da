#pragma once

#include <array>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/tune/sleep.hpp"

namespace naptune {

struct MetricsReport {
  double weighted_f1 = 0.0;
  double mean_accuracy = 0.0;
  double subset_accuracy = 0.0;
  std::array<double, kMoodCount> per_label_f1{};
  std::array<double, kMoodCount> per_label_accuracy{};
  std::array<std::size_t, kMoodCount> support{};
  std::size_t n_records = 0;
};

namespace detail {

inline void check_lengths(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred, const char* what) {
  if (y_true.size() != y_pred.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(y_true.size()) + " true vs " +
                         std::to_string(y_pred.size()) + " predicted label sets");
  }
  if (y_true.empty()) throw ContractError(std::string(what) + ": need at least one record");
}

}  // namespace detail

/// Binary F1 of one label; 0 when precision + recall is 0.
inline double label_f1(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred, std::size_t j) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i][j] != 0, p = y_pred[i][j] != 0;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

/// Per-label F1 averaged with weights proportional to positive support.
inline double weighted_f1(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred) {
  detail::check_lengths(y_true, y_pred, "weighted_f1");
  double num = 0.0;
  std::size_t total = 0;
  for (std::size_t j = 0; j < kMoodCount; ++j) {
    std::size_t support = 0;
    for (const auto& y : y_true) support += y[j] != 0;
    num += static_cast<double>(support) * label_f1(y_true, y_pred, j);
    total += support;
  }
  if (total == 0) {
    std::clog << "warning: weighted_f1 with no positive labels, returning 0\n";
    return 0.0;
  }
  return num / static_cast<double>(total);
}

/// Per-label accuracy averaged over the 7 labels.
inline double mean_accuracy(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred) {
  detail::check_lengths(y_true, y_pred, "mean_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i)
    for (std::size_t j = 0; j < kMoodCount; ++j) hits += y_true[i][j] == y_pred[i][j];
  return static_cast<double>(hits) / static_cast<double>(y_true.size() * kMoodCount);
}

/// Fraction of records whose 7 labels are all correct.
inline double subset_accuracy(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred) {
  detail::check_lengths(y_true, y_pred, "subset_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hits += y_true[i] == y_pred[i];
  return static_cast<double>(hits) / static_cast<double>(y_true.size());
}

inline MetricsReport compute_metrics(std::span<const MoodLabels> y_true, std::span<const MoodLabels> y_pred) {
  MetricsReport r;
  r.weighted_f1 = weighted_f1(y_true, y_pred);
  r.mean_accuracy = mean_accuracy(y_true, y_pred);
  r.subset_accuracy = subset_accuracy(y_true, y_pred);
  r.n_records = y_true.size();
  for (std::size_t j = 0; j < kMoodCount; ++j) {
    r.per_label_f1[j] = label_f1(y_true, y_pred, j);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      r.support[j] += y_true[i][j] != 0;
      hits += y_true[i][j] == y_pred[i][j];
    }
    r.per_label_accuracy[j] = static_cast<double>(hits) / static_cast<double>(y_true.size());
  }
  return r;
}

/// Unweighted mean of fold reports; supports and record counts are summed.
inline MetricsReport mean_report(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("mean_report: no reports");
  MetricsReport m;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    m.weighted_f1 += r.weighted_f1 / n;
    m.mean_accuracy += r.mean_accuracy / n;
    m.subset_accuracy += r.subset_accuracy / n;
    m.n_records += r.n_records;
    for (std::size_t j = 0; j < kMoodCount; ++j) {
      m.per_label_f1[j] += r.per_label_f1[j] / n;
      m.per_label_accuracy[j] += r.per_label_accuracy[j] / n;
      m.support[j] += r.support[j];
    }
  }
  return m;
}

}  // namespace naptune
