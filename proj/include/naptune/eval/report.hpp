#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "naptune/core/error.hpp"
#include "naptune/eval/harness.hpp"
#include "naptune/eval/metrics.hpp"

namespace naptune {

inline nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["weighted_f1"] = m.weighted_f1;
  j["mean_accuracy"] = m.mean_accuracy;
  j["subset_accuracy"] = m.subset_accuracy;
  nlohmann::ordered_json f1, acc, support;
  for (std::size_t k = 0; k < kMoodCount; ++k) {
    const std::string name(kMoodNames[k]);
    f1[name] = m.per_label_f1[k];
    acc[name] = m.per_label_accuracy[k];
    support[name] = m.support[k];
  }
  j["per_label_f1"] = f1;
  j["per_label_accuracy"] = acc;
  j["support"] = support;
  j["n_records"] = m.n_records;
  return j;
}

/// Flat metric rows: mode, fold, fraction, masked_measure, metric, value.
class ReportTable {
 public:
  void add(const std::string& mode, const std::string& fold, double fraction, const std::string& masked,
           const std::string& metric, double value) {
    rows_.push_back(mode + "," + fold + "," + number(fraction) + "," + masked + "," + metric + "," + number(value));
  }

  /// weighted_f1, mean_accuracy, subset_accuracy and f1_<label> rows.
  void add_metrics(const std::string& mode, const std::string& fold, double fraction, const std::string& masked,
                   const MetricsReport& m) {
    add(mode, fold, fraction, masked, "weighted_f1", m.weighted_f1);
    add(mode, fold, fraction, masked, "mean_accuracy", m.mean_accuracy);
    add(mode, fold, fraction, masked, "subset_accuracy", m.subset_accuracy);
    for (std::size_t k = 0; k < kMoodCount; ++k) {
      add(mode, fold, fraction, masked, "f1_" + std::string(kMoodNames[k]), m.per_label_f1[k]);
    }
  }

  std::string str() const {
    std::string out = "mode,fold,fraction,masked_measure,metric,value\n";
    for (const auto& r : rows_) out += r + "\n";
    return out;
  }

  static std::string number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

 private:
  std::vector<std::string> rows_;
};

inline nlohmann::ordered_json cross_validation_json(const CrossValResult& cv) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(tune_mode_name(cv.mode));
  j["fraction"] = cv.fraction;
  j["seed"] = cv.seed;
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : cv.folds) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold;
    fj["train_subjects"] = f.train_subjects;
    fj["test_subjects"] = f.test_subjects;
    fj["n_train"] = f.n_train;
    fj["n_test"] = f.n_test;
    fj["initial_loss"] = f.initial_loss;
    fj["final_loss"] = f.final_loss;
    fj["metrics"] = metrics_json(f.metrics);
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  j["aggregate"] = metrics_json(cv.aggregate);
  return j;
}

inline void add_cross_validation_rows(ReportTable& t, const CrossValResult& cv) {
  const std::string mode(tune_mode_name(cv.mode));
  for (const auto& f : cv.folds) t.add_metrics(mode, std::to_string(f.fold), cv.fraction, "", f.metrics);
  t.add_metrics(mode, "mean", cv.fraction, "", cv.aggregate);
}

inline nlohmann::ordered_json ablation_json(const AblationReport& a) {
  nlohmann::ordered_json j;
  j["baseline"] = metrics_json(a.baseline);
  nlohmann::ordered_json masked;
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    nlohmann::ordered_json m = metrics_json(a.masked[i]);
    m["delta_weighted_f1"] = a.masked[i].weighted_f1 - a.baseline.weighted_f1;
    masked[std::string(kSleepMeasureNames[i])] = std::move(m);
  }
  j["masked"] = std::move(masked);
  j["all_masked"] = metrics_json(a.all_masked);
  return j;
}

inline void add_ablation_rows(ReportTable& t, const std::string& mode, const AblationReport& a) {
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    t.add_metrics(mode, "mean", 1.0, std::string(kSleepMeasureNames[i]), a.masked[i]);
  }
  t.add_metrics(mode, "mean", 1.0, "all", a.all_masked);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace naptune
