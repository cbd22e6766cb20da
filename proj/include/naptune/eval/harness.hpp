#pragma once

#include <algorithm>
#include <bitset>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/eval/metrics.hpp"
#include "naptune/signal/dataset.hpp"
#include "naptune/tune/train.hpp"

namespace naptune {

struct FoldAssignment {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> fold_of;

  std::vector<std::string> subjects_in(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
      if (f == fold) out.push_back(id);
    return out;
  }
};

/// Seeded shuffle of the (sorted) subject ids, then round-robin assignment.
inline FoldAssignment make_folds(std::vector<std::string> subject_ids, std::size_t k, std::uint64_t seed) {
  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
  if (k < 2) throw ConfigError("eval.folds must be >= 2");
  if (subject_ids.size() < k) {
    throw ContractError("make_folds: " + std::to_string(subject_ids.size()) + " subjects cannot fill " +
                        std::to_string(k) + " folds");
  }
  Rng rng(derive_seed(seed, 21));
  rng.shuffle(subject_ids);
  FoldAssignment fa{k, seed, {}};
  for (std::size_t i = 0; i < subject_ids.size(); ++i) fa.fold_of[subject_ids[i]] = i % k;
  return fa;
}

/// Keeps round(fraction * n) records. Each subject's share is allocated by
/// largest remainder so subjects keep proportional representation; records
/// within a subject are a seeded random subset in original order.
inline std::vector<DatasetRecord> subsample_records(const std::vector<DatasetRecord>& records, double fraction,
                                                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("training fraction must be in (0, 1]");
  if (fraction == 1.0) return records;
  std::vector<std::string> ids;
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& v = by_subject[records[i].window.subject_id];
    if (v.empty()) ids.push_back(records[i].window.subject_id);
    v.push_back(i);
  }
  const auto target = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(records.size())));
  if (target == 0) {
    throw ContractError("training fraction " + std::to_string(fraction) + " of " + std::to_string(records.size()) +
                        " records leaves an empty training set");
  }
  std::vector<std::size_t> quota(ids.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const double exact = fraction * static_cast<double>(by_subject[ids[s]].size());
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[s];
    remainders.emplace_back(exact - std::floor(exact), s);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];

  Rng rng(derive_seed(seed, 31));
  std::vector<std::size_t> keep;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    auto idx = by_subject[ids[s]];
    rng.shuffle(idx);
    idx.resize(std::min(quota[s], idx.size()));
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  std::vector<DatasetRecord> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(records[i]);
  return out;
}

struct ExperimentSpec {
  EncoderConfig encoder;
  TuneConfig tune;
  std::optional<EncoderWeights<float>> pretrained;
  std::size_t folds = 3;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  double threshold = 0.5;
  std::size_t jobs = 1;
  bool keep_models = false;
};

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  MetricsReport metrics;
  SleepNormStats sleep_norm;
  std::optional<MoodModel> model;
};

struct CrossValResult {
  TuneMode mode = TuneMode::NapTune;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  MetricsReport aggregate;
};

struct FoldSplit {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

inline FoldSplit split_fold(const Dataset& ds, const FoldAssignment& fa, std::size_t fold) {
  FoldSplit s;
  std::set<std::string> train_ids, test_ids;
  for (const auto& r : ds.records) {
    const auto it = fa.fold_of.find(r.window.subject_id);
    if (it == fa.fold_of.end()) throw ContractError("subject " + r.window.subject_id + " has no fold");
    if (it->second == fold) {
      s.test.push_back(r);
      test_ids.insert(r.window.subject_id);
    } else {
      s.train.push_back(r);
      train_ids.insert(r.window.subject_id);
    }
  }
  for (const auto& id : train_ids) {
    if (test_ids.count(id)) throw ContractError("subject " + id + " appears in both train and test of fold " + std::to_string(fold));
  }
  s.train_subjects.assign(train_ids.begin(), train_ids.end());
  s.test_subjects.assign(test_ids.begin(), test_ids.end());
  if (s.train.empty() || s.test.empty()) throw ContractError("fold " + std::to_string(fold) + " has an empty side");
  return s;
}

inline std::vector<MoodLabels> true_labels(std::span<const DatasetRecord> records) {
  std::vector<MoodLabels> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.mood);
  return y;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= n) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Cross-subject k-fold evaluation: each fold in turn is the test set, the
/// model is tuned on the rest. The aggregate is the mean over folds.
inline CrossValResult cross_validate(const Dataset& ds, const ExperimentSpec& spec) {
  const auto fa = make_folds(ds.subject_ids(), spec.folds, spec.seed);
  CrossValResult res;
  res.mode = spec.tune.mode;
  res.fraction = spec.fraction;
  res.seed = spec.seed;
  res.folds.resize(spec.folds);
  parallel_for(spec.folds, spec.jobs, [&](std::size_t f) {
    auto split = split_fold(ds, fa, f);
    auto train = subsample_records(split.train, spec.fraction, derive_seed(spec.seed, 100 + f));
    TuneConfig cfg = spec.tune;
    cfg.seed = derive_seed(spec.seed, 200 + f);
    auto tuned = tune(train, spec.encoder, cfg, spec.pretrained);
    FoldResult fr;
    fr.fold = f;
    fr.train_subjects = split.train_subjects;
    fr.test_subjects = split.test_subjects;
    fr.n_train = train.size();
    fr.n_test = split.test.size();
    fr.initial_loss = tuned.initial_loss;
    fr.final_loss = tuned.curve.empty() ? tuned.initial_loss : tuned.curve.back().loss;
    fr.sleep_norm = tuned.model.sleep_norm;
    const auto cache = feature_cache(tuned.model, split.test);
    std::vector<MoodLabels> pred;
    for (const auto& p : predict_proba(tuned.model, split.test, cache)) pred.push_back(binarize(p, spec.threshold));
    fr.metrics = compute_metrics(true_labels(split.test), pred);
    if (spec.keep_models) fr.model = std::move(tuned.model);
    res.folds[f] = std::move(fr);
  });
  std::vector<MetricsReport> reports;
  for (const auto& f : res.folds) reports.push_back(f.metrics);
  res.aggregate = mean_report(reports);
  return res;
}

/// Metrics with one sleep measure replaced by the training mean. The model
/// is only read.
inline MetricsReport ablate_sleep_measure(const MoodModel& model, std::span<const DatasetRecord> test,
                                          std::size_t measure) {
  if (measure >= kSleepMeasureCount) {
    throw ConfigError("sleep measure index " + std::to_string(measure) + " outside 0..8");
  }
  std::bitset<kSleepMeasureCount> mask;
  mask.set(measure);
  return compute_metrics(true_labels(test), predict(model, test, mask));
}

struct AblationReport {
  MetricsReport baseline;
  std::array<MetricsReport, kSleepMeasureCount> masked{};
  MetricsReport all_masked;
  std::vector<MetricsReport> fold_baseline;
  std::vector<std::array<MetricsReport, kSleepMeasureCount>> fold_masked;
};

/// Test-time masking of each sleep measure on every fold of a cross-validation
/// run that kept its models; fold metrics are averaged.
inline AblationReport ablate_all_measures(const Dataset& ds, const CrossValResult& cv, std::size_t folds,
                                          std::uint64_t seed, double threshold = 0.5) {
  const auto fa = make_folds(ds.subject_ids(), folds, seed);
  AblationReport rep;
  std::vector<MetricsReport> all;
  for (const auto& f : cv.folds) {
    if (!f.model) throw ContractError("ablation needs the cross-validation models (keep_models)");
    if (!f.model->config.uses_sleep()) throw ContractError("ablation needs a model trained with sleep input");
    const auto split = split_fold(ds, fa, f.fold);
    const auto cache = feature_cache(*f.model, split.test);
    const auto y = true_labels(split.test);
    auto eval_mask = [&](std::bitset<kSleepMeasureCount> mask) {
      std::vector<MoodLabels> pred;
      for (const auto& p : predict_proba(*f.model, split.test, cache, mask)) pred.push_back(binarize(p, threshold));
      return compute_metrics(y, pred);
    };
    rep.fold_baseline.push_back(eval_mask({}));
    std::array<MetricsReport, kSleepMeasureCount> masked{};
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
      std::bitset<kSleepMeasureCount> mask;
      mask.set(i);
      masked[i] = eval_mask(mask);
    }
    rep.fold_masked.push_back(masked);
    all.push_back(eval_mask(std::bitset<kSleepMeasureCount>().set()));
  }
  rep.baseline = mean_report(rep.fold_baseline);
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    std::vector<MetricsReport> per;
    for (const auto& m : rep.fold_masked) per.push_back(m[i]);
    rep.masked[i] = mean_report(per);
  }
  rep.all_masked = mean_report(all);
  return rep;
}

struct SweepCell {
  TuneMode mode = TuneMode::NapTune;
  double fraction = 1.0;
  CrossValResult result;
};

/// Cross-validation for every (mode, fraction) pair; training records are
/// subsampled within subjects, test folds stay whole.
inline std::vector<SweepCell> data_fraction_sweep(const Dataset& ds, const ExperimentSpec& base,
                                                  const std::vector<TuneMode>& modes,
                                                  const std::vector<double>& fractions) {
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1], got " + std::to_string(f));
  std::vector<SweepCell> cells;
  for (auto mode : modes) {
    for (double f : fractions) {
      ExperimentSpec spec = base;
      spec.tune.mode = mode;
      spec.fraction = f;
      spec.keep_models = false;
      cells.push_back({mode, f, cross_validate(ds, spec)});
    }
  }
  return cells;
}

}  // namespace naptune
