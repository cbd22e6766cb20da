#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "naptune/signal/dataset.hpp"
#include "naptune/tune/model.hpp"

namespace naptune {

struct TuneStep {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TuneResult {
  MoodModel model;
  std::vector<TuneStep> curve;
  double initial_loss = 0.0;  // mean training BCE before the first update
};

namespace detail {

// Inputs that stay fixed while the backbone is frozen: conv tokens for
// prompt/sleep modes, the full pooled embedding for unimodal mode.
inline std::vector<Tensor> frozen_features(const MoodModel& m, std::span<const DatasetRecord> records) {
  std::vector<Tensor> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto tokens = conv_tokens(m, r.window.samples);
    if (!m.config.uses_sleep() && m.prompts.empty()) {
      out.push_back(pooled_embedding(m, tokens, {}));
    } else {
      out.push_back(tokens);
    }
  }
  return out;
}

inline Tensor record_probs(const MoodModel& m, const DatasetRecord& r, const Tensor* cached,
                           std::bitset<kSleepMeasureCount> mask, Rng* dropout_rng) {
  const auto s = m.sleep_norm.normalize(r.sleep, mask);
  const bool frozen = m.config.backbone_frozen();
  if (cached && !m.config.uses_sleep() && m.prompts.empty()) return classifier_head(m, *cached, dropout_rng);
  // A frozen backbone always runs in eval mode; only the head sees dropout.
  Rng* backbone_rng = frozen ? nullptr : dropout_rng;
  const Tensor tokens = cached ? *cached : conv_tokens(m, r.window.samples, backbone_rng);
  return classifier_head(m, pooled_embedding(m, tokens, s, backbone_rng), dropout_rng);
}

}  // namespace detail

/// Trains the mode's trainable parameters with AdamW + cosine warmup on the
/// mean BCE. Sleep statistics are fitted on `train` only. The pre-trained
/// backbone is required unless mode == scratch.
inline TuneResult tune(std::span<const DatasetRecord> train, const EncoderConfig& enc_cfg, const TuneConfig& cfg,
                       const std::optional<EncoderWeights<float>>& pretrained,
                       const std::function<void(const TuneStep&)>& on_step = {}) {
  cfg.validate();
  if (train.empty()) throw ContractError("tune: empty training set");
  if (cfg.needs_pretrained() && !pretrained) {
    throw ContractError(std::string("tune: mode ") + std::string(tune_mode_name(cfg.mode)) +
                        " requires a pre-trained checkpoint");
  }
  Rng init_rng(derive_seed(cfg.seed, 11));
  TuneResult res{make_model(enc_cfg, cfg,
                            cfg.mode == TuneMode::Scratch ? std::optional<EncoderWeights<float>>{} : pretrained,
                            init_rng),
                 {},
                 0.0};
  MoodModel& m = res.model;
  {
    std::vector<SleepMeasures> sleeps;
    sleeps.reserve(train.size());
    for (const auto& r : train) sleeps.push_back(r.sleep);
    m.sleep_norm = SleepNormStats::fit(sleeps);
  }

  std::vector<Tensor> cache;
  if (cfg.backbone_frozen()) cache = detail::frozen_features(m, train);
  auto cached = [&](std::size_t i) -> const Tensor* { return cache.empty() ? nullptr : &cache[i]; };

  {
    double total = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      total += bce_loss(detail::record_probs(m, train[i], cached(i), {}, nullptr), train[i].mood).item();
    }
    res.initial_loss = total / static_cast<double>(train.size());
  }

  AdamW<float> opt(m.params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::size_t batch = std::min(cfg.batch_size, train.size());
  const std::size_t per_epoch = (train.size() + batch - 1) / batch;
  const std::size_t total = std::max<std::size_t>(1, per_epoch * cfg.epochs);
  CosineWarmupSchedule sched{cfg.base_lr,
                             static_cast<std::uint64_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total))),
                             total};
  Rng order_rng(derive_seed(cfg.seed, 12));
  Rng drop_rng(derive_seed(cfg.seed, 13));
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(order.size(), begin + batch);
      std::vector<Tensor> losses;
      losses.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order[k];
        losses.push_back(bce_loss(detail::record_probs(m, train[i], cached(i), {}, &drop_rng), train[i].mood));
      }
      auto loss = scale(add_n(losses), 1.0f / static_cast<float>(losses.size()));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NonFiniteLossError("tune: loss became " + std::to_string(value) + " at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + ", mode " +
                                 std::string(tune_mode_name(cfg.mode)) + ")");
      }
      m.params.zero_grad();
      loss.backward();
      const double lr = sched.lr_at(step);
      opt.step(lr);
      TuneStep rec{step, epoch, lr, value};
      res.curve.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  return res;
}

/// Per-record probabilities in eval mode. `mask` hides sleep measures
/// (replaced by the training mean) without touching the model.
inline std::vector<std::array<float, kMoodCount>> predict_proba(const MoodModel& m,
                                                                std::span<const DatasetRecord> records,
                                                                std::bitset<kSleepMeasureCount> mask = {}) {
  std::vector<std::array<float, kMoodCount>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto p = detail::record_probs(m, r, nullptr, mask, nullptr);
    std::array<float, kMoodCount> a{};
    for (std::size_t j = 0; j < kMoodCount; ++j) a[j] = p.data()[j];
    out.push_back(a);
  }
  return out;
}

/// Conv tokens (or pooled embeddings in unimodal mode) for reuse across
/// several predict calls on the same records.
inline std::vector<Tensor> feature_cache(const MoodModel& m, std::span<const DatasetRecord> records) {
  return detail::frozen_features(m, records);
}

inline std::vector<std::array<float, kMoodCount>> predict_proba(const MoodModel& m,
                                                                std::span<const DatasetRecord> records,
                                                                const std::vector<Tensor>& cache,
                                                                std::bitset<kSleepMeasureCount> mask = {}) {
  if (cache.size() != records.size()) throw ContractError("predict_proba: cache does not match records");
  std::vector<std::array<float, kMoodCount>> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto p = detail::record_probs(m, records[i], &cache[i], mask, nullptr);
    std::array<float, kMoodCount> a{};
    for (std::size_t j = 0; j < kMoodCount; ++j) a[j] = p.data()[j];
    out.push_back(a);
  }
  return out;
}

inline std::vector<MoodLabels> predict(const MoodModel& m, std::span<const DatasetRecord> records,
                                       std::bitset<kSleepMeasureCount> mask = {}, double threshold = 0.5) {
  std::vector<MoodLabels> out;
  for (const auto& p : predict_proba(m, records, mask)) out.push_back(binarize(p, threshold));
  return out;
}

}  // namespace naptune
