#pragma once

#include <array>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/encoder/checkpoint.hpp"
#include "naptune/encoder/encoder.hpp"
#include "naptune/tensor/ops.hpp"
#include "naptune/tensor/optim.hpp"
#include "naptune/tune/sleep.hpp"

namespace naptune {

enum class TuneMode { NapTune, FullFinetune, Scratch, Unimodal };
enum class PromptMode { Grow, Replace };

inline std::string_view tune_mode_name(TuneMode m) {
  switch (m) {
    case TuneMode::NapTune: return "naptune";
    case TuneMode::FullFinetune: return "full_finetune";
    case TuneMode::Scratch: return "scratch";
    case TuneMode::Unimodal: return "unimodal";
  }
  return "?";
}

inline TuneMode parse_tune_mode(std::string_view s) {
  if (s == "naptune") return TuneMode::NapTune;
  if (s == "full_finetune") return TuneMode::FullFinetune;
  if (s == "scratch") return TuneMode::Scratch;
  if (s == "unimodal") return TuneMode::Unimodal;
  throw ConfigError("unknown tune mode '" + std::string(s) + "' (expected naptune, full_finetune, scratch or unimodal)");
}

inline std::string_view prompt_mode_name(PromptMode m) { return m == PromptMode::Grow ? "grow" : "replace"; }

inline PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "grow") return PromptMode::Grow;
  if (s == "replace") return PromptMode::Replace;
  throw ConfigError("unknown prompt mode '" + std::string(s) + "' (expected grow or replace)");
}

struct TuneConfig {
  TuneMode mode = TuneMode::NapTune;
  std::size_t epochs = 30;
  double base_lr = 1e-5;
  double warmup_fraction = 0.1;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  std::size_t prompt_tokens = 4;
  PromptMode prompt_mode = PromptMode::Grow;
  bool pool_exclude_prompts = false;
  double prompt_init_std = 0.02;
  std::size_t sleep_hidden = 128;
  double head_dropout = 0.5;
  std::uint64_t seed = 0;

  bool uses_sleep() const { return mode != TuneMode::Unimodal; }
  bool uses_prompts() const { return (mode == TuneMode::NapTune || mode == TuneMode::Scratch) && prompt_tokens > 0; }
  bool backbone_frozen() const { return mode == TuneMode::NapTune || mode == TuneMode::Unimodal; }
  bool needs_pretrained() const { return mode != TuneMode::Scratch; }

  void validate() const {
    if (batch_size < 1) throw ConfigError("tune.batch_size must be >= 1");
    if (!(base_lr >= 0.0)) throw ConfigError("tune.base_lr must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("tune.warmup_fraction must be in [0, 1]");
    if (sleep_hidden < 1) throw ConfigError("tune.sleep_hidden must be >= 1");
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ConfigError("tune.head_dropout must be in [0, 1)");
    if (!(prompt_init_std >= 0.0)) throw ConfigError("tune.prompt_init_std must be >= 0");
  }
};

/// Training-fold statistics used to z-score sleep measures.
struct SleepNormStats {
  std::array<double, kSleepMeasureCount> mean{};
  std::array<double, kSleepMeasureCount> stddev{};

  static SleepNormStats identity() {
    SleepNormStats s;
    s.stddev.fill(1.0);
    return s;
  }

  /// Missing measures are excluded; a measure with (near) zero spread gets
  /// stddev 1 so it normalizes to 0.
  static SleepNormStats fit(std::span<const SleepMeasures> xs) {
    SleepNormStats s;
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (const auto& x : xs) {
        if (x.missing[i]) continue;
        sum += x[i];
        ++n;
      }
      s.mean[i] = n ? sum / static_cast<double>(n) : 0.0;
      for (const auto& x : xs)
        if (!x.missing[i]) sq += (x[i] - s.mean[i]) * (x[i] - s.mean[i]);
      const double sd = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
      s.stddev[i] = sd > 1e-8 ? sd : 1.0;
    }
    return s;
  }

  /// z-scores; masked or missing measures become 0 (the training mean).
  std::vector<float> normalize(const SleepMeasures& x, std::bitset<kSleepMeasureCount> mask = {}) const {
    std::vector<float> out(kSleepMeasureCount, 0.0f);
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
      if (mask[i] || x.missing[i]) continue;
      out[i] = static_cast<float>((x[i] - mean[i]) / stddev[i]);
    }
    return out;
  }
};

/// Frozen or trainable backbone plus the prompt bank, sleep projection and
/// classifier head. Every tensor is registered in `params`, which shares
/// storage with the fields below.
struct MoodModel {
  EncoderConfig encoder_config;
  TuneConfig config;
  EncoderWeights<float> backbone;
  std::vector<Tensor> prompts;  // prompts[n - 2] feeds layer n, n = 2..N
  Tensor sleep_fc1_w, sleep_fc1_b, sleep_fc2_w, sleep_fc2_b;
  Tensor head_fc1_w, head_fc1_b, head_fc2_w, head_fc2_b;
  SleepNormStats sleep_norm = SleepNormStats::identity();
  ParameterSet params;

  std::size_t prompt_rows_in_output() const {
    if (prompts.empty()) return 0;
    const std::size_t p = config.prompt_tokens;
    return config.prompt_mode == PromptMode::Grow ? p * prompts.size() : p;
  }
};

inline std::string prompt_name(std::size_t layer) { return "prompts.layer" + std::to_string(layer); }

/// Applies the trainability rules of the configured mode to `model.params`.
inline void freeze_for_mode(MoodModel& model) {
  model.params.set_frozen("", false);
  if (model.config.backbone_frozen()) model.params.set_frozen("backbone.", true);
}

inline void register_parameters(MoodModel& m) {
  m.params = ParameterSet{};
  m.backbone.visit([&](const std::string& name, Tensor& t) { m.params.add("backbone." + name, t); });
  for (std::size_t i = 0; i < m.prompts.size(); ++i) m.params.add(prompt_name(i + 2), m.prompts[i]);
  if (m.config.uses_sleep()) {
    m.params.add("sleep_proj.fc1.weight", m.sleep_fc1_w);
    m.params.add("sleep_proj.fc1.bias", m.sleep_fc1_b);
    m.params.add("sleep_proj.fc2.weight", m.sleep_fc2_w);
    m.params.add("sleep_proj.fc2.bias", m.sleep_fc2_b);
  }
  m.params.add("head.fc1.weight", m.head_fc1_w);
  m.params.add("head.fc1.bias", m.head_fc1_b);
  m.params.add("head.fc2.weight", m.head_fc2_w);
  m.params.add("head.fc2.bias", m.head_fc2_b);
  freeze_for_mode(m);
}

/// Builds a model for `cfg.mode`. The backbone comes from `backbone` when
/// given (pre-trained init) and is randomly initialized otherwise.
inline MoodModel make_model(const EncoderConfig& enc_cfg, const TuneConfig& cfg,
                            const std::optional<EncoderWeights<float>>& backbone, Rng& rng) {
  enc_cfg.validate();
  cfg.validate();
  MoodModel m;
  m.encoder_config = enc_cfg;
  m.config = cfg;
  m.backbone = backbone ? backbone->clone() : EncoderWeights<float>::init(enc_cfg, rng);
  const std::size_t d = enc_cfg.transformer.dim;
  if (cfg.uses_prompts()) {
    for (std::size_t n = 2; n <= enc_cfg.transformer.layers; ++n) {
      m.prompts.push_back(detail::normal_tensor<float>({cfg.prompt_tokens, d}, cfg.prompt_init_std, rng));
    }
  }
  if (cfg.uses_sleep()) {
    m.sleep_fc1_w = detail::linear_weight<float>(kSleepMeasureCount, cfg.sleep_hidden, rng);
    m.sleep_fc1_b = Tensor::zeros({cfg.sleep_hidden});
    m.sleep_fc2_w = detail::linear_weight<float>(cfg.sleep_hidden, d, rng);
    m.sleep_fc2_b = Tensor::zeros({d});
  }
  m.head_fc1_w = detail::linear_weight<float>(d, d, rng);
  m.head_fc1_b = Tensor::zeros({d});
  m.head_fc2_w = detail::linear_weight<float>(d, kMoodCount, rng);
  m.head_fc2_b = Tensor::zeros({kMoodCount});
  register_parameters(m);
  return m;
}

/// Deep copy with its own parameter storage.
inline MoodModel clone_model(const MoodModel& src) {
  MoodModel m = src;
  m.backbone = src.backbone.clone();
  for (auto& p : m.prompts) p = p.clone();
  for (Tensor* t : {&m.sleep_fc1_w, &m.sleep_fc1_b, &m.sleep_fc2_w, &m.sleep_fc2_b, &m.head_fc1_w, &m.head_fc1_b,
                    &m.head_fc2_w, &m.head_fc2_b}) {
    if (t->defined()) *t = t->clone();
  }
  register_parameters(m);
  return m;
}

/// Normalized sleep vector [1 x 9] -> token [1 x D].
inline Tensor project_sleep(const MoodModel& m, std::span<const float> normalized) {
  if (normalized.size() != kSleepMeasureCount) {
    throw DimensionError("project_sleep: expected 9 measures, got " + std::to_string(normalized.size()));
  }
  auto s = Tensor::row(std::vector<float>(normalized.begin(), normalized.end()));
  return linear(gelu(linear(s, m.sleep_fc1_w, m.sleep_fc1_b)), m.sleep_fc2_w, m.sleep_fc2_b);
}

/// Sleep token at position 0 followed by the time-series tokens; positions
/// 0..L cover the whole sequence.
inline Tensor assemble_tokens(const Tensor& sleep_token, const Tensor& ts_tokens) {
  if (sleep_token.numel() != ts_tokens.dim(1)) {
    throw DimensionError("assemble_tokens: sleep token " + shape_str(sleep_token.shape()) + " vs tokens " +
                         shape_str(ts_tokens.shape()));
  }
  auto z = concat_rows(std::vector<Tensor>{reshape(sleep_token, Shape{1, sleep_token.numel()}), ts_tokens});
  return add(z, positional_encoding<float>(z.dim(0), z.dim(1)));
}

/// Runs the N transformer layers. Layer 1 sees z0 as is; before layer n >= 2
/// the bank's P_n is prepended (grow) or swapped in for the previous prompt
/// rows (replace). `lengths`, when given, receives the sequence length after
/// every layer.
template <class T>
BasicTensor<T> forward_with_prompts(const BasicTensor<T>& z0, const std::vector<BasicTensor<T>>& prompts,
                                    PromptMode mode, const EncoderWeights<T>& w, const TransformerConfig& cfg,
                                    Rng* dropout_rng = nullptr, std::vector<std::size_t>* lengths = nullptr) {
  if (!prompts.empty() && prompts.size() + 1 != w.layers.size()) {
    throw DimensionError("forward_with_prompts: " + std::to_string(prompts.size()) + " prompt tensors for " +
                         std::to_string(w.layers.size()) + " layers (need N - 1)");
  }
  BasicTensor<T> z = z0;
  for (std::size_t n = 0; n < w.layers.size(); ++n) {
    if (n >= 1 && !prompts.empty()) {
      const auto& p = prompts[n - 1];
      if (p.dim(1) != z.dim(1)) {
        throw DimensionError("prompt " + shape_str(p.shape()) + " does not match token width " + std::to_string(z.dim(1)));
      }
      const std::size_t rows = p.dim(0);
      if (rows > 0) {
        if (mode == PromptMode::Replace && n >= 2) z = slice_rows(z, rows, z.dim(0));
        z = concat_rows(std::vector<BasicTensor<T>>{p, z});
      }
    }
    z = transformer_layer(z, w.layers[n], cfg, dropout_rng);
    if (lengths) lengths->push_back(z.dim(0));
  }
  return z;
}

/// Pooled embedding [1 x D] -> 7 probabilities [1 x 7].
inline Tensor classifier_head(const MoodModel& m, const Tensor& pooled, Rng* dropout_rng = nullptr) {
  auto h = gelu(linear(pooled, m.head_fc1_w, m.head_fc1_b));
  h = dropout(h, m.config.head_dropout, dropout_rng);
  return sigmoid(linear(h, m.head_fc2_w, m.head_fc2_b));
}

/// Mean-pooled final representation from conv tokens [L x D]. `sleep` is the
/// normalized sleep vector and is ignored in unimodal mode.
inline Tensor pooled_embedding(const MoodModel& m, const Tensor& conv_tokens, std::span<const float> sleep,
                               Rng* dropout_rng = nullptr) {
  Tensor z0;
  if (m.config.uses_sleep()) {
    z0 = assemble_tokens(project_sleep(m, sleep), conv_tokens);
  } else {
    z0 = add(conv_tokens, positional_encoding<float>(conv_tokens.dim(0), conv_tokens.dim(1)));
  }
  auto z = forward_with_prompts(z0, m.prompts, m.config.prompt_mode, m.backbone, m.encoder_config.transformer,
                                dropout_rng);
  const std::size_t skip = m.config.pool_exclude_prompts ? m.prompt_rows_in_output() : 0;
  return mean_rows(z, skip);
}

inline Tensor conv_tokens(const MoodModel& m, std::span<const float> samples, Rng* dropout_rng = nullptr) {
  return conv_projection(window_tensor<float>(samples), m.backbone, m.encoder_config.conv, dropout_rng);
}

/// Seven mood probabilities for one window and its sleep measures.
inline std::array<float, kMoodCount> classify(const MoodModel& m, std::span<const float> samples,
                                              const SleepMeasures& sleep, std::bitset<kSleepMeasureCount> mask = {}) {
  const auto s = m.sleep_norm.normalize(sleep, mask);
  auto probs = classifier_head(m, pooled_embedding(m, conv_tokens(m, samples), s));
  std::array<float, kMoodCount> out{};
  for (std::size_t j = 0; j < kMoodCount; ++j) out[j] = probs.data()[j];
  return out;
}

inline Tensor bce_loss(const Tensor& probs, const MoodLabels& labels) {
  std::array<float, kMoodCount> t{};
  for (std::size_t j = 0; j < kMoodCount; ++j) t[j] = static_cast<float>(labels[j]);
  return binary_cross_entropy(probs, std::span<const float>(t));
}

/// Elementwise p >= threshold.
inline MoodLabels binarize(std::span<const float> probs, double threshold = 0.5) {
  if (probs.size() != kMoodCount) throw DimensionError("binarize: expected 7 probabilities");
  MoodLabels out{};
  for (std::size_t j = 0; j < kMoodCount; ++j) out[j] = probs[j] >= threshold ? 1 : 0;
  return out;
}

inline std::string section_of(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

inline Checkpoint model_checkpoint(const MoodModel& m) {
  Checkpoint ck;
  ck.kind = "tuned";
  ck.mode = std::string(tune_mode_name(m.config.mode));
  for (const auto& e : m.params.entries()) ck.tensors.push_back({e.name, section_of(e.name), e.tensor.detach(), e.frozen});
  if (m.config.uses_sleep()) {
    nlohmann::ordered_json norm;
    norm["measures"] = std::vector<std::string>(kSleepMeasureNames.begin(), kSleepMeasureNames.end());
    norm["mean"] = m.sleep_norm.mean;
    norm["std"] = m.sleep_norm.stddev;
    ck.extra["sleep_normalization"] = norm;
  }
  ck.extra["trainable_count"] = m.params.trainable_count();
  ck.extra["total_count"] = m.params.total_count();
  return ck;
}

/// Rebuilds a tuned model from its checkpoint and the configs it was trained with.
inline MoodModel model_from_checkpoint(const Checkpoint& ck, const EncoderConfig& enc_cfg, const TuneConfig& cfg) {
  if (ck.kind != "tuned") throw IoError("expected a tuned checkpoint, got kind '" + ck.kind + "'");
  Rng rng(0);
  auto m = make_model(enc_cfg, cfg, std::nullopt, rng);
  for (auto& e : m.params.entries()) {
    const auto& src = ck.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw DimensionError("checkpoint tensor " + e.name + " has shape " + shape_str(src.shape()) + ", expected " +
                           shape_str(e.tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), e.tensor.mutable_data().begin());
  }
  if (cfg.uses_sleep()) {
    const auto it = ck.extra.find("sleep_normalization");
    if (it == ck.extra.end()) throw IoError("tuned checkpoint lacks sleep_normalization statistics");
    m.sleep_norm.mean = it->at("mean").get<std::array<double, kSleepMeasureCount>>();
    m.sleep_norm.stddev = it->at("std").get<std::array<double, kSleepMeasureCount>>();
  }
  return m;
}

}  // namespace naptune
