#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "naptune/augment/augment.hpp"
#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/encoder/checkpoint.hpp"
#include "naptune/encoder/encoder.hpp"
#include "naptune/tensor/ops.hpp"
#include "naptune/tensor/optim.hpp"

namespace naptune {

struct PretrainConfig {
  double temperature = 0.1;
  std::size_t projection_dim = 128;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double lr = 1e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  bool cosine_similarity = false;  // false: raw dot product
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("pretrain.temperature must be > 0");
    if (projection_dim < 1) throw ConfigError("pretrain.projection_dim must be >= 1");
    if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("pretrain.lr must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("pretrain.warmup_fraction must be in [0, 1]");
    augment.validate();
  }
};

template <class T>
struct ProjectorWeights {
  BasicTensor<T> weight;  // [D x d_proj]
  BasicTensor<T> bias;    // [d_proj]

  static ProjectorWeights init(std::size_t dim, std::size_t proj_dim, Rng& rng) {
    return {detail::linear_weight<T>(dim, proj_dim, rng), BasicTensor<T>::zeros({proj_dim})};
  }
};

/// h = mean of encode(x) over tokens; z = g(h). Returns z as [1 x d_proj].
template <class T>
BasicTensor<T> embed(const BasicTensor<T>& x, const EncoderWeights<T>& enc, const ProjectorWeights<T>& proj,
                     const EncoderConfig& cfg, Rng* dropout_rng = nullptr) {
  auto h = mean_rows(encode(x, enc, cfg, dropout_rng));
  return linear(h, proj.weight, proj.bias);
}

/// NT-Xent over Z[2M x d]: rows 2i and 2i+1 are a positive pair. Averaged over
/// all 2M anchors; the anchor itself is excluded from every denominator.
template <class T>
BasicTensor<T> ntxent_loss(const BasicTensor<T>& z, double temperature, bool cosine = false) {
  if (!(temperature > 0.0)) throw ConfigError("ntxent: temperature must be > 0");
  const auto [rows, d] = detail::rows_cols(z, "ntxent");
  (void)d;
  if (rows == 0 || rows % 2 != 0) {
    throw ContractError("ntxent: need an even, non-zero number of rows (2M), got " + std::to_string(rows));
  }
  auto zz = cosine ? l2_normalize_rows(z) : z;
  auto sim = scale(matmul(zz, transpose(zz)), static_cast<T>(1.0 / temperature));
  std::vector<std::size_t> partner(rows);
  for (std::size_t i = 0; i < rows; ++i) partner[i] = i ^ 1U;
  return contrastive_cross_entropy(sim, std::span<const std::size_t>(partner));
}

struct PretrainStep {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct PretrainResult {
  EncoderWeights<float> encoder;
  ProjectorWeights<float> projector;
  std::vector<PretrainStep> curve;
};

inline ParameterSet pretrain_parameters(EncoderWeights<float>& enc, ProjectorWeights<float>& proj) {
  ParameterSet ps;
  enc.visit([&](const std::string& name, Tensor& t) { ps.add("backbone." + name, t); });
  ps.add("projector.weight", proj.weight);
  ps.add("projector.bias", proj.bias);
  return ps;
}

/// SimCLR pre-training on unlabeled windows. Minibatches are drawn without
/// replacement and the last partial batch is dropped; a dataset smaller than
/// one batch trains on a single batch of all windows.
inline PretrainResult pretrain(const std::vector<std::vector<float>>& windows, const EncoderConfig& enc_cfg,
                               const PretrainConfig& cfg,
                               const std::function<void(const PretrainStep&)>& on_step = {}) {
  enc_cfg.validate();
  cfg.validate();
  if (windows.size() < 2) throw ContractError("pretrain needs at least 2 windows, got " + std::to_string(windows.size()));
  Rng init_rng(derive_seed(cfg.seed, 1));
  PretrainResult res{EncoderWeights<float>::init(enc_cfg, init_rng),
                     ProjectorWeights<float>::init(enc_cfg.transformer.dim, cfg.projection_dim, init_rng),
                     {}};
  auto params = pretrain_parameters(res.encoder, res.projector);
  AdamW<float> opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});

  const std::size_t batch = std::min(cfg.batch_size, windows.size());
  const std::size_t per_epoch = windows.size() / batch;
  const std::size_t total = std::max<std::size_t>(1, per_epoch * cfg.epochs);
  CosineWarmupSchedule sched{cfg.lr, static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total))),
                             total};
  Rng order_rng(derive_seed(cfg.seed, 2));
  Rng aug_rng(derive_seed(cfg.seed, 3));
  Rng drop_rng(derive_seed(cfg.seed, 4));

  std::vector<std::size_t> order(windows.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<Tensor> zs;
      zs.reserve(2 * batch);
      for (std::size_t j = 0; j < batch; ++j) {
        const auto& x = windows[order[b * batch + j]];
        auto [v1, v2] = make_view_pair(x, cfg.augment, aug_rng);
        zs.push_back(embed(window_tensor<float>(v1), res.encoder, res.projector, enc_cfg, &drop_rng));
        zs.push_back(embed(window_tensor<float>(v2), res.encoder, res.projector, enc_cfg, &drop_rng));
      }
      auto loss = ntxent_loss(concat_rows(zs), cfg.temperature, cfg.cosine_similarity);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NonFiniteLossError("pretrain: loss became " + std::to_string(value) + " at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + "); lower the learning rate or enable cosine similarity");
      }
      params.zero_grad();
      loss.backward();
      const double lr = sched.lr_at(step);
      opt.step(lr);
      PretrainStep rec{step, lr, value};
      res.curve.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  return res;
}

inline Checkpoint pretrained_checkpoint(PretrainResult& res) {
  Checkpoint ck;
  ck.kind = "pretrained";
  append_encoder(ck, res.encoder, "backbone.", "backbone", false);
  ck.tensors.push_back({"projector.weight", "projector", res.projector.weight.detach(), false});
  ck.tensors.push_back({"projector.bias", "projector", res.projector.bias.detach(), false});
  return ck;
}

}  // namespace naptune
