#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/tensor/ops.hpp"
#include "naptune/tensor/optim.hpp"

namespace naptune {

/// Convolutional projection: one long-kernel block, then omega-1 short-kernel
/// blocks, each conv -> GroupNorm -> GELU; then LayerNorm over channels and a
/// GELU-activated linear map to D per token.
struct ConvProjectionConfig {
  std::size_t omega_blocks = 6;
  std::size_t k_long = 10;
  std::size_t s_long = 5;
  std::size_t k_short = 3;
  std::size_t s_short = 2;
  std::size_t channels = 128;
  std::size_t linear_dim = 512;
  double dropout = 0.2;
  std::size_t groupnorm_groups = 8;

  void validate() const {
    if (omega_blocks < 1) throw ConfigError("encoder.conv.omega_blocks must be >= 1");
    if (k_long < 1 || s_long < 1 || k_short < 1 || s_short < 1) {
      throw ConfigError("encoder.conv kernel sizes and strides must be >= 1");
    }
    if (channels < 1 || groupnorm_groups < 1 || channels % groupnorm_groups != 0) {
      throw ConfigError("encoder.conv.channels must be divisible by encoder.conv.groupnorm_groups");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.conv.dropout must be in [0, 1)");
  }
};

struct TransformerConfig {
  std::size_t layers = 6;
  std::size_t dim = 512;
  std::size_t heads = 4;
  std::size_t ff_dim = 2048;
  double dropout = 0.0;

  void validate() const {
    if (layers < 1) throw ConfigError("encoder.transformer.layers must be >= 1");
    if (heads < 1 || dim % heads != 0) throw ConfigError("encoder.transformer.dim must be divisible by heads");
    if (dim % 2 != 0) throw ConfigError("encoder.transformer.dim must be even for sinusoidal positions");
    if (ff_dim < 1) throw ConfigError("encoder.transformer.ff_dim must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.transformer.dropout must be in [0, 1)");
  }
};

struct EncoderConfig {
  ConvProjectionConfig conv;
  TransformerConfig transformer;

  void validate() const {
    conv.validate();
    transformer.validate();
    if (conv.linear_dim != transformer.dim) {
      throw ConfigError("encoder.conv.linear_dim must equal encoder.transformer.dim");
    }
  }
};

/// Number of tokens the conv stack yields for an input of `input_length`
/// samples. Throws InputTooShortError naming the first block whose input is
/// shorter than its kernel.
inline std::size_t token_count(std::size_t input_length, const ConvProjectionConfig& cfg) {
  std::size_t len = input_length;
  for (std::size_t b = 0; b < cfg.omega_blocks; ++b) {
    const std::size_t k = b == 0 ? cfg.k_long : cfg.k_short;
    const std::size_t s = b == 0 ? cfg.s_long : cfg.s_short;
    if (len < k) {
      throw InputTooShortError("input of " + std::to_string(input_length) + " samples is too short: conv block " +
                               std::to_string(b + 1) + " receives " + std::to_string(len) +
                               " samples but its kernel spans " + std::to_string(k));
    }
    len = (len - k) / s + 1;
  }
  return len;
}

template <class T>
struct ConvBlockWeights {
  BasicTensor<T> kernel;  // [C_out x C_in x k]
  BasicTensor<T> gn_gain, gn_bias;
};

template <class T>
struct TransformerLayerWeights {
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // weights stored [in x out]
  BasicTensor<T> ln2_gain, ln2_bias;
  BasicTensor<T> ff1_w, ff1_b, ff2_w, ff2_b;
};

namespace detail {

template <class T>
BasicTensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return BasicTensor<T>(std::move(shape), std::move(v));
}

template <class T>
BasicTensor<T> linear_weight(std::size_t in, std::size_t out, Rng& rng) {
  return normal_tensor<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

}  // namespace detail

/// All backbone parameters. Shapes depend only on the config.
template <class T>
struct EncoderWeights {
  std::vector<ConvBlockWeights<T>> conv;
  BasicTensor<T> proj_ln_gain, proj_ln_bias;
  BasicTensor<T> proj_w, proj_b;
  std::vector<TransformerLayerWeights<T>> layers;

  static EncoderWeights init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& c = cfg.conv;
    const auto& t = cfg.transformer;
    EncoderWeights w;
    for (std::size_t b = 0; b < c.omega_blocks; ++b) {
      const std::size_t c_in = b == 0 ? 1 : c.channels;
      const std::size_t k = b == 0 ? c.k_long : c.k_short;
      ConvBlockWeights<T> block;
      block.kernel = detail::normal_tensor<T>({c.channels, c_in, k}, std::sqrt(2.0 / static_cast<double>(c_in * k)), rng);
      block.gn_gain = BasicTensor<T>::full({c.channels}, T(1));
      block.gn_bias = BasicTensor<T>::zeros({c.channels});
      w.conv.push_back(std::move(block));
    }
    w.proj_ln_gain = BasicTensor<T>::full({c.channels}, T(1));
    w.proj_ln_bias = BasicTensor<T>::zeros({c.channels});
    w.proj_w = detail::linear_weight<T>(c.channels, c.linear_dim, rng);
    w.proj_b = BasicTensor<T>::zeros({c.linear_dim});
    for (std::size_t n = 0; n < t.layers; ++n) {
      TransformerLayerWeights<T> l;
      l.ln1_gain = BasicTensor<T>::full({t.dim}, T(1));
      l.ln1_bias = BasicTensor<T>::zeros({t.dim});
      l.wq = detail::linear_weight<T>(t.dim, t.dim, rng);
      l.bq = BasicTensor<T>::zeros({t.dim});
      l.wk = detail::linear_weight<T>(t.dim, t.dim, rng);
      l.bk = BasicTensor<T>::zeros({t.dim});
      l.wv = detail::linear_weight<T>(t.dim, t.dim, rng);
      l.bv = BasicTensor<T>::zeros({t.dim});
      l.wo = detail::linear_weight<T>(t.dim, t.dim, rng);
      l.bo = BasicTensor<T>::zeros({t.dim});
      l.ln2_gain = BasicTensor<T>::full({t.dim}, T(1));
      l.ln2_bias = BasicTensor<T>::zeros({t.dim});
      l.ff1_w = detail::linear_weight<T>(t.dim, t.ff_dim, rng);
      l.ff1_b = BasicTensor<T>::zeros({t.ff_dim});
      l.ff2_w = detail::linear_weight<T>(t.ff_dim, t.dim, rng);
      l.ff2_b = BasicTensor<T>::zeros({t.dim});
      w.layers.push_back(std::move(l));
    }
    return w;
  }

  /// Visits every tensor with its canonical dotted name, in serialization order.
  template <class F>
  void visit(F&& f) {
    for (std::size_t b = 0; b < conv.size(); ++b) {
      const std::string p = "conv." + std::to_string(b) + ".";
      f(p + "kernel", conv[b].kernel);
      f(p + "gn.gain", conv[b].gn_gain);
      f(p + "gn.bias", conv[b].gn_bias);
    }
    f("proj.ln.gain", proj_ln_gain);
    f("proj.ln.bias", proj_ln_bias);
    f("proj.linear.weight", proj_w);
    f("proj.linear.bias", proj_b);
    for (std::size_t n = 0; n < layers.size(); ++n) {
      auto& l = layers[n];
      const std::string p = "layers." + std::to_string(n) + ".";
      f(p + "ln1.gain", l.ln1_gain);
      f(p + "ln1.bias", l.ln1_bias);
      f(p + "attn.wq", l.wq);
      f(p + "attn.bq", l.bq);
      f(p + "attn.wk", l.wk);
      f(p + "attn.bk", l.bk);
      f(p + "attn.wv", l.wv);
      f(p + "attn.bv", l.bv);
      f(p + "attn.wo", l.wo);
      f(p + "attn.bo", l.bo);
      f(p + "ln2.gain", l.ln2_gain);
      f(p + "ln2.bias", l.ln2_bias);
      f(p + "ff1.weight", l.ff1_w);
      f(p + "ff1.bias", l.ff1_b);
      f(p + "ff2.weight", l.ff2_w);
      f(p + "ff2.bias", l.ff2_b);
    }
  }

  EncoderWeights clone() const {
    EncoderWeights copy = *this;
    copy.visit([](const std::string&, BasicTensor<T>& t) { t = t.clone(); });
    return copy;
  }

  template <class U>
  EncoderWeights<U> cast() const {
    EncoderWeights<U> out;
    auto self = *this;
    std::vector<BasicTensor<U>> flat;
    self.visit([&](const std::string&, BasicTensor<T>& t) { flat.push_back(t.template cast<U>()); });
    out.conv.resize(conv.size());
    out.layers.resize(layers.size());
    std::size_t i = 0;
    out.visit([&](const std::string&, BasicTensor<U>& t) { t = flat[i++]; });
    return out;
  }
};

/// x[1 x T] -> tokens [L x D]. Dropout on the projected tokens is active only
/// when `dropout_rng` is non-null.
template <class T>
BasicTensor<T> conv_projection(const BasicTensor<T>& x, const EncoderWeights<T>& w, const ConvProjectionConfig& cfg,
                               Rng* dropout_rng = nullptr) {
  token_count(detail::rows_cols(x, "conv_projection").second, cfg);
  BasicTensor<T> h = x.rank() == 1 ? reshape(x, Shape{1, x.numel()}) : x;
  for (std::size_t b = 0; b < w.conv.size(); ++b) {
    const std::size_t stride = b == 0 ? cfg.s_long : cfg.s_short;
    h = conv1d(h, w.conv[b].kernel, stride);
    h = group_norm(h, cfg.groupnorm_groups, w.conv[b].gn_gain, w.conv[b].gn_bias);
    h = gelu(h);
  }
  h = transpose(h);  // [L x C]
  h = layer_norm(h, w.proj_ln_gain, w.proj_ln_bias);
  h = gelu(linear(h, w.proj_w, w.proj_b));
  return dropout(h, cfg.dropout, dropout_rng);
}

/// Sinusoidal positions for rows [offset, offset + length):
/// P(pos, 2i) = sin(pos / 10000^(2i/D)), P(pos, 2i+1) = cos(pos / 10000^(2i/D)).
template <class T>
BasicTensor<T> positional_encoding(std::size_t length, std::size_t dim, std::size_t offset = 0) {
  if (dim % 2 != 0) throw ConfigError("positional_encoding: dimension must be even, got " + std::to_string(dim));
  std::vector<T> v(length * dim);
  for (std::size_t r = 0; r < length; ++r) {
    const double pos = static_cast<double>(r + offset);
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      v[r * dim + 2 * i] = static_cast<T>(std::sin(angle));
      v[r * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return BasicTensor<T>({length, dim}, std::move(v));
}

/// softmax((Q K^T / sqrt(d)) * mask) V. An undefined mask means all ones.
/// When `weights_out` is given it receives the attention weights.
template <class T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                    const BasicTensor<T>& mask = {}, BasicTensor<T>* weights_out = nullptr) {
  const auto [sq, d] = detail::rows_cols(q, "attention");
  const auto [sk, dk] = detail::rows_cols(k, "attention");
  const auto [sv, dv] = detail::rows_cols(v, "attention");
  if (d != dk || sk != sv) {
    throw DimensionError("attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " +
                         shape_str(v.shape()) + " are incompatible");
  }
  (void)dv;
  auto scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(d)));
  if (mask.defined()) {
    if (mask.numel() != scores.numel()) {
      throw DimensionError("attention: mask " + shape_str(mask.shape()) + " does not match scores " +
                           shape_str(scores.shape()));
    }
    scores = mul(scores, reshape(mask.detach(), scores.shape()));
  }
  auto weights = softmax(scores);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

template <class T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const TransformerLayerWeights<T>& w,
                                    const TransformerConfig& cfg) {
  const auto q = linear(x, w.wq, w.bq);
  const auto k = linear(x, w.wk, w.bk);
  const auto v = linear(x, w.wv, w.bv);
  const std::size_t dh = cfg.dim / cfg.heads;
  std::vector<BasicTensor<T>> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t b = h * dh, e = (h + 1) * dh;
    heads.push_back(scaled_dot_attention(slice_cols(q, b, e), slice_cols(k, b, e), slice_cols(v, b, e)));
  }
  auto joined = cfg.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(joined, w.wo, w.bo);
}

/// Pre-norm residual block: z + MHA(LN(z)), then + FFN(LN(.)).
template <class T>
BasicTensor<T> transformer_layer(const BasicTensor<T>& z, const TransformerLayerWeights<T>& w,
                                 const TransformerConfig& cfg, Rng* dropout_rng = nullptr) {
  auto attn = dropout(multi_head_attention(layer_norm(z, w.ln1_gain, w.ln1_bias), w, cfg), cfg.dropout, dropout_rng);
  auto a = add(z, attn);
  auto ff = gelu(linear(layer_norm(a, w.ln2_gain, w.ln2_bias), w.ff1_w, w.ff1_b));
  ff = dropout(linear(ff, w.ff2_w, w.ff2_b), cfg.dropout, dropout_rng);
  return add(a, ff);
}

/// Plain encoder path: conv projection, positions 0..L-1, N layers.
template <class T>
BasicTensor<T> encode(const BasicTensor<T>& x, const EncoderWeights<T>& w, const EncoderConfig& cfg,
                      Rng* dropout_rng = nullptr) {
  auto tokens = conv_projection(x, w, cfg.conv, dropout_rng);
  auto z = add(tokens, positional_encoding<T>(tokens.dim(0), cfg.transformer.dim));
  for (const auto& layer : w.layers) z = transformer_layer(z, layer, cfg.transformer, dropout_rng);
  return z;
}

template <class T>
BasicTensor<T> window_tensor(std::span<const float> samples) {
  return BasicTensor<T>({1, samples.size()}, std::vector<T>(samples.begin(), samples.end()));
}

}  // namespace naptune
