#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "naptune/naptune.hpp"

using namespace naptune;
using Catch::Matchers::WithinAbs;

namespace {

EncoderConfig small_encoder(std::size_t layers = 3) {
  EncoderConfig c;
  c.conv.channels = 8;
  c.conv.groupnorm_groups = 2;
  c.conv.linear_dim = 16;
  c.transformer.layers = layers;
  c.transformer.dim = 16;
  c.transformer.heads = 2;
  c.transformer.ff_dim = 32;
  return c;
}

TuneConfig small_tune(TuneMode mode) {
  TuneConfig t;
  t.mode = mode;
  t.epochs = 5;
  t.base_lr = 3e-3;
  t.batch_size = 8;
  t.sleep_hidden = 8;
  t.seed = 4;
  return t;
}

Tensor random_tokens(std::size_t rows, std::size_t d, Rng& rng) {
  std::vector<float> v(rows * d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor({rows, d}, std::move(v));
}

Dataset small_dataset() {
  GeneratorConfig g;
  g.n_subjects = 6;
  g.windows_per_subject = 6;
  g.nights_per_subject = 2;
  g.seed = 17;
  return gen_dataset(g);
}

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

// Independent elementwise BCE with the same clamp.
double bce_oracle(std::span<const float> p, std::span<const float> t) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double q = std::clamp(static_cast<double>(p[j]), 1e-7, 1.0 - 1e-7);
    s += -(t[j] * std::log(q) + (1.0 - t[j]) * std::log(1.0 - q));
  }
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("default naptune model has 343,815 trainable parameters") {
  Rng rng(1);
  const EncoderConfig enc;
  const TuneConfig cfg;
  const auto m = make_model(enc, cfg, std::nullopt, rng);
  const std::size_t d = 512, p = 4, layers = 6, hidden = 128;
  const std::size_t expected = (layers - 1) * p * d + (9 * hidden + hidden) + (hidden * d + d) + (d * d + d) +
                               (d * 7 + 7);
  CHECK(expected == 343815);
  CHECK(m.params.trainable_count() == expected);
  const double fraction = static_cast<double>(m.params.trainable_count()) / static_cast<double>(m.params.total_count());
  CHECK(fraction < 0.05);
  for (const auto& e : m.params.entries()) CHECK(e.frozen == e.name.starts_with("backbone."));
  CHECK(m.prompts.size() == 5);

  auto full = cfg;
  full.mode = TuneMode::FullFinetune;
  const auto f = make_model(enc, full, std::nullopt, rng);
  for (const auto& e : f.params.entries()) CHECK_FALSE(e.frozen);
  CHECK(f.prompts.empty());
  CHECK(f.params.trainable_count() == f.params.total_count());

  auto uni = cfg;
  uni.mode = TuneMode::Unimodal;
  const auto u = make_model(enc, uni, std::nullopt, rng);
  CHECK(u.params.trainable_count() == (d * d + d) + (d * 7 + 7));
  CHECK_FALSE(u.params.contains("sleep_proj.fc1.weight"));
}

TEST_CASE("token arithmetic with the sleep token") {
  Rng rng(2);
  const auto enc = small_encoder();
  const auto m = make_model(enc, small_tune(TuneMode::NapTune), std::nullopt, rng);
  const std::vector<float> zeros(9, 0.0f);
  const auto tok = project_sleep(m, zeros);
  CHECK(tok.shape() == Shape{1, 16});
  // Normalized zeros leave only the bias path: fc2(gelu(fc1.bias)) with zero biases is 0.
  for (float v : tok.data()) CHECK(v == 0.0f);

  CHECK(assemble_tokens(tok, random_tokens(31, 16, rng)).dim(0) == 32);
  CHECK(assemble_tokens(tok, random_tokens(3, 16, rng)).dim(0) == 4);
  CHECK_THROWS_AS(assemble_tokens(Tensor::zeros({1, 8}), random_tokens(3, 16, rng)), DimensionError);
  CHECK_THROWS_AS(project_sleep(m, std::vector<float>(8, 0.0f)), DimensionError);

  int distinct = 0;
  for (int i = 0; i < 50; ++i) {
    std::vector<float> a(9), b(9);
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());
    distinct += !same(project_sleep(m, a), project_sleep(m, b));
  }
  CHECK(distinct == 50);

  // Sleep token sits at position 0: its positional offset is sin(0)/cos(0).
  const auto z = assemble_tokens(tok, random_tokens(3, 16, rng));
  for (std::size_t j = 0; j < 16; ++j) CHECK(z.at(0, j) == (j % 2 == 0 ? 0.0f : 1.0f));
}

TEST_CASE("prompt sequence lengths at the default depth") {
  Rng rng(3);
  auto enc = small_encoder(6);
  const auto w = EncoderWeights<float>::init(enc, rng);
  std::vector<Tensor> prompts;
  for (int n = 0; n < 5; ++n) prompts.push_back(random_tokens(4, 16, rng));
  const auto z0 = random_tokens(32, 16, rng);

  std::vector<std::size_t> grow, replace;
  CHECK(forward_with_prompts(z0, prompts, PromptMode::Grow, w, enc.transformer, nullptr, &grow).dim(0) == 52);
  CHECK(grow == std::vector<std::size_t>{32, 36, 40, 44, 48, 52});
  forward_with_prompts(z0, prompts, PromptMode::Replace, w, enc.transformer, nullptr, &replace);
  CHECK(replace == std::vector<std::size_t>{32, 36, 36, 36, 36, 36});

  // Empty prompts are the plain layer stack.
  auto plain = z0;
  for (const auto& layer : w.layers) plain = transformer_layer(plain, layer, enc.transformer);
  CHECK(same(forward_with_prompts(z0, {}, PromptMode::Grow, w, enc.transformer), plain));
  std::vector<Tensor> empty(5, Tensor::zeros({0, 16}));
  CHECK(same(forward_with_prompts(z0, empty, PromptMode::Replace, w, enc.transformer), plain));

  prompts.pop_back();
  CHECK_THROWS_AS(forward_with_prompts(z0, prompts, PromptMode::Grow, w, enc.transformer), DimensionError);
}

TEST_CASE("sequence length algebra property sweep") {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t layers = 1 + rng.below(5), l = 1 + rng.below(12), p = rng.below(5);
    auto enc = small_encoder(layers);
    const auto w = EncoderWeights<float>::init(enc, rng);
    std::vector<Tensor> prompts;
    for (std::size_t n = 1; n < layers; ++n) prompts.push_back(random_tokens(p, 16, rng));
    const auto z0 = random_tokens(l, 16, rng);
    for (auto mode : {PromptMode::Grow, PromptMode::Replace}) {
      std::vector<std::size_t> lengths;
      forward_with_prompts(z0, prompts, mode, w, enc.transformer, nullptr, &lengths);
      REQUIRE(lengths.size() == layers);
      for (std::size_t n = 1; n <= layers; ++n) {
        const std::size_t expected = n == 1 ? l : (mode == PromptMode::Grow ? l + (n - 1) * p : l + p);
        CHECK(lengths[n - 1] == expected);
      }
    }
  }
}

TEST_CASE("unimodal classify is the plain encoder path") {
  Rng rng(5);
  const auto enc = small_encoder();
  const auto m = make_model(enc, small_tune(TuneMode::Unimodal), std::nullopt, rng);
  const auto ds = small_dataset();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& r = ds.records[i];
    const auto probs = classify(m, r.window.samples, r.sleep);
    const auto ref = classifier_head(m, mean_rows(encode(window_tensor<float>(r.window.samples), m.backbone, enc)));
    for (std::size_t j = 0; j < kMoodCount; ++j) CHECK(probs[j] == ref.data()[j]);
    // Sleep input is ignored entirely.
    auto other = r.sleep;
    other[0] += 3.0;
    CHECK(classify(m, r.window.samples, other) == probs);
  }
}

TEST_CASE("classifier head outputs") {
  Rng rng(6);
  const auto enc = small_encoder();
  auto m = make_model(enc, small_tune(TuneMode::NapTune), std::nullopt, rng);
  const auto ds = small_dataset();
  for (const auto& r : ds.records) {
    const auto p = classify(m, r.window.samples, r.sleep);
    for (float v : p) CHECK((v > 0.0f && v < 1.0f));
    CHECK(classify(m, r.window.samples, r.sleep) == p);
  }
  for (Tensor* t : {&m.head_fc2_w, &m.head_fc2_b}) *t = Tensor::zeros(t->shape());
  for (float v : classify(m, ds.records[0].window.samples, ds.records[0].sleep)) CHECK(v == 0.5f);
}

TEST_CASE("bce loss") {
  MoodLabels labels{1, 0, 1, 1, 0, 0, 1};
  CHECK_THAT(bce_loss(Tensor::full({1, 7}, 0.5f), labels).item(), WithinAbs(std::log(2.0), 1e-6));
  Tensor perfect({1, 7}, {1, 0, 1, 1, 0, 0, 1});
  CHECK(bce_loss(perfect, labels).item() < 1e-5);

  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> p(7), t(7);
    MoodLabels y{};
    for (std::size_t j = 0; j < 7; ++j) {
      p[j] = static_cast<float>(rng.uniform(0.0, 1.0));
      y[j] = static_cast<int>(rng.below(2));
      t[j] = static_cast<float>(y[j]);
    }
    CHECK_THAT(bce_loss(Tensor({1, 7}, p), y).item(), WithinAbs(bce_oracle(p, t), 1e-6));
  }
}

TEST_CASE("binarize") {
  const std::vector<float> half(7, 0.5f);
  CHECK(binarize(half) == MoodLabels{1, 1, 1, 1, 1, 1, 1});
  const std::vector<float> pattern{0, 1, 0, 1, 0, 1, 0};
  CHECK(binarize(pattern) == MoodLabels{0, 1, 0, 1, 0, 1, 0});
  CHECK(binarize(pattern, 1.01) == MoodLabels{});
  CHECK_THROWS_AS(binarize(std::vector<float>(6, 0.5f)), DimensionError);
}

TEST_CASE("sleep normalization uses training statistics") {
  std::vector<SleepMeasures> xs(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 9; ++k) xs[i][k] = static_cast<double>(i) + static_cast<double>(k);
  xs[3].missing.set(2);
  const auto s = SleepNormStats::fit(xs);
  CHECK_THAT(s.mean[0], WithinAbs(1.5, 1e-12));
  CHECK_THAT(s.stddev[0], WithinAbs(std::sqrt(1.25), 1e-12));
  CHECK_THAT(s.mean[2], WithinAbs(3.0, 1e-12));
  const auto z = s.normalize(xs[0]);
  CHECK_THAT(z[0], WithinAbs(-1.5 / std::sqrt(1.25), 1e-6));
  std::bitset<9> mask;
  mask.set(0);
  CHECK(s.normalize(xs[0], mask)[0] == 0.0f);
  CHECK(s.normalize(xs[3])[2] == 0.0f);

  std::vector<SleepMeasures> flat(3);
  CHECK(SleepNormStats::fit(flat).stddev[4] == 1.0);
}

TEST_CASE("naptune tuning keeps the backbone frozen and lowers the loss") {
  const auto ds = small_dataset();
  const auto enc = small_encoder();
  Rng rng(8);
  auto pretrained = EncoderWeights<float>::init(enc, rng);
  Checkpoint before;
  append_encoder(before, pretrained, "backbone.", "backbone", true);

  const auto cfg = small_tune(TuneMode::NapTune);
  auto res = tune(ds.records, enc, cfg, pretrained);
  REQUIRE(res.curve.size() == 5 * 5);
  double final_loss = 0.0;
  for (const auto& r : ds.records) {
    final_loss += bce_loss(detail::record_probs(res.model, r, nullptr, {}, nullptr), r.mood).item();
  }
  final_loss /= static_cast<double>(ds.records.size());
  CHECK(final_loss < res.initial_loss);

  const auto ck = model_checkpoint(res.model);
  CHECK(checkpoint_hash(ck, "backbone") == checkpoint_hash(before, "backbone"));
  for (const auto& e : res.model.params.entries()) {
    if (e.name.starts_with("backbone.")) CHECK_FALSE(e.tensor.has_grad());
  }

  auto again = tune(ds.records, enc, cfg, pretrained);
  CHECK(checkpoint_bytes(model_checkpoint(again.model)) == checkpoint_bytes(ck));

  // Round trip through the checkpoint reproduces predictions exactly.
  const auto back = model_from_checkpoint(ck, enc, cfg);
  CHECK(predict_proba(back, ds.records) == predict_proba(res.model, ds.records));
  const auto cache = feature_cache(res.model, ds.records);
  CHECK(predict_proba(res.model, ds.records, cache) == predict_proba(res.model, ds.records));
}

TEST_CASE("gradients reach the backbone only when it is trainable") {
  const auto ds = small_dataset();
  const auto enc = small_encoder();
  Rng rng(9);
  const auto pretrained = EncoderWeights<float>::init(enc, rng);
  for (auto mode : {TuneMode::NapTune, TuneMode::Unimodal, TuneMode::FullFinetune, TuneMode::Scratch}) {
    Rng init(1);
    auto m = make_model(enc, small_tune(mode), pretrained, init);
    m.params.zero_grad();
    bce_loss(detail::record_probs(m, ds.records[0], nullptr, {}, nullptr), ds.records[0].mood).backward();
    bool backbone_grad = false, head_grad = true;
    for (const auto& e : m.params.entries()) {
      if (e.name.starts_with("backbone.")) backbone_grad = backbone_grad || e.tensor.has_grad();
      if (e.name.starts_with("head.")) head_grad = head_grad && e.tensor.has_grad();
    }
    CHECK(backbone_grad == !small_tune(mode).backbone_frozen());
    CHECK(head_grad);
  }
}

TEST_CASE("tune contract errors") {
  const auto ds = small_dataset();
  const auto enc = small_encoder();
  CHECK_THROWS_AS(tune(ds.records, enc, small_tune(TuneMode::NapTune), std::nullopt), ContractError);
  CHECK_THROWS_AS(tune(std::span<const DatasetRecord>{}, enc, small_tune(TuneMode::Scratch), std::nullopt),
                  ContractError);
  CHECK_THROWS_AS(parse_tune_mode("linear_probe"), ConfigError);
  CHECK(parse_tune_mode("full_finetune") == TuneMode::FullFinetune);
  CHECK(parse_prompt_mode("replace") == PromptMode::Replace);
}
