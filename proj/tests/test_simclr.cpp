#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "naptune/naptune.hpp"

using namespace naptune;
using Catch::Matchers::WithinAbs;

namespace {

using D = BasicTensor<double>;

D random_rows(std::size_t rows, std::size_t d, Rng& rng, double sd = 1.0) {
  std::vector<double> v(rows * d);
  for (auto& x : v) x = sd * rng.normal();
  return D({rows, d}, std::move(v));
}

// Explicit double loop over anchors and candidates.
double brute_ntxent(const D& z, double tau, bool cosine) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += z.at(i, j) * z.at(i, j);
    norm = cosine ? std::sqrt(norm) : 1.0;
    for (std::size_t j = 0; j < d; ++j) rows[i][j] = z.at(i, j) / norm;
  }
  auto sim = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += rows[a][j] * rows[b][j];
    return s / tau;
  };
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t q = p % 2 == 0 ? p + 1 : p - 1;
    double m = -1e300;
    for (std::size_t k = 0; k < n; ++k)
      if (k != p) m = std::max(m, sim(p, k));
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != p) denom += std::exp(sim(p, k) - m);
    total += -(sim(p, q) - m - std::log(denom));
  }
  return total / static_cast<double>(n);
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.conv.channels = 8;
  c.conv.groupnorm_groups = 2;
  c.conv.linear_dim = 16;
  c.transformer.layers = 1;
  c.transformer.dim = 16;
  c.transformer.heads = 2;
  c.transformer.ff_dim = 32;
  return c;
}

std::vector<std::vector<float>> synthetic_windows(std::size_t subjects, std::size_t per_subject) {
  GeneratorConfig g;
  g.n_subjects = subjects;
  g.windows_per_subject = per_subject;
  g.nights_per_subject = 2;
  g.seed = 21;
  std::vector<std::vector<float>> out;
  for (const auto& r : gen_dataset(g).records) out.push_back(r.window.samples);
  return out;
}

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

}  // namespace

TEST_CASE("ntxent with a single pair is zero") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto z = random_rows(2, 5, rng);
    CHECK_THAT(ntxent_loss(z, 0.1).item(), WithinAbs(0.0, 1e-12));
    CHECK_THAT(ntxent_loss(z, 0.5, true).item(), WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("ntxent closed form for orthogonal pairs") {
  // Two pairs; positives identical, cross pairs orthogonal, tau = 1.
  const D z({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK_THAT(expected, WithinAbs(0.5514, 1e-4));
  CHECK_THAT(ntxent_loss(z, 1.0).item(), WithinAbs(expected, 1e-12));
  CHECK_THAT(ntxent_loss(z, 1.0, true).item(), WithinAbs(expected, 1e-12));
}

TEST_CASE("ntxent matches a brute-force double loop") {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + rng.below(16);
    const std::size_t d = 1 + rng.below(12);
    const double tau = rng.uniform(0.05, 2.0);
    const bool cosine = trial % 2 == 1;
    const auto z = random_rows(2 * m, d, rng, rng.uniform(0.1, 2.0));
    CHECK_THAT(ntxent_loss(z, tau, cosine).item(), WithinAbs(brute_ntxent(z, tau, cosine), 1e-5));
  }
}

TEST_CASE("ntxent is invariant under pair-block permutation") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + rng.below(10);
    const auto z = random_rows(2 * m, 6, rng);
    std::vector<std::size_t> blocks(m);
    for (std::size_t i = 0; i < m; ++i) blocks[i] = i;
    rng.shuffle(blocks);
    std::vector<double> permuted;
    for (std::size_t b : blocks) {
      // Swapping the two views of a pair is also allowed.
      const bool swap = rng.below(2) == 1;
      for (std::size_t r : {2 * b + (swap ? 1 : 0), 2 * b + (swap ? 0 : 1)})
        for (std::size_t j = 0; j < 6; ++j) permuted.push_back(z.at(r, j));
    }
    const D zp({2 * m, 6}, std::move(permuted));
    CHECK_THAT(ntxent_loss(zp, 0.2).item(), WithinAbs(ntxent_loss(z, 0.2).item(), 1e-6));
  }
}

TEST_CASE("ntxent is non-negative when positives are the most similar") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    // Each pair shares a dominant private axis, so sim(p, q) >= sim(p, k).
    std::vector<double> v(2 * m * (m + 2), 0.0);
    const std::size_t d = m + 2;
    for (std::size_t i = 0; i < 2 * m; ++i) {
      v[i * d + i / 2] = 3.0;
      v[i * d + m] = rng.uniform(-0.3, 0.3);
      v[i * d + m + 1] = rng.uniform(-0.3, 0.3);
    }
    const D z({2 * m, d}, std::move(v));
    CHECK(ntxent_loss(z, rng.uniform(0.05, 1.0)).item() >= 0.0);
  }
}

TEST_CASE("ntxent contract") {
  Rng rng(5);
  CHECK_THROWS_AS(ntxent_loss(random_rows(3, 4, rng), 0.1), ContractError);
  CHECK_THROWS_AS(ntxent_loss(D::zeros({0, 4}), 0.1), ContractError);
  CHECK_THROWS_AS(ntxent_loss(random_rows(4, 4, rng), 0.0), ConfigError);
}

TEST_CASE("embed shape, determinism and distinct views") {
  const auto cfg = tiny_encoder();
  Rng rng(6);
  const auto enc = EncoderWeights<float>::init(cfg, rng);
  const auto proj = ProjectorWeights<float>::init(16, 8, rng);
  CHECK(proj.weight.shape() == Shape{16, 8});
  const auto windows = synthetic_windows(4, 26);
  const auto z = embed(window_tensor<float>(windows[0]), enc, proj, cfg);
  CHECK(z.shape() == Shape{1, 8});
  const auto z2 = embed(window_tensor<float>(windows[0]), enc, proj, cfg);
  CHECK(same(z, z2));

  AugmentConfig aug;
  int distinct = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto [v1, v2] = make_view_pair(windows[i], aug, rng);
    const auto a = embed(window_tensor<float>(v1), enc, proj, cfg);
    const auto b = embed(window_tensor<float>(v2), enc, proj, cfg);
    distinct += !same(a, b);
  }
  CHECK(distinct == 100);
}

TEST_CASE("pretraining lowers the contrastive loss and is deterministic") {
  const auto windows = synthetic_windows(16, 16);
  REQUIRE(windows.size() == 256);
  const auto enc = tiny_encoder();
  PretrainConfig cfg;
  cfg.projection_dim = 16;
  cfg.batch_size = 16;
  cfg.epochs = 13;
  cfg.lr = 1e-3;
  cfg.cosine_similarity = true;
  cfg.seed = 8;
  std::size_t callbacks = 0;
  auto a = pretrain(windows, enc, cfg, [&](const PretrainStep&) { ++callbacks; });
  REQUIRE(a.curve.size() == 208);
  CHECK(callbacks == a.curve.size());
  for (const auto& s : a.curve) CHECK(std::isfinite(s.loss));
  // Average the ends so single noisy batches do not decide the outcome.
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    head += a.curve[i].loss;
    tail += a.curve[a.curve.size() - 1 - i].loss;
  }
  CHECK(tail < head);
  CHECK(a.curve.back().loss < a.curve.front().loss);

  auto b = pretrain(windows, enc, cfg);
  CHECK(checkpoint_bytes(pretrained_checkpoint(a)) == checkpoint_bytes(pretrained_checkpoint(b)));
  cfg.seed = 9;
  auto c = pretrain(windows, enc, cfg);
  CHECK(checkpoint_bytes(pretrained_checkpoint(a)) != checkpoint_bytes(pretrained_checkpoint(c)));
}

TEST_CASE("pretrain input contract") {
  const auto enc = tiny_encoder();
  PretrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(pretrain({std::vector<float>(640, 0.0f)}, enc, cfg), ContractError);
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(pretrain(synthetic_windows(1, 4), enc, cfg), ConfigError);
}
