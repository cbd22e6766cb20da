#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "naptune/naptune.hpp"

using namespace naptune;

namespace {

std::vector<float> wave(std::size_t n, double freq = 3.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / static_cast<double>(n)));
  }
  return x;
}

double stddev(std::span<const float> x) {
  double mu = 0.0, var = 0.0;
  for (float v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (float v : x) var += (v - mu) * (v - mu);
  return std::sqrt(var / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("time_warp with zero sigma is the identity") {
  Rng rng(1);
  const auto x = wave(400);
  CHECK(time_warp(x, 4, 0.0, rng) == x);
}

TEST_CASE("time_warp rounding arithmetic") {
  const auto x = wave(400);
  Rng rng(2);
  const auto y = time_warp(x, 4, 25.0, rng);
  REQUIRE(y.size() == 400);
  // Walk the output: every segment is its input segment resampled to 125 or 75.
  std::size_t pos = 0, stretched = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::span<const float> seg(x.data() + s * 100, 100);
    const auto longer = resample_to_length(seg, 125);
    const auto shorter = resample_to_length(seg, 75);
    if (pos + 125 <= y.size() && std::equal(longer.begin(), longer.end(), y.begin() + static_cast<long>(pos))) {
      ++stretched;
      pos += 125;
    } else {
      REQUIRE(std::equal(shorter.begin(), shorter.end(), y.begin() + static_cast<long>(pos)));
      pos += 75;
    }
  }
  CHECK(stretched == 2);
  CHECK(pos == 400);
}

TEST_CASE("time_warp pads odd lengths and validates input") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 16 + rng.below(300);
    const auto y = time_warp(wave(n), 4, rng.uniform(1.0, 40.0), rng);
    CHECK(y.size() % 2 == 0);
    CHECK(y.size() + 8 >= n);
    CHECK(y.size() <= n + 8);
  }
  CHECK_THROWS_AS(time_warp(wave(7), 4, 25.0, rng), ContractError);
  CHECK_THROWS_AS(time_warp(wave(100), 3, 25.0, rng), ConfigError);
}

TEST_CASE("augmentations are deterministic in the seed") {
  const auto x = wave(640);
  AugmentConfig cfg;
  for (auto kind : {Augmentation::TimeWarp, Augmentation::GaussianNoise, Augmentation::RandomScale}) {
    Rng a(77), b(77);
    CHECK(apply_augmentation(kind, x, cfg, a) == apply_augmentation(kind, x, cfg, b));
  }
}

TEST_CASE("gaussian noise at 60 dB is tiny") {
  Rng rng(4);
  const auto x = wave(5000);
  const auto y = add_gaussian_noise(x, {60.0, 60.0}, rng);
  REQUIRE(y.size() == x.size());
  const double sd = stddev(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(y[i]) - x[i]));
  CHECK(worst < 0.01 * sd * 5.0);
}

TEST_CASE("realized SNR matches the drawn target") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = wave(10000, 17.0);
    Rng peek(seed);
    const double target = peek.uniform(5.0, 15.0);
    Rng rng(seed);
    const auto y = add_gaussian_noise(x, {5.0, 15.0}, rng);
    std::vector<float> noise(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) noise[i] = y[i] - x[i];
    const double realized = 20.0 * std::log10(stddev(x) / stddev(noise));
    CHECK(std::abs(realized - target) < 1.0);
  }
  Rng rng(0);
  CHECK_THROWS_AS(add_gaussian_noise(std::vector<float>(10, 1.0f), {5.0, 15.0}, rng), ContractError);
}

TEST_CASE("random_scale") {
  Rng rng(5);
  const auto x = wave(50);
  CHECK(random_scale(x, {1.0, 1.0}, rng) == x);
  const auto y = random_scale(std::vector<float>{1.0f, -1.0f}, {2.0, 2.0}, rng);
  CHECK(y == std::vector<float>{2.0f, -2.0f});
  for (float v : random_scale(std::vector<float>(8, 0.0f), {0.5, 2.0}, rng)) CHECK(v == 0.0f);
  CHECK_THROWS_AS(random_scale(x, {0.0, 1.0}, rng), ConfigError);
}

TEST_CASE("view pairs") {
  const auto x = wave(640);
  AugmentConfig cfg;
  Rng a(9), b(9);
  CHECK(make_view_pair(x, cfg, a) == make_view_pair(x, cfg, b));

  int distinct = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(123, s));
    const auto [v1, v2] = make_view_pair(x, cfg, rng);
    REQUIRE(v1.size() == x.size());
    REQUIRE(v2.size() == x.size());
    for (float v : v1) REQUIRE((v >= -1.0f && v <= 1.0f));
    for (float v : v2) REQUIRE((v >= -1.0f && v <= 1.0f));
    distinct += v1 != v2;
  }
  CHECK(distinct == 100);

  AugmentConfig bad;
  bad.segments_r = 3;
  Rng rng(1);
  CHECK_THROWS_AS(make_view_pair(x, bad, rng), ConfigError);
  bad = {};
  bad.snr_db_range = {15.0, 5.0};
  CHECK_THROWS_AS(make_view_pair(x, bad, rng), ConfigError);
}

TEST_CASE("flat windows survive view generation") {
  AugmentConfig cfg;
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const auto [v1, v2] = make_view_pair(std::vector<float>(640, 0.0f), cfg, rng);
    CHECK(v1.size() == 640);
    CHECK(v2.size() == 640);
  }
}
