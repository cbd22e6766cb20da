#pragma once

// Central finite-difference gradient checks in double precision, shared by
// the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "naptune/naptune.hpp"

namespace naptune::testing {

using DTensor = BasicTensor<double>;

inline DTensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor(std::move(shape), std::move(v));
}

/// sum(y * w) for a fixed random w, turning any output into a scalar with a
/// non-trivial upstream gradient.
struct Projector {
  std::vector<double> weights;

  DTensor operator()(const DTensor& y) {
    if (y.numel() == 1) return reshape(y, Shape{});
    if (weights.size() != y.numel()) {
      Rng rng(derive_seed(0x51, y.numel()));
      weights.resize(y.numel());
      for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
    }
    return sum(mul(y, DTensor(y.shape(), weights)));
  }
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// ||a - n|| / max(||a|| + ||n||, 1e-5) per input, maximized over inputs.
inline GradCheckResult grad_check(const std::function<DTensor(const std::vector<DTensor>&)>& f,
                                  std::vector<DTensor> inputs, double h = 1e-6) {
  for (auto& x : inputs) {
    x = x.detach();
    x.set_requires_grad(true);
  }
  Projector project;
  project(f(inputs)).backward();
  GradCheckResult res;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      auto d = x.mutable_data();
      const double orig = d[i];
      d[i] = orig + h;
      const double up = project(f(inputs)).item();
      d[i] = orig - h;
      const double down = project(f(inputs)).item();
      d[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      norm_a += analytic[i] * analytic[i];
      norm_n += numeric * numeric;
    }
    // Gradients that vanish analytically (e.g. the attention key bias, which
    // softmax cancels) leave only finite-difference noise; compare those absolutely.
    const double denom = std::max(std::sqrt(norm_a) + std::sqrt(norm_n), 1e-5);
    res.max_rel_error = std::max(res.max_rel_error, std::sqrt(diff) / denom);
    res.checked += x.numel();
  }
  return res;
}

struct OpCase {
  std::string name;
  // Builds inputs for a random shape and returns the function to check.
  std::function<std::pair<std::vector<DTensor>, std::function<DTensor(const std::vector<DTensor>&)>>(Rng&)> make;
};

inline std::size_t dim_between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

/// One case per differentiable primitive, each drawing a fresh random shape.
inline std::vector<OpCase> op_cases() {
  using Inputs = std::vector<DTensor>;
  using Fn = std::function<DTensor(const Inputs&)>;
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, std::function<DTensor(const DTensor&)> op, double lo = -1.0, double hi = 1.0) {
    cases.push_back({name, [op, lo, hi](Rng& rng) {
                       const Shape s{dim_between(rng, 1, 5), dim_between(rng, 1, 6)};
                       return std::pair{Inputs{random_tensor(s, rng, lo, hi)}, Fn([op](const Inputs& in) { return op(in[0]); })};
                     }});
  };
  auto binary = [&](std::string name, std::function<DTensor(const DTensor&, const DTensor&)> op) {
    cases.push_back({name, [op](Rng& rng) {
                       const Shape s{dim_between(rng, 1, 5), dim_between(rng, 1, 6)};
                       return std::pair{Inputs{random_tensor(s, rng), random_tensor(s, rng)},
                                        Fn([op](const Inputs& in) { return op(in[0], in[1]); })};
                     }});
  };
  binary("add", [](const DTensor& a, const DTensor& b) { return add(a, b); });
  binary("sub", [](const DTensor& a, const DTensor& b) { return sub(a, b); });
  binary("mul", [](const DTensor& a, const DTensor& b) { return mul(a, b); });
  unary("scale", [](const DTensor& a) { return scale(a, -1.7); });
  unary("gelu", [](const DTensor& a) { return gelu(a); }, -3.0, 3.0);
  unary("sigmoid", [](const DTensor& a) { return sigmoid(a); }, -4.0, 4.0);
  unary("dropout", [](const DTensor& a) {
    Rng r(99);
    return dropout(a, 0.3, &r);
  });
  unary("sum", [](const DTensor& a) { return sum(a); });
  unary("mean", [](const DTensor& a) { return mean(a); });
  unary("transpose", [](const DTensor& a) { return transpose(a); });
  unary("reshape", [](const DTensor& a) { return reshape(a, Shape{a.numel()}); });
  unary("softmax", [](const DTensor& a) { return softmax(a); }, -3.0, 3.0);
  unary("l2_normalize_rows", [](const DTensor& a) { return l2_normalize_rows(a); }, 0.1, 1.0);
  cases.push_back({"mean_rows", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 2, 6);
                     const std::size_t begin = rng.below(m);
                     return std::pair{Inputs{random_tensor({m, dim_between(rng, 1, 5)}, rng)},
                                      Fn([begin](const Inputs& in) { return mean_rows(in[0], begin); })};
                   }});
  cases.push_back({"add_row", [](Rng& rng) {
                     const std::size_t n = dim_between(rng, 1, 6);
                     return std::pair{Inputs{random_tensor({dim_between(rng, 1, 5), n}, rng), random_tensor({n}, rng)},
                                      Fn([](const Inputs& in) { return add_row(in[0], in[1]); })};
                   }});
  cases.push_back({"add_n", [](Rng& rng) {
                     const Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 4)};
                     return std::pair{Inputs{random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)},
                                      Fn([](const Inputs& in) { return add_n(in); })};
                   }});
  cases.push_back({"concat_rows", [](Rng& rng) {
                     const std::size_t n = dim_between(rng, 1, 5);
                     return std::pair{Inputs{random_tensor({dim_between(rng, 1, 4), n}, rng),
                                             random_tensor({dim_between(rng, 1, 4), n}, rng)},
                                      Fn([](const Inputs& in) { return concat_rows(in); })};
                   }});
  cases.push_back({"concat_cols", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 1, 5);
                     return std::pair{Inputs{random_tensor({m, dim_between(rng, 1, 4)}, rng),
                                             random_tensor({m, dim_between(rng, 1, 4)}, rng)},
                                      Fn([](const Inputs& in) { return concat_cols(in); })};
                   }});
  cases.push_back({"slice_rows", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 2, 7);
                     const std::size_t b = rng.below(m - 1);
                     const std::size_t e = b + 1 + rng.below(m - b);
                     return std::pair{Inputs{random_tensor({m, dim_between(rng, 1, 4)}, rng)},
                                      Fn([b, e](const Inputs& in) { return slice_rows(in[0], b, e); })};
                   }});
  cases.push_back({"slice_cols", [](Rng& rng) {
                     const std::size_t n = dim_between(rng, 2, 7);
                     const std::size_t b = rng.below(n - 1);
                     const std::size_t e = b + 1 + rng.below(n - b);
                     return std::pair{Inputs{random_tensor({dim_between(rng, 1, 4), n}, rng)},
                                      Fn([b, e](const Inputs& in) { return slice_cols(in[0], b, e); })};
                   }});
  cases.push_back({"matmul", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 1, 5), k = dim_between(rng, 1, 5), n = dim_between(rng, 1, 5);
                     return std::pair{Inputs{random_tensor({m, k}, rng), random_tensor({k, n}, rng)},
                                      Fn([](const Inputs& in) { return matmul(in[0], in[1]); })};
                   }});
  cases.push_back({"linear", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 1, 5), k = dim_between(rng, 1, 5), n = dim_between(rng, 1, 5);
                     return std::pair{Inputs{random_tensor({m, k}, rng), random_tensor({k, n}, rng), random_tensor({n}, rng)},
                                      Fn([](const Inputs& in) { return linear(in[0], in[1], in[2]); })};
                   }});
  cases.push_back({"conv1d", [](Rng& rng) {
                     const std::size_t cin = dim_between(rng, 1, 3), cout = dim_between(rng, 1, 3);
                     const std::size_t k = dim_between(rng, 1, 4), stride = dim_between(rng, 1, 3);
                     const std::size_t len = k + dim_between(rng, 0, 8);
                     return std::pair{Inputs{random_tensor({cin, len}, rng), random_tensor({cout, cin, k}, rng)},
                                      Fn([stride](const Inputs& in) { return conv1d(in[0], in[1], stride); })};
                   }});
  cases.push_back({"group_norm", [](Rng& rng) {
                     const std::size_t groups = dim_between(rng, 1, 3);
                     const std::size_t c = groups * dim_between(rng, 1, 2);
                     const std::size_t len = dim_between(rng, 2, 6);
                     return std::pair{Inputs{random_tensor({c, len}, rng), random_tensor({c}, rng, 0.5, 1.5),
                                             random_tensor({c}, rng)},
                                      Fn([groups](const Inputs& in) { return group_norm(in[0], groups, in[1], in[2]); })};
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     const std::size_t n = dim_between(rng, 2, 6);
                     return std::pair{Inputs{random_tensor({dim_between(rng, 1, 4), n}, rng),
                                             random_tensor({n}, rng, 0.5, 1.5), random_tensor({n}, rng)},
                                      Fn([](const Inputs& in) { return layer_norm(in[0], in[1], in[2]); })};
                   }});
  cases.push_back({"binary_cross_entropy", [](Rng& rng) {
                     const std::size_t n = dim_between(rng, 1, 7);
                     auto targets = std::make_shared<std::vector<double>>(n);
                     for (auto& t : *targets) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
                     return std::pair{Inputs{random_tensor({1, n}, rng, 0.05, 0.95)},
                                      Fn([targets](const Inputs& in) {
                                        return binary_cross_entropy(in[0], std::span<const double>(*targets));
                                      })};
                   }});
  cases.push_back({"contrastive_cross_entropy", [](Rng& rng) {
                     const std::size_t n = 2 * dim_between(rng, 1, 4);
                     auto partner = std::make_shared<std::vector<std::size_t>>(n);
                     for (std::size_t i = 0; i < n; ++i) (*partner)[i] = i ^ 1U;
                     return std::pair{Inputs{random_tensor({n, n}, rng, -2.0, 2.0)},
                                      Fn([partner](const Inputs& in) {
                                        return contrastive_cross_entropy(in[0], std::span<const std::size_t>(*partner));
                                      })};
                   }});
  cases.push_back({"scaled_dot_attention", [](Rng& rng) {
                     const std::size_t sq = dim_between(rng, 1, 4), sk = dim_between(rng, 1, 4);
                     const std::size_t d = dim_between(rng, 1, 4), dv = dim_between(rng, 1, 4);
                     auto mask = std::make_shared<DTensor>(random_tensor({sq, sk}, rng, 0.0, 1.0));
                     return std::pair{Inputs{random_tensor({sq, d}, rng), random_tensor({sk, d}, rng),
                                             random_tensor({sk, dv}, rng)},
                                      Fn([mask](const Inputs& in) { return scaled_dot_attention(in[0], in[1], in[2], *mask); })};
                   }});
  cases.push_back({"ntxent_loss", [](Rng& rng) {
                     const std::size_t m = dim_between(rng, 1, 4);
                     const bool cosine = rng.bernoulli(0.5);
                     return std::pair{Inputs{random_tensor({2 * m, dim_between(rng, 2, 5)}, rng)},
                                      Fn([cosine](const Inputs& in) { return ntxent_loss(in[0], 0.5, cosine); })};
                   }});
  return cases;
}

/// End-to-end check through a 1-layer, D=8 encoder followed by mean pooling,
/// differentiating with respect to the input window and every weight.
inline GradCheckResult encoder_grad_check(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.conv.omega_blocks = 2;
  cfg.conv.k_long = 4;
  cfg.conv.s_long = 2;
  cfg.conv.k_short = 3;
  cfg.conv.s_short = 2;
  cfg.conv.channels = 4;
  cfg.conv.groupnorm_groups = 2;
  cfg.conv.linear_dim = 8;
  cfg.conv.dropout = 0.0;
  cfg.transformer.layers = 1;
  cfg.transformer.dim = 8;
  cfg.transformer.heads = 2;
  cfg.transformer.ff_dim = 12;
  Rng rng(seed);
  auto w = EncoderWeights<double>::init(cfg, rng);
  std::vector<DTensor> inputs{random_tensor({1, 24}, rng)};
  // Perturb the affine/bias terms away from their 1/0 initial values.
  w.visit([&](const std::string&, DTensor& t) {
    auto d = t.mutable_data();
    for (auto& v : d) v += 0.1 * rng.normal();
    inputs.push_back(t);
  });
  return grad_check(
      [cfg](const std::vector<DTensor>& in) {
        EncoderWeights<double> w2;
        w2.conv.resize(cfg.conv.omega_blocks);
        w2.layers.resize(cfg.transformer.layers);
        std::size_t i = 1;
        w2.visit([&](const std::string&, DTensor& t) { t = in[i++]; });
        return mean_rows(encode(in[0], w2, cfg));
      },
      inputs);
}

}  // namespace naptune::testing
