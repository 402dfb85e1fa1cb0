#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "litepath/numerics/grad_check.hpp"
#include "litepath/numerics/ops.hpp"
#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

using namespace litepath;

namespace {

TensorD random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  SeededRng rng(seed);
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST(Tensor, RejectsDataShapeMismatch) {
  EXPECT_THROW(TensorD({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_EQ(TensorD({2, 3}).size(), 6u);
}

TEST(SeededRng, StreamIsReproducibleAndPinned) {
  SeededRng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  // splitmix64 reference value for seed 0, first output.
  EXPECT_EQ(SeededRng(0).next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(SeededRng(7).at(3), [] {
    SeededRng r(7);
    r.next_u64();
    r.next_u64();
    r.next_u64();
    return r.next_u64();
  }());
  EXPECT_NE(SeededRng(1).fork(1).next_u64(), SeededRng(1).fork(2).next_u64());
}

TEST(SeededRng, UniformAndNormalMoments) {
  SeededRng rng(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.truncated_normal(0.02);
    EXPECT_LE(std::abs(t), 0.04);
  }
}

TEST(Matmul, IdentityIsNeutral) {
  const TensorD b = random_tensor({3, 3}, 1);
  EXPECT_EQ(matmul(TensorD::identity(3), b), b);
}

TEST(Matmul, HandComputedProduct) {
  const auto c = matmul(TensorD::matrix({{1, 2}, {3, 4}}), TensorD::matrix({{0}, {1}}));
  EXPECT_EQ(c, TensorD::matrix({{2}, {4}}));
}

TEST(Matmul, ZerosAnnihilate) {
  const auto c = matmul(random_tensor({4, 5}, 2), TensorD({5, 3}));
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchThrows) { EXPECT_THROW(matmul(TensorD({2, 3}), TensorD({2, 3})), ShapeError); }

TEST(Matmul, NonFiniteResultThrows) {
  TensorD a({1, 1}, std::vector<double>{std::numeric_limits<double>::infinity()});
  EXPECT_THROW(matmul(a, TensorD({1, 1}, std::vector<double>{1.0})), NonFiniteError);
}

TEST(Softmax, Examples) {
  const auto s = softmax(TensorD::vector({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  const auto t = softmax(TensorD::vector({std::log(1.0), std::log(3.0)}));
  EXPECT_NEAR(t[0], 0.25, 1e-15);
  EXPECT_NEAR(t[1], 0.75, 1e-15);
  const auto u = softmax(random_tensor({10}, 5, 3.0), 1e6);
  for (double v : u.values()) EXPECT_NEAR(v, 0.1, 1e-6);
  EXPECT_THROW(softmax(TensorD::vector({1.0}), 0.0), std::invalid_argument);
  EXPECT_THROW(softmax(TensorD::vector({1.0}), -1.0), std::invalid_argument);
}

TEST(Softmax, SumsToOneAndPermutationEquivariant) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TensorD v = random_tensor({17}, seed, 5.0);
    const TensorD s = softmax(v, 0.7);
    EXPECT_NEAR(std::accumulate(s.values().begin(), s.values().end(), 0.0), 1.0, 1e-12);
    TensorD rev(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) rev[i] = v[v.size() - 1 - i];
    const TensorD sr = softmax(rev, 0.7);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(sr[i], s[v.size() - 1 - i], 1e-15);
  }
}

TEST(Softmax, StableForLargeInputs) {
  const auto s = softmax(TensorD::vector({1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
}

TEST(LayerNorm, Examples) {
  const TensorD ones = TensorD({4}, 1.0), zeros = TensorD({4});
  const TensorD flat = layernorm(TensorD({4}, 3.5), ones, zeros);
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);

  const TensorD g2({2}, 1.0), b2({2});
  const auto y = layernorm(TensorD::vector({1.0, -1.0}), g2, b2);
  // var = 1, rstd = 1/sqrt(1 + 1e-6)
  EXPECT_NEAR(y[0], 1.0 / std::sqrt(1.0 + 1e-6), 1e-15);
  EXPECT_NEAR(y[1], -1.0 / std::sqrt(1.0 + 1e-6), 1e-15);
  EXPECT_NEAR(y[0], 1.0, 1e-6);

  const auto z = layernorm(random_tensor({6}, 9), TensorD({6}), TensorD({6}, 0.25));
  for (double v : z.values()) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(layernorm(TensorD({1}), TensorD({1}), TensorD({1})), ShapeError);
}

TEST(GradCheck, SumOfSquares) {
  auto f = [](const TensorD& x) {
    double s = 0;
    TensorD g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      s += x[i] * x[i];
      g[i] = 2 * x[i];
    }
    return std::pair{s, g};
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    EXPECT_LT(grad_check(f, random_tensor({12}, seed)).max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxCrossEntropyAtUniformLogits) {
  auto f = [](const TensorD& x) { return softmax_cross_entropy(x, 2); };
  const auto res = grad_check(f, TensorD({5}));
  EXPECT_LT(res.max_rel_error, 1e-6);
  // closed form p - onehot at uniform logits
  const auto [loss, g] = softmax_cross_entropy(TensorD({5}), 2);
  EXPECT_NEAR(loss, std::log(5.0), 1e-15);
  EXPECT_NEAR(g[0], 0.2, 1e-15);
  EXPECT_NEAR(g[2], -0.8, 1e-15);
}

TEST(GradCheck, MatmulChain) {
  const TensorD b = random_tensor({4, 3}, 11), c = random_tensor({3, 2}, 12), w = random_tensor({5, 2}, 13);
  auto f = [&](const TensorD& flat) {
    const TensorD a = flat.reshaped({5, 4});
    const TensorD ab = matmul(a, b);
    const TensorD abc = matmul(ab, c);
    double s = 0;
    for (std::size_t i = 0; i < abc.size(); ++i) s += w[i] * abc[i];
    const auto g2 = matmul_backward(ab, c, w);
    const auto g1 = matmul_backward(a, b, g2.da);
    return std::pair{s, g1.da.reshaped({20})};
  };
  EXPECT_LT(grad_check(f, random_tensor({20}, 14)).max_rel_error, 1e-4);
}

TEST(GradCheck, RejectsStepOutsideRange) {
  auto f = [](const TensorD& x) { return std::pair{x[0], TensorD({1}, 1.0)}; };
  EXPECT_THROW(grad_check(f, TensorD({1}), {.step = 1e-2}), std::invalid_argument);
  EXPECT_THROW(grad_check(f, TensorD({1}), {.step = 1e-9}), std::invalid_argument);
}

TEST(GradCheck, NonFiniteIntermediateThrows) {
  auto f = [](const TensorD& x) { return std::pair{x[0] > 0 ? std::log(-1.0) : 0.0, TensorD({1})}; };
  EXPECT_THROW(grad_check(f, TensorD({1})), NonFiniteError);
}

// Differentiable primitives at 100 seeded points each.
TEST(GradCheck, PrimitivesAtHundredPoints) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TensorD w = random_tensor({3, 6}, 1000 + seed);
    const TensorD gain = random_tensor({6}, 2000 + seed), bias = random_tensor({6}, 3000 + seed);

    auto ln = [&](const TensorD& flat) {
      const TensorD x = flat.reshaped({3, 6});
      const TensorD y = layernorm(x, gain, bias);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
      return std::pair{s, layernorm_backward(x, gain, w).dx.reshaped({18})};
    };
    EXPECT_LT(grad_check(ln, random_tensor({18}, seed)).max_rel_error, 1e-4) << "layernorm seed " << seed;

    auto ge = [&](const TensorD& x) {
      double s = 0;
      TensorD g(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        s += w[i] * gelu(x[i]);
        g[i] = w[i] * gelu_grad(x[i]);
      }
      return std::pair{s, g};
    };
    EXPECT_LT(grad_check(ge, random_tensor({18}, seed, 2.0)).max_rel_error, 1e-4) << "gelu seed " << seed;

    auto sm = [&](const TensorD& x) {
      const TensorD p = softmax(x, 0.7);
      double s = 0;
      for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * p[i];
      TensorD g(x.shape());
      kernels::softmax_backward_row(p.data(), w.data(), g.data(), p.size());
      for (auto& v : g.values()) v /= 0.7;
      return std::pair{s, g};
    };
    EXPECT_LT(grad_check(sm, random_tensor({18}, seed)).max_rel_error, 1e-4) << "softmax seed " << seed;
  }
}

TEST(Ops, Deterministic) {
  const TensorD a = random_tensor({7, 9}, 1), b = random_tensor({9, 4}, 2);
  EXPECT_EQ(matmul(a, b), matmul(a, b));
  EXPECT_EQ(layernorm(a, TensorD({9}, 1.0), TensorD({9})), layernorm(a, TensorD({9}, 1.0), TensorD({9})));
}
