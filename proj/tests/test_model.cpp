#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "litepath/io/archive.hpp"
#include "litepath/model/abmil.hpp"
#include "litepath/model/bundle.hpp"
#include "litepath/model/encoder.hpp"
#include "litepath/model/scorer.hpp"
#include "litepath/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace litepath;
using litepath::testing::random_tensor;
using litepath::testing::tensor_hash;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.input_size = 8;
  c.patch_size = 4;
  c.in_channels = 2;
  c.embed_dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.output_dim = 6;
  c.split_after_block = 1;
  return c;
}

TensorD image_for(const EncoderConfig& c, std::uint64_t seed) {
  return random_tensor({c.in_channels, c.input_size, c.input_size}, seed);
}

// Larger-than-default init so gradients flow through every path.
EncoderWeights<double> lively_encoder(const EncoderConfig& c, std::uint64_t seed) {
  auto w = EncoderWeights<double>::init(c, seed);
  SeededRng rng(seed ^ 0xABCD);
  w.for_each([&](const std::string&, TensorD& t) {
    for (auto& v : t.values()) v += 0.3 * rng.normal();
  });
  return w;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.split_after_block = 12;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EncoderConfig{};
  c.split_after_block = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EncoderConfig{};
  c.heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EncoderConfig{};
  c.input_size = 225;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Encoder, ParameterCountMatchesLiteFm) {
  const auto w = EncoderWeights<double>::zeros(EncoderConfig{});
  const std::size_t n = param_count(w);
  EXPECT_EQ(n, 22059904u);
  EXPECT_NEAR(static_cast<double>(n) / 1e6, 22.06, 22.06 * 0.02);
}

TEST(Scorer, ParameterCountMatchesAps) {
  const auto w = ScorerWeights<double>::zeros(ScorerConfig{});
  const std::size_t n = param_count(w);
  EXPECT_EQ(n, 459521u);
  EXPECT_NEAR(static_cast<double>(n) / 1e6, 0.46, 0.46 * 0.05);
}

TEST(Encoder, DefaultConfigShapesAndGoldens) {
  const EncoderConfig c;
  const auto w = EncoderWeights<double>::init(c, 2024);
  const TensorD img = image_for(c, 7);
  const auto shallow = encode_pre(img, w);
  EXPECT_EQ(shallow.tokens.rows(), 197u);
  EXPECT_EQ(shallow.tokens.cols(), 384u);
  const auto post = encode_post(shallow, w);
  const auto full = full_encode(img, w);
  EXPECT_EQ(post.vector.size(), 1024u);
  EXPECT_EQ(post.vector, full.vector);
  EXPECT_EQ(concat_shallow(shallow).size(), 768u);
  // Frozen from the reference build.
  EXPECT_EQ(tensor_hash(shallow.tokens), "891a07431e98d04d");
  EXPECT_EQ(tensor_hash(full.vector), "07499965ab74bbbc");
}

TEST(Encoder, IdenticalImagesGiveIdenticalFeatures) {
  const auto c = desk_encoder_config();
  const auto w = EncoderWeights<double>::init(c, 1);
  const TensorD a = image_for(c, 3), b = image_for(c, 3);
  EXPECT_EQ(encode_pre(a, w).tokens, encode_pre(b, w).tokens);
}

TEST(Encoder, SplitConsistencyBitExact) {
  const auto c = desk_encoder_config();
  const auto w = lively_encoder(c, 5);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TensorD img = image_for(c, 100 + seed);
    ASSERT_EQ(encode_post(encode_pre(img, w), w).vector, full_encode(img, w).vector) << "seed " << seed;
  }
}

TEST(Encoder, SinglePostBlockBoundary) {
  auto c = tiny_config();
  c.depth = 2;
  c.split_after_block = 1;
  const auto w = lively_encoder(c, 2);
  const TensorD img = image_for(c, 4);
  EXPECT_EQ(encode_post(encode_pre(img, w), w).vector, full_encode(img, w).vector);
}

TEST(Encoder, ZeroWeightsYieldHeadBias) {
  const auto c = tiny_config();
  auto w = EncoderWeights<double>::zeros(c);
  for (std::size_t j = 0; j < c.output_dim; ++j) w.head_b[j] = 0.5 + j;
  for (std::uint64_t s = 0; s < 3; ++s) EXPECT_EQ(full_encode(image_for(c, s), w).vector, w.head_b);
}

TEST(Encoder, ShapeErrors) {
  const auto c = tiny_config();
  const auto w = EncoderWeights<double>::init(c, 1);
  EXPECT_THROW(encode_pre(TensorD({c.in_channels, 4, 4}), w), ShapeError);
  EXPECT_THROW(encode_post(ShallowFeatures<double>{TensorD({3, c.embed_dim})}, w), ShapeError);
}

TEST(Encoder, GoldenHashesDeskConfig) {
  const auto c = desk_encoder_config();
  const auto w = EncoderWeights<double>::init(c, 99);
  const TensorD img = image_for(c, 100);
  const auto shallow = encode_pre(img, w);
  EXPECT_EQ(tensor_hash(shallow.tokens), "1a6622b3f8543206");
  EXPECT_EQ(tensor_hash(encode_post(shallow, w).vector), "4c6910a720962f0c");
  EXPECT_EQ(tensor_hash(full_encode(img, w).vector), "4c6910a720962f0c");
}

TEST(Encoder, BackwardMatchesFiniteDifferences) {
  const auto c = tiny_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto w = lively_encoder(c, seed);
    const TensorD img = image_for(c, 50 + seed);
    const TensorD probe = random_tensor({c.output_dim}, 70 + seed);
    auto f = [&](const TensorD& flat) {
      auto wl = w;
      unflatten(wl, flat);
      EncoderTape<double> tape;
      const TensorD out = encode_with_tape(img, wl, tape);
      double s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) s += probe[i] * out[i];
      auto g = zeros_like(wl);
      encoder_backward(tape, wl, probe, g);
      return std::pair{s, flatten(g)};
    };
    const auto res = grad_check(f, flatten(w));
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " index " << res.worst_index << " analytic "
                                       << res.analytic << " numeric " << res.numeric;
  }
}

TEST(Encoder, TapedForwardMatchesInference) {
  const auto c = desk_encoder_config();
  const auto w = lively_encoder(c, 8);
  const TensorD img = image_for(c, 9);
  EncoderTape<double> tape;
  EXPECT_EQ(encode_with_tape(img, w, tape), full_encode(img, w).vector);
}

TEST(Encoder, FloatCastCloseToDouble) {
  const auto c = desk_encoder_config();
  const auto w = EncoderWeights<double>::init(c, 4);
  const auto wf = w.cast<float>();
  const TensorD img = image_for(c, 5);
  const auto d = full_encode(img, w).vector;
  const auto f = full_encode(img.cast<float>(), wf).vector;
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], f[i], 1e-4);
}

TEST(ConcatShallow, Examples) {
  ShallowFeatures<double> s{TensorD({4, 3})};
  for (std::size_t j = 0; j < 3; ++j) {
    s.tokens(0, j) = 100.0 + j;  // distinctive CLS
    for (std::size_t i = 1; i < 4; ++i) s.tokens(i, j) = 2.0 * j;
  }
  auto h = concat_shallow(s);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(h[j], 100.0 + j);
    EXPECT_EQ(h[3 + j], 2.0 * j);
  }
  s.tokens(1, 0) = 3.0;
  s.tokens(2, 0) = 6.0;
  s.tokens(3, 0) = 0.0;
  h = concat_shallow(s);
  EXPECT_DOUBLE_EQ(h[3], 3.0);  // (3 + 6 + 0) / 3, CLS excluded
}

namespace {

AbmilConfig small_abmil(bool gated = false) {
  AbmilConfig a;
  a.input_dim = 6;
  a.hidden_dim = 10;
  a.attention_dim = 4;
  a.num_classes = 3;
  a.gated = gated;
  return a;
}

AbmilWeights<double> lively_abmil(const AbmilConfig& c, std::uint64_t seed) {
  auto w = AbmilWeights<double>::init(c, seed);
  SeededRng rng(seed + 17);
  w.for_each([&](const std::string&, TensorD& t) {
    for (auto& v : t.values()) v += 0.4 * rng.normal();
  });
  return w;
}

}  // namespace

TEST(Abmil, SingleInstanceHasUnitWeight) {
  const auto w = lively_abmil(small_abmil(), 1);
  AbmilTape<double> tape;
  abmil_forward(random_tensor({1, 6}, 2), w, &tape);
  ASSERT_EQ(tape.weights.size(), 1u);
  EXPECT_EQ(tape.weights[0], 1.0);
}

TEST(Abmil, DuplicatesGetEqualAttention) {
  const auto w = lively_abmil(small_abmil(), 3);
  TensorD f = random_tensor({5, 6}, 4);
  for (std::size_t j = 0; j < 6; ++j) f(3, j) = f(1, j);
  const auto out = abmil_forward(f, w);
  EXPECT_EQ(out.attention[1], out.attention[3]);
}

TEST(Abmil, PermutationInvariance) {
  for (bool gated : {false, true}) {
    const auto w = lively_abmil(small_abmil(gated), 5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const TensorD f = random_tensor({9, 6}, 10 + seed);
      std::vector<std::size_t> perm(9);
      std::iota(perm.begin(), perm.end(), 0u);
      SeededRng rng(seed);
      for (std::size_t i = 8; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      TensorD fp(f.shape());
      for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 6; ++j) fp(i, j) = f(perm[i], j);
      AbmilTape<double> t1, t2;
      const auto a = abmil_forward(f, w, &t1);
      const auto b = abmil_forward(fp, w, &t2);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.logits[k], b.logits[k], 1e-12);
      for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(b.attention[i], a.attention[perm[i]]);
      EXPECT_NEAR(std::accumulate(t1.weights.values().begin(), t1.weights.values().end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Abmil, EmptyBagThrows) {
  const auto w = AbmilWeights<double>::init(small_abmil(), 1);
  EXPECT_THROW(abmil_forward(TensorD({0, 6}), w), std::invalid_argument);
  EXPECT_THROW(abmil_forward(std::vector<Embedding<double>>{}, w), std::invalid_argument);
}

TEST(Abmil, BackwardMatchesFiniteDifferences) {
  for (bool gated : {false, true}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto cfg = small_abmil(gated);
      const auto w = lively_abmil(cfg, seed);
      const TensorD f = random_tensor({7, 6}, 30 + seed);
      const std::size_t label = seed % 3;
      auto fn = [&](const TensorD& flat) {
        auto wl = w;
        unflatten(wl, flat);
        AbmilTape<double> tape;
        const auto out = abmil_forward(f, wl, &tape);
        auto [loss, dlogits] = softmax_cross_entropy(out.logits, label);
        auto g = zeros_like(wl);
        abmil_backward(tape, wl, dlogits, g);
        return std::pair{loss, flatten(g)};
      };
      const auto res = grad_check(fn, flatten(w));
      EXPECT_LT(res.max_rel_error, 1e-4) << "gated " << gated << " seed " << seed;
    }
  }
}

TEST(Scorer, ZeroWeightsGiveOutputBias) {
  ScorerConfig c;
  c.input_dim = 8;
  c.hidden = {5, 3};
  auto w = ScorerWeights<double>::zeros(c);
  w.layers.back().b[0] = -0.75;
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_EQ(scoring_forward(random_tensor({8}, s), w), -0.75);
  EXPECT_THROW(scoring_forward(random_tensor({7}, 1), w), ShapeError);
}

TEST(Scorer, DeterministicAndGolden) {
  const ScorerConfig c;  // 768 -> 512 -> 128 -> 1
  const auto w = ScorerWeights<double>::init(c, 11);
  const TensorD h = random_tensor({768}, 12);
  const double a = scoring_forward(h, w);
  EXPECT_EQ(a, scoring_forward(h, w));
  EXPECT_NEAR(a, -0.0035217139407085459, 1e-15);
}

TEST(Scorer, BackwardMatchesFiniteDifferences) {
  ScorerConfig c;
  c.input_dim = 6;
  c.hidden = {7, 4};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = ScorerWeights<double>::init(c, seed);
    SeededRng rng(seed);
    w.for_each([&](const std::string&, TensorD& t) {
      for (auto& v : t.values()) v += 0.5 * rng.normal();
    });
    const TensorD x = random_tensor({5, 6}, 40 + seed), probe = random_tensor({5}, 60 + seed);
    auto fn = [&](const TensorD& flat) {
      auto wl = w;
      unflatten(wl, flat);
      ScorerTape<double> tape;
      const TensorD s = scoring_forward_batch(x, wl, &tape);
      double v = 0;
      for (std::size_t i = 0; i < 5; ++i) v += probe[i] * s[i];
      auto g = zeros_like(wl);
      scorer_backward(tape, wl, probe, g);
      return std::pair{v, flatten(g)};
    };
    EXPECT_LT(grad_check(fn, flatten(w)).max_rel_error, 1e-4);
  }
}

TEST(Archive, BundleRoundTripIsBitExact) {
  ModelBundle b;
  b.encoder = EncoderWeights<double>::init(tiny_config(), 1);
  b.abmil = AbmilWeights<double>::init(small_abmil(true), 2);
  ScorerConfig sc;
  sc.input_dim = 16;
  sc.hidden = {4, 3};
  b.scorer = ScorerWeights<double>::init(sc, 3);
  b.projections = ProjectionHeads<double>::init(6, {5, 4, 4}, 4);
  const std::string bytes = serialize(b.to_archive());
  EXPECT_EQ(bytes.substr(0, 4), "LPW1");
  const ModelBundle r = ModelBundle::from_archive(deserialize(bytes));
  EXPECT_EQ(serialize(r.to_archive()), bytes);
  EXPECT_EQ(r.weights_hash(), b.weights_hash());
  EXPECT_EQ(r.encoder.config, b.encoder.config);
  EXPECT_TRUE(r.abmil->config.gated);
}

TEST(Archive, Float32EntriesAndErrors) {
  TensorArchive a;
  a.record["k"] = "v";
  a.put("x", TensorD::vector({1.5, -2.25, 3.0}), DType::f32);
  a.put("y", TensorD::matrix({{0.1, 0.2}}));
  const auto r = deserialize(serialize(a));
  EXPECT_EQ(r.get("x"), a.get("x"));
  EXPECT_EQ(r.get("y"), a.get("y"));
  EXPECT_EQ(r.record.at("k"), "v");
  std::string bytes = serialize(a);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 9)), ArchiveError);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize(bytes), ArchiveError);
  EXPECT_THROW(r.get("missing"), ArchiveError);
}
