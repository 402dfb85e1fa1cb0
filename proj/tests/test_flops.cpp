#include <gtest/gtest.h>

#include <sstream>

#include "litepath/flops/flops.hpp"
#include "litepath/numerics/rng.hpp"

using namespace litepath;

namespace {

const FlopsBreakdown& default_breakdown() {
  static const FlopsBreakdown b = encoder_flops(EncoderConfig{});
  return b;
}

}  // namespace

TEST(Flops, DefaultConfigPerPatch) {
  const auto& b = default_breakdown();
  EXPECT_EQ(b.patch_embed, 57802752u);
  EXPECT_EQ(b.per_block, 348585984u);
  EXPECT_EQ(b.output_head, 393216u);
  EXPECT_EQ(b.scorer_per_patch, 458880u);
  EXPECT_EQ(b.full_per_patch(), 4241227776u);
  EXPECT_NEAR(static_cast<double>(b.full_per_patch()), 4.25e9, 0.05 * 4.25e9);
}

TEST(Flops, AttentionMatmulOption) {
  const auto with = encoder_flops(EncoderConfig{}, {.count_attention_matmul = true});
  EXPECT_EQ(with.full_per_patch() - default_breakdown().full_per_patch(), 12u * 2u * 197u * 197u * 384u);
}

TEST(Flops, HandCountedToyConfig) {
  EncoderConfig c;
  c.input_size = 2;
  c.patch_size = 1;
  c.in_channels = 1;
  c.embed_dim = 1;
  c.depth = 2;
  c.heads = 1;
  c.mlp_ratio = 1;
  c.output_dim = 1;
  c.split_after_block = 1;
  ScorerConfig sc;
  sc.input_dim = 2;
  sc.hidden = {3};
  AbmilConfig ac;
  ac.input_dim = 1;
  ac.hidden_dim = 2;
  ac.attention_dim = 1;
  const auto b = encoder_flops(c, sc, ac);
  // 4 patches of 1 pixel; 5 tokens; each block 5 * (qkv 3 + proj 1 + fc1 1 + fc2 1).
  EXPECT_EQ(b.patch_embed, 4u);
  EXPECT_EQ(b.per_block, 30u);
  EXPECT_EQ(b.pre_stage, 34u);
  EXPECT_EQ(b.post_stage, 30u);
  EXPECT_EQ(b.output_head, 1u);
  EXPECT_EQ(b.scorer_per_patch, 9u);
  // per instance: input 2 + attention 2 + score 1 + weighted sum 2; classifier 4.
  EXPECT_EQ(b.abmil_per_bag(3), 3u * 7u + 4u);
}

TEST(Flops, DoublingDepthSlightlyLessThanDoubles) {
  EncoderConfig c;
  auto d = c;
  d.depth *= 2;
  const double r = static_cast<double>(encoder_flops(d).full_per_patch()) /
                   static_cast<double>(encoder_flops(c).full_per_patch());
  EXPECT_LT(r, 2.0);
  EXPECT_GT(r, 1.95);
}

TEST(Flops, AdditivityFuzz) {
  SeededRng rng(8);
  for (int t = 0; t < 100; ++t) {
    EncoderConfig c;
    c.patch_size = 1 + rng.below(8);
    c.input_size = c.patch_size * (1 + rng.below(10));
    c.in_channels = 1 + rng.below(3);
    c.heads = 1 + rng.below(4);
    c.embed_dim = c.heads * (1 + rng.below(16));
    c.depth = 2 + rng.below(10);
    c.split_after_block = 1 + rng.below(c.depth - 1);
    c.mlp_ratio = 1 + rng.below(4);
    c.output_dim = 1 + rng.below(64);
    const auto b = encoder_flops(c, {.count_attention_matmul = rng.below(2) == 1});
    ASSERT_EQ(b.pre_stage + b.post_stage + b.output_head, b.full_per_patch());
    ASSERT_EQ(b.pre_stage + b.post_stage, b.patch_embed + c.depth * b.per_block);
  }
}

TEST(Flops, AsymptoticRatio) {
  const auto& b = default_breakdown();
  EXPECT_NEAR(b.asymptotic_ratio(), 0.096, 0.005);
  const std::size_t n[] = {1000000};
  const auto curve = relative_flops_curve(b, {0, 1000}, n);
  EXPECT_NEAR(curve[0].ratio, 0.096, 0.005);
  for (std::size_t big : {1000000ul, 3000000ul, 10000000ul}) {
    const std::size_t one[] = {big};
    EXPECT_NEAR(relative_flops_curve(b, {0, 1000}, one)[0].ratio, b.asymptotic_ratio(), 1e-3);
  }
}

TEST(Flops, RatioAtTenTimesBudgetMatchesClosedForm) {
  const auto& b = default_breakdown();
  const double pre = b.asymptotic_ratio();
  for (std::size_t k : {50ul, 100ul, 1000ul}) {
    const std::size_t n[] = {10 * k};
    const double analytic = pre + (1 - pre) * 0.1;
    EXPECT_NEAR(relative_flops_curve(b, {0, k}, n)[0].ratio, analytic, 0.15 * analytic);
  }
}

TEST(Flops, HeadlineReduction) {
  const double full = static_cast<double>(default_breakdown().full_per_patch());
  EXPECT_NEAR(kVirchow2FlopsPerPatch / full, 38.8, 0.02 * 38.8);
  EXPECT_NEAR(kHOptimus1FlopsPerPatch / full, 69.6, 0.02 * 69.6);
  const double composite = kVirchow2FlopsPerPatch / (full * default_breakdown().asymptotic_ratio());
  EXPECT_NEAR(composite, 403.5, 0.02 * 403.5);
}

TEST(Flops, SaturatedSelectionCostsFullPipeline) {
  const auto& b = default_breakdown();
  for (std::size_t n : {1ul, 7ul, 500ul, 4000ul}) {
    EXPECT_EQ(litepath_slide_flops(n, b, {n, 0}), full_slide_flops(n, b));
    EXPECT_EQ(litepath_slide_flops(n, b, {0, n}), full_slide_flops(n, b));
    EXPECT_EQ(litepath_slide_flops(n, b, {n / 2, n}), full_slide_flops(n, b));
  }
  EXPECT_EQ(full_slide_flops(10, b), 10 * b.full_per_patch() + b.abmil_per_bag(10));
}

TEST(Flops, UniformOnlyScalesLinearly) {
  const auto& b = default_breakdown();
  const double pre = static_cast<double>(b.pre_stage) / static_cast<double>(b.full_per_patch());
  const std::size_t n[] = {10000};
  EXPECT_NEAR(relative_flops_curve(b, {5000, 0}, n)[0].ratio, pre + (1 - pre) / 2, 1e-3);
}

TEST(Flops, CurveNeverAboveOneAndNonIncreasing) {
  const auto& b = default_breakdown();
  for (std::size_t k : {50ul, 1000ul}) {
    auto ns = log_spaced_counts(1, 1000000, 20);
    for (std::size_t n = k - 3; n <= k + 3; ++n) ns.push_back(n);
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    const auto curve = relative_flops_curve(b, {0, k}, ns);
    for (std::size_t i = 0; i < curve.size(); ++i) {
      ASSERT_LE(curve[i].ratio, 1.0);
      if (i) {
        ASSERT_LE(curve[i].ratio, curve[i - 1].ratio) << curve[i].n;
      }
    }
  }
}

TEST(Flops, MonotoneWorkOnModerateSlides) {
  const auto& b = default_breakdown();
  for (std::size_t n = 1; n <= 3000; n += 37)
    for (std::size_t ku : {0ul, 1ul, 100ul, 950ul, 2000ul, 4000ul})
      for (std::size_t ka : {0ul, 1ul, 50ul, 1000ul}) {
        if (ku + ka == 0) continue;
        const SelectionConfig s{ku, ka};
        const auto lp = litepath_slide_flops(n, b, s), full = full_slide_flops(n, b);
        if (selected_count(n, s) == n)
          ASSERT_EQ(lp, full);
        else
          ASSERT_LT(lp, full);
      }
}

TEST(Flops, NearSaturatedLargeSlideCanExceedFull) {
  // Leaving out one patch saves one post-stage pass but still pays the scorer on every patch.
  const auto& b = default_breakdown();
  const std::size_t n = 20000;
  EXPECT_GT(litepath_slide_flops(n, b, {0, n - 1}), full_slide_flops(n, b));
  EXPECT_LT(litepath_slide_flops(n, b, {0, n - 100}), full_slide_flops(n, b));
}

TEST(Flops, CurveExport) {
  std::ostringstream os;
  const CurvePoint pts[] = {{10, 0.5}, {100, 0.25}};
  write_curve(os, pts);
  EXPECT_EQ(os.str(), "n\tratio\n10\t0.5\n100\t0.25\n");
  const auto ns = log_spaced_counts(10, 1000, 2);
  EXPECT_EQ(ns, (std::vector<std::size_t>{10, 32, 100, 316, 1000}));
}
