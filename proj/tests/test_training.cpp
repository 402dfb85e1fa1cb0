#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "litepath/metrics/auc.hpp"
#include "litepath/metrics/correlation.hpp"
#include "litepath/numerics/grad_check.hpp"
#include "litepath/training/distill.hpp"
#include "litepath/training/supervised.hpp"
#include "litepath/training/whitening.hpp"
#include "gradient_suite.hpp"
#include "test_util.hpp"

using namespace litepath;
using litepath::testing::random_tensor;

namespace {

EncoderConfig small_student() {
  EncoderConfig c = desk_encoder_config();
  c.depth = 2;
  c.embed_dim = 16;
  c.output_dim = 16;
  return c;
}

// Images spanned by a few fixed basis images, so a linear teacher is a low-dimensional target.
PatchSource low_rank_source(const EncoderConfig& c, std::size_t rank, std::uint64_t seed) {
  std::vector<TensorD> basis;
  for (std::size_t k = 0; k < rank; ++k)
    basis.push_back(random_tensor({c.in_channels, c.input_size, c.input_size}, seed + k));
  return [basis, seed](std::size_t i) {
    SeededRng rng = SeededRng(seed).fork(1000 + i);
    TensorD x(basis[0].shape());
    for (const auto& b : basis) {
      const double w = rng.normal();
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += w * b[j];
    }
    return x;
  };
}

}  // namespace

TEST(Optim, CosineScheduleShape) {
  const CosineSchedule s{1.0, 0.1, 110, 10, 0.0};
  EXPECT_DOUBLE_EQ(s.at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.at(5), 0.5);
  EXPECT_DOUBLE_EQ(s.at(10), 1.0);
  EXPECT_NEAR(s.at(60), 0.55, 1e-12);
  EXPECT_DOUBLE_EQ(s.at(110), 0.1);
  EXPECT_DOUBLE_EQ(s.at(500), 0.1);
}

TEST(Optim, AdamFirstStepMovesByLr) {
  ProjectionHeads<double> params, grads;
  params.heads = {Linear<double>::zeros(2, 1)};
  grads.heads = {Linear<double>::zeros(2, 1)};
  params.heads[0].w[0] = 1.0;
  params.heads[0].w[1] = -2.0;
  grads.heads[0].w[0] = 3.0;
  grads.heads[0].w[1] = -0.5;
  Adam<ProjectionHeads<double>> opt(params);
  opt.step(params, grads, 0.1);
  // Bias-corrected first step is lr * sign(g) up to eps.
  EXPECT_NEAR(params.heads[0].w[0], 0.9, 1e-7);
  EXPECT_NEAR(params.heads[0].w[1], -1.9, 1e-7);
  EXPECT_EQ(params.heads[0].b[0], 0.0);
  EXPECT_NEAR(clip_grad_norm(grads, 1.0), std::sqrt(9.25), 1e-12);
  EXPECT_NEAR(std::hypot(grads.heads[0].w[0], grads.heads[0].w[1]), 1.0, 1e-9);
}

TEST(DistillLoss, Examples) {
  const auto heads = ProjectionHeads<double>::init(4, {3, 2, 2}, 1);
  const TensorD s = random_tensor({4}, 2);
  std::vector<TensorD> exact;
  for (const auto& h : heads.heads) exact.push_back(h.forward(s.reshaped({1, 4})).reshaped({h.out()}));
  EXPECT_EQ(distill_loss(s, exact, heads, {0.4, 0.3, 0.3}), 0.0);

  auto shifted = exact;
  for (auto& v : shifted[0].values()) v -= 0.25;
  for (std::size_t k = 1; k < 3; ++k) shifted[k] = random_tensor({heads.heads[k].out()}, 10 + k);
  EXPECT_NEAR(distill_loss(s, shifted, heads, {1.0, 0.0, 0.0}), 0.25, 1e-15);

  EXPECT_THROW(distill_loss(random_tensor({5}, 1), exact, heads, {0.4, 0.3, 0.3}), ShapeError);
  EXPECT_THROW(distill_loss(s, {exact[0]}, heads, {0.4, 0.3, 0.3}), ShapeError);
}

TEST(DistillLoss, BruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto heads = ProjectionHeads<double>::init(6, {5, 3, 4}, seed);
    const TensorD s = random_tensor({6}, 100 + seed);
    std::vector<TensorD> t;
    for (std::size_t k = 0; k < 3; ++k) t.push_back(random_tensor({heads.heads[k].out()}, 200 + seed * 3 + k, 0.1));
    const std::vector<double> wts{0.4, 0.3, 0.3};
    double oracle = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& h = heads.heads[k];
      double sum = 0.0;
      for (std::size_t j = 0; j < h.out(); ++j) {
        double y = h.b[j];
        for (std::size_t i = 0; i < 6; ++i) y += s[i] * h.w(i, j);
        sum += std::abs(y - t[k][j]);
      }
      oracle += wts[k] * sum / static_cast<double>(h.out());
    }
    EXPECT_NEAR(distill_loss(s, t, heads, wts), oracle, 1e-14);
  }
}

TEST(DistillConfig, WeightsMustSumToOne) {
  DistillConfig c;
  EXPECT_NO_THROW(c.validate());
  c.teacher_weights = {0.5, 0.3, 0.3};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.teacher_weights = {1.2, -0.1, -0.1};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ScoreMatching, Examples) {
  const TensorD a = TensorD::vector({0.0, 0.0});
  const TensorD ah = TensorD::vector({std::log(3.0), 0.0});
  EXPECT_NEAR(score_matching_loss(a, ah, 1.0), -0.5 * std::log(0.75) - 0.5 * std::log(0.25), 1e-15);
  EXPECT_NEAR(score_matching_loss(a, ah, 1.0), 0.8370, 1e-4);

  const TensorD t = random_tensor({9}, 3);
  const double h = entropy(softmax(t, 0.7));
  EXPECT_NEAR(score_matching_loss(t, t, 0.7), h, 1e-14);
  TensorD shifted = t;
  for (auto& v : shifted.values()) v += 3.5;
  EXPECT_NEAR(score_matching_loss(t, shifted, 0.7), h, 1e-13);
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_GE(score_matching_loss(t, random_tensor({9}, 50 + s), 0.7), h - 1e-14);

  EXPECT_THROW(score_matching_loss(t, t, 0.0), std::invalid_argument);
  EXPECT_THROW(score_matching_loss(t, TensorD::vector({1.0}), 0.7), ShapeError);
  TensorD bad = t;
  bad[0] = INFINITY;
  EXPECT_THROW(score_matching_loss(t, bad, 0.7), NonFiniteError);
}

TEST(ScoreMatching, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TensorD target = random_tensor({7}, seed);
    auto f = [&](const TensorD& x) {
      TensorD d;
      const double v = score_matching_loss(target, x, 0.7, &d);
      return std::pair{v, d};
    };
    EXPECT_LT(grad_check(f, random_tensor({7}, 100 + seed)).max_rel_error, 1e-6);
  }
}

TEST(Distill, ZeroStepsLeavesStudentUnchanged) {
  const auto c = small_student();
  auto student = EncoderWeights<double>::init(c, 1);
  const auto before = flatten(student);
  auto heads = ProjectionHeads<double>::init(c.output_dim, {4}, 2);
  DistillConfig cfg;
  cfg.teacher_weights = {1.0};
  cfg.steps = 0;
  const auto teachers = std::vector{linear_teacher(c.image_numel(), 4, 3)};
  run_distillation(low_rank_source(c, 3, 4), 16, student, heads, teachers, cfg);
  EXPECT_EQ(flatten(student), before);
}

TEST(Distill, DeterministicGivenSeed) {
  const auto c = small_student();
  const auto teachers = encoder_teachers(c, {6, 4, 4}, 5);
  DistillConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 2;
  auto run = [&] {
    auto s = EncoderWeights<double>::init(c, 1);
    auto h = ProjectionHeads<double>::init(c.output_dim, {6, 4, 4}, 2);
    run_distillation(low_rank_source(c, 3, 4), 16, s, h, teachers, cfg);
    return std::pair{flatten(s), flatten(h)};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Distill, LearnsLinearTeacher) {
  const auto c = small_student();
  auto student = EncoderWeights<double>::init(c, 11);
  auto heads = ProjectionHeads<double>::init(c.output_dim, {8}, 12);
  const auto teachers = std::vector{linear_teacher(c.image_numel(), 8, 13)};
  DistillConfig cfg;
  cfg.teacher_weights = {1.0};
  cfg.steps = 2000;
  cfg.batch_size = 8;
  cfg.lr = 1e-2;
  cfg.warmup_steps = 100;
  cfg.weight_decay = 0.0;
  const auto r = run_distillation(low_rank_source(c, 4, 14), 512, student, heads, teachers, cfg);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += r.step_loss[i];
    tail += r.step_loss[r.step_loss.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.1 * head);
}

namespace {

// Bags of Gaussian instances; positive bags hold a few instances shifted along a fixed direction.
std::vector<Bag> planted_bags(std::size_t count, std::size_t dim, double shift, std::uint64_t seed,
                              bool shuffle_labels = false) {
  SeededRng rng(seed);
  std::vector<Bag> bags;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t n = 8 + rng.below(8), label = b % 2;
    Bag bag{TensorD({n, dim}), label};
    for (auto& v : bag.features.values()) v = rng.normal();
    if (label)
      for (std::size_t i = 0; i < 2; ++i) bag.features(i, 0) += shift;
    if (shuffle_labels) bag.label = rng.below(2);
    bags.push_back(std::move(bag));
  }
  return bags;
}

AbmilConfig small_mil(std::size_t dim) {
  AbmilConfig c;
  c.input_dim = dim;
  c.hidden_dim = 16;
  c.attention_dim = 8;
  return c;
}

double bag_auc(const std::vector<Bag>& bags, const AbmilWeights<double>& w) {
  std::vector<std::size_t> y;
  TensorD s({bags.size(), 2});
  for (std::size_t i = 0; i < bags.size(); ++i) {
    y.push_back(bags[i].label);
    const auto p = softmax(abmil_forward(bags[i].features, w).logits);
    s(i, 0) = p[0];
    s(i, 1) = p[1];
  }
  return macro_auc(y, s);
}

}  // namespace

TEST(TrainAbmil, SeparableBagsReachHighAuc) {
  const auto train = planted_bags(120, 6, 4.0, 1), val = planted_bags(60, 6, 4.0, 2);
  SupervisedConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  const auto r = train_abmil(train, val, small_mil(6), cfg);
  EXPECT_GT(bag_auc(val, r.weights), 0.95);
}

TEST(TrainAbmil, ShuffledLabelsGiveChanceAuc) {
  const auto train = planted_bags(120, 6, 4.0, 3, true), val = planted_bags(300, 6, 4.0, 4, true);
  SupervisedConfig cfg;
  cfg.epochs = 10;
  cfg.lr = 1e-3;
  const auto r = train_abmil(train, val, small_mil(6), cfg);
  EXPECT_NEAR(bag_auc(val, r.weights), 0.5, 0.1);
}

TEST(TrainAbmil, RejectsSingleClassTraining) {
  auto train = planted_bags(10, 4, 1.0, 5);
  for (auto& b : train) b.label = 1;
  EXPECT_THROW(train_abmil(train, {}, small_mil(4), SupervisedConfig{}), std::invalid_argument);
}

TEST(TrainAbmil, EarlyStoppingKeepsBestCheckpoint) {
  const auto train = planted_bags(40, 6, 3.0, 6), val = planted_bags(20, 6, 3.0, 7);
  SupervisedConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 5e-3;
  cfg.patience = 3;
  TrainingLog log;
  const auto r = train_abmil(train, val, small_mil(6), cfg, &log);
  const double best = *std::min_element(r.val_loss.begin(), r.val_loss.end());
  EXPECT_EQ(r.best_val_loss, best);
  EXPECT_EQ(r.val_loss[r.best_epoch], best);
  EXPECT_LE(r.val_loss.size(), r.best_epoch + 1 + cfg.patience);
  double recomputed = 0.0;
  for (const auto& b : val) recomputed += abmil_bag_loss(b, r.weights);
  EXPECT_NEAR(recomputed / static_cast<double>(val.size()), best, 1e-12);
  std::ostringstream os;
  log.write_jsonl(os);
  EXPECT_NE(os.str().find("\"split\":\"val\""), std::string::npos);
}

TEST(TrainAbmil, DeterministicGivenSeed) {
  const auto train = planted_bags(20, 4, 2.0, 8);
  SupervisedConfig cfg;
  cfg.epochs = 3;
  const auto a = train_abmil(train, train, small_mil(4), cfg);
  const auto b = train_abmil(train, train, small_mil(4), cfg);
  EXPECT_EQ(flatten(a.weights), flatten(b.weights));
}

TEST(Whitener, TrainingRowsGetIdentityCovariance) {
  TensorD mix = random_tensor({5, 5}, 30);
  const TensorD x = matmul(random_tensor({400, 5}, 31), mix);
  const TensorD y = random_tensor({300, 5}, 32, 3.0);
  const Whitener w = Whitener::fit({&x, &y}, 0.0);
  TensorD z({700, 5});
  const TensorD zx = w.apply(x), zy = w.apply(y);
  std::copy(zx.values().begin(), zx.values().end(), z.values().begin());
  std::copy(zy.values().begin(), zy.values().end(), z.values().begin() + zx.size());
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      double mean_a = 0.0, mean_b = 0.0, c = 0.0;
      for (std::size_t r = 0; r < 700; ++r) {
        mean_a += z(r, a) / 700.0;
        mean_b += z(r, b) / 700.0;
      }
      for (std::size_t r = 0; r < 700; ++r) c += (z(r, a) - mean_a) * (z(r, b) - mean_b) / 700.0;
      EXPECT_NEAR(mean_a, 0.0, 1e-9);
      EXPECT_NEAR(c, a == b ? 1.0 : 0.0, 1e-9);
    }
}

TEST(Whitener, FoldMatchesApplyThenLayer) {
  const TensorD x = random_tensor({50, 6}, 33, 0.01);
  const Whitener w = Whitener::fit({&x});
  Linear<double> layer = Linear<double>::init(6, 4, SeededRng(34));
  layer.b = random_tensor({4}, 35);
  const TensorD expected = layer.forward(w.apply(x));
  w.fold(layer);
  const TensorD got = layer.forward(x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-9);
}

TEST(Whitener, ConstantFeaturesStayFinite) {
  const TensorD x({10, 3}, std::vector<double>(30, 2.0));
  const TensorD z = Whitener::fit({&x}).apply(x);
  for (double v : z.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(TrainAbmil, WhiteningRescuesIllConditionedFeatures) {
  auto squash = [](std::vector<Bag> bags) {
    for (auto& b : bags)
      for (std::size_t r = 0; r < b.features.rows(); ++r) {
        b.features(r, 0) *= 1e-2;
        for (std::size_t j = 0; j < 6; ++j) b.features(r, j) += 0.4;
      }
    return bags;
  };
  const auto train = squash(planted_bags(120, 6, 4.0, 1)), val = squash(planted_bags(60, 6, 4.0, 2));
  SupervisedConfig cfg;
  cfg.epochs = 10;
  cfg.lr = 1e-3;
  EXPECT_GT(bag_auc(val, train_abmil(train, val, small_mil(6), cfg).weights), 0.95);
  cfg.whiten = false;
  EXPECT_LT(bag_auc(val, train_abmil(train, val, small_mil(6), cfg).weights), 0.95);
}

namespace {

// Slides whose attention targets are a fixed linear function of the shallow features.
std::vector<ScoreSlide> planted_score_slides(std::size_t count, std::size_t dim, std::uint64_t seed) {
  const TensorD u = random_tensor({dim}, 999);
  SeededRng rng(seed);
  std::vector<ScoreSlide> out;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t n = 20 + rng.below(30);
    ScoreSlide sl{TensorD({n, dim}), TensorD({n})};
    for (auto& v : sl.shallow.values()) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j) sl.attention[i] += sl.shallow(i, j) * u[j] / std::sqrt(double(dim));
    out.push_back(std::move(sl));
  }
  return out;
}

ScorerConfig small_scorer(std::size_t dim) {
  ScorerConfig c;
  c.input_dim = dim;
  c.hidden = {32, 16};
  return c;
}

}  // namespace

TEST(TrainScorer, UntrainedLossIsUniformCrossEntropy) {
  const auto slides = planted_score_slides(5, 8, 1);
  const auto w = ScorerWeights<double>::init(small_scorer(8), 3);
  for (const auto& s : slides) {
    const double loss = scorer_slide_loss(s.shallow, s.attention, w, 0.7);
    EXPECT_NEAR(loss, std::log(static_cast<double>(s.attention.size())), 1e-2);
  }
}

TEST(TrainScorer, PlantedLinearTeacherRankCorrelation) {
  const auto train = planted_score_slides(60, 8, 2), val = planted_score_slides(15, 8, 3),
             test = planted_score_slides(20, 8, 4);
  SupervisedConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 2e-3;
  const auto r = train_scorer(train, val, small_scorer(8), cfg);
  double rho = 0.0;
  for (const auto& s : test) {
    const TensorD pred = scoring_forward_batch(s.shallow, r.weights);
    rho += spearman(pred.values(), s.attention.values());
  }
  EXPECT_GT(rho / static_cast<double>(test.size()), 0.9);
}

TEST(TrainScorer, SinglePatchSlideHasZeroGradient) {
  const auto w = ScorerWeights<double>::init(small_scorer(4), 1);
  auto g = zeros_like(w);
  const double loss = scorer_slide_loss(random_tensor({1, 4}, 1), TensorD::vector({0.3}), w, 0.7, &g);
  EXPECT_EQ(loss, 0.0);
  const TensorD flat = flatten(g);
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);
}

TEST(TrainScorer, DeterministicGivenSeed) {
  const auto train = planted_score_slides(10, 6, 5);
  SupervisedConfig cfg;
  cfg.epochs = 2;
  const auto a = train_scorer(train, {}, small_scorer(6), cfg);
  const auto b = train_scorer(train, {}, small_scorer(6), cfg);
  EXPECT_EQ(flatten(a.weights), flatten(b.weights));
}


TEST(GradientSuite, DistillationSmall) {
  const auto r = litepath::testing::distill_gradient_suite(10);
  EXPECT_LT(r.worst, 1e-4);
  EXPECT_LT(r.worst_directional, 1e-3);
}

TEST(GradientSuite, AbmilSmall) {
  const auto r = litepath::testing::abmil_gradient_suite(10);
  EXPECT_LT(r.worst, 1e-4);
  EXPECT_LT(r.worst_directional, 1e-3);
}

TEST(GradientSuite, ScorerSmall) {
  const auto r = litepath::testing::scorer_gradient_suite(10);
  EXPECT_LT(r.worst, 1e-4);
  EXPECT_LT(r.worst_directional, 1e-3);
}
