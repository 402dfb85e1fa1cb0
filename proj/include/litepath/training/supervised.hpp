#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/log.hpp"
#include "litepath/model/abmil.hpp"
#include "litepath/model/scorer.hpp"
#include "litepath/training/losses.hpp"
#include "litepath/training/optim.hpp"
#include "litepath/training/train_log.hpp"
#include "litepath/training/whitening.hpp"

namespace litepath {

// One slide per step, Adam with L2 weight decay and a per-step cosine schedule.
struct SupervisedConfig {
  double lr = 2e-4;
  double min_lr = 0.0;
  std::size_t epochs = 50;
  double weight_decay = 1e-5;
  std::size_t patience = 10;  // epochs without validation improvement before stopping
  double temperature = 0.7;   // score matching only
  double grad_clip = 0.0;     // 0 disables
  bool whiten = true;         // train on whitened inputs, folded into the first layer afterwards
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  }
};

struct Bag {
  TensorD features;  // [n x embed_dim]
  std::size_t label = 0;
};

template <typename W>
struct TrainResult {
  W weights;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<double> train_loss, val_loss;  // per epoch
};

// Cross-entropy of one bag; gradients accumulate into g when given.
inline double abmil_bag_loss(const Bag& bag, const AbmilWeights<double>& w, AbmilWeights<double>* g = nullptr,
                             SeededRng* dropout_rng = nullptr) {
  AbmilTape<double> tape;
  const auto out = abmil_forward(bag.features, w, g ? &tape : nullptr, dropout_rng);
  auto [loss, d_logits] = softmax_cross_entropy(out.logits, bag.label);
  if (g) abmil_backward(tape, w, d_logits.reshaped({1, d_logits.size()}), *g);
  return loss;
}

// Soft cross-entropy between the scorer's predictions and the slide's attention targets.
inline double scorer_slide_loss(const TensorD& shallow, const TensorD& attention, const ScorerWeights<double>& w,
                                double tau, ScorerWeights<double>* g = nullptr, SeededRng* dropout_rng = nullptr) {
  ScorerTape<double> tape;
  const TensorD pred = scoring_forward_batch(shallow, w, g ? &tape : nullptr, dropout_rng);
  TensorD d;
  const double loss = score_matching_loss(attention, pred, tau, g ? &d : nullptr);
  if (g) scorer_backward(tape, w, d.reshaped({d.size(), 1}), *g);
  return loss;
}

namespace detail {

// Shared epoch loop: shuffled single-example steps, validation after every epoch,
// best-validation checkpoint with patience.
template <typename W, typename Example, typename LossFn>
TrainResult<W> fit_per_example(W weights, const std::vector<Example>& train, const std::vector<Example>& val,
                               const SupervisedConfig& cfg, const std::string& stage, LossFn&& loss_fn,
                               TrainingLog* log) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument(stage + ": empty training set");
  Adam<W> opt(weights, {.weight_decay = cfg.weight_decay, .decoupled = false});
  const CosineSchedule sched{cfg.lr, cfg.min_lr, cfg.epochs * train.size(), 0, 0.0};
  const SeededRng root(cfg.seed);
  TrainResult<W> r;
  r.weights = weights;
  std::size_t since_best = 0, step = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    SeededRng shuffle = root.fork(2 * epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double total = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k, ++step) {
      SeededRng drop = root.fork(2 * epoch + 1).fork(k);
      W g = zeros_like(weights);
      const double loss = loss_fn(train[order[k]], weights, &g, &drop);
      if (!std::isfinite(loss))
        throw NonFiniteError(stage + " diverged at epoch " + std::to_string(epoch) + ", example " +
                             std::to_string(order[k]));
      total += loss;
      if (cfg.grad_clip > 0.0) clip_grad_norm(g, cfg.grad_clip);
      opt.step(weights, g, sched.at(step));
    }
    const double train_loss = total / static_cast<double>(train.size());
    double val_loss = train_loss;
    if (!val.empty()) {
      val_loss = 0.0;
      for (const auto& ex : val) val_loss += loss_fn(ex, weights, nullptr, nullptr);
      val_loss /= static_cast<double>(val.size());
    }
    r.train_loss.push_back(train_loss);
    r.val_loss.push_back(val_loss);
    if (log) {
      log->add(stage, epoch, "train", train_loss);
      if (!val.empty()) log->add(stage, epoch, "val", val_loss);
    }
    if (val_loss < r.best_val_loss) {
      r.best_val_loss = val_loss;
      r.best_epoch = epoch;
      r.weights = weights;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      log_info(stage + ": early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  return r;
}

}  // namespace detail

inline TrainResult<AbmilWeights<double>> train_abmil(const std::vector<Bag>& train, const std::vector<Bag>& val,
                                                     const AbmilConfig& model, const SupervisedConfig& cfg,
                                                     TrainingLog* log = nullptr) {
  std::vector<char> seen(model.num_classes, 0);
  for (const auto& b : train) {
    if (b.label >= model.num_classes) throw std::out_of_range("train_abmil: label outside num_classes");
    seen[b.label] = 1;
  }
  if (std::count(seen.begin(), seen.end(), 1) < 2)
    throw std::invalid_argument("train_abmil: training set has fewer than 2 classes");
  auto fit = [&](const std::vector<Bag>& tr, const std::vector<Bag>& va) {
    return detail::fit_per_example(
        AbmilWeights<double>::init(model, cfg.seed), tr, va, cfg, "abmil",
        [](const Bag& b, const AbmilWeights<double>& w, AbmilWeights<double>* g, SeededRng* rng) {
          return abmil_bag_loss(b, w, g, rng);
        },
        log);
  };
  if (!cfg.whiten) return fit(train, val);
  std::vector<const TensorD*> mats;
  for (const auto& b : train) mats.push_back(&b.features);
  const Whitener wh = Whitener::fit(mats);
  auto whiten = [&](const std::vector<Bag>& bags) {
    std::vector<Bag> out;
    out.reserve(bags.size());
    for (const auto& b : bags) out.push_back({wh.apply(b.features), b.label});
    return out;
  };
  auto r = fit(whiten(train), whiten(val));
  wh.fold(r.weights.input_proj);
  return r;
}

struct ScoreSlide {
  TensorD shallow;    // [n x 2 * embed_dim] concatenated shallow features
  TensorD attention;  // [n] raw ABMIL attention scores
};

inline TrainResult<ScorerWeights<double>> train_scorer(const std::vector<ScoreSlide>& train,
                                                       const std::vector<ScoreSlide>& val, const ScorerConfig& model,
                                                       const SupervisedConfig& cfg, TrainingLog* log = nullptr) {
  for (const auto& s : train)
    if (s.attention.size() == 1) log_info("train_scorer: single-patch slide contributes no gradient");
  auto fit = [&](const std::vector<ScoreSlide>& tr, const std::vector<ScoreSlide>& va) {
    return detail::fit_per_example(
        ScorerWeights<double>::init(model, cfg.seed), tr, va, cfg, "scorer",
        [&](const ScoreSlide& s, const ScorerWeights<double>& w, ScorerWeights<double>* g, SeededRng* rng) {
          return scorer_slide_loss(s.shallow, s.attention, w, cfg.temperature, g, rng);
        },
        log);
  };
  if (!cfg.whiten || train.empty()) return fit(train, val);
  std::vector<const TensorD*> mats;
  for (const auto& s : train) mats.push_back(&s.shallow);
  const Whitener wh = Whitener::fit(mats);
  auto whiten = [&](const std::vector<ScoreSlide>& slides) {
    std::vector<ScoreSlide> out;
    out.reserve(slides.size());
    for (const auto& s : slides) out.push_back({wh.apply(s.shallow), s.attention});
    return out;
  };
  auto r = fit(whiten(train), whiten(val));
  wh.fold(r.weights.layers.front());
  return r;
}

}  // namespace litepath
