#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/aps/selection.hpp"
#include "litepath/flops/flops.hpp"
#include "litepath/model/bundle.hpp"
#include "litepath/model/weights.hpp"
#include "litepath/pipeline/slide.hpp"

namespace litepath {

enum class InferenceMode { litepath, full };

inline std::string to_string(InferenceMode m) { return m == InferenceMode::litepath ? "litepath" : "full"; }
inline InferenceMode parse_mode(const std::string& s) {
  if (s == "litepath") return InferenceMode::litepath;
  if (s == "full") return InferenceMode::full;
  throw std::invalid_argument("unknown inference mode '" + s + "' (expected litepath or full)");
}

// The inference-time parts of a bundle at one precision.
template <typename T>
struct InferenceModel {
  EncoderWeights<T> encoder;
  std::optional<AbmilWeights<T>> abmil;
  std::optional<ScorerWeights<T>> scorer;
  FlopsBreakdown flops;

  static InferenceModel from_bundle(const ModelBundle& b) {
    InferenceModel m;
    if constexpr (std::is_same_v<T, double>) {
      m.encoder = b.encoder;
      m.abmil = b.abmil;
      m.scorer = b.scorer;
    } else {
      m.encoder = b.encoder.template cast<T>();
      if (b.abmil) m.abmil = cast_weights(*b.abmil, AbmilWeights<T>::zeros(b.abmil->config));
      if (b.scorer) m.scorer = cast_weights(*b.scorer, ScorerWeights<T>::zeros(b.scorer->config));
    }
    ScorerConfig sc;
    sc.input_dim = b.encoder.config.shallow_dim();
    if (b.scorer) sc = b.scorer->config;
    AbmilConfig ac;
    ac.input_dim = b.encoder.config.output_dim;
    if (b.abmil) ac = b.abmil->config;
    m.flops = encoder_flops(b.encoder.config, sc, ac);
    return m;
  }
};

// Wall-clock seconds per stage, accumulated across calls. The full pipeline records its
// single encoder pass under `post`.
struct StageTimings {
  double pre = 0.0, scoring = 0.0, post = 0.0, mil = 0.0;
  double total() const { return pre + scoring + post + mil; }
  StageTimings& operator+=(const StageTimings& o) {
    pre += o.pre;
    scoring += o.scoring;
    post += o.post;
    mil += o.mil;
    return *this;
  }
};

struct PredictionRecord {
  std::string slide_id;
  std::string case_id;
  std::optional<std::size_t> label;
  TensorD logits;
  TensorD probabilities;
  std::size_t predicted = 0;
  SelectionResult selection;  // empty for the full pipeline
  std::uint64_t flops_charged = 0;
  std::size_t scorer_calls = 0;  // patches passed through the scoring network
};

namespace detail {

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
Tensor<T> load_patch(const SlideRecord& slide, std::size_t i) {
  if constexpr (std::is_same_v<T, double>)
    return slide.patch_at(i);
  else
    return slide.patch_at(i).template cast<T>();
}

template <typename T>
void finish_prediction(PredictionRecord& r, const SlideRecord& slide, const Tensor<T>& bag,
                       const AbmilWeights<T>& mil) {
  const auto out = abmil_forward(bag, mil);
  r.slide_id = slide.slide_id;
  r.case_id = slide.case_id;
  r.label = slide.label;
  r.logits = out.logits.template cast<double>();
  r.probabilities = softmax(r.logits);
  r.predicted = static_cast<std::size_t>(
      std::max_element(r.probabilities.values().begin(), r.probabilities.values().end()) - r.probabilities.values().begin());
}

}  // namespace detail

// Split inference: pre-stage on every patch, scoring, selection, post-stage on the selected
// patches only, then the MIL head over the selected embeddings in index order.
// Only the shallow tokens of patches that can still be selected are retained.
template <typename T>
PredictionRecord infer_litepath(const SlideRecord& slide, const InferenceModel<T>& model, const SelectionConfig& cfg,
                                StageTimings* timings = nullptr) {
  slide.validate();
  cfg.validate();
  if (!model.abmil) throw std::invalid_argument("infer_litepath: bundle has no MIL head");
  if (cfg.k_a > 0 && !model.scorer) throw std::invalid_argument("infer_litepath: k_a > 0 requires a scoring network");
  const std::size_t n = slide.n_patches;
  const bool scoring = needs_scoring(n, cfg);
  const auto uniform = uniform_indices(n, cfg.k_u);
  std::vector<char> is_uniform(n, 0);
  for (auto i : uniform) is_uniform[i] = 1;
  const std::size_t k_a = std::min(cfg.k_a, n - uniform.size());

  StageTimings t;
  PredictionRecord r;
  std::vector<double> scores(n, 0.0);
  std::map<std::size_t, ShallowFeatures<T>> kept;
  // Worst retained attention candidate on top: lowest score, then highest index.
  auto worse = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(worse)> heap(worse);

  for (std::size_t i = 0; i < n; ++i) {
    auto t0 = detail::Clock::now();
    ShallowFeatures<T> sh = encode_pre(detail::load_patch<T>(slide, i), model.encoder);
    t.pre += detail::seconds_since(t0);
    if (is_uniform[i]) {
      kept.emplace(i, std::move(sh));
      continue;
    }
    if (k_a == 0) continue;
    if (!scoring) {  // every remaining patch is selected
      kept.emplace(i, std::move(sh));
      continue;
    }
    t0 = detail::Clock::now();
    scores[i] = static_cast<double>(scoring_forward(concat_shallow(sh), *model.scorer));
    ++r.scorer_calls;
    t.scoring += detail::seconds_since(t0);
    if (heap.size() < k_a) {
      heap.push(i);
      kept.emplace(i, std::move(sh));
    } else if (worse(i, heap.top())) {
      kept.erase(heap.top());
      heap.pop();
      heap.push(i);
      kept.emplace(i, std::move(sh));
    }
  }

  if (scoring) {
    r.selection = select(n, scores, cfg);
  } else {
    r.selection.n_total = n;
    r.selection.uniform = uniform;
    for (std::size_t i = 0; i < n && k_a > 0; ++i)
      if (!is_uniform[i]) r.selection.attention.push_back(i);
    r.selection.combined.reserve(kept.size());
    for (const auto& [i, _] : kept) r.selection.combined.push_back(i);
  }
  std::vector<std::size_t> kept_idx;
  for (const auto& [i, _] : kept) kept_idx.push_back(i);
  if (r.selection.combined != kept_idx)
    throw std::logic_error("infer_litepath: retained features disagree with the selection");

  auto t0 = detail::Clock::now();
  const std::size_t O = model.encoder.config.output_dim;
  Tensor<T> bag({kept.size(), O});
  std::size_t row = 0;
  for (const auto& [i, sh] : kept) {
    const auto e = encode_post(sh, model.encoder);
    std::copy(e.vector.values().begin(), e.vector.values().end(), bag.data() + row++ * O);
  }
  t.post += detail::seconds_since(t0);

  t0 = detail::Clock::now();
  detail::finish_prediction(r, slide, bag, *model.abmil);
  t.mil += detail::seconds_since(t0);
  r.flops_charged = litepath_slide_flops(n, model.flops, cfg);
  if (timings) *timings += t;
  return r;
}

// Conventional inference: full encoder on every patch, MIL head over all embeddings.
template <typename T>
PredictionRecord infer_full(const SlideRecord& slide, const InferenceModel<T>& model, StageTimings* timings = nullptr) {
  slide.validate();
  if (!model.abmil) throw std::invalid_argument("infer_full: bundle has no MIL head");
  const std::size_t n = slide.n_patches, O = model.encoder.config.output_dim;
  StageTimings t;
  auto t0 = detail::Clock::now();
  Tensor<T> bag({n, O});
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = full_encode(detail::load_patch<T>(slide, i), model.encoder);
    std::copy(e.vector.values().begin(), e.vector.values().end(), bag.data() + i * O);
  }
  t.post += detail::seconds_since(t0);
  t0 = detail::Clock::now();
  PredictionRecord r;
  detail::finish_prediction(r, slide, bag, *model.abmil);
  t.mil += detail::seconds_since(t0);
  r.flops_charged = full_slide_flops(n, model.flops);
  if (timings) *timings += t;
  return r;
}

template <typename T>
PredictionRecord infer(const SlideRecord& slide, const InferenceModel<T>& model, InferenceMode mode,
                       const SelectionConfig& cfg, StageTimings* timings = nullptr) {
  return mode == InferenceMode::full ? infer_full(slide, model, timings) : infer_litepath(slide, model, cfg, timings);
}

}  // namespace litepath
