#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/metrics/bootstrap.hpp"
#include "litepath/model/bundle.hpp"
#include "litepath/pipeline/inference.hpp"

namespace litepath {

enum class Precision { float32, float64 };

inline std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }
inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  throw std::invalid_argument("unknown precision '" + s + "' (expected float32 or float64)");
}

struct BenchSpec {
  std::size_t n_patches = 30000;
  std::size_t repetitions = 3;
  std::size_t warmup = 1;
  SelectionConfig selection{0, 1000};
  Precision precision = Precision::float32;
  std::size_t pool = 64;             // distinct dummy patches, cycled through the slide
  double min_sample_seconds = 0.05;  // shorter samples are batched over several slides
  std::uint64_t seed = 0;

  void validate() const {
    if (repetitions < 3) throw std::invalid_argument("benchmark needs at least 3 repetitions");
    if (n_patches == 0 || pool == 0) throw std::invalid_argument("benchmark slide needs patches");
    selection.validate();
  }
};

struct BenchResult {
  InferenceMode mode = InferenceMode::full;
  BenchSpec spec;
  std::size_t workers = 1;
  std::size_t batch = 1;         // slides per timing sample
  std::vector<double> seconds;   // per slide, one entry per repetition
  double median = 0.0, p10 = 0.0, p90 = 0.0;
  double slides_per_hour = 0.0;
  StageTimings stages;           // per slide, median of each stage over repetitions
  std::uint64_t flops_per_slide = 0;
};

// A dummy slide built in memory, so timing excludes any I/O.
inline SlideRecord dummy_slide(const EncoderConfig& cfg, const BenchSpec& spec) {
  auto pool = std::make_shared<std::vector<TensorD>>();
  const SeededRng root(spec.seed);
  for (std::size_t i = 0; i < spec.pool; ++i) {
    SeededRng rng = root.fork(i);
    TensorD img({cfg.in_channels, cfg.input_size, cfg.input_size});
    for (auto& v : img.values()) v = rng.normal();
    pool->push_back(std::move(img));
  }
  SlideRecord s;
  s.slide_id = "dummy";
  s.case_id = "dummy";
  s.n_patches = spec.n_patches;
  s.patch = [pool](std::size_t i) { return (*pool)[i % pool->size()]; };
  return s;
}

namespace detail {

template <typename T>
BenchResult bench_model(const InferenceModel<T>& model, const SlideRecord& slide, const BenchSpec& spec,
                        InferenceMode mode) {
  BenchResult r;
  r.mode = mode;
  r.spec = spec;
  auto run_batch = [&](std::size_t batch, StageTimings* st) {
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < batch; ++b) {
      const auto rec = infer(slide, model, mode, spec.selection, st);
      r.flops_per_slide = rec.flops_charged;
    }
    return seconds_since(t0);
  };
  double last = 0.0;
  for (std::size_t w = 0; w < std::max<std::size_t>(1, spec.warmup); ++w) last = run_batch(1, nullptr);
  if (last < spec.min_sample_seconds)
    r.batch = static_cast<std::size_t>(std::ceil(spec.min_sample_seconds / std::max(last, 1e-9)));

  std::vector<double> pre, scoring, post, mil;
  for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
    StageTimings st;
    const double inv = 1.0 / static_cast<double>(r.batch);
    r.seconds.push_back(run_batch(r.batch, &st) * inv);
    pre.push_back(st.pre * inv);
    scoring.push_back(st.scoring * inv);
    post.push_back(st.post * inv);
    mil.push_back(st.mil * inv);
  }
  r.median = quantile(r.seconds, 0.5);
  r.p10 = quantile(r.seconds, 0.1);
  r.p90 = quantile(r.seconds, 0.9);
  r.slides_per_hour = 3600.0 / r.median;
  r.stages = {quantile(pre, 0.5), quantile(scoring, 0.5), quantile(post, 0.5), quantile(mil, 0.5)};
  return r;
}

}  // namespace detail

// Single-threaded slides/hour and latency percentiles for one pipeline mode.
inline BenchResult bench_throughput(const ModelBundle& bundle, const BenchSpec& spec, InferenceMode mode) {
  spec.validate();
  const SlideRecord slide = dummy_slide(bundle.encoder.config, spec);
  if (spec.precision == Precision::float32)
    return detail::bench_model(InferenceModel<float>::from_bundle(bundle), slide, spec, mode);
  return detail::bench_model(InferenceModel<double>::from_bundle(bundle), slide, spec, mode);
}

}  // namespace litepath
