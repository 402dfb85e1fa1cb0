#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "litepath/metrics/score_table.hpp"
#include "litepath/pipeline/inference.hpp"

namespace litepath {

struct CohortResult {
  std::vector<PredictionRecord> records;  // in submission order
  std::uint64_t total_flops = 0;
  StageTimings timings;
};

struct SlideFailure : std::runtime_error {
  std::string slide_id;
  SlideFailure(std::string id, const std::string& what)
      : std::runtime_error("slide '" + id + "': " + what), slide_id(std::move(id)) {}
};

// Runs fn(i) for i in [0, count) on up to `workers` threads. The first failure stops the
// remaining work and is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

template <typename T>
CohortResult run_cohort(const std::vector<SlideRecord>& slides, const InferenceModel<T>& model,
                        const SelectionConfig& cfg, InferenceMode mode, std::size_t workers = 1) {
  CohortResult out;
  out.records.resize(slides.size());
  std::vector<StageTimings> timings(slides.size());
  parallel_for(slides.size(), workers, [&](std::size_t i) {
    try {
      out.records[i] = infer(slides[i], model, mode, cfg, &timings[i]);
    } catch (const std::exception& e) {
      throw SlideFailure(slides[i].slide_id, e.what());
    }
  });
  for (std::size_t i = 0; i < slides.size(); ++i) {
    out.total_flops += out.records[i].flops_charged;
    out.timings += timings[i];
  }
  return out;
}

inline ScoreTable to_score_table(const std::vector<PredictionRecord>& records,
                                 const std::map<std::string, std::string>& meta = {}) {
  ScoreTable t;
  t.meta = meta;
  const std::size_t C = records.empty() ? 0 : records.front().probabilities.size();
  std::vector<double> values;
  for (const auto& r : records) {
    if (!r.label) throw std::invalid_argument("score table needs labelled slides; '" + r.slide_id + "' has none");
    if (r.probabilities.size() != C) throw ShapeError("records disagree on the number of classes");
    t.slide_ids.push_back(r.slide_id);
    t.case_ids.push_back(r.case_id);
    t.labels.push_back(*r.label);
    values.insert(values.end(), r.probabilities.values().begin(), r.probabilities.values().end());
  }
  t.scores = TensorD({records.size(), C}, std::move(values));
  return t;
}

}  // namespace litepath
