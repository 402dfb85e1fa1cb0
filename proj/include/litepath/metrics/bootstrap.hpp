#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/metrics/auc.hpp"
#include "litepath/numerics/rng.hpp"

namespace litepath {

// Linear-interpolation quantile (numpy's default), q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

// Maps slide rows to case groups; the bootstrap resamples cases, taking all slides of a drawn case.
class CaseIndex {
 public:
  CaseIndex() = default;
  explicit CaseIndex(std::span<const std::string> case_ids) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < case_ids.size(); ++i) {
      auto [it, fresh] = pos.try_emplace(case_ids[i], groups_.size());
      if (fresh) groups_.emplace_back();
      groups_[it->second].push_back(i);
    }
  }
  static CaseIndex one_per_row(std::size_t n) {
    CaseIndex c;
    for (std::size_t i = 0; i < n; ++i) c.groups_.push_back({i});
    return c;
  }
  std::size_t cases() const { return groups_.size(); }
  const std::vector<std::size_t>& rows(std::size_t c) const { return groups_[c]; }

  std::vector<std::size_t> resample_rows(SeededRng& rng) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < groups_.size(); ++i) {
      const auto& g = groups_[rng.below(groups_.size())];
      rows.insert(rows.end(), g.begin(), g.end());
    }
    return rows;
  }

 private:
  std::vector<std::vector<std::size_t>> groups_;
};

struct BootstrapOptions {
  std::size_t n_rep = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
};

// Returns the accepted replicate values. `statistic` maps resampled row indices to a value,
// or nullopt when the resample is degenerate; those are redrawn, at most 10 * n_rep draws.
// Replicate attempt a uses the stream SeededRng(seed).fork(a).
inline std::vector<double> bootstrap_replicates(
    const CaseIndex& cases, const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    const BootstrapOptions& opt) {
  if (cases.cases() < 2) throw std::invalid_argument("bootstrap needs at least 2 cases");
  std::vector<double> reps;
  reps.reserve(opt.n_rep);
  const SeededRng root(opt.seed);
  const std::size_t max_attempts = 10 * opt.n_rep;
  for (std::size_t attempt = 0; reps.size() < opt.n_rep; ++attempt) {
    if (attempt >= max_attempts)
      throw std::runtime_error("bootstrap: too many degenerate resamples (" + std::to_string(attempt) + " draws)");
    SeededRng rng = root.fork(attempt);
    if (auto v = statistic(cases.resample_rows(rng))) reps.push_back(*v);
  }
  return reps;
}

// Percentile interval of the replicates.
inline std::pair<double, double> bootstrap_ci(
    const CaseIndex& cases, const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    const BootstrapOptions& opt = {}) {
  const auto reps = bootstrap_replicates(cases, statistic, opt);
  const double tail = (1.0 - opt.level) / 2.0;
  return {quantile(reps, tail), quantile(reps, 1.0 - tail)};
}

struct AucResult {
  double macro_auc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_bootstrap = 0;
};

namespace detail {

inline std::optional<double> resampled_macro_auc(std::span<const std::size_t> labels, const TensorD& scores,
                                                 const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> l(rows.size());
  TensorD s({rows.size(), scores.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    l[i] = labels[rows[i]];
    for (std::size_t c = 0; c < scores.cols(); ++c) s(i, c) = scores(rows[i], c);
  }
  try {
    return macro_auc_detail(l, s).value;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline AucResult macro_auc_with_ci(std::span<const std::size_t> labels, const TensorD& scores, const CaseIndex& cases,
                                   const BootstrapOptions& opt = {}) {
  AucResult r;
  r.macro_auc = macro_auc(labels, scores);
  auto [lo, hi] = bootstrap_ci(
      cases, [&](const std::vector<std::size_t>& rows) { return detail::resampled_macro_auc(labels, scores, rows); },
      opt);
  // Percentile intervals need not bracket the point estimate; clamp so they do.
  r.ci_low = std::min(lo, r.macro_auc);
  r.ci_high = std::max(hi, r.macro_auc);
  r.n_bootstrap = opt.n_rep;
  return r;
}

// Paired bootstrap of AUC(a) - AUC(b): both pipelines are scored on the same resampled cases.
inline std::vector<double> paired_auc_differences(std::span<const std::size_t> labels, const TensorD& scores_a,
                                                  const TensorD& scores_b, const CaseIndex& cases,
                                                  const BootstrapOptions& opt = {}) {
  if (scores_a.shape() != scores_b.shape()) throw ShapeError("paired bootstrap: score tables differ in shape");
  return bootstrap_replicates(
      cases,
      [&](const std::vector<std::size_t>& rows) -> std::optional<double> {
        auto a = detail::resampled_macro_auc(labels, scores_a, rows);
        auto b = detail::resampled_macro_auc(labels, scores_b, rows);
        if (!a || !b) return std::nullopt;
        return *a - *b;
      },
      opt);
}

struct NonInferiorityResult {
  double mean_diff = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double margin = -0.025;
  bool pass = false;
};

// Passes iff the 2.5th percentile of the differences lies above the margin.
inline NonInferiorityResult noninferiority(std::span<const double> diffs, double margin = -0.025) {
  if (diffs.size() < 100) throw std::invalid_argument("noninferiority needs at least 100 bootstrap differences");
  std::vector<double> v(diffs.begin(), diffs.end());
  NonInferiorityResult r;
  r.margin = margin;
  r.mean_diff = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  r.ci_low = quantile(v, 0.025);
  r.ci_high = quantile(v, 0.975);
  r.pass = r.ci_low > margin;
  return r;
}

}  // namespace litepath
