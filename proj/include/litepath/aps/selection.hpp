#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/numerics/tensor.hpp"

namespace litepath {

struct SelectionConfig {
  std::size_t k_u = 0;
  std::size_t k_a = 0;

  void validate() const {
    if (k_u + k_a < 1) throw std::invalid_argument("selection config needs k_u + k_a >= 1");
  }
  friend bool operator==(const SelectionConfig&, const SelectionConfig&) = default;
};

// Indices are 0-based positions in the slide's stored raster order.
struct SelectionResult {
  std::vector<std::size_t> uniform;    // ascending
  std::vector<std::size_t> attention;  // descending by score, ties by lower index
  std::vector<std::size_t> combined;   // union, ascending
  std::size_t n_total = 0;
  bool scored = false;  // whether scores influenced the selection
};

// floor(m * n / k) for m = 0 .. min(k, n) - 1; k > n clamps to every index.
inline std::vector<std::size_t> uniform_indices(std::size_t n, std::size_t k_u) {
  if (n == 0) throw std::invalid_argument("uniform_indices: slide has no patches");
  const std::size_t k = std::min(k_u, n);
  std::vector<std::size_t> idx(k);
  for (std::size_t m = 0; m < k; ++m)
    idx[m] = static_cast<std::size_t>((static_cast<unsigned __int128>(m) * n) / k);
  return idx;
}

// The k_a highest scores outside `excluded`; clamps when fewer candidates remain.
inline std::vector<std::size_t> attention_topk(std::span<const double> scores, std::span<const std::size_t> excluded,
                                               std::size_t k_a) {
  const std::size_t n = scores.size();
  for (double s : scores)
    if (!std::isfinite(s)) throw NonFiniteError("attention_topk: non-finite score");
  std::vector<char> blocked(n, 0);
  for (std::size_t e : excluded) {
    if (e >= n) throw std::out_of_range("attention_topk: excluded index " + std::to_string(e) + " out of range");
    blocked[e] = 1;
  }
  std::vector<std::size_t> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!blocked[i]) cand.push_back(i);
  const std::size_t k = std::min(k_a, cand.size());
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

inline std::size_t selected_count(std::size_t n, const SelectionConfig& cfg) {
  const std::size_t u = std::min(cfg.k_u, n);
  return u + std::min(cfg.k_a, n - u);
}

// True when attention top-k has a real choice to make, i.e. the scorer must run.
inline bool needs_scoring(std::size_t n, const SelectionConfig& cfg) {
  const std::size_t u = std::min(cfg.k_u, n);
  return cfg.k_a > 0 && n - u > cfg.k_a;
}

inline SelectionResult select(std::size_t n, std::span<const double> scores, const SelectionConfig& cfg) {
  cfg.validate();
  if (scores.size() != n)
    throw ShapeError("select: " + std::to_string(scores.size()) + " scores for " + std::to_string(n) + " patches");
  SelectionResult r;
  r.n_total = n;
  r.uniform = uniform_indices(n, cfg.k_u);
  r.attention = attention_topk(scores, r.uniform, cfg.k_a);
  r.scored = needs_scoring(n, cfg);
  r.combined = r.uniform;
  r.combined.insert(r.combined.end(), r.attention.begin(), r.attention.end());
  std::sort(r.combined.begin(), r.combined.end());
  return r;
}

// Grid of (k_u, k_a) pairs observed across cohorts in deployment; pairs with k_u + k_a = 0 dropped.
inline std::vector<SelectionConfig> default_selection_grid() {
  const std::size_t ku[] = {0, 950, 1000, 1900, 1950, 2000, 2900, 3000, 3900, 3950, 4000};
  const std::size_t ka[] = {0, 50, 100, 1000};
  std::vector<SelectionConfig> grid;
  for (auto u : ku)
    for (auto a : ka)
      if (u + a >= 1) grid.push_back({u, a});
  return grid;
}

}  // namespace litepath
