#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "litepath/aps/selection.hpp"
#include "litepath/metrics/auc.hpp"
#include "litepath/model/abmil.hpp"
#include "litepath/numerics/ops.hpp"

namespace litepath {

struct GridEntry {
  SelectionConfig config;
  double auc = 0.0;
};

struct GridSearchResult {
  SelectionConfig best;
  double best_auc = 0.0;
  std::vector<GridEntry> entries;  // in grid order
};

// Higher AUC wins; ties go to the smaller budget k_u + k_a, then to the larger k_u.
inline bool grid_prefers(const GridEntry& a, const GridEntry& b) {
  if (a.auc != b.auc) return a.auc > b.auc;
  const auto ba = a.config.k_u + a.config.k_a, bb = b.config.k_u + b.config.k_a;
  if (ba != bb) return ba < bb;
  return a.config.k_u > b.config.k_u;
}

inline GridSearchResult grid_search(std::span<const SelectionConfig> grid,
                                    const std::function<double(const SelectionConfig&)>& evaluate) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridSearchResult r;
  for (const auto& cfg : grid) {
    cfg.validate();
    r.entries.push_back({cfg, evaluate(cfg)});
  }
  const GridEntry* best = &r.entries.front();
  for (const auto& e : r.entries)
    if (grid_prefers(e, *best)) best = &e;
  r.best = best->config;
  r.best_auc = best->auc;
  return r;
}

// A validation slide with every patch already fully encoded plus its scorer outputs.
// Because the split encoder is bit-exact, aggregating a subset of these rows reproduces
// the selective pipeline exactly.
struct CachedSlide {
  TensorD embeddings;          // [n x embed_dim]
  std::vector<double> scores;  // [n] predicted attention scores
  std::size_t label = 0;
};

inline TensorD gather_rows(const TensorD& m, std::span<const std::size_t> rows) {
  TensorD out({rows.size(), m.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.data() + i * m.cols());
  }
  return out;
}

// [n_slides x num_classes] class probabilities of the selective pipeline on cached slides.
inline TensorD cached_probabilities(std::span<const CachedSlide> slides, const AbmilWeights<double>& mil,
                                    const SelectionConfig& cfg) {
  TensorD probs({slides.size(), mil.config.num_classes});
  for (std::size_t s = 0; s < slides.size(); ++s) {
    const auto& sl = slides[s];
    const auto sel = select(sl.embeddings.rows(), sl.scores, cfg);
    const auto out = abmil_forward(gather_rows(sl.embeddings, sel.combined), mil);
    const auto p = softmax(out.logits);
    for (std::size_t c = 0; c < p.size(); ++c) probs(s, c) = p[c];
  }
  return probs;
}

inline GridSearchResult grid_search(std::span<const CachedSlide> validation, std::span<const SelectionConfig> grid,
                                    const AbmilWeights<double>& mil) {
  if (validation.empty()) throw std::invalid_argument("grid_search: empty validation set");
  std::vector<std::size_t> labels;
  for (const auto& s : validation) labels.push_back(s.label);
  return grid_search(grid, [&](const SelectionConfig& cfg) {
    return macro_auc(labels, cached_probabilities(validation, mil, cfg));
  });
}

}  // namespace litepath
