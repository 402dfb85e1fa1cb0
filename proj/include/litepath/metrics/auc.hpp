#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/log.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

// Mann-Whitney AUC with midranks, so tied positive/negative pairs count 0.5.
inline double binary_auc(std::span<const char> positive, std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw ShapeError("binary_auc: labels and scores differ in length");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("binary_auc needs both positives and negatives");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct MacroAucDetail {
  double value = 0.0;
  std::vector<std::size_t> scored_classes;
  std::vector<std::size_t> skipped_classes;
  std::vector<double> per_class;
};

// One-vs-rest AUC per class, averaged. scores: [n x num_classes] per-class probabilities.
inline MacroAucDetail macro_auc_detail(std::span<const std::size_t> labels, const TensorD& scores) {
  if (scores.rank() != 2 || scores.rows() != labels.size())
    throw ShapeError("macro_auc: score table " + shape_str(scores.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  for (double v : scores.values())
    if (!std::isfinite(v)) throw NonFiniteError("macro_auc: non-finite score");
  const std::size_t n = labels.size(), C = scores.cols();
  MacroAucDetail d;
  std::vector<char> pos(n);
  std::vector<double> col(n);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= C) throw std::out_of_range("macro_auc: label outside score columns");
      pos[i] = labels[i] == c;
      n_pos += pos[i];
      col[i] = scores(i, c);
    }
    if (n_pos == 0 || n_pos == n) {
      d.skipped_classes.push_back(c);
      continue;
    }
    d.scored_classes.push_back(c);
    d.per_class.push_back(binary_auc(pos, col));
  }
  if (d.scored_classes.size() < 2) throw std::invalid_argument("macro_auc needs at least 2 scorable classes");
  d.value = std::accumulate(d.per_class.begin(), d.per_class.end(), 0.0) / static_cast<double>(d.per_class.size());
  return d;
}

inline double macro_auc(std::span<const std::size_t> labels, const TensorD& scores) {
  auto d = macro_auc_detail(labels, scores);
  if (!d.skipped_classes.empty())
    log(LogLevel::info, "macro_auc skipped " + std::to_string(d.skipped_classes.size()) + " class(es) without positives/negatives");
  return d.value;
}

// 100 * model / reference.
inline double auc_retention(double model_auc, double reference_auc) {
  if (!(reference_auc > 0.0)) throw std::invalid_argument("auc_retention: reference AUC must be positive");
  return 100.0 * model_auc / reference_auc;
}

}  // namespace litepath
