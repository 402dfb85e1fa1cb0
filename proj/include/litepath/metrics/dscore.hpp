#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace litepath {

struct DScoreInput {
  std::vector<double> auc;    // per model
  std::vector<double> flops;  // per model, mean slide-level FLOPs
  double alpha = 0.9;         // weight on accuracy
};

// Lower middle element for even counts, so some real model sits exactly at the anchor.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty list");
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

// 1 - sigmoid(log f - log T): 0.5 at the median, toward 1 for cheaper models.
inline double normalized_flops(double flops, double median_flops) {
  return 1.0 - 1.0 / (1.0 + std::exp(-(std::log(flops) - std::log(median_flops))));
}

// d_i = a_i^alpha * f_i^(1 - alpha), with a_i min-max normalized AUC and f_i normalized FLOPs.
inline std::vector<double> dscore(const DScoreInput& in) {
  const std::size_t m = in.auc.size();
  if (m < 2) throw std::invalid_argument("dscore needs at least 2 models");
  if (in.flops.size() != m) throw std::invalid_argument("dscore: AUC and FLOPs lists differ in length");
  if (in.alpha < 0.0 || in.alpha > 1.0) throw std::invalid_argument("dscore: alpha must lie in [0, 1]");
  for (double f : in.flops)
    if (!(f > 0.0) || !std::isfinite(f)) throw std::invalid_argument("dscore: FLOPs must be positive and finite");
  const auto [lo_it, hi_it] = std::minmax_element(in.auc.begin(), in.auc.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo))
    throw std::invalid_argument("dscore: all AUCs are equal, min-max normalization is undefined; drop the metric or add models");
  const double median = lower_median(in.flops);
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double a = (in.auc[i] - lo) / (hi - lo);
    const double f = normalized_flops(in.flops[i], median);
    d[i] = std::pow(a, in.alpha) * std::pow(f, 1.0 - in.alpha);
  }
  return d;
}

// aucs[cohort][model] -> mean rank per model (1 = best AUC; ties share the mean rank).
inline std::vector<double> ranking_scores(const std::vector<std::vector<double>>& aucs) {
  if (aucs.empty()) throw std::invalid_argument("ranking_scores: no cohorts");
  const std::size_t m = aucs.front().size();
  std::vector<double> total(m, 0.0);
  for (const auto& row : aucs) {
    if (row.size() != m) throw std::invalid_argument("ranking_scores: every model must be scored on every cohort");
    for (double v : row)
      if (!std::isfinite(v)) throw std::invalid_argument("ranking_scores: missing AUC entry");
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t i = 0; i < m;) {
      std::size_t j = i;
      while (j < m && row[order[j]] == row[order[i]]) ++j;
      const double mid = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t t = i; t < j; ++t) total[order[t]] += mid;
      i = j;
    }
  }
  for (auto& t : total) t /= static_cast<double>(aucs.size());
  return total;
}

}  // namespace litepath
