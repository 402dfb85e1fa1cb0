#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor); below it the
  // comparison is effectively absolute.
  double floor = 1e-4;
  // 0 checks every coordinate; otherwise a seeded subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central finite differences against the analytic gradient returned by f.
// f : const TensorD& -> std::pair<double, TensorD>  (value, gradient)
template <typename F>
GradCheckResult grad_check(F&& f, const TensorD& point, const GradCheckOptions& opt = {}) {
  if (!(opt.step >= 1e-7 && opt.step <= 1e-3)) throw std::invalid_argument("grad_check step must lie in [1e-7, 1e-3]");
  auto [value, analytic] = f(point);
  if (!std::isfinite(value) || !analytic.all_finite()) throw NonFiniteError("grad_check: non-finite value at point");
  require_shape(analytic, point.shape(), "grad_check analytic gradient");

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords != 0 && opt.max_coords < coords.size()) {
    SeededRng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_coords; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(opt.max_coords);
  }

  GradCheckResult res;
  TensorD x = point;
  for (std::size_t idx : coords) {
    const double orig = x[idx];
    x[idx] = orig + opt.step;
    const double fp = f(x).first;
    x[idx] = orig - opt.step;
    const double fm = f(x).first;
    x[idx] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NonFiniteError("grad_check: non-finite intermediate");
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double err = relative_error(analytic[idx], numeric, opt.floor);
    if (err > res.max_rel_error || res.checked == 0) {
      res.max_rel_error = err;
      res.worst_index = idx;
      res.analytic = analytic[idx];
      res.numeric = numeric;
    }
    ++res.checked;
  }
  return res;
}

// Compares <grad, direction> with the central difference of f along direction.
// value_fn : const TensorD& -> double
template <typename F>
double directional_check(F&& value_fn, const TensorD& point, const TensorD& grad, const TensorD& direction,
                         double step = 1e-5, double floor = 1e-8) {
  require_shape(direction, point.shape(), "directional_check direction");
  TensorD xp = point, xm = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    xp[i] += step * direction[i];
    xm[i] -= step * direction[i];
  }
  const double numeric = (value_fn(xp) - value_fn(xm)) / (2.0 * step);
  double analytic = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) analytic += grad[i] * direction[i];
  if (!std::isfinite(numeric)) throw NonFiniteError("directional_check: non-finite intermediate");
  return relative_error(analytic, numeric, floor);
}

}  // namespace litepath
