#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "litepath/model/layers.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

// Affine input transform z = (x - mean) * map fitted so training features have identity
// covariance. After training on z, fold() rewrites the first linear layer to take raw x.
struct Whitener {
  TensorD mean;  // [d]
  TensorD map;   // [d x d], upper triangular (inverse transposed Cholesky factor)

  std::size_t dim() const { return mean.size(); }

  // Fits on the rows of every matrix; at most max_rows rows are used (even stride).
  static Whitener fit(const std::vector<const TensorD*>& mats, double ridge = 1e-6, std::size_t max_rows = 50000) {
    if (mats.empty()) throw std::invalid_argument("whitener needs at least one matrix");
    const std::size_t d = mats.front()->cols();
    std::size_t total = 0;
    for (const auto* m : mats) {
      if (m->cols() != d) throw ShapeError("whitener inputs differ in width");
      total += m->rows();
    }
    if (total == 0) throw std::invalid_argument("whitener needs at least one row");
    const std::size_t stride = std::max<std::size_t>(1, (total + max_rows - 1) / max_rows);

    std::vector<double> mu(d, 0.0), cov(d * d, 0.0);
    std::size_t n = 0, g = 0;
    auto each_row = [&](auto&& fn) {
      g = 0;
      for (const auto* m : mats)
        for (std::size_t r = 0; r < m->rows(); ++r, ++g)
          if (g % stride == 0) fn(m->data() + r * d);
    };
    each_row([&](const double* x) {
      for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
      ++n;
    });
    for (auto& v : mu) v /= static_cast<double>(n);
    std::vector<double> c(d);
    each_row([&](const double* x) {
      for (std::size_t j = 0; j < d; ++j) c[j] = x[j] - mu[j];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b <= a; ++b) cov[a * d + b] += c[a] * c[b];
    });
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a] / static_cast<double>(n);
    const double floor = trace > 0.0 ? ridge * trace / static_cast<double>(d) : 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b <= a; ++b) cov[a * d + b] /= static_cast<double>(n);
      cov[a * d + a] += floor;
    }

    // cov = L L^T; map = L^-T so that (x - mean) * map has identity covariance.
    std::vector<double> L(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = cov[i * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
        L[i * d + j] = i == j ? std::sqrt(std::max(s, floor)) : s / L[j * d + j];
      }
    Whitener w{TensorD({d}, mu), TensorD({d, d})};
    for (std::size_t col = 0; col < d; ++col) {
      // Solve L y = e_col; map row-major [d x d] holds L^-T, i.e. map(col, i) = y[i].
      std::vector<double> y(d, 0.0);
      for (std::size_t i = col; i < d; ++i) {
        double s = i == col ? 1.0 : 0.0;
        for (std::size_t k = col; k < i; ++k) s -= L[i * d + k] * y[k];
        y[i] = s / L[i * d + i];
      }
      for (std::size_t i = 0; i < d; ++i) w.map(col, i) = y[i];
    }
    return w;
  }

  TensorD apply(const TensorD& x) const {
    if (x.cols() != dim()) throw ShapeError("whitener width " + std::to_string(dim()) + " vs " + shape_str(x.shape()));
    const std::size_t m = x.size() / dim();
    TensorD c({m, dim()});
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < dim(); ++j) c(r, j) = x(r, j) - mean[j];
    TensorD z({m, dim()});
    kernels::gemm_nn(c.data(), map.data(), z.data(), m, dim(), dim());
    return z;
  }

  // Rewrites layer so that layer(x) equals the trained layer(apply(x)).
  void fold(Linear<double>& layer) const {
    if (layer.in() != dim()) throw ShapeError("whitener fold width mismatch");
    TensorD w({dim(), layer.out()});
    kernels::gemm_nn(map.data(), layer.w.data(), w.data(), dim(), dim(), layer.out());
    TensorD shift({1, layer.out()});
    kernels::gemm_nn(mean.data(), w.data(), shift.data(), 1, dim(), layer.out());
    for (std::size_t j = 0; j < layer.out(); ++j) layer.b[j] -= shift[j];
    layer.w = std::move(w);
  }
};

}  // namespace litepath
