#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "litepath/numerics/tensor.hpp"

namespace litepath {

inline constexpr double kLayerNormEps = 1e-6;

// Raw row-major kernels. Loops are ordered so the innermost loop is a contiguous
// axpy (vectorizable without reassociation) except in gemm_nt, which reduces.
namespace kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = T{0};
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] (+)= a[m x n] * b[k x n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      c[i * k + p] = accumulate ? c[i * k + p] + acc : acc;
    }
  }
}

// c[k x n] (+)= a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate = true) {
  if (!accumulate)
    for (std::size_t i = 0; i < k * n; ++i) c[i] = T{0};
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
void add_bias_rows(T* y, const T* bias, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += bias[j];
}

template <typename T>
void sum_rows_into(const T* dy, T* db, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
}

// In-place softmax of one contiguous row, scaled by 1/temperature.
template <typename T>
void softmax_inplace(T* v, std::size_t n, T inv_temperature = T{1}) {
  T mx = v[0] * inv_temperature;
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i] * inv_temperature);
  T sum{0};
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] * inv_temperature - mx);
    sum += v[i];
  }
  const T inv = T{1} / sum;
  for (std::size_t i = 0; i < n; ++i) v[i] *= inv;
}

// dx = p * (dy - <p, dy>)
template <typename T>
void softmax_backward_row(const T* p, const T* dy, T* dx, std::size_t n) {
  T dot{0};
  for (std::size_t i = 0; i < n; ++i) dot += p[i] * dy[i];
  for (std::size_t i = 0; i < n; ++i) dx[i] = p[i] * (dy[i] - dot);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.5 * std::numbers::sqrt2)));
}

template <typename T>
inline T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.5 * std::numbers::sqrt2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
inline T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// ---------------------------------------------------------------------------
// Tensor-level ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  require_finite(c, "matmul");
  return c;
}

template <typename T>
struct MatmulGrads {
  Tensor<T> da;
  Tensor<T> db;
};

// Gradients of sum(dy * (a b)) with respect to a and b.
template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dy) {
  require_shape(dy, {a.dim(0), b.dim(1)}, "matmul_backward dy");
  MatmulGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
  kernels::gemm_nt(dy.data(), b.data(), g.da.data(), a.dim(0), b.dim(1), a.dim(1));
  kernels::gemm_tn(a.data(), dy.data(), g.db.data(), a.dim(0), a.dim(1), b.dim(1));
  return g;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& v, T temperature = T{1}) {
  if (!(temperature > T{0})) throw std::invalid_argument("softmax temperature must be positive");
  if (v.size() == 0) throw ShapeError("softmax of empty vector");
  require_finite(v, "softmax input");
  Tensor<T> out = v;
  kernels::softmax_inplace(out.data(), out.size(), T{1} / temperature);
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& v, T temperature = T{1}) {
  if (!(temperature > T{0})) throw std::invalid_argument("log_softmax temperature must be positive");
  require_finite(v, "log_softmax input");
  Tensor<T> out(v.shape());
  T mx = v[0] / temperature;
  for (std::size_t i = 1; i < v.size(); ++i) mx = std::max(mx, v[i] / temperature);
  T sum{0};
  for (std::size_t i = 0; i < v.size(); ++i) sum += std::exp(v[i] / temperature - mx);
  const T lse = mx + std::log(sum);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / temperature - lse;
  return out;
}

struct LayerNormStats {
  double mean = 0.0;
  double rstd = 0.0;
};

// Normalizes one row: y = gain * (x - mean) * rstd + bias, population variance, eps 1e-6.
template <typename T>
LayerNormStats layernorm_row(const T* x, const T* gain, const T* bias, T* y, std::size_t n) {
  T mean{0};
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= T(n);
  T var{0};
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= T(n);
  const T rstd = T{1} / std::sqrt(var + T(kLayerNormEps));
  for (std::size_t i = 0; i < n; ++i) y[i] = gain[i] * ((x[i] - mean) * rstd) + bias[i];
  return {static_cast<double>(mean), static_cast<double>(rstd)};
}

// Accumulates dgain/dbias and writes (or adds) dx for one row.
template <typename T>
void layernorm_row_backward(const T* x, const T* gain, const T* dy, LayerNormStats st, T* dx, T* dgain, T* dbias,
                            std::size_t n, bool accumulate_dx) {
  const T mean = T(st.mean);
  const T rstd = T(st.rstd);
  T sum_dxhat{0};
  T sum_dxhat_xhat{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T dxhat = dy[i] * gain[i];
    dgain[i] += dy[i] * xhat;
    dbias[i] += dy[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const T inv_n = T{1} / T(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T v = rstd * (dy[i] * gain[i] - sum_dxhat * inv_n - xhat * sum_dxhat_xhat * inv_n);
    dx[i] = accumulate_dx ? dx[i] + v : v;
  }
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  const std::size_t n = x.cols();
  if (n < 2) throw ShapeError("layernorm needs at least 2 features");
  require_shape(gain, {n}, "layernorm gain");
  require_shape(bias, {n}, "layernorm bias");
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    layernorm_row(x.data() + r * n, gain.data(), bias.data(), y.data() + r * n, n);
  require_finite(y, "layernorm");
  return y;
}

template <typename T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgain;
  Tensor<T> dbias;
};

template <typename T>
LayerNormGrads<T> layernorm_backward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& dy) {
  const std::size_t n = x.cols();
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({n}), Tensor<T>({n})};
  std::vector<T> scratch(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.data() + r * n;
    const LayerNormStats st = layernorm_row(xr, gain.data(), gain.data(), scratch.data(), n);
    layernorm_row_backward(xr, gain.data(), dy.data() + r * n, st, g.dx.data() + r * n, g.dgain.data(),
                           g.dbias.data(), n, false);
  }
  return g;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

// Mean softmax cross-entropy of one logit row against a class index; returns (loss, dlogits).
template <typename T>
std::pair<T, Tensor<T>> softmax_cross_entropy(const Tensor<T>& logits, std::size_t target) {
  if (target >= logits.size()) throw std::out_of_range("cross-entropy target out of range");
  Tensor<T> p = softmax(logits);
  const Tensor<T> lp = log_softmax(logits);
  const T loss = -lp[target];
  p[target] -= T{1};
  return {loss, std::move(p)};
}

}  // namespace litepath
