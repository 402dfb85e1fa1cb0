#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "litepath/model/weights.hpp"
#include "litepath/numerics/ops.hpp"
#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

// y = x W + b with W stored [in x out].
template <typename T>
struct Linear {
  Tensor<T> w;
  Tensor<T> b;

  static Linear zeros(std::size_t in, std::size_t out) { return {Tensor<T>({in, out}), Tensor<T>({out})}; }
  static Linear init(std::size_t in, std::size_t out, SeededRng rng) {
    Linear l = zeros(in, out);
    init_trunc_normal(l.w, rng);
    return l;
  }

  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }

  Tensor<T> forward(const Tensor<T>& x) const {
    const std::size_t m = x.size() / in();
    if (x.size() != m * in()) throw ShapeError("linear input width " + shape_str(x.shape()) + " vs " + std::to_string(in()));
    Tensor<T> y({m, out()});
    kernels::gemm_nn(x.data(), w.data(), y.data(), m, in(), out());
    kernels::add_bias_rows(y.data(), b.data(), m, out());
    return y;
  }

  // Accumulates dW, db into g; returns dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, Linear& g) const {
    const std::size_t m = x.size() / in();
    kernels::gemm_tn(x.data(), dy.data(), g.w.data(), m, in(), out());
    kernels::sum_rows_into(dy.data(), g.b.data(), m, out());
    Tensor<T> dx({m, in()});
    kernels::gemm_nt(dy.data(), w.data(), dx.data(), m, out(), in());
    return dx;
  }

  template <typename Self, typename Fn>
  static void visit(Self& s, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", s.w);
    fn(prefix + ".bias", s.b);
  }
};

// Inverted dropout mask: entries are 0 or 1/(1-rate).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, SeededRng& rng) {
  Tensor<T> m(shape, T{1});
  if (rate <= 0.0) return m;
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : m.values()) v = rng.uniform() < rate ? T{0} : keep;
  return m;
}

}  // namespace litepath
