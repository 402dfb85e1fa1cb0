#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

// Weight structs expose `for_each(fn)` visiting (name, tensor&) in a fixed order.
// These helpers work over any such struct.

template <typename W>
std::size_t param_count(const W& w) {
  std::size_t n = 0;
  w.for_each([&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

// Same layout, every tensor zero. Used for gradient accumulators.
template <typename W>
W zeros_like(const W& w) {
  W z = w;
  z.for_each([](const std::string&, auto& t) { t.fill(0); });
  return z;
}

template <typename W>
void scale_in_place(W& w, double s) {
  w.for_each([&](const std::string&, auto& t) {
    for (auto& v : t.values()) v *= s;
  });
}

template <typename W>
bool all_finite(const W& w) {
  bool ok = true;
  w.for_each([&](const std::string&, const auto& t) { ok = ok && t.all_finite(); });
  return ok;
}

// Flattens all tensors, in visiting order, into one vector (used by gradient checks).
template <typename W>
TensorD flatten(const W& w) {
  std::vector<double> out;
  w.for_each([&](const std::string&, const auto& t) { out.insert(out.end(), t.values().begin(), t.values().end()); });
  const std::size_t n = out.size();
  return TensorD({n}, std::move(out));
}

template <typename W>
void unflatten(W& w, const TensorD& flat) {
  std::size_t pos = 0;
  w.for_each([&](const std::string&, auto& t) {
    for (auto& v : t.values()) v = flat.values().at(pos++);
  });
}

// Copies src into dst tensor by tensor (same layout), converting the element type.
template <typename Dst, typename Src>
Dst cast_weights(const Src& src, Dst dst) {
  std::vector<std::vector<double>> values;
  src.for_each([&](const std::string&, const auto& t) { values.emplace_back(t.values().begin(), t.values().end()); });
  std::size_t i = 0;
  dst.for_each([&](const std::string& name, auto& t) {
    if (i >= values.size() || values[i].size() != t.size()) throw ShapeError("cast_weights: layout mismatch at " + name);
    using U = typename std::remove_reference_t<decltype(t)>::value_type;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<U>(values[i][j]);
    ++i;
  });
  return dst;
}

template <typename T>
void init_trunc_normal(Tensor<T>& t, SeededRng& rng, double stddev = 0.02) {
  for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(stddev));
}

}  // namespace litepath
