#pragma once

#include <string>

#include "litepath/io/hash.hpp"
#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath::testing {

inline TensorD random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  SeededRng rng(seed);
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

template <typename T>
std::string tensor_hash(const Tensor<T>& t) {
  Fnv1a64 h;
  h.update(t.data(), t.size() * sizeof(T));
  return h.hex();
}

}  // namespace litepath::testing
