#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/numerics/tensor.hpp"

namespace litepath {

// Pointers to every tensor of a weight struct, in visiting order.
template <typename W>
std::vector<TensorD*> tensor_ptrs(W& w) {
  std::vector<TensorD*> out;
  w.for_each([&](const std::string&, TensorD& t) { out.push_back(&t); });
  return out;
}

template <typename W>
std::vector<const TensorD*> tensor_ptrs(const W& w) {
  std::vector<const TensorD*> out;
  w.for_each([&](const std::string&, const TensorD& t) { out.push_back(&t); });
  return out;
}

// Linear warmup from warmup_init to base, then cosine decay to min_lr at total_steps.
struct CosineSchedule {
  double base = 1e-3;
  double min_lr = 0.0;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;
  double warmup_init = 0.0;

  double at(std::size_t step) const {
    if (step < warmup_steps)
      return warmup_init + (base - warmup_init) * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
    const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
    return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
  }
};

// Scales the gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
template <typename W>
double clip_grad_norm(W& grads, double max_norm) {
  double sq = 0.0;
  for (auto* t : tensor_ptrs(grads))
    for (double v : t->values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto* t : tensor_ptrs(grads))
      for (double& v : t->values()) v *= s;
  }
  return norm;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled = false;  // AdamW when true, L2-regularized Adam otherwise
};

template <typename W>
class Adam {
 public:
  explicit Adam(const W& params, AdamOptions opt = {}) : opt_(opt) {
    for (const auto* t : tensor_ptrs(params)) {
      m_.emplace_back(t->shape());
      v_.emplace_back(t->shape());
    }
  }

  void step(W& params, const W& grads, double lr) {
    auto p = tensor_ptrs(params);
    auto g = tensor_ptrs(grads);
    if (p.size() != m_.size() || g.size() != m_.size()) throw ShapeError("optimizer state does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& pv = p[k]->values();
      const auto& gv = g[k]->values();
      auto& m = m_[k].values();
      auto& v = v_[k].values();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        double gi = gv[i];
        if (!opt_.decoupled) gi += opt_.weight_decay * pv[i];
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        if (opt_.decoupled) pv[i] -= lr * opt_.weight_decay * pv[i];
        pv[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamOptions opt_;
  std::vector<TensorD> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace litepath
