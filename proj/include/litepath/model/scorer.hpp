#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "litepath/model/config.hpp"
#include "litepath/model/layers.hpp"

namespace litepath {

// MLP from the concatenated shallow feature to one raw attention estimate per patch.
// GELU between layers; dropout after each hidden activation while training.
template <typename T>
struct ScorerWeights {
  ScorerConfig config;
  std::vector<Linear<T>> layers;

  template <typename Self, typename Fn>
  static void visit(Self& s, Fn&& fn) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) Linear<T>::visit(s.layers[i], "mlp." + std::to_string(i), fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  static ScorerWeights zeros(const ScorerConfig& c) {
    c.validate();
    ScorerWeights w;
    w.config = c;
    std::size_t in = c.input_dim;
    for (std::size_t h : c.hidden) {
      w.layers.push_back(Linear<T>::zeros(in, h));
      in = h;
    }
    w.layers.push_back(Linear<T>::zeros(in, 1));
    return w;
  }

  static ScorerWeights init(const ScorerConfig& c, std::uint64_t seed) {
    ScorerWeights w = zeros(c);
    const SeededRng root(seed);
    for (std::size_t i = 0; i < w.layers.size(); ++i)
      w.layers[i] = Linear<T>::init(w.layers[i].in(), w.layers[i].out(), root.fork(i));
    return w;
  }
};

template <typename T>
struct ScorerTape {
  Tensor<T> input;
  std::vector<Tensor<T>> pre, act, masks;
};

// inputs: [n x input_dim] -> scores [n].
template <typename T>
Tensor<T> scoring_forward_batch(const Tensor<T>& inputs, const ScorerWeights<T>& w, ScorerTape<T>* tape = nullptr,
                                SeededRng* dropout_rng = nullptr) {
  if (inputs.cols() != w.config.input_dim)
    throw ShapeError("scorer input width " + std::to_string(inputs.cols()) + " vs " + std::to_string(w.config.input_dim));
  const std::size_t n = inputs.size() / w.config.input_dim;
  if (tape) {
    tape->input = inputs;
    tape->pre.clear();
    tape->act.clear();
    tape->masks.clear();
  }
  Tensor<T> x = inputs;
  for (std::size_t l = 0; l + 1 < w.layers.size(); ++l) {
    Tensor<T> pre = w.layers[l].forward(x);
    Tensor<T> act(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
    Tensor<T> mask;
    if (dropout_rng && w.config.dropout > 0.0) {
      mask = dropout_mask<T>(act.shape(), w.config.dropout, *dropout_rng);
      for (std::size_t i = 0; i < act.size(); ++i) act[i] *= mask[i];
    }
    if (tape) {
      tape->pre.push_back(std::move(pre));
      tape->masks.push_back(std::move(mask));
      tape->act.push_back(act);
    }
    x = std::move(act);
  }
  Tensor<T> out = w.layers.back().forward(x).reshaped({n});
  require_finite(out, "scoring_forward");
  return out;
}

template <typename T>
T scoring_forward(const Tensor<T>& h, const ScorerWeights<T>& w) {
  if (h.size() != w.config.input_dim)
    throw ShapeError("scorer input length " + std::to_string(h.size()) + " vs " + std::to_string(w.config.input_dim));
  return scoring_forward_batch(h.reshaped({1, h.size()}), w)[0];
}

template <typename T>
void scorer_backward(const ScorerTape<T>& tp, const ScorerWeights<T>& w, const Tensor<T>& d_scores,
                     ScorerWeights<T>& g) {
  const std::size_t L = w.layers.size();
  const Tensor<T>& last_in = L >= 2 ? tp.act[L - 2] : tp.input;
  Tensor<T> dx = w.layers[L - 1].backward(last_in, d_scores, g.layers[L - 1]);
  for (std::size_t l = L - 1; l-- > 0;) {
    if (!tp.masks[l].empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= tp.masks[l][i];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(tp.pre[l][i]);
    const Tensor<T>& in = l >= 1 ? tp.act[l - 1] : tp.input;
    dx = w.layers[l].backward(in, dx, g.layers[l]);
  }
}

}  // namespace litepath
