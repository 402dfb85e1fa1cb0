#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "litepath/model/config.hpp"
#include "litepath/model/encoder.hpp"
#include "litepath/model/layers.hpp"
#include "litepath/numerics/ops.hpp"

namespace litepath {

// Attention-based MIL head:
//   h = gelu(F W_in + b_in)                         [n x hidden]
//   a = w . tanh(h V + b_v)        (gated: ... * sigmoid(h U + b_u))
//   z = sum_i softmax(a)_i h_i ;   logits = z W_c + b_c
template <typename T>
struct AbmilWeights {
  AbmilConfig config;
  Linear<T> input_proj;
  Linear<T> attention_v;
  Linear<T> attention_u;  // gated variant only
  Linear<T> attention_w;  // [attention_dim x 1]
  Linear<T> classifier;

  template <typename Self, typename Fn>
  static void visit(Self& s, Fn&& fn) {
    Linear<T>::visit(s.input_proj, "input_proj", fn);
    Linear<T>::visit(s.attention_v, "attention.v", fn);
    if (s.config.gated) Linear<T>::visit(s.attention_u, "attention.u", fn);
    Linear<T>::visit(s.attention_w, "attention.w", fn);
    Linear<T>::visit(s.classifier, "classifier", fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  static AbmilWeights zeros(const AbmilConfig& c) {
    c.validate();
    AbmilWeights w;
    w.config = c;
    w.input_proj = Linear<T>::zeros(c.input_dim, c.hidden_dim);
    w.attention_v = Linear<T>::zeros(c.hidden_dim, c.attention_dim);
    if (c.gated) w.attention_u = Linear<T>::zeros(c.hidden_dim, c.attention_dim);
    w.attention_w = Linear<T>::zeros(c.attention_dim, 1);
    w.classifier = Linear<T>::zeros(c.hidden_dim, c.num_classes);
    return w;
  }

  static AbmilWeights init(const AbmilConfig& c, std::uint64_t seed) {
    AbmilWeights w = zeros(c);
    const SeededRng root(seed);
    w.input_proj = Linear<T>::init(c.input_dim, c.hidden_dim, root.fork(1));
    w.attention_v = Linear<T>::init(c.hidden_dim, c.attention_dim, root.fork(2));
    if (c.gated) w.attention_u = Linear<T>::init(c.hidden_dim, c.attention_dim, root.fork(3));
    w.attention_w = Linear<T>::init(c.attention_dim, 1, root.fork(4));
    w.classifier = Linear<T>::init(c.hidden_dim, c.num_classes, root.fork(5));
    return w;
  }
};

template <typename T>
struct AbmilOutput {
  Tensor<T> logits;     // [num_classes]
  Tensor<T> attention;  // [n], raw pre-softmax scores
};

template <typename T>
struct AbmilTape {
  Tensor<T> features, pre, hidden, mask, tanh_v, sig_u, gate, weights, z;
};

template <typename T>
Tensor<T> stack_embeddings(const std::vector<Embedding<T>>& bag) {
  if (bag.empty()) throw std::invalid_argument("ABMIL bag is empty");
  const std::size_t d = bag.front().vector.size();
  Tensor<T> f({bag.size(), d});
  for (std::size_t i = 0; i < bag.size(); ++i) {
    if (bag[i].vector.size() != d) throw ShapeError("ABMIL bag has embeddings of different widths");
    std::copy(bag[i].vector.values().begin(), bag[i].vector.values().end(), f.data() + i * d);
  }
  return f;
}

// features: [n x input_dim]. A non-null dropout rng enables training-mode dropout.
template <typename T>
AbmilOutput<T> abmil_forward(const Tensor<T>& features, const AbmilWeights<T>& w, AbmilTape<T>* tape = nullptr,
                             SeededRng* dropout_rng = nullptr) {
  const auto& c = w.config;
  if (features.size() == 0) throw std::invalid_argument("ABMIL bag is empty");
  if (features.cols() != c.input_dim || features.rank() != 2)
    throw ShapeError("ABMIL features " + shape_str(features.shape()) + " vs input_dim " + std::to_string(c.input_dim));
  const std::size_t n = features.rows();

  Tensor<T> pre = w.input_proj.forward(features);
  Tensor<T> hidden(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = gelu(pre[i]);
  Tensor<T> mask;
  if (dropout_rng && c.dropout > 0.0) {
    mask = dropout_mask<T>(hidden.shape(), c.dropout, *dropout_rng);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] *= mask[i];
  }

  Tensor<T> tv = w.attention_v.forward(hidden);
  for (auto& v : tv.values()) v = std::tanh(v);
  Tensor<T> su;
  Tensor<T> gate = tv;
  if (c.gated) {
    su = w.attention_u.forward(hidden);
    for (auto& v : su.values()) v = sigmoid(v);
    for (std::size_t i = 0; i < gate.size(); ++i) gate[i] *= su[i];
  }
  Tensor<T> a = w.attention_w.forward(gate).reshaped({n});

  Tensor<T> alpha = a;
  kernels::softmax_inplace(alpha.data(), n);
  Tensor<T> z({c.hidden_dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c.hidden_dim; ++j) z[j] += alpha[i] * hidden(i, j);
  Tensor<T> logits = w.classifier.forward(z).reshaped({c.num_classes});
  require_finite(logits, "abmil_forward");

  if (tape) {
    tape->features = features;
    tape->pre = std::move(pre);
    tape->hidden = std::move(hidden);
    tape->mask = std::move(mask);
    tape->tanh_v = std::move(tv);
    tape->sig_u = std::move(su);
    tape->gate = std::move(gate);
    tape->weights = std::move(alpha);
    tape->z = std::move(z);
  }
  return {std::move(logits), std::move(a)};
}

template <typename T>
AbmilOutput<T> abmil_forward(const std::vector<Embedding<T>>& bag, const AbmilWeights<T>& w) {
  return abmil_forward(stack_embeddings(bag), w);
}

// Accumulates gradients of the loss into g given d(loss)/d(logits).
template <typename T>
void abmil_backward(const AbmilTape<T>& tp, const AbmilWeights<T>& w, const Tensor<T>& d_logits, AbmilWeights<T>& g) {
  const auto& c = w.config;
  const std::size_t n = tp.hidden.rows(), H = c.hidden_dim, A = c.attention_dim;

  Tensor<T> dz = w.classifier.backward(tp.z, d_logits, g.classifier).reshaped({H});

  Tensor<T> d_hidden({n, H});
  Tensor<T> d_alpha({n});
  for (std::size_t i = 0; i < n; ++i) {
    T dot{0};
    for (std::size_t j = 0; j < H; ++j) {
      dot += tp.hidden(i, j) * dz[j];
      d_hidden(i, j) = tp.weights[i] * dz[j];
    }
    d_alpha[i] = dot;
  }
  Tensor<T> d_a({n, 1});
  kernels::softmax_backward_row(tp.weights.data(), d_alpha.data(), d_a.data(), n);

  Tensor<T> d_gate = w.attention_w.backward(tp.gate, d_a, g.attention_w);
  Tensor<T> d_vpre({n, A});
  for (std::size_t i = 0; i < d_gate.size(); ++i) {
    const T t = tp.tanh_v[i];
    const T up = c.gated ? tp.sig_u[i] : T{1};
    d_vpre[i] = d_gate[i] * up * (T{1} - t * t);
  }
  Tensor<T> dh = w.attention_v.backward(tp.hidden, d_vpre, g.attention_v);
  for (std::size_t i = 0; i < dh.size(); ++i) d_hidden[i] += dh[i];
  if (c.gated) {
    Tensor<T> d_upre({n, A});
    for (std::size_t i = 0; i < d_gate.size(); ++i) {
      const T s = tp.sig_u[i];
      d_upre[i] = d_gate[i] * tp.tanh_v[i] * s * (T{1} - s);
    }
    Tensor<T> dhu = w.attention_u.backward(tp.hidden, d_upre, g.attention_u);
    for (std::size_t i = 0; i < dhu.size(); ++i) d_hidden[i] += dhu[i];
  }

  if (!tp.mask.empty())
    for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] *= tp.mask[i];
  for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] *= gelu_grad(tp.pre[i]);
  w.input_proj.backward(tp.features, d_hidden, g.input_proj);
}

}  // namespace litepath
