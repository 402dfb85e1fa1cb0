#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "litepath/model/config.hpp"
#include "litepath/model/weights.hpp"
#include "litepath/numerics/ops.hpp"
#include "litepath/numerics/rng.hpp"
#include "litepath/numerics/tensor.hpp"

namespace litepath {

template <typename T>
struct BlockWeights {
  Tensor<T> norm1_g, norm1_b;
  Tensor<T> qkv_w, qkv_b;    // [D x 3D], [3D]; columns ordered q | k | v, head-major inside each
  Tensor<T> proj_w, proj_b;  // [D x D]
  Tensor<T> norm2_g, norm2_b;
  Tensor<T> fc1_w, fc1_b;  // [D x M]
  Tensor<T> fc2_w, fc2_b;  // [M x D]

  template <typename Self, typename Fn>
  static void visit(Self& s, const std::string& p, Fn&& fn) {
    fn(p + "norm1.weight", s.norm1_g);
    fn(p + "norm1.bias", s.norm1_b);
    fn(p + "attn.qkv.weight", s.qkv_w);
    fn(p + "attn.qkv.bias", s.qkv_b);
    fn(p + "attn.proj.weight", s.proj_w);
    fn(p + "attn.proj.bias", s.proj_b);
    fn(p + "norm2.weight", s.norm2_g);
    fn(p + "norm2.bias", s.norm2_b);
    fn(p + "mlp.fc1.weight", s.fc1_w);
    fn(p + "mlp.fc1.bias", s.fc1_b);
    fn(p + "mlp.fc2.weight", s.fc2_w);
    fn(p + "mlp.fc2.bias", s.fc2_b);
  }
};

// Pre-norm ViT: patch embedding, CLS token, learned 1-D positions, `depth` blocks,
// final norm on the CLS token and a linear head to output_dim.
template <typename T>
struct EncoderWeights {
  EncoderConfig config;
  Tensor<T> patch_w, patch_b;  // [C*p*p x D], [D]
  Tensor<T> cls_token;         // [D]
  Tensor<T> pos_embed;         // [tokens x D]
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> norm_g, norm_b;
  Tensor<T> head_w, head_b;  // [D x out], [out]

  template <typename Self, typename Fn>
  static void visit(Self& s, Fn&& fn) {
    fn("patch_embed.weight", s.patch_w);
    fn("patch_embed.bias", s.patch_b);
    fn("cls_token", s.cls_token);
    fn("pos_embed", s.pos_embed);
    for (std::size_t i = 0; i < s.blocks.size(); ++i)
      BlockWeights<T>::visit(s.blocks[i], "blocks." + std::to_string(i) + ".", fn);
    fn("norm.weight", s.norm_g);
    fn("norm.bias", s.norm_b);
    fn("head.weight", s.head_w);
    fn("head.bias", s.head_b);
  }
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  // Allocates every tensor at its configured shape, zero-filled (LayerNorm gains at 1).
  static EncoderWeights zeros(const EncoderConfig& cfg) {
    cfg.validate();
    const std::size_t D = cfg.embed_dim, M = cfg.mlp_dim();
    EncoderWeights w;
    w.config = cfg;
    w.patch_w = Tensor<T>({cfg.patch_dim(), D});
    w.patch_b = Tensor<T>({D});
    w.cls_token = Tensor<T>({D});
    w.pos_embed = Tensor<T>({cfg.tokens(), D});
    w.blocks.resize(cfg.depth);
    for (auto& b : w.blocks) {
      b.norm1_g = Tensor<T>({D}, T{1});
      b.norm1_b = Tensor<T>({D});
      b.qkv_w = Tensor<T>({D, 3 * D});
      b.qkv_b = Tensor<T>({3 * D});
      b.proj_w = Tensor<T>({D, D});
      b.proj_b = Tensor<T>({D});
      b.norm2_g = Tensor<T>({D}, T{1});
      b.norm2_b = Tensor<T>({D});
      b.fc1_w = Tensor<T>({D, M});
      b.fc1_b = Tensor<T>({M});
      b.fc2_w = Tensor<T>({M, D});
      b.fc2_b = Tensor<T>({D});
    }
    w.norm_g = Tensor<T>({D}, T{1});
    w.norm_b = Tensor<T>({D});
    w.head_w = Tensor<T>({D, cfg.output_dim});
    w.head_b = Tensor<T>({cfg.output_dim});
    return w;
  }

  // Truncated normal (sigma 0.02) for weight matrices and embeddings, zero biases, unit gains.
  static EncoderWeights init(const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderWeights w = zeros(cfg);
    const SeededRng root(seed);
    std::uint64_t idx = 0;
    w.for_each([&](const std::string& name, Tensor<T>& t) {
      SeededRng rng = root.fork(idx++);
      const bool is_weight = name.ends_with(".weight") && name.find("norm") == std::string::npos;
      if (is_weight || name == "cls_token" || name == "pos_embed") init_trunc_normal(t, rng);
    });
    return w;
  }

  template <typename U>
  EncoderWeights<U> cast() const {
    EncoderWeights<U> out = EncoderWeights<U>::zeros(config);
    std::vector<const Tensor<T>*> src;
    for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
  }
};

// Token matrix after the pre-stage: CLS row first, then patch rows in raster order.
template <typename T>
struct ShallowFeatures {
  Tensor<T> tokens;  // [tokens x D]
};

template <typename T>
struct Embedding {
  Tensor<T> vector;  // [output_dim]
};

// Saved activations of one block, enough for its backward pass.
template <typename T>
struct BlockTape {
  Tensor<T> x_in, xn1, qkv, probs, attn_out, x_mid, xn2, hidden_pre, hidden_act;
  std::vector<LayerNormStats> st1, st2;
};

template <typename T>
struct EncoderTape {
  Tensor<T> patches;
  std::vector<BlockTape<T>> blocks;
  Tensor<T> cls_in;  // final CLS row before the output norm
  Tensor<T> cls_norm;
  LayerNormStats head_stats;
};

namespace detail {

template <typename T>
void require_image(const Tensor<T>& image, const EncoderConfig& c) {
  require_shape(image, {c.in_channels, c.input_size, c.input_size}, "encoder input image");
}

}  // namespace detail

// [num_patches x C*p*p]; patches in raster order, each flattened as (channel, row, col).
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const EncoderConfig& c) {
  detail::require_image(image, c);
  const std::size_t g = c.grid(), p = c.patch_size, S = c.input_size;
  Tensor<T> out({c.num_patches(), c.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      T* dst = out.data() + (gy * g + gx) * c.patch_dim();
      for (std::size_t ch = 0; ch < c.in_channels; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            *dst++ = image.data()[(ch * S + gy * p + py) * S + gx * p + px];
    }
  return out;
}

template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& patches, const EncoderWeights<T>& w) {
  const auto& c = w.config;
  const std::size_t D = c.embed_dim, Np = c.num_patches();
  Tensor<T> x({c.tokens(), D});
  kernels::gemm_nn(patches.data(), w.patch_w.data(), x.data() + D, Np, c.patch_dim(), D);
  for (std::size_t j = 0; j < D; ++j) x[j] = w.cls_token[j];
  for (std::size_t i = 1; i <= Np; ++i)
    for (std::size_t j = 0; j < D; ++j) x(i, j) += w.patch_b[j];
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += w.pos_embed[i];
  return x;
}

// x <- x + attn(norm1(x)); x <- x + mlp(norm2(x)). Records a tape when one is given.
template <typename T>
void block_forward(Tensor<T>& x, const BlockWeights<T>& b, const EncoderConfig& c, BlockTape<T>* tape = nullptr) {
  const std::size_t Tn = x.rows(), D = c.embed_dim, H = c.heads, dh = c.head_dim(), M = c.mlp_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  Tensor<T> xn1({Tn, D});
  std::vector<LayerNormStats> st1(Tn);
  for (std::size_t i = 0; i < Tn; ++i)
    st1[i] = layernorm_row(x.data() + i * D, b.norm1_g.data(), b.norm1_b.data(), xn1.data() + i * D, D);

  Tensor<T> qkv({Tn, 3 * D});
  kernels::gemm_nn(xn1.data(), b.qkv_w.data(), qkv.data(), Tn, D, 3 * D);
  kernels::add_bias_rows(qkv.data(), b.qkv_b.data(), Tn, 3 * D);

  Tensor<T> probs({H, Tn, Tn});
  Tensor<T> attn_out({Tn, D});
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < Tn; ++i) {
      T* pr = probs.data() + (h * Tn + i) * Tn;
      const T* qi = qkv.data() + i * 3 * D + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T* kj = qkv.data() + j * 3 * D + D + h * dh;
        T dot{0};
        for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
        pr[j] = dot * scale;
      }
      kernels::softmax_inplace(pr, Tn);
      T* oi = attn_out.data() + i * D + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T pij = pr[j];
        const T* vj = qkv.data() + j * 3 * D + 2 * D + h * dh;
        for (std::size_t d = 0; d < dh; ++d) oi[d] += pij * vj[d];
      }
    }
  }

  Tensor<T> y({Tn, D});
  kernels::gemm_nn(attn_out.data(), b.proj_w.data(), y.data(), Tn, D, D);
  kernels::add_bias_rows(y.data(), b.proj_b.data(), Tn, D);
  if (tape) tape->x_in = x;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];

  Tensor<T> xn2({Tn, D});
  std::vector<LayerNormStats> st2(Tn);
  for (std::size_t i = 0; i < Tn; ++i)
    st2[i] = layernorm_row(x.data() + i * D, b.norm2_g.data(), b.norm2_b.data(), xn2.data() + i * D, D);
  Tensor<T> hidden({Tn, M});
  kernels::gemm_nn(xn2.data(), b.fc1_w.data(), hidden.data(), Tn, D, M);
  kernels::add_bias_rows(hidden.data(), b.fc1_b.data(), Tn, M);
  Tensor<T> act({Tn, M});
  for (std::size_t i = 0; i < hidden.size(); ++i) act[i] = gelu(hidden[i]);
  Tensor<T> m({Tn, D});
  kernels::gemm_nn(act.data(), b.fc2_w.data(), m.data(), Tn, M, D);
  kernels::add_bias_rows(m.data(), b.fc2_b.data(), Tn, D);
  if (tape) {
    tape->xn1 = std::move(xn1);
    tape->qkv = std::move(qkv);
    tape->probs = std::move(probs);
    tape->attn_out = std::move(attn_out);
    tape->x_mid = x;
    tape->xn2 = std::move(xn2);
    tape->hidden_pre = std::move(hidden);
    tape->hidden_act = std::move(act);
    tape->st1 = std::move(st1);
    tape->st2 = std::move(st2);
  }
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += m[i];
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& x, const EncoderWeights<T>& w, EncoderTape<T>* tape = nullptr) {
  const std::size_t D = w.config.embed_dim, O = w.config.output_dim;
  Tensor<T> cn({D});
  const LayerNormStats st = layernorm_row(x.data(), w.norm_g.data(), w.norm_b.data(), cn.data(), D);
  Tensor<T> out({O});
  kernels::gemm_nn(cn.data(), w.head_w.data(), out.data(), 1, D, O);
  for (std::size_t j = 0; j < O; ++j) out[j] += w.head_b[j];
  if (tape) {
    tape->cls_in = Tensor<T>({D}, std::vector<T>(x.data(), x.data() + D));
    tape->cls_norm = std::move(cn);
    tape->head_stats = st;
  }
  return out;
}

// Patch embedding + blocks [0, split_after_block).
template <typename T>
ShallowFeatures<T> encode_pre(const Tensor<T>& image, const EncoderWeights<T>& w) {
  Tensor<T> x = embed_tokens(patchify(image, w.config), w);
  for (std::size_t l = 0; l < w.config.split_after_block; ++l) block_forward(x, w.blocks[l], w.config);
  return {std::move(x)};
}

// Blocks [split_after_block, depth) + final norm + head on the CLS token.
template <typename T>
Embedding<T> encode_post(const ShallowFeatures<T>& shallow, const EncoderWeights<T>& w) {
  require_shape(shallow.tokens, {w.config.tokens(), w.config.embed_dim}, "encode_post shallow tokens");
  Tensor<T> x = shallow.tokens;
  for (std::size_t l = w.config.split_after_block; l < w.config.depth; ++l) block_forward(x, w.blocks[l], w.config);
  Embedding<T> e{head_forward(x, w)};
  require_finite(e.vector, "encode_post");
  return e;
}

// Conventional single-pass encoder; same arithmetic as encode_post(encode_pre(x)).
template <typename T>
Embedding<T> full_encode(const Tensor<T>& image, const EncoderWeights<T>& w) {
  Tensor<T> x = embed_tokens(patchify(image, w.config), w);
  for (std::size_t l = 0; l < w.config.depth; ++l) block_forward(x, w.blocks[l], w.config);
  Embedding<T> e{head_forward(x, w)};
  require_finite(e.vector, "full_encode");
  return e;
}

// Full forward recording activations for encoder_backward.
template <typename T>
Tensor<T> encode_with_tape(const Tensor<T>& image, const EncoderWeights<T>& w, EncoderTape<T>& tape) {
  tape.patches = patchify(image, w.config);
  Tensor<T> x = embed_tokens(tape.patches, w);
  tape.blocks.assign(w.config.depth, {});
  for (std::size_t l = 0; l < w.config.depth; ++l) block_forward(x, w.blocks[l], w.config, &tape.blocks[l]);
  return head_forward(x, w, &tape);
}

// Backward of one block: dx holds d(block output) on entry and d(block input) on exit.
template <typename T>
void block_backward(Tensor<T>& dx, const BlockWeights<T>& b, const BlockTape<T>& tp, const EncoderConfig& c,
                    BlockWeights<T>& g) {
  const std::size_t Tn = dx.rows(), D = c.embed_dim, H = c.heads, dh = c.head_dim(), M = c.mlp_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  // MLP branch
  Tensor<T> d_act({Tn, M});
  kernels::gemm_nt(dx.data(), b.fc2_w.data(), d_act.data(), Tn, D, M);
  kernels::gemm_tn(tp.hidden_act.data(), dx.data(), g.fc2_w.data(), Tn, M, D);
  kernels::sum_rows_into(dx.data(), g.fc2_b.data(), Tn, D);
  for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= gelu_grad(tp.hidden_pre[i]);
  kernels::gemm_tn(tp.xn2.data(), d_act.data(), g.fc1_w.data(), Tn, D, M);
  kernels::sum_rows_into(d_act.data(), g.fc1_b.data(), Tn, M);
  Tensor<T> d_xn2({Tn, D});
  kernels::gemm_nt(d_act.data(), b.fc1_w.data(), d_xn2.data(), Tn, M, D);
  for (std::size_t i = 0; i < Tn; ++i)
    layernorm_row_backward(tp.x_mid.data() + i * D, b.norm2_g.data(), d_xn2.data() + i * D, tp.st2[i],
                           dx.data() + i * D, g.norm2_g.data(), g.norm2_b.data(), D, true);

  // Attention branch
  Tensor<T> d_o({Tn, D});
  kernels::gemm_nt(dx.data(), b.proj_w.data(), d_o.data(), Tn, D, D);
  kernels::gemm_tn(tp.attn_out.data(), dx.data(), g.proj_w.data(), Tn, D, D);
  kernels::sum_rows_into(dx.data(), g.proj_b.data(), Tn, D);

  Tensor<T> d_qkv({Tn, 3 * D});
  std::vector<T> dp(Tn), ds(Tn);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < Tn; ++i) {
      const T* pr = tp.probs.data() + (h * Tn + i) * Tn;
      const T* doi = d_o.data() + i * D + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T* vj = tp.qkv.data() + j * 3 * D + 2 * D + h * dh;
        T dot{0};
        for (std::size_t d = 0; d < dh; ++d) dot += doi[d] * vj[d];
        dp[j] = dot;
        T* dvj = d_qkv.data() + j * 3 * D + 2 * D + h * dh;
        for (std::size_t d = 0; d < dh; ++d) dvj[d] += pr[j] * doi[d];
      }
      kernels::softmax_backward_row(pr, dp.data(), ds.data(), Tn);
      const T* qi = tp.qkv.data() + i * 3 * D + h * dh;
      T* dqi = d_qkv.data() + i * 3 * D + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T s = ds[j] * scale;
        const T* kj = tp.qkv.data() + j * 3 * D + D + h * dh;
        T* dkj = d_qkv.data() + j * 3 * D + D + h * dh;
        for (std::size_t d = 0; d < dh; ++d) {
          dqi[d] += s * kj[d];
          dkj[d] += s * qi[d];
        }
      }
    }
  }
  kernels::gemm_tn(tp.xn1.data(), d_qkv.data(), g.qkv_w.data(), Tn, D, 3 * D);
  kernels::sum_rows_into(d_qkv.data(), g.qkv_b.data(), Tn, 3 * D);
  Tensor<T> d_xn1({Tn, D});
  kernels::gemm_nt(d_qkv.data(), b.qkv_w.data(), d_xn1.data(), Tn, 3 * D, D);
  for (std::size_t i = 0; i < Tn; ++i)
    layernorm_row_backward(tp.x_in.data() + i * D, b.norm1_g.data(), d_xn1.data() + i * D, tp.st1[i],
                           dx.data() + i * D, g.norm1_g.data(), g.norm1_b.data(), D, true);
}

// Accumulates d(loss)/d(weights) into grads given d(loss)/d(output).
template <typename T>
void encoder_backward(const EncoderTape<T>& tape, const EncoderWeights<T>& w, const Tensor<T>& d_out,
                      EncoderWeights<T>& grads) {
  const auto& c = w.config;
  const std::size_t D = c.embed_dim, O = c.output_dim, Np = c.num_patches();
  require_shape(d_out, {O}, "encoder_backward d_out");

  kernels::gemm_tn(tape.cls_norm.data(), d_out.data(), grads.head_w.data(), 1, D, O);
  for (std::size_t j = 0; j < O; ++j) grads.head_b[j] += d_out[j];
  Tensor<T> d_cn({D});
  kernels::gemm_nt(d_out.data(), w.head_w.data(), d_cn.data(), 1, O, D);

  Tensor<T> dx({c.tokens(), D});
  layernorm_row_backward(tape.cls_in.data(), w.norm_g.data(), d_cn.data(), tape.head_stats, dx.data(),
                         grads.norm_g.data(), grads.norm_b.data(), D, false);

  for (std::size_t l = c.depth; l-- > 0;) block_backward(dx, w.blocks[l], tape.blocks[l], c, grads.blocks[l]);

  for (std::size_t i = 0; i < dx.size(); ++i) grads.pos_embed[i] += dx[i];
  for (std::size_t j = 0; j < D; ++j) grads.cls_token[j] += dx[j];
  kernels::gemm_tn(tape.patches.data(), dx.data() + D, grads.patch_w.data(), Np, c.patch_dim(), D);
  kernels::sum_rows_into(dx.data() + D, grads.patch_b.data(), Np, D);
}

// H_concat = [CLS ; mean of patch tokens], length 2 * embed_dim.
template <typename T>
Tensor<T> concat_shallow(const ShallowFeatures<T>& shallow) {
  const Tensor<T>& t = shallow.tokens;
  if (t.rank() != 2 || t.rows() < 2) throw ShapeError("concat_shallow needs CLS plus at least one patch token");
  const std::size_t D = t.cols(), n = t.rows() - 1;
  Tensor<T> out({2 * D});
  for (std::size_t j = 0; j < D; ++j) out[j] = t(0, j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 0; j < D; ++j) out[D + j] += t(i, j);
  for (std::size_t j = 0; j < D; ++j) out[D + j] /= static_cast<T>(n);
  return out;
}

}  // namespace litepath
