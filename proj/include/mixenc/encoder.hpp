#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mixenc/config.hpp"
#include "mixenc/flops.hpp"
#include "mixenc/ops.hpp"
#include "mixenc/rng.hpp"
#include "mixenc/vocab.hpp"

namespace mixenc {

template <class T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// Name suffix drives initialization: ".w" ~ N(0, 0.02^2), ".b" zero,
// ".g" one (layer-norm scale).
template <class T>
void init_visited_params(const std::string& name, Tensor<T>& t, Philox& rng) {
  auto& vals = t.values_mut();
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0) {
    std::fill(vals.begin(), vals.end(), T(1));
  } else if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
    std::fill(vals.begin(), vals.end(), T(0));
  } else {
    for (auto& v : vals) v = static_cast<T>(rng.normal(0.0, 0.02));
  }
  t.zero_grad();
}

template <class T>
struct TransformerLayerParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> qkv_w, qkv_b;  // [d x 3d]
  Tensor<T> out_w, out_b;  // [d x d]
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> ff1_w, ff1_b;  // [d x inner]
  Tensor<T> ff2_w, ff2_b;  // [inner x d]

  static TransformerLayerParams make(int64_t d, int64_t inner) {
    TransformerLayerParams p;
    p.ln1_g = Tensor<T>::zeros({d}, true);
    p.ln1_b = Tensor<T>::zeros({d}, true);
    p.qkv_w = Tensor<T>::zeros({d, 3 * d}, true);
    p.qkv_b = Tensor<T>::zeros({3 * d}, true);
    p.out_w = Tensor<T>::zeros({d, d}, true);
    p.out_b = Tensor<T>::zeros({d}, true);
    p.ln2_g = Tensor<T>::zeros({d}, true);
    p.ln2_b = Tensor<T>::zeros({d}, true);
    p.ff1_w = Tensor<T>::zeros({d, inner}, true);
    p.ff1_b = Tensor<T>::zeros({inner}, true);
    p.ff2_w = Tensor<T>::zeros({inner, d}, true);
    p.ff2_b = Tensor<T>::zeros({d}, true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".ln1.g", ln1_g);
    fn(prefix + ".ln1.b", ln1_b);
    fn(prefix + ".qkv.w", qkv_w);
    fn(prefix + ".qkv.b", qkv_b);
    fn(prefix + ".att_out.w", out_w);
    fn(prefix + ".att_out.b", out_b);
    fn(prefix + ".ln2.g", ln2_g);
    fn(prefix + ".ln2.b", ln2_b);
    fn(prefix + ".ff1.w", ff1_w);
    fn(prefix + ".ff1.b", ff1_b);
    fn(prefix + ".ff2.w", ff2_w);
    fn(prefix + ".ff2.b", ff2_b);
  }
};

template <class T>
struct EncoderParams {
  int64_t dim = 0;
  int64_t max_len = 0;
  int heads = 0;
  Tensor<T> tok_w;  // [V x d]
  Tensor<T> pos_w;  // [max_len x d]
  std::vector<TransformerLayerParams<T>> layers;

  static EncoderParams make(const ModelConfig& cfg) {
    EncoderParams e;
    e.dim = cfg.dim;
    e.max_len = cfg.max_len;
    e.heads = cfg.heads;
    e.tok_w = Tensor<T>::zeros({cfg.vocab_size, cfg.dim}, true);
    e.pos_w = Tensor<T>::zeros({cfg.max_len, cfg.dim}, true);
    for (int64_t i = 0; i < cfg.layers; ++i)
      e.layers.push_back(TransformerLayerParams<T>::make(cfg.dim, cfg.ffn_inner()));
    return e;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".tok.w", tok_w);
    fn(prefix + ".pos.w", pos_w);
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  }
};

template <class T>
Tensor<T> mask_tensor(const std::vector<uint8_t>& mask, Shape shape) {
  std::vector<T> vals(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) vals[i] = mask[i] ? T(1) : T(0);
  return Tensor<T>::from_data(std::move(shape), std::move(vals));
}

// Token + positional embedding: [rows x cols x d]. PAD rows are embedded
// too; masking happens in attention.
template <class T>
Tensor<T> embed(const EncoderParams<T>& p, const PaddedBatch& batch) {
  if (batch.cols > p.max_len)
    throw EngineError("sequence length " + std::to_string(batch.cols) +
                      " exceeds positional table " + std::to_string(p.max_len));
  Tensor<T> tok = embedding_rows(p.tok_w, batch.ids);
  tok = reshape(tok, {batch.rows, batch.cols, p.dim});
  Tensor<T> pos = slice(p.pos_w, 0, 0, batch.cols);
  return add(tok, pos);
}

template <class T>
struct AttentionTaps {
  Tensor<T> k, v;  // key/value streams of the self-attention sublayer
};

// Pre-norm block: x + Att(LN(x)), then + FFN(LN(.)). Masked key positions
// are excluded from attention; their output rows are garbage and must be
// ignored downstream (padding invariance holds for unmasked rows).
template <class T>
Tensor<T> transformer_layer(const Tensor<T>& x, const Tensor<T>* mask,
                            const TransformerLayerParams<T>& lp, int heads,
                            AttentionTaps<T>* taps = nullptr) {
  const int64_t d = x.shape().back();
  Tensor<T> h = layer_norm(x, lp.ln1_g, lp.ln1_b);
  Tensor<T> qkv = linear(h, lp.qkv_w, lp.qkv_b);
  Tensor<T> q = slice(qkv, -1, 0, d);
  Tensor<T> k = slice(qkv, -1, d, d);
  Tensor<T> v = slice(qkv, -1, 2 * d, d);
  if (taps) {
    taps->k = k;
    taps->v = v;
  }
  Tensor<T> att = multihead_attention(q, k, v, heads, lp.out_w, lp.out_b, mask);
  Tensor<T> x1 = add(x, att);
  Tensor<T> x2 =
      add(x1, ffn(layer_norm(x1, lp.ln2_g, lp.ln2_b), lp.ff1_w, lp.ff1_b,
                  lp.ff2_w, lp.ff2_b));
  return x2;
}

// Full encoder stack over a padded batch; n_layers = -1 runs all layers.
template <class T>
Tensor<T> encode(const EncoderParams<T>& p, const PaddedBatch& batch,
                 int64_t n_layers = -1) {
  Tensor<T> x = embed(p, batch);
  Tensor<T> m = mask_tensor<T>(batch.mask, {batch.rows, batch.cols});
  const int64_t upto =
      n_layers < 0 ? static_cast<int64_t>(p.layers.size()) : n_layers;
  for (int64_t i = 0; i < upto; ++i)
    x = transformer_layer(x, &m, p.layers[static_cast<size_t>(i)], p.heads);
  return x;
}

// Masked mean over the token axis: [rows x cols x d] -> [rows x d].
template <class T>
Tensor<T> masked_mean_pool(const Tensor<T>& x, const Tensor<T>& mask) {
  Shape ms = mask.shape();
  ms.push_back(1);
  Tensor<T> m3 = reshape(mask, ms);
  Tensor<T> summed = reduce_sum(mul(x, m3), -2);          // [rows x d]
  Tensor<T> counts = reduce_sum(m3, -2);                  // [rows x 1]
  return div(summed, counts);
}

}  // namespace mixenc
