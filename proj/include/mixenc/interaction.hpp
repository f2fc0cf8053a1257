#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixenc/encoder.hpp"

namespace mixenc {

// Which encoder positions run as interaction layers (1-based, ascending).
struct LayerSchedule {
  int64_t num_layers = 0;
  std::vector<int64_t> positions;

  void validate() const {
    if (positions.empty())
      throw EngineError("schedule needs at least one interaction layer");
    int64_t prev = 0;
    for (int64_t p : positions) {
      if (p < 1 || p > num_layers)
        throw EngineError("interaction position " + std::to_string(p) +
                          " outside [1, " + std::to_string(num_layers) + "]");
      if (p <= prev) throw EngineError("interaction positions must ascend");
      prev = p;
    }
  }

  bool is_interaction(int64_t pos) const {
    for (int64_t p : positions)
      if (p == pos) return true;
    return false;
  }
};

// Named presets: "a" swaps the last layer (k=1), "b" the last three (k=1),
// "c" the last three with k=2.
inline std::pair<LayerSchedule, int64_t> variant_preset(const std::string& name,
                                                        int64_t num_layers) {
  LayerSchedule s;
  s.num_layers = num_layers;
  int64_t k = 1;
  if (name == "a") {
    if (num_layers < 1) throw EngineError("variant a needs >= 1 layer");
    s.positions = {num_layers};
  } else if (name == "b" || name == "c") {
    if (num_layers < 3)
      throw EngineError("variant " + name + " needs >= 3 layers");
    s.positions = {num_layers - 2, num_layers - 1, num_layers};
    if (name == "c") k = 2;
  } else {
    throw EngineError("unknown variant '" + name + "' (expected a, b or c)");
  }
  s.validate();
  return {s, k};
}

// Update-gate fusion: z = sigmoid([h_new; h_prev] Wz + bz),
// out = z*h_new + (1-z)*h_prev. Modes 1/2 force z to 1/0.
template <class T>
Tensor<T> gate_fuse(const Tensor<T>& h_new, const Tensor<T>& h_prev,
                    const Tensor<T>& w, const Tensor<T>& b, int mode = 0) {
  if (h_new.shape() != h_prev.shape())
    throw EngineError("gate: state shapes differ: " + shape_str(h_new.shape()) +
                      " vs " + shape_str(h_prev.shape()));
  if (mode == 1) return h_new;
  if (mode == 2) return h_prev;
  Tensor<T> z = sigmoid(linear(concat({h_new, h_prev}, -1), w, b));
  Tensor<T> one = Tensor<T>::full(z.shape(), T(1));
  return add(mul(z, h_new), mul(sub(one, z), h_prev));
}

template <class T>
struct InteractionLayerParams {
  // Query path: a full pre-norm transformer block of its own.
  TransformerLayerParams<T> query;
  // Candidate path: projections, cross-attention output, feed-forward.
  Tensor<T> e_ln1_g, e_ln1_b;
  Tensor<T> e_qkv_w, e_qkv_b;
  Tensor<T> e_out_w, e_out_b;
  Tensor<T> e_ln2_g, e_ln2_b;
  Tensor<T> e_ff1_w, e_ff1_b;
  Tensor<T> e_ff2_w, e_ff2_b;
  // State path: pooled-context probe, attention over query keys, FFN, gate.
  Tensor<T> pool_w, pool_b;  // [d x d], [d]
  Tensor<T> s_out_w, s_out_b;
  Tensor<T> s_ln_g, s_ln_b;
  Tensor<T> s_ff1_w, s_ff1_b;
  Tensor<T> s_ff2_w, s_ff2_b;
  Tensor<T> gate_w, gate_b;  // [2d x d], [d]

  static InteractionLayerParams make(int64_t d, int64_t inner) {
    InteractionLayerParams p;
    p.query = TransformerLayerParams<T>::make(d, inner);
    p.e_ln1_g = Tensor<T>::zeros({d}, true);
    p.e_ln1_b = Tensor<T>::zeros({d}, true);
    p.e_qkv_w = Tensor<T>::zeros({d, 3 * d}, true);
    p.e_qkv_b = Tensor<T>::zeros({3 * d}, true);
    p.e_out_w = Tensor<T>::zeros({d, d}, true);
    p.e_out_b = Tensor<T>::zeros({d}, true);
    p.e_ln2_g = Tensor<T>::zeros({d}, true);
    p.e_ln2_b = Tensor<T>::zeros({d}, true);
    p.e_ff1_w = Tensor<T>::zeros({d, inner}, true);
    p.e_ff1_b = Tensor<T>::zeros({inner}, true);
    p.e_ff2_w = Tensor<T>::zeros({inner, d}, true);
    p.e_ff2_b = Tensor<T>::zeros({d}, true);
    p.pool_w = Tensor<T>::zeros({d, d}, true);
    p.pool_b = Tensor<T>::zeros({d}, true);
    p.s_out_w = Tensor<T>::zeros({d, d}, true);
    p.s_out_b = Tensor<T>::zeros({d}, true);
    p.s_ln_g = Tensor<T>::zeros({d}, true);
    p.s_ln_b = Tensor<T>::zeros({d}, true);
    p.s_ff1_w = Tensor<T>::zeros({d, inner}, true);
    p.s_ff1_b = Tensor<T>::zeros({inner}, true);
    p.s_ff2_w = Tensor<T>::zeros({inner, d}, true);
    p.s_ff2_b = Tensor<T>::zeros({d}, true);
    p.gate_w = Tensor<T>::zeros({2 * d, d}, true);
    p.gate_b = Tensor<T>::zeros({d}, true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    query.visit(prefix + ".query", fn);
    fn(prefix + ".ctx_ln1.g", e_ln1_g);
    fn(prefix + ".ctx_ln1.b", e_ln1_b);
    fn(prefix + ".ctx_qkv.w", e_qkv_w);
    fn(prefix + ".ctx_qkv.b", e_qkv_b);
    fn(prefix + ".ctx_out.w", e_out_w);
    fn(prefix + ".ctx_out.b", e_out_b);
    fn(prefix + ".ctx_ln2.g", e_ln2_g);
    fn(prefix + ".ctx_ln2.b", e_ln2_b);
    fn(prefix + ".ctx_ff1.w", e_ff1_w);
    fn(prefix + ".ctx_ff1.b", e_ff1_b);
    fn(prefix + ".ctx_ff2.w", e_ff2_w);
    fn(prefix + ".ctx_ff2.b", e_ff2_b);
    fn(prefix + ".pool.w", pool_w);
    fn(prefix + ".pool.b", pool_b);
    fn(prefix + ".state_out.w", s_out_w);
    fn(prefix + ".state_out.b", s_out_b);
    fn(prefix + ".state_ln.g", s_ln_g);
    fn(prefix + ".state_ln.b", s_ln_b);
    fn(prefix + ".state_ff1.w", s_ff1_w);
    fn(prefix + ".state_ff1.b", s_ff1_b);
    fn(prefix + ".state_ff2.w", s_ff2_w);
    fn(prefix + ".state_ff2.b", s_ff2_b);
    fn(prefix + ".gate.w", gate_w);
    fn(prefix + ".gate.b", gate_b);
  }
};

struct InteractionOptions {
  bool cross_attention_enabled = true;
  bool update_state = true;  // when false the state rides through unchanged
  int gate_mode = 0;
};

// The flowing triple: query token states q [* x m x d], candidate context
// embeddings e [* x N x k x d], per-candidate query states h [* x N x d].
template <class T>
struct InteractionState {
  Tensor<T> q, e, h;
};

// One interaction layer. The query path is a standard self-attention block
// that never reads e or h; its key/value streams are shared with the
// candidate cross-attention and the state probe. Per-candidate work is
// independent across the N axis.
template <class T>
InteractionState<T> interaction_layer(const InteractionState<T>& in,
                                      const InteractionLayerParams<T>& p,
                                      const Tensor<T>* query_mask, int heads,
                                      const InteractionOptions& opt = {}) {
  const int64_t nd_e = in.e.dim();
  if (nd_e < 3) throw EngineError("interaction: context block must be [N,k,d]");
  const int64_t n = in.e.shape()[nd_e - 3];
  const int64_t k = in.e.shape()[nd_e - 2];
  const int64_t d = in.e.shape()[nd_e - 1];
  if (n < 1) throw EngineError("interaction: no candidates");
  if (in.q.shape().back() != d)
    throw EngineError("interaction: query/context dims differ");
  const int64_t m = in.q.shape()[in.q.dim() - 2];
  const Shape lead(in.e.shape().begin(), in.e.shape().end() - 3);

  InteractionState<T> out;

  // Query self-attention path.
  AttentionTaps<T> taps;
  {
    FlopScopeGuard scope(FlopScope::QueryEncoding);
    out.q = transformer_layer(in.q, query_mask, p.query, heads, &taps);
  }

  FlopScopeGuard scope(FlopScope::CandidateInteraction);

  // Candidate path: each candidate's context attends over its own
  // projected keys plus the query's keys from the path above.
  Tensor<T> en = layer_norm(in.e, p.e_ln1_g, p.e_ln1_b);
  Tensor<T> eqkv = linear(en, p.e_qkv_w, p.e_qkv_b);
  Tensor<T> eq = slice(eqkv, -1, 0, d);
  Tensor<T> ek = slice(eqkv, -1, d, d);
  Tensor<T> ev = slice(eqkv, -1, 2 * d, d);
  Tensor<T> e_att;
  if (opt.cross_attention_enabled) {
    // Attention over the concatenation [own keys; query keys], computed as
    // two score blocks so the query streams are never tiled across N. The
    // head axis is moved in front of the candidate axis: slices then share
    // the query-side operand per head and fold into one gemm per head.
    const int64_t dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto heads_major = [&](const Tensor<T>& t) {
      // [* x N x h x k x dh] -> [* x h x N x k x dh]
      std::vector<int> axes(t.dim());
      for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
      std::swap(axes[axes.size() - 4], axes[axes.size() - 3]);
      return permute(t, axes);
    };
    Tensor<T> eqh = heads_major(split_heads(eq, heads));
    Tensor<T> ekh = heads_major(split_heads(ek, heads));
    Tensor<T> evh = heads_major(split_heads(ev, heads));
    Tensor<T> kqh = split_heads(taps.k, heads);  // [* x h x m x dh]
    Tensor<T> vqh = split_heads(taps.v, heads);
    Shape kq_shape = kqh.shape();
    kq_shape.insert(kq_shape.end() - 2, 1);  // [* x h x 1 x m x dh]
    Tensor<T> kqb = reshape(kqh, kq_shape);
    Tensor<T> vqb = reshape(vqh, kq_shape);

    Tensor<T> own_scores = scale(matmul_nt(eqh, ekh), inv_sqrt);
    Tensor<T> query_scores = scale(matmul_nt(eqh, kqb), inv_sqrt);
    Tensor<T> scores = concat({own_scores, query_scores}, -1);

    // Mask: own positions always visible, query positions as masked. The
    // mask has no candidate axis; it broadcasts over heads, N and k.
    Shape mask_lead = lead;
    mask_lead.push_back(k);
    Tensor<T> own_mask = Tensor<T>::full(mask_lead, T(1));
    Shape qm_shape = lead;
    qm_shape.push_back(m);
    Tensor<T> qm = query_mask ? reshape(*query_mask, qm_shape)
                              : Tensor<T>::full(qm_shape, T(1));
    Tensor<T> kmask = concat({own_mask, qm}, -1);  // [* x (k+m)]
    Shape kmask_shape = lead;
    kmask_shape.insert(kmask_shape.end(), {1, 1, 1, k + m});
    kmask = reshape(kmask, kmask_shape);

    Tensor<T> weights = softmax_lastdim(scores, &kmask);
    Tensor<T> w_own = slice(weights, -1, 0, k);
    Tensor<T> w_query = slice(weights, -1, k, m);
    Tensor<T> ctx = add(matmul(w_own, evh), matmul(w_query, vqb));
    // [* x h x N x k x dh] -> [* x N x k x h*dh]
    std::vector<int> axes(ctx.dim());
    const size_t v = axes.size();
    for (size_t i = 0; i < v; ++i) axes[i] = static_cast<int>(i);
    axes[v - 4] = static_cast<int>(v - 3);
    axes[v - 3] = static_cast<int>(v - 2);
    axes[v - 2] = static_cast<int>(v - 4);
    Tensor<T> merged = permute(ctx, axes);
    Shape out_sh = merged.shape();
    out_sh.pop_back();
    out_sh.back() = d;
    e_att = linear(reshape(merged, out_sh), p.e_out_w, p.e_out_b);
  } else {
    e_att = multihead_attention(eq, ek, ev, heads, p.e_out_w, p.e_out_b);
  }
  Tensor<T> e_mid = add(in.e, e_att);
  out.e = add(e_mid, ffn(layer_norm(e_mid, p.e_ln2_g, p.e_ln2_b), p.e_ff1_w,
                         p.e_ff1_b, p.e_ff2_w, p.e_ff2_b));

  // State path: pooled context probes the query key/value stream, and the
  // result is fused with the previous state through the update gate.
  if (opt.update_state) {
    Tensor<T> pooled = reduce_mean(in.e, -2);  // [* x N x d]
    Tensor<T> qstar = linear(pooled, p.pool_w, p.pool_b);
    Tensor<T> s_att = multihead_attention(qstar, taps.k, taps.v, heads,
                                          p.s_out_w, p.s_out_b, query_mask);
    Tensor<T> h_new =
        add(s_att, ffn(layer_norm(s_att, p.s_ln_g, p.s_ln_b), p.s_ff1_w,
                       p.s_ff1_b, p.s_ff2_w, p.s_ff2_b));
    out.h = gate_fuse(h_new, in.h, p.gate_w, p.gate_b, opt.gate_mode);
  } else {
    out.h = in.h;
  }
  return out;
}

// Runs the scheduled stack over an embedded query: plain transformer layers
// touch only q, interaction layers update the whole (q, e, h) triple.
template <class T>
InteractionState<T> run_interaction_schedule(
    const EncoderParams<T>& enc,
    const std::vector<InteractionLayerParams<T>>& inter,
    const LayerSchedule& sched, const Tensor<T>& q_emb,
    const Tensor<T>* query_mask, const Tensor<T>& e0, const Tensor<T>& h0,
    const InteractionOptions& opt = {}) {
  sched.validate();
  if (sched.num_layers != static_cast<int64_t>(enc.layers.size()))
    throw EngineError("schedule layer count does not match encoder");
  if (sched.positions.size() != inter.size())
    throw EngineError("schedule has " + std::to_string(sched.positions.size()) +
                      " interaction positions but " +
                      std::to_string(inter.size()) + " parameter sets");
  if (e0.shape().back() != enc.dim || h0.shape().back() != enc.dim)
    throw EngineError("cached candidate dims do not match model dims");

  InteractionState<T> st;
  st.q = q_emb;
  st.e = e0;
  st.h = h0;
  size_t j = 0;
  for (int64_t pos = 1; pos <= sched.num_layers; ++pos) {
    if (sched.is_interaction(pos)) {
      st = interaction_layer(st, inter[j], query_mask, enc.heads, opt);
      ++j;
    } else {
      FlopScopeGuard scope(FlopScope::QueryEncoding);
      st.q = transformer_layer(st.q, query_mask,
                               enc.layers[static_cast<size_t>(pos - 1)],
                               enc.heads);
    }
  }
  return st;
}

}  // namespace mixenc
