#pragma once

#include <vector>

#include "mixenc/ops.hpp"

namespace mixenc {

// Rowwise dot product of matching rows: [* x N x d] . [* x N x d] -> [* x N].
template <class T>
Tensor<T> rowwise_dot(const Tensor<T>& a, const Tensor<T>& b) {
  return reduce_sum(mul(a, b), -1);
}

// Relevance from context embeddings alone: mean over the k axis, then a
// linear map to one logit per candidate. e [* x N x k x d] -> [* x N].
template <class T>
Tensor<T> pooled_context_score(const Tensor<T>& e, const Tensor<T>& w,
                               const Tensor<T>& b) {
  Tensor<T> pooled = reduce_mean(e, -2);     // [* x N x d]
  Tensor<T> s = linear(pooled, w, b);        // [* x N x 1]
  Shape out = s.shape();
  out.pop_back();
  return reshape(s, out);
}

// Pair-classification head: logits = [h; e; |h-e|] W + b over the last axis.
template <class T>
Tensor<T> classify_logits(const Tensor<T>& h, const Tensor<T>& e,
                          const Tensor<T>& w, const Tensor<T>& b) {
  if (h.shape() != e.shape())
    throw EngineError("classify: state/context vectors differ in shape");
  Tensor<T> diff = abs_(sub(h, e));
  return linear(concat({h, e, diff}, -1), w, b);
}

// Numerically stabilized log-sum-exp over the last axis, keepdim.
template <class T>
Tensor<T> logsumexp_lastdim(const Tensor<T>& x) {
  Tensor<T> mx;
  {
    NoGradGuard ng;  // the shift is a constant; gradients are unaffected
    mx = reduce_max(x, -1, true);
  }
  Tensor<T> shifted = sub(x, mx);
  return add(log_(reduce_sum(exp_(shifted), -1, true)), mx);
}

// Mean cross-entropy of scores[i, :] against target i: every other query's
// positive in the batch acts as a negative.
template <class T>
Tensor<T> in_batch_ce_loss(const Tensor<T>& scores) {
  if (scores.dim() != 2 || scores.shape()[0] != scores.shape()[1])
    throw EngineError("in-batch loss expects a square score matrix");
  const int64_t b = scores.shape()[0];
  if (b < 2) throw EngineError("in-batch loss needs batch size >= 2");
  Tensor<T> lse = logsumexp_lastdim(scores);  // [B x 1]
  std::vector<T> eye(b * b, T(0));
  for (int64_t i = 0; i < b; ++i) eye[i * b + i] = T(1);
  Tensor<T> diag = reduce_sum(mul(scores, Tensor<T>::from_data({b, b}, eye)),
                              -1, true);      // [B x 1]
  return scale(reduce_sum_all(sub(lse, diag)), T(1) / static_cast<T>(b));
}

// Mean cross-entropy of logits [B x C] against integer labels.
template <class T>
Tensor<T> softmax_ce_loss(const Tensor<T>& logits,
                          const std::vector<int>& labels) {
  const int64_t b = logits.shape()[0];
  const int64_t c = logits.shape()[1];
  if (static_cast<int64_t>(labels.size()) != b)
    throw EngineError("label count does not match batch");
  std::vector<T> hot(b * c, T(0));
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c) throw EngineError("label out of range");
    hot[i * c + y] = T(1);
  }
  Tensor<T> lse = logsumexp_lastdim(logits);
  Tensor<T> picked = reduce_sum(
      mul(logits, Tensor<T>::from_data({b, c}, std::move(hot))), -1, true);
  return scale(reduce_sum_all(sub(lse, picked)), T(1) / static_cast<T>(b));
}

// Sum over query tokens of the max cosine similarity to any candidate
// token. qtok [* x m x d], ctok [* x t x d] -> [*]; masks are {0,1} over
// the token axes.
template <class T>
Tensor<T> maxsim_scores(const Tensor<T>& qtok, const Tensor<T>& ctok,
                        const Tensor<T>* qmask, const Tensor<T>* cmask) {
  auto normalize = [](const Tensor<T>& x) {
    Tensor<T> n2 = reduce_sum(mul(x, x), -1, true);
    Tensor<T> eps = Tensor<T>::full(n2.shape(), T(1e-12));
    return div(x, sqrt_(add(n2, eps)));
  };
  Tensor<T> qn = normalize(qtok);
  Tensor<T> cn = normalize(ctok);
  Tensor<T> sim = matmul_nt(qn, cn);  // [* x m x t]
  if (cmask) {
    Shape ms = cmask->shape();
    ms.insert(ms.end() - 1, 1);  // [* x 1 x t]
    Tensor<T> cm = reshape(*cmask, ms);
    Tensor<T> one = Tensor<T>::full(cm.shape(), T(1));
    // masked candidate tokens sink to a large negative similarity
    sim = add(mul(sim, cm), scale(sub(cm, one), T(1e4)));
  }
  Tensor<T> best = reduce_max(sim, -1);  // [* x m]
  if (qmask) best = mul(best, *qmask);
  return reduce_sum(best, -1);  // [*]
}

// Candidate vector attends over the query's context vectors with raw dot
// products; the score is the dot with the attended mixture.
// ctx [* x c x d], cand [* x N x d] -> [* x N].
template <class T>
Tensor<T> poly_attention_scores(const Tensor<T>& ctx, const Tensor<T>& cand) {
  Tensor<T> logits = matmul_nt(cand, ctx);        // [* x N x c]
  Tensor<T> w = softmax_lastdim(logits);
  Tensor<T> attended = matmul(w, ctx);            // [* x N x d]
  return rowwise_dot(attended, cand);             // [* x N]
}

}  // namespace mixenc
