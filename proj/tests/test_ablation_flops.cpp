#include <vector>

#include "doctest.h"
#include "mixenc/cost.hpp"
#include "mixenc/train.hpp"
#include "test_util.hpp"

using namespace mixenc;

namespace {

Vocab mk_vocab() {
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("w" + std::to_string(i));
  return Vocab::build(words, 4);
}

ModelConfig mk_cfg(const Vocab& v) {
  ModelConfig cfg;
  cfg.vocab_size = v.size();
  cfg.dim = 16;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.max_len = 32;
  cfg.interaction_positions = {2};
  cfg.k = 2;
  return cfg;
}

}  // namespace

TEST_CASE("ablation flags validate their invariants") {
  AblationFlags f;
  f.use_context = false;
  f.context_only_score = true;
  CHECK_THROWS(f.validate());
  AblationFlags g;
  g.use_state = false;
  g.use_context = false;
  g.context_only_score = false;
  CHECK_THROWS(g.validate());
}

TEST_CASE("ablation switches alter only their designated pathway") {
  Vocab v = mk_vocab();
  ModelConfig cfg = mk_cfg(v);
  auto base = MixModel<float>::make(cfg);
  init_model(base, 41);

  std::vector<TokenSequence> cands = {candidate_sequence(v, "w1 w2 w3"),
                                      candidate_sequence(v, "w4 w5"),
                                      candidate_sequence(v, "w6 w7 w8")};
  auto q = query_sequence(v, "w9 w10 w11");
  auto reps = base.prepare(cands, v);

  auto run_with = [&](AblationFlags flags) {
    auto m = MixModel<float>::make(cfg);
    init_model(m, 41);  // identical parameters
    m.cfg.ablation = flags;
    NoGradGuard ng;
    const int64_t n = 3, k = cfg.k, d = cfg.dim;
    Tensor<float> e0 = reshape(reps.context, {1, n, k, d});
    Tensor<float> h0 = reshape(reps.state0, {1, n, d});
    auto st = m.run_query(pad_batch({q}), e0, h0);
    auto scores = m.scores_from(st, h0);
    return std::make_tuple(st.e.values(), st.h.values(), scores.values());
  };

  AblationFlags original;
  auto [e_orig, h_orig, s_orig] = run_with(original);

  // no state pathway: context block identical, scores differ
  AblationFlags no_state;
  no_state.use_state = false;
  auto [e_ns, h_ns, s_ns] = run_with(no_state);
  CHECK(e_ns == e_orig);  // bitwise
  CHECK(s_ns != s_orig);

  // no context in scoring: both pathways still computed identically
  AblationFlags no_ctx;
  no_ctx.use_context = false;
  auto [e_nc, h_nc, s_nc] = run_with(no_ctx);
  CHECK(e_nc == e_orig);
  CHECK(h_nc == h_orig);
  CHECK(s_nc != s_orig);

  // pooled-context-only scorer: pathways untouched, score changes
  AblationFlags ctx_only;
  ctx_only.context_only_score = true;
  auto [e_co, h_co, s_co] = run_with(ctx_only);
  CHECK(e_co == e_orig);
  CHECK(h_co == h_orig);
  CHECK(s_co == s_ns);  // same scorer as the no-state run
}

TEST_CASE("architecture reduction: frozen interaction collapses to dual scoring") {
  // k=1, one interaction layer, cross-attention off, context path residual
  // zeroed, gate forced to the new state, constant pooled probe: the state
  // rows become candidate-independent and the score is a plain dot product
  // between a query vector and the cached candidate vector.
  Vocab v = mk_vocab();
  ModelConfig cfg = mk_cfg(v);
  cfg.k = 1;
  cfg.cross_attention_enabled = false;
  cfg.gate_mode = 1;  // state = new state
  auto m = MixModel<float>::make(cfg);
  init_model(m, 43);
  // zero the context path's residual writers
  for (Tensor<float>* t : {&m.inter[0].e_out_w, &m.inter[0].e_out_b,
                           &m.inter[0].e_ff2_w, &m.inter[0].e_ff2_b})
    std::fill(t->values_mut().begin(), t->values_mut().end(), 0.0f);
  // constant pooled probe: weight zero keeps only the bias
  std::fill(m.inter[0].pool_w.values_mut().begin(),
            m.inter[0].pool_w.values_mut().end(), 0.0f);

  std::vector<TokenSequence> cands = {candidate_sequence(v, "w1 w2"),
                                      candidate_sequence(v, "w3 w4 w5"),
                                      candidate_sequence(v, "w6")};
  auto reps = m.prepare(cands, v);
  auto q = query_sequence(v, "w7 w8 w9");

  NoGradGuard ng;
  Tensor<float> e0 = reshape(reps.context, {1, 3, 1, cfg.dim});
  Tensor<float> h0 = reshape(reps.state0, {1, 3, cfg.dim});
  auto st = m.run_query(pad_batch({q}), e0, h0);

  // context embeddings unchanged: e_final == e0
  for (int64_t i = 0; i < e0.numel(); ++i)
    CHECK(st.e.values()[i] == doctest::Approx(e0.values()[i]).epsilon(1e-6));

  // state rows identical across candidates (candidate-independent)
  for (int64_t c = 1; c < 3; ++c)
    for (int64_t j = 0; j < cfg.dim; ++j)
      CHECK(st.h.values()[c * cfg.dim + j] ==
            doctest::Approx(st.h.values()[j]).epsilon(1e-6));

  // score equals the dual form: shared query vector . cached candidate rep
  auto scores = m.scores_from(st, h0);
  for (int64_t c = 0; c < 3; ++c) {
    double dot = 0;
    for (int64_t j = 0; j < cfg.dim; ++j)
      dot += static_cast<double>(st.h.values()[j]) *
             reps.context.values()[c * cfg.dim + j];
    CHECK(testutil::rel_err(scores.values()[c], dot) < 1e-5);
  }
}

TEST_CASE("cost model: published expressions evaluated exactly") {
  // dual online at h=64, q=8: 64*64 + 4096*8
  auto dual = cost_eval(CostKind::Dual, {64, 8, 8, 1, 1});
  CHECK(dual.online == 64u * 64 + 4096u * 8);
  CHECK(dual.precompute == 64u * 64 + 4096u * 8);

  // cross online at h=64, q=8, d=8, N=10: 10*(64*256 + 4096*16) = 819200
  auto cross = cost_eval(CostKind::Cross, {64, 8, 8, 1, 10});
  CHECK(cross.online == 819200u);
  CHECK(cross.precompute == 0u);

  // mix online degenerates to dual online at N=0
  auto mix0 = cost_eval(CostKind::Mix, {64, 8, 8, 2, 0});
  CHECK(mix0.online == dual.online);

  // algebraic identity: expanded form equals hq^2 + h^2 q + N(k+q+h)hk
  Philox rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const uint64_t h = 1 + rng.next_below(512);
    const uint64_t q = 1 + rng.next_below(64);
    const uint64_t d = 1 + rng.next_below(64);
    const uint64_t k = 1 + rng.next_below(8);
    const uint64_t n = rng.next_below(2000);
    auto mix = cost_eval(CostKind::Mix, {h, q, d, k, n});
    const uint64_t factored = h * q * q + h * h * q + n * (k + q + h) * h * k;
    CHECK(mix.online == factored);
  }

  // linear in N with slope (k+q+h)hk
  auto at = [](uint64_t n) {
    return cost_eval(CostKind::Mix, {64, 32, 32, 1, n}).online;
  };
  const uint64_t slope = at(11) - at(10);
  CHECK(slope == (1u + 32 + 64) * 64 * 1);
  CHECK(at(21) - at(20) == slope);

  CHECK_THROWS(cost_eval(CostKind::Mix, {0, 8, 8, 1, 1}));
  CHECK_THROWS(cost_kind_from_string("bogus"));
}

TEST_CASE("flop instrumentation: query-encoding count is N-invariant") {
  Vocab v = mk_vocab();
  ModelConfig cfg = mk_cfg(v);
  cfg.k = 1;
  auto m = MixModel<float>::make(cfg);
  init_model(m, 47);
  auto q = query_sequence(v, "w1 w2 w3 w4");

  auto run_flops = [&](int64_t n_cands) {
    std::vector<TokenSequence> cands;
    for (int64_t i = 0; i < n_cands; ++i)
      cands.push_back(candidate_sequence(
          v, "w" + std::to_string(i % 20) + " w" + std::to_string((i + 3) % 20)));
    auto reps = m.prepare(cands, v);
    flops_enable(true);
    flops_reset();
    (void)m.score_prepared(q, reps);
    auto qe = flops_in(FlopScope::QueryEncoding);
    auto ci = flops_in(FlopScope::CandidateInteraction);
    flops_enable(false);
    return std::make_pair(qe, ci);
  };

  auto [qe1, ci1] = run_flops(1);
  auto [qe4, ci4] = run_flops(4);
  auto [qe16, ci16] = run_flops(16);
  CHECK(qe1 == qe4);
  CHECK(qe4 == qe16);  // query encoding cost independent of candidate count
  CHECK(ci4 > ci1);
  CHECK(ci16 > ci4);
  // candidate-interaction flops are exactly linear in N
  CHECK(ci16 - ci4 == 4 * (ci4 - ci1));
}

TEST_CASE("flop instrumentation: cross total is exactly linear in N") {
  Vocab v = mk_vocab();
  ModelConfig cfg = mk_cfg(v);
  auto m = CrossModel<float>::make(cfg);
  init_model(m, 53);

  auto total_for = [&](int64_t n) {
    std::vector<std::string> cands;
    for (int64_t i = 0; i < n; ++i) cands.push_back("w1 w2 w3");  // equal length
    flops_enable(true);
    flops_reset();
    (void)m.score_query_texts("w5 w6 w7 w8", cands, v);
    const uint64_t total = flops_total();
    flops_enable(false);
    return total;
  };
  const uint64_t t1 = total_for(1);
  CHECK(total_for(10) == 10 * t1);
  CHECK(total_for(25) == 25 * t1);
}
