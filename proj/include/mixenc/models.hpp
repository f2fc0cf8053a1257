#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mixenc/cache.hpp"
#include "mixenc/corpus.hpp"
#include "mixenc/heads.hpp"
#include "mixenc/interaction.hpp"
#include "mixenc/metrics.hpp"

namespace mixenc {

enum class ModelKind { MixA, MixB, MixC, Dual, Cross, Poly, MaxSim };

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mix-a") return ModelKind::MixA;
  if (s == "mix-b") return ModelKind::MixB;
  if (s == "mix-c") return ModelKind::MixC;
  if (s == "dual") return ModelKind::Dual;
  if (s == "cross") return ModelKind::Cross;
  if (s == "poly") return ModelKind::Poly;
  if (s == "maxsim") return ModelKind::MaxSim;
  throw std::runtime_error("unknown model '" + s +
                           "' (expected mix-a, mix-b, mix-c, dual, cross, "
                           "poly or maxsim)");
}

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::MixA: return "mix-a";
    case ModelKind::MixB: return "mix-b";
    case ModelKind::MixC: return "mix-c";
    case ModelKind::Dual: return "dual";
    case ModelKind::Cross: return "cross";
    case ModelKind::Poly: return "poly";
    default: return "maxsim";
  }
}

inline bool is_mix(ModelKind k) {
  return k == ModelKind::MixA || k == ModelKind::MixB || k == ModelKind::MixC;
}

// ---------------------------------------------------------------------------
// Tokenization policy
// ---------------------------------------------------------------------------

inline TokenSequence query_sequence(const Vocab& v, const std::string& text) {
  std::vector<int64_t> ids = v.encode_text(text);
  if (ids.empty()) ids.push_back(kClsId);
  return make_sequence(std::move(ids));
}

inline TokenSequence candidate_sequence(const Vocab& v, const std::string& text) {
  return make_sequence(v.encode_text(text));
}

inline TokenSequence joint_sequence(const Vocab& v, const std::string& query,
                                    const std::string& cand) {
  std::vector<int64_t> ids = {kClsId};
  for (int64_t id : v.encode_text(query)) ids.push_back(id);
  ids.push_back(kSepId);
  for (int64_t id : v.encode_text(cand)) ids.push_back(id);
  ids.push_back(kSepId);
  return make_sequence(std::move(ids));
}

template <class M>
void init_model(M& model, uint64_t seed) {
  Philox rng(seed, 0x1417);
  model.visit([&rng](const std::string& name, auto& t) {
    init_visited_params(name, t, rng);
  });
}

// ---------------------------------------------------------------------------
// Interaction model (query encoded once; candidates scored in parallel)
// ---------------------------------------------------------------------------

template <class T>
struct MixModel {
  ModelConfig cfg;
  LayerSchedule sched;
  EncoderParams<T> enc;
  std::vector<InteractionLayerParams<T>> inter;
  ContextCodeParams<T> codes;              // only used for strategy C
  Tensor<T> score_w, score_b;              // pooled-context scorer
  Tensor<T> state_score_w, state_score_b;  // no-context scorer projection
  Tensor<T> cls_w, cls_b;

  using Prepared = CandidateReps<T>;

  static MixModel make(const ModelConfig& cfg_in) {
    ModelConfig cfg = cfg_in;
    cfg.validate_interaction();
    MixModel m;
    m.cfg = cfg;
    m.sched.num_layers = cfg.layers;
    m.sched.positions = cfg.interaction_positions;
    m.sched.validate();
    m.enc = EncoderParams<T>::make(cfg);
    for (size_t i = 0; i < cfg.interaction_positions.size(); ++i)
      m.inter.push_back(
          InteractionLayerParams<T>::make(cfg.dim, cfg.ffn_inner()));
    m.codes = ContextCodeParams<T>::make(cfg.k, cfg.dim);
    m.score_w = Tensor<T>::zeros({cfg.dim, 1}, true);
    m.score_b = Tensor<T>::zeros({1}, true);
    m.state_score_w = Tensor<T>::zeros({cfg.dim, cfg.dim}, true);
    m.state_score_b = Tensor<T>::zeros({cfg.dim}, true);
    m.cls_w = Tensor<T>::zeros({3 * cfg.dim, cfg.num_classes}, true);
    m.cls_b = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
  }

  void visit(const ParamVisitor<T>& fn) {
    enc.visit("enc", fn);
    for (size_t i = 0; i < inter.size(); ++i)
      inter[i].visit("inter" + std::to_string(i), fn);
    codes.visit("ctxcodes", fn);
    fn("score.w", score_w);
    fn("score.b", score_b);
    fn("state_score.w", state_score_w);
    fn("state_score.b", state_score_b);
    fn("cls.w", cls_w);
    fn("cls.b", cls_b);
  }

  InteractionOptions options() const {
    InteractionOptions o;
    o.cross_attention_enabled = cfg.cross_attention_enabled;
    o.update_state = cfg.ablation.use_state;
    o.gate_mode = cfg.gate_mode;
    return o;
  }

  // Offline/inline candidate representation (grad-aware when recording).
  Prepared compute_candidates(const std::vector<TokenSequence>& cands,
                              const Vocab& vocab) const {
    FlopScopeGuard scope(FlopScope::Precompute);
    if (cfg.strategy == 'S')
      return precompute_marker_tokens(enc, cands, cfg.k, vocab);
    return precompute_context_codes(enc, codes, cands);
  }

  Prepared prepare(const std::vector<TokenSequence>& cands,
                   const Vocab& vocab) const {
    NoGradGuard ng;
    return compute_candidates(cands, vocab);
  }

  InteractionState<T> run_query(const PaddedBatch& queries, const Tensor<T>& e0,
                                const Tensor<T>& h0) const {
    Tensor<T> q_emb, qmask;
    {
      FlopScopeGuard scope(FlopScope::QueryEncoding);
      q_emb = embed(enc, queries);
      qmask = mask_tensor<T>(queries.mask, {queries.rows, queries.cols});
    }
    return run_interaction_schedule(enc, inter, sched, q_emb, &qmask, e0, h0,
                                    options());
  }

  Tensor<T> scores_from(const InteractionState<T>& st,
                        const Tensor<T>& h0) const {
    FlopScopeGuard scope(FlopScope::Head);
    const AblationFlags& fl = cfg.ablation;
    if (!fl.use_state || fl.context_only_score)
      return pooled_context_score(st.e, score_w, score_b);
    if (!fl.use_context)
      return rowwise_dot(st.h, linear(h0, state_score_w, state_score_b));
    return rowwise_dot(st.h, reduce_mean(st.e, -2));
  }

  // Scores [B x B]: row i holds query i against every in-batch positive.
  Tensor<T> in_batch_scores(const std::vector<TokenSequence>& queries,
                            const std::vector<TokenSequence>& cands,
                            const Vocab& vocab) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    Prepared reps = compute_candidates(cands, vocab);
    const int64_t k = cfg.k, d = cfg.dim;
    Tensor<T> e0 = broadcast_to(reshape(reps.context, {1, b, k, d}), {b, b, k, d});
    Tensor<T> h0 = broadcast_to(reshape(reps.state0, {1, b, d}), {b, b, d});
    InteractionState<T> st = run_query(pad_batch(queries), e0, h0);
    return scores_from(st, h0);
  }

  std::vector<double> score_prepared(const TokenSequence& query,
                                     const Prepared& reps) const {
    NoGradGuard ng;
    const int64_t n = reps.context.shape()[0];
    const int64_t k = reps.context.shape()[1];
    const int64_t d = reps.context.shape()[2];
    Tensor<T> e0 = reshape(reps.context, {1, n, k, d});
    Tensor<T> h0 = reshape(reps.state0, {1, n, d});
    InteractionState<T> st = run_query(pad_batch({query}), e0, h0);
    Tensor<T> s = scores_from(st, h0);
    std::vector<double> out(s.values().begin(), s.values().end());
    return out;
  }

  Tensor<T> classification_logits(const std::vector<TokenSequence>& queries,
                                  const std::vector<TokenSequence>& cands,
                                  const Vocab& vocab) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    Prepared reps = compute_candidates(cands, vocab);
    const int64_t k = cfg.k, d = cfg.dim;
    Tensor<T> e0 = reshape(reps.context, {b, 1, k, d});
    Tensor<T> h0 = reshape(reps.state0, {b, 1, d});
    InteractionState<T> st = run_query(pad_batch(queries), e0, h0);
    Tensor<T> h = reshape(st.h, {b, d});
    Tensor<T> e = reshape(reduce_mean(st.e, -2), {b, d});
    FlopScopeGuard scope(FlopScope::Head);
    return classify_logits(h, e, cls_w, cls_b);
  }
};

// ---------------------------------------------------------------------------
// Dual encoder: independent pooled vectors, dot-product relevance
// ---------------------------------------------------------------------------

template <class T>
struct DualModel {
  ModelConfig cfg;
  EncoderParams<T> enc;
  Tensor<T> cls_w, cls_b;

  using Prepared = Tensor<T>;  // [N x d] candidate vectors

  static DualModel make(const ModelConfig& cfg) {
    DualModel m;
    m.cfg = cfg;
    m.enc = EncoderParams<T>::make(cfg);
    m.cls_w = Tensor<T>::zeros({3 * cfg.dim, cfg.num_classes}, true);
    m.cls_b = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
  }

  void visit(const ParamVisitor<T>& fn) {
    enc.visit("enc", fn);
    fn("cls.w", cls_w);
    fn("cls.b", cls_b);
  }

  Tensor<T> encode_pool(const std::vector<TokenSequence>& seqs) const {
    PaddedBatch pb = pad_batch(seqs);
    Tensor<T> x = encode(enc, pb);
    Tensor<T> m = mask_tensor<T>(pb.mask, {pb.rows, pb.cols});
    return masked_mean_pool(x, m);
  }

  Prepared prepare(const std::vector<TokenSequence>& cands,
                   const Vocab&) const {
    NoGradGuard ng;
    FlopScopeGuard scope(FlopScope::Precompute);
    return encode_pool(cands);
  }

  Tensor<T> in_batch_scores(const std::vector<TokenSequence>& queries,
                            const std::vector<TokenSequence>& cands,
                            const Vocab&) const {
    Tensor<T> qv = encode_pool(queries);
    Tensor<T> cv = encode_pool(cands);
    return matmul_nt(qv, cv);
  }

  std::vector<double> score_prepared(const TokenSequence& query,
                                     const Prepared& cand_vecs) const {
    NoGradGuard ng;
    Tensor<T> qv;
    {
      FlopScopeGuard scope(FlopScope::QueryEncoding);
      qv = encode_pool({query});
    }
    FlopScopeGuard scope(FlopScope::Head);
    Tensor<T> s = matmul_nt(qv, cand_vecs);  // [1 x N]
    return std::vector<double>(s.values().begin(), s.values().end());
  }

  Tensor<T> classification_logits(const std::vector<TokenSequence>& queries,
                                  const std::vector<TokenSequence>& cands,
                                  const Vocab&) const {
    Tensor<T> qv = encode_pool(queries);
    Tensor<T> cv = encode_pool(cands);
    return classify_logits(qv, cv, cls_w, cls_b);
  }
};

// ---------------------------------------------------------------------------
// Cross encoder: joint [CLS] q [SEP] c [SEP] pass per pair
// ---------------------------------------------------------------------------

template <class T>
struct CrossModel {
  ModelConfig cfg;
  EncoderParams<T> enc;
  Tensor<T> rank_w, rank_b;  // [d x 1]
  Tensor<T> cls_w, cls_b;    // [d x C]

  // Kept as raw text: nothing can be precomputed for a cross encoder.
  struct PreparedTexts {
    std::vector<std::string> texts;
  };
  using Prepared = PreparedTexts;

  static CrossModel make(const ModelConfig& cfg) {
    CrossModel m;
    m.cfg = cfg;
    m.enc = EncoderParams<T>::make(cfg);
    m.rank_w = Tensor<T>::zeros({cfg.dim, 1}, true);
    m.rank_b = Tensor<T>::zeros({1}, true);
    m.cls_w = Tensor<T>::zeros({cfg.dim, cfg.num_classes}, true);
    m.cls_b = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
  }

  void visit(const ParamVisitor<T>& fn) {
    enc.visit("enc", fn);
    fn("rank.w", rank_w);
    fn("rank.b", rank_b);
    fn("cls.w", cls_w);
    fn("cls.b", cls_b);
  }

  // First-token rows of jointly encoded pair sequences: [n x d].
  Tensor<T> joint_cls_rows(const std::vector<TokenSequence>& joints) const {
    PaddedBatch pb = pad_batch(joints);
    Tensor<T> x = encode(enc, pb);
    return reshape(slice(x, 1, 0, 1), {pb.rows, enc.dim});
  }

  Tensor<T> in_batch_scores(const std::vector<TokenSequence>& queries,
                            const std::vector<TokenSequence>& cands,
                            const Vocab&) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    std::vector<TokenSequence> joints;
    joints.reserve(static_cast<size_t>(b * b));
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < b; ++j) {
        std::vector<int64_t> ids = {kClsId};
        const auto& q = queries[static_cast<size_t>(i)].ids;
        const auto& c = cands[static_cast<size_t>(j)].ids;
        ids.insert(ids.end(), q.begin(), q.end());
        ids.push_back(kSepId);
        ids.insert(ids.end(), c.begin(), c.end());
        ids.push_back(kSepId);
        joints.push_back(make_sequence(std::move(ids)));
      }
    Tensor<T> rows = joint_cls_rows(joints);            // [B*B x d]
    Tensor<T> s = linear(rows, rank_w, rank_b);         // [B*B x 1]
    return reshape(s, {b, b});
  }

  Prepared prepare(const std::vector<TokenSequence>&, const Vocab&) const {
    return {};
  }

  std::vector<double> score_query_texts(
      const std::string& query_text, const std::vector<std::string>& cand_texts,
      const Vocab& vocab) const {
    NoGradGuard ng;
    std::vector<TokenSequence> joints;
    joints.reserve(cand_texts.size());
    for (const auto& c : cand_texts)
      joints.push_back(joint_sequence(vocab, query_text, c));
    Tensor<T> rows = joint_cls_rows(joints);
    Tensor<T> s = linear(rows, rank_w, rank_b);
    return std::vector<double>(s.values().begin(), s.values().end());
  }

  Tensor<T> classification_logits(const std::vector<TokenSequence>& queries,
                                  const std::vector<TokenSequence>& cands,
                                  const Vocab&) const {
    std::vector<TokenSequence> joints;
    joints.reserve(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) {
      std::vector<int64_t> ids = {kClsId};
      ids.insert(ids.end(), queries[i].ids.begin(), queries[i].ids.end());
      ids.push_back(kSepId);
      ids.insert(ids.end(), cands[i].ids.begin(), cands[i].ids.end());
      ids.push_back(kSepId);
      joints.push_back(make_sequence(std::move(ids)));
    }
    return linear(joint_cls_rows(joints), cls_w, cls_b);
  }
};

// ---------------------------------------------------------------------------
// Poly attention baseline: query compressed into context vectors
// ---------------------------------------------------------------------------

template <class T>
struct PolyModel {
  ModelConfig cfg;
  EncoderParams<T> enc;
  Tensor<T> codes;  // [c x d]
  Tensor<T> cls_w, cls_b;

  using Prepared = Tensor<T>;  // [N x d]

  static PolyModel make(const ModelConfig& cfg) {
    PolyModel m;
    m.cfg = cfg;
    m.enc = EncoderParams<T>::make(cfg);
    m.codes = Tensor<T>::zeros({cfg.poly_codes, cfg.dim}, true);
    m.cls_w = Tensor<T>::zeros({3 * cfg.dim, cfg.num_classes}, true);
    m.cls_b = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
  }

  void visit(const ParamVisitor<T>& fn) {
    enc.visit("enc", fn);
    fn("polycodes.w", codes);
    fn("cls.w", cls_w);
    fn("cls.b", cls_b);
  }

  // Raw-dot attention of the codes over query token states: [rows x c x d].
  Tensor<T> query_context(const std::vector<TokenSequence>& queries) const {
    PaddedBatch pb = pad_batch(queries);
    Tensor<T> y = encode(enc, pb);
    Tensor<T> m = mask_tensor<T>(pb.mask, {pb.rows, pb.cols});
    const int64_t c = cfg.poly_codes, d = cfg.dim;
    Tensor<T> cb = broadcast_to(reshape(codes, {1, c, d}), {pb.rows, c, d});
    Tensor<T> logits = matmul_nt(cb, y);  // [rows x c x m]
    Shape ms = {pb.rows, 1, pb.cols};
    Tensor<T> m3 = reshape(m, ms);
    Tensor<T> w = softmax_lastdim(logits, &m3);
    return matmul(w, y);
  }

  Tensor<T> cand_pool(const std::vector<TokenSequence>& cands) const {
    PaddedBatch pb = pad_batch(cands);
    Tensor<T> x = encode(enc, pb);
    Tensor<T> m = mask_tensor<T>(pb.mask, {pb.rows, pb.cols});
    return masked_mean_pool(x, m);
  }

  Prepared prepare(const std::vector<TokenSequence>& cands,
                   const Vocab&) const {
    NoGradGuard ng;
    FlopScopeGuard scope(FlopScope::Precompute);
    return cand_pool(cands);
  }

  Tensor<T> in_batch_scores(const std::vector<TokenSequence>& queries,
                            const std::vector<TokenSequence>& cands,
                            const Vocab&) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    Tensor<T> ctx = query_context(queries);  // [B x c x d]
    Tensor<T> cv = cand_pool(cands);         // [B x d]
    Tensor<T> cb = broadcast_to(reshape(cv, {1, b, cfg.dim}), {b, b, cfg.dim});
    return poly_attention_scores(ctx, cb);   // [B x B]
  }

  std::vector<double> score_prepared(const TokenSequence& query,
                                     const Prepared& cand_vecs) const {
    NoGradGuard ng;
    Tensor<T> ctx;
    {
      FlopScopeGuard scope(FlopScope::QueryEncoding);
      ctx = query_context({query});  // [1 x c x d]
    }
    FlopScopeGuard scope(FlopScope::Head);
    const int64_t n = cand_vecs.shape()[0];
    Tensor<T> cb = reshape(cand_vecs, {1, n, cfg.dim});
    Tensor<T> s = poly_attention_scores(ctx, cb);
    return std::vector<double>(s.values().begin(), s.values().end());
  }

  Tensor<T> classification_logits(const std::vector<TokenSequence>& queries,
                                  const std::vector<TokenSequence>& cands,
                                  const Vocab&) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    Tensor<T> ctx = query_context(queries);
    Tensor<T> cv = cand_pool(cands);
    Tensor<T> cb = reshape(cv, {b, 1, cfg.dim});
    Tensor<T> logits = matmul_nt(cb, ctx);  // [B x 1 x c]
    Tensor<T> w = softmax_lastdim(logits);
    Tensor<T> attended = reshape(matmul(w, ctx), {b, cfg.dim});
    return classify_logits(attended, cv, cls_w, cls_b);
  }
};

// ---------------------------------------------------------------------------
// Token-level late interaction baseline (sum of max cosine similarities)
// ---------------------------------------------------------------------------

template <class T>
struct MaxSimModel {
  ModelConfig cfg;
  EncoderParams<T> enc;

  struct PreparedTokens {
    Tensor<T> states;  // [N x t x d]
    Tensor<T> mask;    // [N x t]
  };
  using Prepared = PreparedTokens;

  static MaxSimModel make(const ModelConfig& cfg) {
    MaxSimModel m;
    m.cfg = cfg;
    m.enc = EncoderParams<T>::make(cfg);
    return m;
  }

  void visit(const ParamVisitor<T>& fn) { enc.visit("enc", fn); }

  std::pair<Tensor<T>, Tensor<T>> token_states(
      const std::vector<TokenSequence>& seqs) const {
    PaddedBatch pb = pad_batch(seqs);
    Tensor<T> x = encode(enc, pb);
    Tensor<T> m = mask_tensor<T>(pb.mask, {pb.rows, pb.cols});
    return {x, m};
  }

  Prepared prepare(const std::vector<TokenSequence>& cands,
                   const Vocab&) const {
    NoGradGuard ng;
    FlopScopeGuard scope(FlopScope::Precompute);
    auto [x, m] = token_states(cands);
    return {x, m};
  }

  Tensor<T> in_batch_scores(const std::vector<TokenSequence>& queries,
                            const std::vector<TokenSequence>& cands,
                            const Vocab&) const {
    const int64_t b = static_cast<int64_t>(queries.size());
    auto [qt, qm] = token_states(queries);
    auto [ct, cm] = token_states(cands);
    const int64_t m = qt.shape()[1], t = ct.shape()[1], d = cfg.dim;
    Tensor<T> qte = broadcast_to(reshape(qt, {b, 1, m, d}), {b, b, m, d});
    Tensor<T> qme = broadcast_to(reshape(qm, {b, 1, m}), {b, b, m});
    Tensor<T> cte = broadcast_to(reshape(ct, {1, b, t, d}), {b, b, t, d});
    Tensor<T> cme = broadcast_to(reshape(cm, {1, b, t}), {b, b, t});
    return maxsim_scores(qte, cte, &qme, &cme);  // [B x B]
  }

  std::vector<double> score_prepared(const TokenSequence& query,
                                     const Prepared& prep) const {
    NoGradGuard ng;
    Tensor<T> qt, qm;
    {
      FlopScopeGuard scope(FlopScope::QueryEncoding);
      auto st = token_states({query});
      qt = st.first;
      qm = st.second;
    }
    FlopScopeGuard scope(FlopScope::Head);
    const int64_t n = prep.states.shape()[0];
    const int64_t m = qt.shape()[1], d = cfg.dim;
    Tensor<T> qte = broadcast_to(reshape(qt, {m, d}), {n, m, d});
    Tensor<T> qme = broadcast_to(reshape(qm, {m}), {n, m});
    Tensor<T> s = maxsim_scores(qte, prep.states, &qme, &prep.mask);  // [N]
    return std::vector<double>(s.values().begin(), s.values().end());
  }

  Tensor<T> classification_logits(const std::vector<TokenSequence>&,
                                  const std::vector<TokenSequence>&,
                                  const Vocab&) const {
    throw EngineError("token-level max-similarity scoring has no classification head");
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: header + named parameter blobs, f32 payload, little-endian
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'M', 'X', 'C', 'P'};

template <class M>
void save_checkpoint(M& model, const std::string& kind,
                     const nlohmann::json& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for write: " + path);
  out.write(kCheckpointMagic, 4);
  const uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  nlohmann::json meta;
  meta["model"] = kind;
  meta["config"] = config;
  const std::string meta_str = meta.dump();
  const uint32_t meta_len = static_cast<uint32_t>(meta_str.size());
  out.write(reinterpret_cast<const char*>(&meta_len), 4);
  out.write(meta_str.data(), meta_len);

  uint64_t count = 0;
  model.visit([&count](const std::string&, auto&) { ++count; });
  out.write(reinterpret_cast<const char*>(&count), 8);
  model.visit([&out](const std::string& name, auto& t) {
    const uint16_t name_len = static_cast<uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(name.data(), name_len);
    const uint8_t rank = static_cast<uint8_t>(t.shape().size());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int64_t dim : t.shape()) {
      const uint64_t d = static_cast<uint64_t>(dim);
      out.write(reinterpret_cast<const char*>(&d), 8);
    }
    std::vector<float> data(t.values().begin(), t.values().end());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(sizeof(float) * data.size()));
  });
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

struct CheckpointMeta {
  std::string model;
  nlohmann::json config;
};

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  uint32_t version = 0, meta_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  in.read(reinterpret_cast<char*>(&meta_len), 4);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  if (in.gcount() != static_cast<std::streamsize>(meta_len))
    throw std::runtime_error("truncated checkpoint meta in " + path);
  nlohmann::json meta = nlohmann::json::parse(meta_str);
  return {meta.at("model").get<std::string>(), meta.at("config")};
}

template <class M>
void load_checkpoint(M& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  uint32_t version = 0, meta_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&meta_len), 4);
  in.seekg(meta_len, std::ios::cur);
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);

  using Tens = std::decay_t<decltype(model.enc.tok_w)>;
  std::map<std::string, Tens*> by_name;
  model.visit([&by_name](const std::string& name, auto& t) {
    by_name[name] = &t;
  });
  if (count != by_name.size())
    throw std::runtime_error("checkpoint has " + std::to_string(count) +
                             " parameters, model expects " +
                             std::to_string(by_name.size()));
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);
    Shape shape(rank);
    for (int r = 0; r < rank; ++r) {
      uint64_t d = 0;
      in.read(reinterpret_cast<char*>(&d), 8);
      shape[r] = static_cast<int64_t>(d);
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint parameter '" + name +
                               "' not present in model");
    if (it->second->shape() != shape)
      throw std::runtime_error("checkpoint parameter '" + name +
                               "' shape mismatch");
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * data.size()))
      throw std::runtime_error("truncated checkpoint payload in " + path);
    auto& vals = it->second->values_mut();
    for (size_t j = 0; j < vals.size(); ++j)
      vals[j] = static_cast<typename std::remove_reference_t<
          decltype(vals)>::value_type>(data[j]);
  }
}

}  // namespace mixenc
