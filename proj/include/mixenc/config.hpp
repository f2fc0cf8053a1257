#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mixenc {

// Ablation switches for the scoring pathways: the per-candidate query state
// H, the candidate context embeddings E, and the reduced scorer that reads
// only the pooled context embeddings.
struct AblationFlags {
  bool use_state = true;          // keep the query-state pathway
  bool use_context = true;        // keep context embeddings in scoring
  bool context_only_score = false;  // score = Lin(avg(context)) regardless

  void validate() const {
    if (context_only_score && !use_context)
      throw std::invalid_argument(
          "ablation: context-only scoring requires the context pathway");
    if (!use_state && !use_context && !context_only_score)
      throw std::invalid_argument("ablation: no scoring signal left active");
  }
};

struct ModelConfig {
  int64_t vocab_size = 0;  // filled from the vocabulary
  int64_t dim = 64;
  int heads = 4;
  int64_t layers = 4;
  int64_t ffn_mult = 4;
  int64_t max_len = 64;
  int num_classes = 3;

  // interaction stack
  std::vector<int64_t> interaction_positions;  // 1-based layer indices
  int64_t k = 1;                               // context embeddings per candidate
  char strategy = 'S';                         // 'S' marker tokens / 'C' codes

  // baseline knobs
  int64_t poly_codes = 8;

  AblationFlags ablation;

  // reduction/debug switches
  bool cross_attention_enabled = true;
  int gate_mode = 0;  // 0 learned, 1 always-new-state, 2 always-previous

  int64_t ffn_inner() const { return dim * ffn_mult; }

  void validate_interaction() const {
    if (interaction_positions.empty())
      throw std::invalid_argument("schedule needs at least one interaction layer");
    for (size_t i = 0; i < interaction_positions.size(); ++i) {
      const int64_t p = interaction_positions[i];
      if (p < 1 || p > layers)
        throw std::invalid_argument("interaction position " + std::to_string(p) +
                                    " outside [1, " + std::to_string(layers) + "]");
      if (i > 0 && interaction_positions[i - 1] >= p)
        throw std::invalid_argument("interaction positions must be ascending");
    }
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (strategy != 'S' && strategy != 'C')
      throw std::invalid_argument("strategy must be S or C");
    ablation.validate();
  }
};

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_frac = 0.05;
  int64_t epochs = 10;
  int64_t batch = 64;
  uint64_t seed = 0;
  double stop_mrr = -1.0;   // early-stop threshold on eval MRR; <0 disables
  std::string log_path;     // metrics JSONL; empty = stdout only
};

inline void apply_json(ModelConfig& cfg, const nlohmann::json& j) {
  if (j.contains("dim")) cfg.dim = j["dim"].get<int64_t>();
  if (j.contains("heads")) cfg.heads = j["heads"].get<int>();
  if (j.contains("layers")) cfg.layers = j["layers"].get<int64_t>();
  if (j.contains("ffn_mult")) cfg.ffn_mult = j["ffn_mult"].get<int64_t>();
  if (j.contains("max_len")) cfg.max_len = j["max_len"].get<int64_t>();
  if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
  if (j.contains("k")) cfg.k = j["k"].get<int64_t>();
  if (j.contains("strategy")) {
    const std::string s = j["strategy"].get<std::string>();
    if (s.size() != 1) throw std::invalid_argument("strategy must be S or C");
    cfg.strategy = s[0];
  }
  if (j.contains("interaction_positions"))
    cfg.interaction_positions = j["interaction_positions"].get<std::vector<int64_t>>();
  if (j.contains("poly_codes")) cfg.poly_codes = j["poly_codes"].get<int64_t>();
  if (j.contains("use_state")) cfg.ablation.use_state = j["use_state"].get<bool>();
  if (j.contains("use_context"))
    cfg.ablation.use_context = j["use_context"].get<bool>();
  if (j.contains("context_only_score"))
    cfg.ablation.context_only_score = j["context_only_score"].get<bool>();
  if (j.contains("cross_attention_enabled"))
    cfg.cross_attention_enabled = j["cross_attention_enabled"].get<bool>();
  if (j.contains("gate_mode")) cfg.gate_mode = j["gate_mode"].get<int>();
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["vocab_size"] = cfg.vocab_size;
  j["dim"] = cfg.dim;
  j["heads"] = cfg.heads;
  j["layers"] = cfg.layers;
  j["ffn_mult"] = cfg.ffn_mult;
  j["max_len"] = cfg.max_len;
  j["num_classes"] = cfg.num_classes;
  j["k"] = cfg.k;
  j["strategy"] = std::string(1, cfg.strategy);
  j["interaction_positions"] = cfg.interaction_positions;
  j["poly_codes"] = cfg.poly_codes;
  j["use_state"] = cfg.ablation.use_state;
  j["use_context"] = cfg.ablation.use_context;
  j["context_only_score"] = cfg.ablation.context_only_score;
  j["cross_attention_enabled"] = cfg.cross_attention_enabled;
  j["gate_mode"] = cfg.gate_mode;
  return j;
}

inline void apply_json(TrainConfig& tc, const nlohmann::json& j) {
  if (j.contains("lr")) tc.lr = j["lr"].get<double>();
  if (j.contains("beta1")) tc.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) tc.beta2 = j["beta2"].get<double>();
  if (j.contains("adam_eps")) tc.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("warmup_frac")) tc.warmup_frac = j["warmup_frac"].get<double>();
  if (j.contains("epochs")) tc.epochs = j["epochs"].get<int64_t>();
  if (j.contains("batch")) tc.batch = j["batch"].get<int64_t>();
  if (j.contains("stop_mrr")) tc.stop_mrr = j["stop_mrr"].get<double>();
}

}  // namespace mixenc
