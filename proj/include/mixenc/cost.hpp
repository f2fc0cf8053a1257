#pragma once

#include <cstdint>
#include <string>

namespace mixenc {

enum class CostKind { Dual, Cross, Mix };

CostKind cost_kind_from_string(const std::string& name);

// Symbolic attention-cost inputs: hidden width h, query length q, candidate
// length d, context embeddings per candidate k, candidates per query N_c.
struct CostInput {
  uint64_t hidden = 0;
  uint64_t query_len = 0;
  uint64_t cand_len = 0;
  uint64_t k = 1;
  uint64_t n_candidates = 1;
};

struct CostResult {
  uint64_t precompute = 0;
  uint64_t online = 0;
};

// Exact integer evaluation of the per-architecture cost expressions.
// hidden/query_len/cand_len/k must be positive; n_candidates may be 0,
// which degenerates the mix online cost to the dual one.
CostResult cost_eval(CostKind kind, const CostInput& in);

}  // namespace mixenc
