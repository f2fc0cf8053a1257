#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace mixenc {

// Matmul FLOP accounting, partitioned by which part of a scoring pass is
// executing. Counting happens at the dispatch site on the calling thread,
// so sharded kernels do not need atomic counters.
enum class FlopScope : int {
  Other = 0,
  QueryEncoding = 1,
  CandidateInteraction = 2,
  Head = 3,
  Precompute = 4,
};

inline constexpr int kFlopScopeCount = 5;

inline const char* flop_scope_name(FlopScope s) {
  switch (s) {
    case FlopScope::QueryEncoding: return "query_encoding";
    case FlopScope::CandidateInteraction: return "candidate_interaction";
    case FlopScope::Head: return "head";
    case FlopScope::Precompute: return "precompute";
    default: return "other";
  }
}

struct FlopState {
  bool enabled = false;
  FlopScope scope = FlopScope::Other;
  std::array<uint64_t, kFlopScopeCount> counts{};
};

inline FlopState& flop_state() {
  thread_local FlopState state;
  return state;
}

inline void flops_enable(bool on) { flop_state().enabled = on; }

inline void flops_reset() { flop_state().counts = {}; }

inline void flops_add_matmul(uint64_t flops) {
  FlopState& s = flop_state();
  if (s.enabled) s.counts[static_cast<int>(s.scope)] += flops;
}

inline uint64_t flops_in(FlopScope scope) {
  return flop_state().counts[static_cast<int>(scope)];
}

inline uint64_t flops_total() {
  uint64_t t = 0;
  for (uint64_t c : flop_state().counts) t += c;
  return t;
}

inline std::map<std::string, uint64_t> flops_snapshot() {
  std::map<std::string, uint64_t> out;
  const FlopState& s = flop_state();
  for (int i = 0; i < kFlopScopeCount; ++i)
    if (s.counts[i] != 0)
      out[flop_scope_name(static_cast<FlopScope>(i))] = s.counts[i];
  return out;
}

// RAII scope tag; nested scopes restore the previous tag on exit.
class FlopScopeGuard {
 public:
  explicit FlopScopeGuard(FlopScope scope) : prev_(flop_state().scope) {
    flop_state().scope = scope;
  }
  ~FlopScopeGuard() { flop_state().scope = prev_; }
  FlopScopeGuard(const FlopScopeGuard&) = delete;
  FlopScopeGuard& operator=(const FlopScopeGuard&) = delete;

 private:
  FlopScope prev_;
};

}  // namespace mixenc
