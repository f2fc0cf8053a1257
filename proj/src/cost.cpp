#include "mixenc/cost.hpp"

#include <stdexcept>

namespace mixenc {

CostKind cost_kind_from_string(const std::string& name) {
  if (name == "dual") return CostKind::Dual;
  if (name == "cross") return CostKind::Cross;
  if (name == "mix") return CostKind::Mix;
  throw std::runtime_error("unknown cost model '" + name +
                           "' (expected dual, cross or mix)");
}

CostResult cost_eval(CostKind kind, const CostInput& in) {
  const uint64_t h = in.hidden;
  const uint64_t q = in.query_len;
  const uint64_t d = in.cand_len;
  const uint64_t k = in.k;
  const uint64_t n = in.n_candidates;
  if (h == 0 || q == 0 || d == 0 || k == 0)
    throw std::runtime_error("cost_eval: h, q, d and k must be positive");

  CostResult r;
  switch (kind) {
    case CostKind::Dual:
      r.precompute = h * d * d + h * h * d;
      r.online = h * q * q + h * h * q;
      break;
    case CostKind::Cross: {
      const uint64_t joint = q + d;
      r.precompute = 0;
      r.online = n * (h * joint * joint + h * h * joint);
      break;
    }
    case CostKind::Mix:
      r.precompute = h * d * d + h * h * d;
      r.online = h * (q * (q + k * n) + k * k * n) + h * h * (q + k * n);
      break;
  }
  return r;
}

}  // namespace mixenc
