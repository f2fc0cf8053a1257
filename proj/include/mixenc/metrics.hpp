#pragma once

#include <cstdint>
#include <vector>

namespace mixenc {

// One evaluated query: parallel arrays over its candidate list.
struct RankedQuery {
  std::vector<int64_t> cand_ids;
  std::vector<double> scores;
  std::vector<uint8_t> is_positive;
};

struct RankingMetrics {
  double mrr = 0.0;
  double r_at_1 = 0.0;
  int64_t queries = 0;
};

// 1-based rank of the best-ranked positive; score ties break toward the
// smaller candidate id so results are deterministic.
int64_t rank_of_first_positive(const RankedQuery& q);

RankingMetrics ranking_metrics(const std::vector<RankedQuery>& queries);

double classification_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& gold);

}  // namespace mixenc
