#include "mixenc/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mixenc {

int64_t rank_of_first_positive(const RankedQuery& q) {
  const size_t n = q.cand_ids.size();
  if (n == 0 || q.scores.size() != n || q.is_positive.size() != n)
    throw std::runtime_error("ranked query arrays are empty or inconsistent");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (q.scores[a] != q.scores[b]) return q.scores[a] > q.scores[b];
    return q.cand_ids[a] < q.cand_ids[b];
  });
  for (size_t r = 0; r < n; ++r)
    if (q.is_positive[order[r]]) return static_cast<int64_t>(r) + 1;
  throw std::runtime_error("query has no positive candidate");
}

RankingMetrics ranking_metrics(const std::vector<RankedQuery>& queries) {
  if (queries.empty())
    throw std::runtime_error("cannot evaluate an empty corpus");
  RankingMetrics m;
  m.queries = static_cast<int64_t>(queries.size());
  for (const auto& q : queries) {
    const int64_t rank = rank_of_first_positive(q);
    m.mrr += 1.0 / static_cast<double>(rank);
    if (rank == 1) m.r_at_1 += 1.0;
  }
  m.mrr /= static_cast<double>(m.queries);
  m.r_at_1 /= static_cast<double>(m.queries);
  return m;
}

double classification_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& gold) {
  if (predicted.empty() || predicted.size() != gold.size())
    throw std::runtime_error("prediction/label arrays are empty or mismatched");
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == gold[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace mixenc
