#pragma once

#include <algorithm>
#include <chrono>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mixenc/train.hpp"

namespace mixenc {

struct BenchConfig {
  std::vector<std::string> models = {"dual", "cross", "mix-a", "mix-b", "mix-c"};
  std::vector<int64_t> n_list = {10, 100, 1000};
  int reps = 5;
  int warmups = 2;
  int64_t queries = 4;
  int64_t query_len = 32;
  int64_t cand_len = 32;
  int64_t dim = 64;
  int heads = 4;
  int64_t layers = 4;
  uint64_t seed = 0;
};

struct BenchRow {
  std::string model;
  int64_t n_candidates = 0;
  double median_ms = 0.0;        // all queries, cache pre-loaded
  uint64_t total_flops = 0;      // one query, instrumented separately
  uint64_t query_encoding_flops = 0;
  uint64_t candidate_flops = 0;
  double speedup_vs_cross = 0.0;
  uint64_t cache_bytes = 0;
};

struct BenchReport {
  BenchConfig cfg;
  std::vector<BenchRow> rows;

  const BenchRow* find(const std::string& model, int64_t n) const {
    for (const auto& r : rows)
      if (r.model == model && r.n_candidates == n) return &r;
    return nullptr;
  }
};

namespace detail {

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Fixed-length filler sentences so every joint sequence pads identically.
inline std::vector<std::string> bench_texts(Philox& rng, int64_t count,
                                            int64_t len, int64_t word_pool) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    std::string s;
    for (int64_t j = 0; j < len; ++j) {
      if (j) s += ' ';
      s += "w";
      std::string num = std::to_string(rng.next_below(word_pool));
      while (num.size() < 4) num.insert(num.begin(), '0');
      s += num;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

// Times online scoring of `queries` queries against N pre-computed
// candidates per model. Pre-computation, tokenization and cache I/O happen
// outside the timed region.
inline BenchReport run_latency_bench(const BenchConfig& bc) {
  if (bc.reps < 5)
    throw std::runtime_error("benchmark needs at least 5 timed repetitions");
  if (bc.warmups < 2)
    throw std::runtime_error("benchmark needs at least 2 warmup runs");
  if (bc.models.empty() || bc.n_list.empty())
    throw std::runtime_error("benchmark needs models and candidate counts");

  const int64_t max_n = *std::max_element(bc.n_list.begin(), bc.n_list.end());
  Philox rng(bc.seed, 0xBE);
  std::vector<std::string> words;
  for (int i = 0; i < 2000; ++i) {
    std::string num = std::to_string(i);
    while (num.size() < 4) num.insert(num.begin(), '0');
    words.push_back("w" + num);
  }
  Vocab vocab = Vocab::build(words, 4);

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.dim = bc.dim;
  cfg.heads = bc.heads;
  cfg.layers = bc.layers;
  cfg.max_len = std::max<int64_t>(2 * (bc.query_len + bc.cand_len) + 4, 64);
  cfg.poly_codes = 8;

  const auto query_texts = detail::bench_texts(rng, bc.queries, bc.query_len, 2000);
  const auto cand_texts = detail::bench_texts(rng, max_n, bc.cand_len, 2000);
  std::vector<TokenSequence> query_seqs;
  for (const auto& t : query_texts) query_seqs.push_back(query_sequence(vocab, t));
  std::vector<TokenSequence> cand_seqs;
  for (const auto& t : cand_texts) cand_seqs.push_back(candidate_sequence(vocab, t));

  BenchReport report;
  report.cfg = bc;

  using Clock = std::chrono::steady_clock;
  for (const std::string& name : bc.models) {
    const ModelKind kind = model_kind_from_string(name);
    ModelConfig mc = cfg;
    if (is_mix(kind)) {
      auto [sched, k] = variant_preset(
          kind == ModelKind::MixA ? "a" : (kind == ModelKind::MixB ? "b" : "c"),
          cfg.layers);
      mc.interaction_positions = sched.positions;
      mc.k = k;
    }

    std::variant<MixModel<float>, DualModel<float>, CrossModel<float>,
                 PolyModel<float>, MaxSimModel<float>>
        model = [&]() -> std::variant<MixModel<float>, DualModel<float>,
                                      CrossModel<float>, PolyModel<float>,
                                      MaxSimModel<float>> {
      switch (kind) {
        case ModelKind::Dual: return DualModel<float>::make(mc);
        case ModelKind::Cross: return CrossModel<float>::make(mc);
        case ModelKind::Poly: return PolyModel<float>::make(mc);
        case ModelKind::MaxSim: return MaxSimModel<float>::make(mc);
        default: return MixModel<float>::make(mc);
      }
    }();
    std::visit([&](auto& m) { init_model(m, bc.seed + 1); }, model);

    for (const int64_t n : bc.n_list) {
      std::vector<TokenSequence> cands(cand_seqs.begin(), cand_seqs.begin() + n);
      std::vector<std::string> texts(cand_texts.begin(), cand_texts.begin() + n);

      BenchRow row;
      row.model = name;
      row.n_candidates = n;

      std::visit(
          [&](auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, CrossModel<float>>) {
              auto run_all = [&]() {
                for (const auto& qt : query_texts)
                  (void)m.score_query_texts(qt, texts, vocab);
              };
              for (int w = 0; w < bc.warmups; ++w) run_all();
              std::vector<double> times;
              for (int r = 0; r < bc.reps; ++r) {
                const auto t0 = Clock::now();
                run_all();
                const auto t1 = Clock::now();
                times.push_back(
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
              }
              row.median_ms = detail::median(times);
              flops_enable(true);
              flops_reset();
              (void)m.score_query_texts(query_texts[0], texts, vocab);
              row.total_flops = flops_total();
              row.query_encoding_flops = flops_in(FlopScope::QueryEncoding);
              row.candidate_flops = flops_in(FlopScope::CandidateInteraction);
              flops_enable(false);
              row.cache_bytes = 0;
            } else {
              auto prep = m.prepare(cands, vocab);
              auto run_all = [&]() {
                for (const auto& qs : query_seqs)
                  (void)m.score_prepared(qs, prep);
              };
              for (int w = 0; w < bc.warmups; ++w) run_all();
              std::vector<double> times;
              for (int r = 0; r < bc.reps; ++r) {
                const auto t0 = Clock::now();
                run_all();
                const auto t1 = Clock::now();
                times.push_back(
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
              }
              row.median_ms = detail::median(times);
              flops_enable(true);
              flops_reset();
              (void)m.score_prepared(query_seqs[0], prep);
              row.total_flops = flops_total();
              row.query_encoding_flops = flops_in(FlopScope::QueryEncoding);
              row.candidate_flops = flops_in(FlopScope::CandidateInteraction);
              flops_enable(false);
              if constexpr (std::is_same_v<M, MixModel<float>>) {
                row.cache_bytes = static_cast<uint64_t>(
                    CandidateCache<float>::expected_file_bytes(n, m.cfg.k,
                                                               m.cfg.dim, 4));
              } else if constexpr (std::is_same_v<M, MaxSimModel<float>>) {
                row.cache_bytes = static_cast<uint64_t>(
                    n * prep.states.shape()[1] * m.cfg.dim * 4);
              } else {
                row.cache_bytes = static_cast<uint64_t>(n * m.cfg.dim * 4);
              }
            }
          },
          model);
      report.rows.push_back(row);
    }
  }

  // Speedups relative to the cross encoder at the same candidate count.
  for (auto& row : report.rows) {
    const BenchRow* cross = report.find("cross", row.n_candidates);
    if (cross && cross->median_ms > 0)
      row.speedup_vs_cross = cross->median_ms / row.median_ms;
  }
  return report;
}

inline std::string bench_table(const BenchReport& r) {
  std::ostringstream os;
  os << "model      N      median_ms    speedup_vs_cross   flops/query    "
        "cache_bytes\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%-9s %6lld %12.3f %18.2f %14llu %12llu\n",
                  row.model.c_str(),
                  static_cast<long long>(row.n_candidates), row.median_ms,
                  row.speedup_vs_cross,
                  static_cast<unsigned long long>(row.total_flops),
                  static_cast<unsigned long long>(row.cache_bytes));
    os << buf;
  }
  return os.str();
}

inline nlohmann::json bench_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"model", row.model},
                    {"n_candidates", row.n_candidates},
                    {"median_ms", row.median_ms},
                    {"speedup_vs_cross", row.speedup_vs_cross},
                    {"total_flops", row.total_flops},
                    {"query_encoding_flops", row.query_encoding_flops},
                    {"candidate_flops", row.candidate_flops},
                    {"cache_bytes", row.cache_bytes}});
  }
  nlohmann::json j;
  j["queries"] = r.cfg.queries;
  j["reps"] = r.cfg.reps;
  j["warmups"] = r.cfg.warmups;
  j["dim"] = r.cfg.dim;
  j["layers"] = r.cfg.layers;
  j["query_len"] = r.cfg.query_len;
  j["cand_len"] = r.cfg.cand_len;
  j["rows"] = rows;
  return j;
}

}  // namespace mixenc
