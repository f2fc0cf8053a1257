#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mixenc/vocab.hpp"

namespace mixenc {

struct Candidate {
  int64_t id = 0;
  std::string text;
};

struct CorpusRecord {
  int64_t query_id = 0;
  std::string text;
  std::vector<Candidate> candidates;
  std::vector<int64_t> positive_ids;  // ranking-style tasks
  int label = -1;                     // classification task
};

struct Corpus {
  std::string task;  // "ranking", "token_overlap" or "classification"
  std::vector<CorpusRecord> records;

  bool is_classification() const { return task == "classification"; }
};

struct GenSpec {
  std::string task = "ranking";
  int64_t queries = 100;
  int64_t candidates_per_query = 10;
  int64_t query_len = 8;
  int64_t cand_len = 8;
  int64_t vocab_words = 256;  // filler token pool
  int64_t key_tokens = 16;    // latent pattern pool (ranking)
  int64_t rare_tokens = 512;  // exact-match pool (token_overlap)
  int num_classes = 3;
  int64_t kmax = 4;        // context marker tokens reserved in the vocab
  int64_t vocab_capacity = 4096;
  uint64_t seed = 0;
};

// Synthetic corpus plus the vocabulary it is written against.
//
// ranking: query and its unique positive share one key token drawn from a
// small pool; negatives carry a different key. token_overlap: same layout
// but keys come from a large pool of rare tokens, so relevance hinges on
// exact token identity. classification: the label counts the distinct
// tokens shared by query and candidate, capped at num_classes-1.
std::pair<Corpus, Vocab> gen_synthetic(const GenSpec& spec);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// The labeling rule for classification pairs: distinct shared tokens,
// capped at num_classes-1. The generator constructs pairs to hit a target
// value of this rule.
int classification_label_rule(const std::string& query_text,
                              const std::string& cand_text, int num_classes);

}  // namespace mixenc
