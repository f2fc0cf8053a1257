#include "mixenc/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mixenc/rng.hpp"

namespace mixenc {

namespace {

std::string padded_name(const char* prefix, int64_t i, int width) {
  std::ostringstream os;
  os << prefix;
  std::string num = std::to_string(i);
  while (static_cast<int>(num.size()) < width) num.insert(num.begin(), '0');
  os << num;
  return os.str();
}

std::vector<std::string> name_pool(const char* prefix, int64_t count) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(padded_name(prefix, i, 4));
  return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

// Sentence of `len` filler words with `key` planted at a random slot.
std::vector<std::string> keyed_sentence(Philox& rng,
                                        const std::vector<std::string>& fillers,
                                        const std::string& key, int64_t len) {
  std::vector<std::string> toks(static_cast<size_t>(len));
  for (auto& t : toks) t = fillers[rng.next_below(fillers.size())];
  toks[rng.next_below(static_cast<uint64_t>(len))] = key;
  return toks;
}

}  // namespace

int classification_label_rule(const std::string& query_text,
                              const std::string& cand_text, int num_classes) {
  std::set<std::string> q;
  for (const auto& t : split_tokens(query_text)) q.insert(t);
  std::set<std::string> shared;
  for (const auto& t : split_tokens(cand_text))
    if (q.count(t)) shared.insert(t);
  return std::min<int>(num_classes - 1, static_cast<int>(shared.size()));
}

std::pair<Corpus, Vocab> gen_synthetic(const GenSpec& spec) {
  if (spec.queries < 1) throw std::runtime_error("gen: queries must be >= 1");
  if (spec.query_len < 1 || spec.cand_len < 1)
    throw std::runtime_error("gen: sequence lengths must be >= 1");

  const bool ranking_like = spec.task == "ranking" || spec.task == "token_overlap";
  if (!ranking_like && spec.task != "classification")
    throw std::runtime_error("gen: unknown task '" + spec.task + "'");

  const int64_t key_pool =
      spec.task == "token_overlap" ? spec.rare_tokens : spec.key_tokens;
  if (ranking_like && key_pool < 2)
    throw std::runtime_error("gen: need at least 2 key tokens for negatives");
  if (ranking_like && spec.candidates_per_query < 2)
    throw std::runtime_error("gen: ranking needs >= 2 candidates per query");
  if (spec.task == "classification") {
    if (spec.num_classes < 2)
      throw std::runtime_error("gen: classification needs >= 2 classes");
    if (spec.vocab_words < spec.query_len + spec.cand_len)
      throw std::runtime_error(
          "gen: vocab too small to build disjoint classification pairs");
    if (spec.num_classes - 1 > spec.cand_len || spec.num_classes - 1 > spec.query_len)
      throw std::runtime_error("gen: num_classes exceeds sequence capacity");
  }

  const int64_t total_tokens =
      kFirstContextTokenId + spec.kmax + (ranking_like ? key_pool : 0) +
      spec.vocab_words;
  if (total_tokens > spec.vocab_capacity)
    throw std::runtime_error("gen: requested pools exceed vocab capacity (" +
                             std::to_string(total_tokens) + " > " +
                             std::to_string(spec.vocab_capacity) + ")");

  const char* key_prefix = spec.task == "token_overlap" ? "r" : "k";
  std::vector<std::string> keys =
      ranking_like ? name_pool(key_prefix, key_pool) : std::vector<std::string>{};
  std::vector<std::string> fillers = name_pool("w", spec.vocab_words);

  std::vector<std::string> vocab_words;
  vocab_words.insert(vocab_words.end(), keys.begin(), keys.end());
  vocab_words.insert(vocab_words.end(), fillers.begin(), fillers.end());
  Vocab vocab = Vocab::build(vocab_words, spec.kmax);

  Philox rng(spec.seed, 0x2C0);
  Corpus corpus;
  corpus.task = spec.task;
  corpus.records.reserve(static_cast<size_t>(spec.queries));
  int64_t next_cand_id = 1;

  for (int64_t qi = 0; qi < spec.queries; ++qi) {
    CorpusRecord rec;
    rec.query_id = qi + 1;
    if (ranking_like) {
      const uint64_t key_idx = rng.next_below(static_cast<uint64_t>(key_pool));
      const std::string& key = keys[key_idx];
      rec.text = join_tokens(keyed_sentence(rng, fillers, key, spec.query_len));

      Candidate pos;
      pos.id = next_cand_id++;
      pos.text = join_tokens(keyed_sentence(rng, fillers, key, spec.cand_len));
      rec.positive_ids = {pos.id};
      rec.candidates.push_back(pos);
      for (int64_t c = 1; c < spec.candidates_per_query; ++c) {
        const uint64_t other =
            (key_idx + 1 + rng.next_below(static_cast<uint64_t>(key_pool - 1))) %
            static_cast<uint64_t>(key_pool);
        Candidate neg;
        neg.id = next_cand_id++;
        neg.text =
            join_tokens(keyed_sentence(rng, fillers, keys[other], spec.cand_len));
        rec.candidates.push_back(neg);
      }
      rng.shuffle(rec.candidates.begin(), rec.candidates.end());
    } else {
      // Distinct query tokens so a target overlap is constructible exactly.
      std::vector<std::string> pool = fillers;
      rng.shuffle(pool.begin(), pool.end());
      std::vector<std::string> qtoks(pool.begin(), pool.begin() + spec.query_len);
      rec.text = join_tokens(qtoks);

      const int target =
          static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.num_classes)));
      std::vector<std::string> ctoks;
      for (int i = 0; i < target; ++i) ctoks.push_back(qtoks[static_cast<size_t>(i)]);
      // Remaining tokens come from outside the query.
      int64_t fill_at = spec.query_len;
      while (static_cast<int64_t>(ctoks.size()) < spec.cand_len)
        ctoks.push_back(pool[static_cast<size_t>(fill_at++)]);
      rng.shuffle(ctoks.begin(), ctoks.end());

      Candidate cand;
      cand.id = next_cand_id++;
      cand.text = join_tokens(ctoks);
      rec.label = classification_label_rule(rec.text, cand.text, spec.num_classes);
      rec.candidates.push_back(cand);
    }
    corpus.records.push_back(std::move(rec));
  }
  return {std::move(corpus), std::move(vocab)};
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open corpus file for write: " + path);
  for (const auto& rec : corpus.records) {
    nlohmann::json j;
    j["query_id"] = rec.query_id;
    j["text"] = rec.text;
    auto cands = nlohmann::json::array();
    for (const auto& c : rec.candidates)
      cands.push_back(nlohmann::json::array({c.id, c.text}));
    j["candidates"] = std::move(cands);
    if (corpus.is_classification())
      j["label"] = rec.label;
    else
      j["positives"] = rec.positive_ids;
    out << j.dump() << '\n';
  }
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CorpusRecord rec;
    rec.query_id = j.at("query_id").get<int64_t>();
    rec.text = j.at("text").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      Candidate cand;
      cand.id = c.at(0).get<int64_t>();
      cand.text = c.at(1).get<std::string>();
      rec.candidates.push_back(std::move(cand));
    }
    const bool classification = j.contains("label");
    if (first) {
      corpus.task = classification ? "classification" : "ranking";
      first = false;
    }
    if (classification)
      rec.label = j.at("label").get<int>();
    else
      rec.positive_ids = j.at("positives").get<std::vector<int64_t>>();
    corpus.records.push_back(std::move(rec));
  }
  if (corpus.records.empty())
    throw std::runtime_error("corpus file has no records: " + path);
  return corpus;
}

}  // namespace mixenc
