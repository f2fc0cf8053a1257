#include "mixenc/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mixenc {

Vocab Vocab::build(const std::vector<std::string>& words, int64_t kmax) {
  if (kmax < 0) throw std::runtime_error("vocab kmax must be >= 0");
  Vocab v;
  v.kmax_ = kmax;
  v.tokens_ = {"[PAD]", "[CLS]", "[SEP]"};
  for (int64_t i = 1; i <= kmax; ++i)
    v.tokens_.push_back("[S" + std::to_string(i) + "]");
  for (const auto& w : words) v.tokens_.push_back(w);
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int64_t>(i)).second)
      throw std::runtime_error("duplicate vocabulary token '" + v.tokens_[i] +
                               "'");
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open vocab file for write: " + path);
  for (size_t i = 0; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  int64_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("malformed vocab line: " + line);
    const std::string token = line.substr(0, tab);
    const int64_t id = std::stoll(line.substr(tab + 1));
    if (id != expected)
      throw std::runtime_error("vocab ids must be dense and ascending, got " +
                               std::to_string(id) + " at position " +
                               std::to_string(expected));
    v.tokens_.push_back(token);
    v.ids_.emplace(token, id);
    ++expected;
  }
  // kmax recovered from the [S*] run that starts at id 3.
  int64_t k = 0;
  while (v.contains("[S" + std::to_string(k + 1) + "]")) ++k;
  v.kmax_ = k;
  if (v.size() < kFirstContextTokenId)
    throw std::runtime_error("vocab too small: reserved ids missing");
  return v;
}

int64_t Vocab::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end())
    throw std::runtime_error("token not in vocabulary: '" + token + "'");
  return it->second;
}

const std::string& Vocab::token_of(int64_t id) const {
  if (id < 0 || id >= size())
    throw std::runtime_error("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

int64_t Vocab::context_token_id(int64_t i) const {
  if (i < 1 || i > kmax_)
    throw std::runtime_error("context token index " + std::to_string(i) +
                             " outside [1, " + std::to_string(kmax_) + "]");
  return kFirstContextTokenId + i - 1;
}

std::vector<int64_t> Vocab::encode_text(const std::string& text) const {
  std::vector<int64_t> ids;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) ids.push_back(id_of(tok));
  return ids;
}

TokenSequence make_sequence(std::vector<int64_t> ids) {
  TokenSequence seq;
  seq.mask.assign(ids.size(), 1);
  seq.ids = std::move(ids);
  return seq;
}

PaddedBatch pad_batch(const std::vector<TokenSequence>& seqs) {
  PaddedBatch b;
  b.rows = static_cast<int64_t>(seqs.size());
  for (const auto& s : seqs) b.cols = std::max(b.cols, s.length());
  if (b.cols == 0) b.cols = 1;
  b.ids.assign(b.rows * b.cols, kPadId);
  b.mask.assign(b.rows * b.cols, 0);
  for (int64_t r = 0; r < b.rows; ++r) {
    const auto& s = seqs[static_cast<size_t>(r)];
    for (int64_t c = 0; c < s.length(); ++c) {
      b.ids[r * b.cols + c] = s.ids[static_cast<size_t>(c)];
      b.mask[r * b.cols + c] = s.mask[static_cast<size_t>(c)];
    }
  }
  return b;
}

}  // namespace mixenc
