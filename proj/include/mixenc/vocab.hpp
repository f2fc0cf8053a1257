#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixenc {

inline constexpr int64_t kPadId = 0;
inline constexpr int64_t kClsId = 1;
inline constexpr int64_t kSepId = 2;
inline constexpr int64_t kFirstContextTokenId = 3;

// Whitespace-token vocabulary with fixed reserved ids: PAD=0, CLS=1, SEP=2,
// then kmax context-marker tokens [S1]..[Sk] at ids 3..3+kmax-1.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const std::vector<std::string>& words, int64_t kmax);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  int64_t kmax() const { return kmax_; }

  bool contains(const std::string& token) const {
    return ids_.count(token) != 0;
  }
  int64_t id_of(const std::string& token) const;
  const std::string& token_of(int64_t id) const;

  // Id of the i-th context marker token, i in [1, kmax].
  int64_t context_token_id(int64_t i) const;

  // Whitespace tokenization; unknown tokens raise.
  std::vector<int64_t> encode_text(const std::string& text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> ids_;
  int64_t kmax_ = 0;
};

// Token ids plus validity mask (true = real token). Padding may only
// appear as a suffix.
struct TokenSequence {
  std::vector<int64_t> ids;
  std::vector<uint8_t> mask;

  int64_t length() const { return static_cast<int64_t>(ids.size()); }
};

TokenSequence make_sequence(std::vector<int64_t> ids);

// Right-pads sequences to a common length with PAD.
struct PaddedBatch {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<int64_t> ids;   // rows x cols
  std::vector<uint8_t> mask;  // rows x cols
};

PaddedBatch pad_batch(const std::vector<TokenSequence>& seqs);

}  // namespace mixenc
