#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mixenc/encoder.hpp"

namespace mixenc {

struct CacheError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Learned-code pathway for candidate pre-computation: k codes attend over
// the encoder's final token states through single-head projections.
template <class T>
struct ContextCodeParams {
  Tensor<T> codes;          // [k x d]
  Tensor<T> q_w, k_w, v_w;  // [d x d]
  Tensor<T> out_w, out_b;   // [d x d], [d]

  static ContextCodeParams make(int64_t k, int64_t d) {
    ContextCodeParams p;
    p.codes = Tensor<T>::zeros({k, d}, true);
    p.q_w = Tensor<T>::zeros({d, d}, true);
    p.k_w = Tensor<T>::zeros({d, d}, true);
    p.v_w = Tensor<T>::zeros({d, d}, true);
    p.out_w = Tensor<T>::zeros({d, d}, true);
    p.out_b = Tensor<T>::zeros({d}, true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".codes.w", codes);
    fn(prefix + ".q.w", q_w);
    fn(prefix + ".k.w", k_w);
    fn(prefix + ".v.w", v_w);
    fn(prefix + ".out.w", out_w);
    fn(prefix + ".out.b", out_b);
  }
};

// Pre-computed candidate representations: context [N x k x d] plus the
// initial per-candidate state [N x d] (mean of the context rows).
template <class T>
struct CandidateReps {
  Tensor<T> context;
  Tensor<T> state0;
};

// Marker-token pathway: prepend [S1..Sk], run the full encoder, and take
// the output rows at the marker positions. The context block is literally
// a row-slice of one encode call.
template <class T>
CandidateReps<T> precompute_marker_tokens(const EncoderParams<T>& enc,
                                          const std::vector<TokenSequence>& cands,
                                          int64_t k, const Vocab& vocab) {
  if (cands.empty()) throw CacheError("precompute: empty candidate list");
  std::vector<TokenSequence> prefixed;
  prefixed.reserve(cands.size());
  for (const auto& c : cands) {
    if (c.length() == 0) throw CacheError("precompute: empty candidate");
    std::vector<int64_t> ids;
    ids.reserve(static_cast<size_t>(k) + c.ids.size());
    for (int64_t i = 1; i <= k; ++i) ids.push_back(vocab.context_token_id(i));
    ids.insert(ids.end(), c.ids.begin(), c.ids.end());
    if (static_cast<int64_t>(ids.size()) > enc.max_len)
      throw CacheError("candidate too long after prepending " +
                       std::to_string(k) + " marker tokens");
    prefixed.push_back(make_sequence(std::move(ids)));
  }
  PaddedBatch batch = pad_batch(prefixed);
  Tensor<T> out = encode(enc, batch);         // [N x cols x d]
  Tensor<T> ctx = slice(out, 1, 0, k);        // [N x k x d]
  CandidateReps<T> reps;
  reps.context = ctx;
  reps.state0 = reduce_mean(ctx, 1);          // [N x d]
  return reps;
}

template <class T>
CandidateReps<T> precompute_context_codes(const EncoderParams<T>& enc,
                                          const ContextCodeParams<T>& cc,
                                          const std::vector<TokenSequence>& cands) {
  if (cands.empty()) throw CacheError("precompute: empty candidate list");
  for (const auto& c : cands)
    if (c.length() == 0) throw CacheError("precompute: empty candidate");
  PaddedBatch batch = pad_batch(cands);
  Tensor<T> y = encode(enc, batch);  // [N x t x d]
  Tensor<T> m = mask_tensor<T>(batch.mask, {batch.rows, batch.cols});
  const int64_t n = batch.rows;
  const int64_t k = cc.codes.shape()[0];
  const int64_t d = cc.codes.shape()[1];
  Tensor<T> q = linear(cc.codes, cc.q_w, Tensor<T>());
  Tensor<T> qb = broadcast_to(reshape(q, {1, k, d}), {n, k, d});
  Tensor<T> keys = linear(y, cc.k_w, Tensor<T>());
  Tensor<T> vals = linear(y, cc.v_w, Tensor<T>());
  Tensor<T> ctx =
      multihead_attention(qb, keys, vals, 1, cc.out_w, cc.out_b, &m);
  CandidateReps<T> reps;
  reps.context = ctx;
  reps.state0 = reduce_mean(ctx, 1);
  return reps;
}

// On-disk cache. Little-endian layout:
//   magic "MIXC" | u32 version | u64 N | u32 k | u32 d | u8 float_width |
//   u8 strategy | N x { u64 id | k*d floats | d floats }
// Entries are ordered by strictly increasing candidate id.
template <class T>
struct CandidateCache {
  static constexpr uint32_t kVersion = 1;

  int64_t k = 0;
  int64_t dim = 0;
  char strategy = 'S';
  std::vector<int64_t> ids;
  std::vector<T> context;  // N * k * dim
  std::vector<T> state0;   // N * dim

  int64_t size() const { return static_cast<int64_t>(ids.size()); }

  static int64_t expected_file_bytes(int64_t n, int64_t k, int64_t d,
                                     int64_t float_width) {
    const int64_t header = 4 + 4 + 8 + 4 + 4 + 1 + 1;
    return header + n * (8 + float_width * (k * d + d));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CacheError("cannot open cache file for write: " + path);
    out.write("MIXC", 4);
    auto put = [&out](const void* p, size_t n) {
      out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    const uint32_t version = kVersion;
    const uint64_t n64 = static_cast<uint64_t>(size());
    const uint32_t k32 = static_cast<uint32_t>(k);
    const uint32_t d32 = static_cast<uint32_t>(dim);
    const uint8_t width = static_cast<uint8_t>(sizeof(T));
    const uint8_t strat = static_cast<uint8_t>(strategy);
    put(&version, 4);
    put(&n64, 8);
    put(&k32, 4);
    put(&d32, 4);
    put(&width, 1);
    put(&strat, 1);
    for (int64_t i = 0; i < size(); ++i) {
      const uint64_t id = static_cast<uint64_t>(ids[i]);
      put(&id, 8);
      put(context.data() + i * k * dim, sizeof(T) * k * dim);
      put(state0.data() + i * dim, sizeof(T) * dim);
    }
    if (!out) throw CacheError("short write to cache file: " + path);
  }

  static CandidateCache load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CacheError("cannot open cache file: " + path);
    auto get = [&in, &path](void* p, size_t n) {
      in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
      if (in.gcount() != static_cast<std::streamsize>(n))
        throw CacheError("truncated cache file: " + path);
    };
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, "MIXC", 4) != 0)
      throw CacheError("bad cache magic in " + path);
    uint32_t version;
    get(&version, 4);
    if (version != kVersion)
      throw CacheError("unsupported cache version " + std::to_string(version));
    uint64_t n64;
    uint32_t k32, d32;
    uint8_t width, strat;
    get(&n64, 8);
    get(&k32, 4);
    get(&d32, 4);
    get(&width, 1);
    get(&strat, 1);
    if (width != sizeof(T))
      throw CacheError("cache float width " + std::to_string(width) +
                       " does not match requested " +
                       std::to_string(sizeof(T)));
    CandidateCache c;
    c.k = k32;
    c.dim = d32;
    c.strategy = static_cast<char>(strat);
    c.ids.resize(n64);
    c.context.resize(n64 * c.k * c.dim);
    c.state0.resize(n64 * c.dim);
    int64_t prev = -1;
    for (uint64_t i = 0; i < n64; ++i) {
      uint64_t id;
      get(&id, 8);
      c.ids[i] = static_cast<int64_t>(id);
      if (c.ids[i] <= prev)
        throw CacheError("cache ids not strictly increasing at entry " +
                         std::to_string(i));
      prev = c.ids[i];
      get(c.context.data() + static_cast<int64_t>(i) * c.k * c.dim,
          sizeof(T) * c.k * c.dim);
      get(c.state0.data() + static_cast<int64_t>(i) * c.dim, sizeof(T) * c.dim);
      for (int64_t j = 0; j < c.k * c.dim; ++j) {
        const T v = c.context[static_cast<int64_t>(i) * c.k * c.dim + j];
        if (!std::isfinite(static_cast<double>(v)))
          throw CacheError("non-finite value in cache entry " + std::to_string(i));
      }
    }
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
      throw CacheError("trailing bytes after cache payload: " + path);
    return c;
  }

  int64_t index_of(int64_t id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id)
      throw CacheError("candidate id " + std::to_string(id) + " not in cache");
    return static_cast<int64_t>(it - ids.begin());
  }

  // Gathers entries for the requested ids, preserving request order.
  CandidateReps<T> lookup(const std::vector<int64_t>& want) const {
    const int64_t n = static_cast<int64_t>(want.size());
    std::vector<T> ctx(n * k * dim), st(n * dim);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t at = index_of(want[static_cast<size_t>(i)]);
      std::memcpy(ctx.data() + i * k * dim, context.data() + at * k * dim,
                  sizeof(T) * k * dim);
      std::memcpy(st.data() + i * dim, state0.data() + at * dim,
                  sizeof(T) * dim);
    }
    CandidateReps<T> reps;
    reps.context = Tensor<T>::from_data({n, k, dim}, std::move(ctx));
    reps.state0 = Tensor<T>::from_data({n, dim}, std::move(st));
    return reps;
  }
};

}  // namespace mixenc
