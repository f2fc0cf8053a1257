#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

#include "mixenc/parallel.hpp"

namespace mixenc {

// Dense kernels used by every matmul in the engine.
//
// Each output element is accumulated with fma in an order that depends only
// on the inner dimension, never on the surrounding matrix shape. Scoring a
// candidate alone or inside a batch therefore produces bit-identical values,
// which several regression tests rely on.

namespace detail {

template <class T>
inline constexpr int64_t kLanes = static_cast<int64_t>(64 / sizeof(T));

// Lane-split dot product; the lane layout is a pure function of len.
template <class T>
inline T dot_fma(const T* a, const T* b, int64_t len) {
  constexpr int64_t W = kLanes<T>;
  T lanes[W] = {};
  int64_t k = 0;
  for (; k + W <= len; k += W)
    for (int64_t l = 0; l < W; ++l)
      lanes[l] = std::fma(a[k + l], b[k + l], lanes[l]);
  T tail = T(0);
  for (; k < len; ++k) tail = std::fma(a[k], b[k], tail);
  T total = tail;
  for (int64_t l = 0; l < W; ++l) total += lanes[l];
  return total;
}

}  // namespace detail

// c[m x n] (+)= a[m x p] * b[p x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t p, int64_t n,
             bool accumulate, bool allow_parallel = false) {
  auto rows = [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::memset(crow, 0, sizeof(T) * n);
      const T* arow = a + i * p;
      for (int64_t k = 0; k < p; ++k) {
        const T aik = arow[k];
        const T* brow = b + k * n;
        for (int64_t j = 0; j < n; ++j)
          crow[j] = std::fma(aik, brow[j], crow[j]);
      }
    }
  };
  if (allow_parallel)
    parallel_for(m, static_cast<uint64_t>(m * p * n), rows);
  else
    rows(0, m);
}

// c[m x n] (+)= a[m x p] * b[n x p]^T  (row-by-row dot products)
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t p, int64_t n,
             bool accumulate, bool allow_parallel = false) {
  auto rows = [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* arow = a + i * p;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const T v = detail::dot_fma(arow, b + j * p, p);
        crow[j] = accumulate ? crow[j] + v : v;
      }
    }
  };
  if (allow_parallel)
    parallel_for(m, static_cast<uint64_t>(m * p * n), rows);
  else
    rows(0, m);
}

// c[m x n] (+)= a[p x m]^T * b[p x n]  (k-outer; column blocks shardable)
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t p, int64_t n,
             bool accumulate, bool allow_parallel = false) {
  auto cols = [=](int64_t j0, int64_t j1) {
    if (!accumulate)
      for (int64_t i = 0; i < m; ++i)
        std::memset(c + i * n + j0, 0, sizeof(T) * (j1 - j0));
    for (int64_t k = 0; k < p; ++k) {
      const T* arow = a + k * m;
      const T* brow = b + k * n;
      for (int64_t i = 0; i < m; ++i) {
        const T aki = arow[i];
        T* crow = c + i * n;
        for (int64_t j = j0; j < j1; ++j)
          crow[j] = std::fma(aki, brow[j], crow[j]);
      }
    }
  };
  if (allow_parallel && n >= 2 * detail::kLanes<T>)
    parallel_for(n, static_cast<uint64_t>(m * p * n),
                 [&](int64_t b0, int64_t b1) { cols(b0, b1); });
  else
    cols(0, n);
}

}  // namespace mixenc
