#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace mixenc::fm {

// Vectorization-friendly float transcendentals. The f32 engine runs these in
// hot loops (softmax, gelu, sigmoid); accuracy is a few ulp, far inside the
// f32-vs-f64 oracle tolerances. The f64 engine always uses libm.

inline float fast_expf(float x) {
  constexpr float kLog2e = 1.44269504088896341f;
  constexpr float kLn2Hi = 0.693359375f;
  constexpr float kLn2Lo = -2.12194440e-4f;
  // 1.5 * 2^23: adding and subtracting rounds to the nearest integer
  // without a libm call, so the surrounding loops stay vectorizable.
  constexpr float kRoundShift = 12582912.0f;
  x = std::min(88.0f, std::max(-87.0f, x));
  const float t = x * kLog2e;
  const float fi = (t + kRoundShift) - kRoundShift;
  // r = x - fi*ln2, split constant for accuracy
  float r = std::fma(-fi, kLn2Hi, x);
  r = std::fma(-fi, kLn2Lo, r);
  // degree-7 Taylor of exp(r), |r| <= 0.3466
  float p = 1.0f / 5040.0f;
  p = std::fma(p, r, 1.0f / 720.0f);
  p = std::fma(p, r, 1.0f / 120.0f);
  p = std::fma(p, r, 1.0f / 24.0f);
  p = std::fma(p, r, 1.0f / 6.0f);
  p = std::fma(p, r, 0.5f);
  p = std::fma(p, r, 1.0f);
  p = std::fma(p, r, 1.0f);
  const int e = static_cast<int>(fi);
  const float scale = std::bit_cast<float>(static_cast<uint32_t>(e + 127) << 23);
  return p * scale;
}

// Branch-free so surrounding loops vectorize; saturates within 3e-8 of
// the true +-1 limits at the clamp boundary.
inline float fast_tanhf(float x) {
  const float xc = std::min(9.0f, std::max(-9.0f, x));
  return 1.0f - 2.0f / (fast_expf(2.0f * xc) + 1.0f);
}

template <class T>
inline T exp_fn(T x) {
  return std::exp(x);
}
template <>
inline float exp_fn<float>(float x) {
  return fast_expf(x);
}

template <class T>
inline T tanh_fn(T x) {
  return std::tanh(x);
}
template <>
inline float tanh_fn<float>(float x) {
  return fast_tanhf(x);
}

}  // namespace mixenc::fm
