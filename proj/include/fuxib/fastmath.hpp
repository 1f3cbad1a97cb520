#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace fuxib {

// Branch-free single-precision log2/exp2 for the hot construction loops.
// Pure arithmetic and bit manipulation, so compilers can vectorize the
// surrounding loops; absolute accuracy is a few float ulps, which is all a
// float pipeline carries anyway. Double-precision callers keep libm.

// valid for finite x > 0
inline float fast_log2(float x) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
  int e = static_cast<int>(bits >> 23) - 127;
  float m = std::bit_cast<float>((bits & 0x007fffffu) | 0x3f800000u);  // [1, 2)
  // center the mantissa in [1/sqrt2, sqrt2)
  bool high = m >= 1.41421356f;
  m = high ? 0.5f * m : m;
  float ea = static_cast<float>(e + (high ? 1 : 0));
  // log2(m) = 2*atanh(z)/ln2 with z = (m-1)/(m+1), |z| < 0.1716
  float z = (m - 1.0f) / (m + 1.0f);
  float z2 = z * z;
  float series = 1.0f + z2 * (0.33333333f + z2 * (0.20000000f + z2 * 0.14285714f));
  return ea + 2.8853900817779268f * z * series;  // 2/ln2
}

// valid for x >= -126; larger inputs than ~127 overflow like exp2 would
inline float fast_exp2(float x) {
  x = x < -126.0f ? -126.0f : x;
  // round to nearest integer without SSE4 rounding ops
  int ti = static_cast<int>(x + (x >= 0.0f ? 0.5f : -0.5f));
  float f = x - static_cast<float>(ti);  // [-0.5, 0.5]
  // Taylor of 2^f about 0, degree 6
  float p = 1.0f +
            f * (0.69314718f +
                 f * (0.24022651f +
                      f * (0.05550411f +
                           f * (0.00961813f +
                                f * (0.00133336f + f * 0.00015404f)))));
  float scale = std::bit_cast<float>(static_cast<std::uint32_t>(ti + 127) << 23);
  return scale * p;
}

inline float fast_exp(float x) { return fast_exp2(x * 1.4426950408889634f); }

// valid for x >= 0; the small branch avoids the 1+x rounding loss and
// compiles to a blend under vectorization
inline float fast_log1p(float x) {
  float small = x * (1.0f + x * (-0.5f + x * 0.33333333f));
  float big = fast_log2(1.0f + x) * 0.6931471805599453f;
  return x < 0.001953125f ? small : big;
}

// precision-dispatched math used by the bias kernels: float uses the fast
// approximations, double keeps libm exactness for the correctness suites
template <class Real>
struct BiasMath {
  static Real log2(Real x) { return std::log2(x); }
  static Real exp2(Real x) { return std::exp2(x); }
  static Real exp(Real x) { return std::exp(x); }
  static Real log1p(Real x) { return std::log1p(x); }
};

template <>
struct BiasMath<float> {
  static float log2(float x) { return fast_log2(x); }
  static float exp2(float x) { return fast_exp2(x); }
  static float exp(float x) { return fast_exp(x); }
  static float log1p(float x) { return fast_log1p(x); }
};

}  // namespace fuxib
