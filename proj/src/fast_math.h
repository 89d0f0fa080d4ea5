#ifndef RATEATTACK_SRC_FAST_MATH_H_
#define RATEATTACK_SRC_FAST_MATH_H_

// Branch-free exp/log/tanh/sigmoid built from arithmetic and bit operations
// only, so loops calling them auto-vectorise (given -fno-trapping-math).
// Relative error is a few ulp over the clamped domain.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>

namespace rateattack::internal {

inline double FastExp(double x) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
  x = std::min(std::max(x, -708.0), 709.0);
  const double kd = x * kLog2e + kShifter;
  const double n = kd - kShifter;
  const double r = (x - n * kLn2Hi) - n * kLn2Lo;  // |r| <= ln2/2
  // Taylor to degree 12 on |r| <= 0.347.
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // n sits in the low mantissa bits of kd.
  const std::int64_t ni = std::bit_cast<std::int64_t>(kd) -
                          std::bit_cast<std::int64_t>(kShifter);
  const double scale = std::bit_cast<double>((ni + 1023) << 52);
  return p * scale;
}

// Natural log for positive normal x.
inline double FastLog(double x) {
  constexpr double kLn2 = 0.69314718055994530942;
  const std::int64_t bits = std::bit_cast<std::int64_t>(x);
  // Split x = m * 2^e with m in [sqrt(1/2), sqrt(2)).
  const std::int64_t shifted = bits - 0x3FE6A09E667F3BCDll;
  const std::int64_t e = shifted >> 52;
  const double m = std::bit_cast<double>(bits - (e << 52));
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  // 2 atanh(s) = 2 (s + s^3/3 + s^5/5 + ...), |s| <= 0.1716.
  double p = 1.0 / 21.0;
  p = p * s2 + 1.0 / 19.0;
  p = p * s2 + 1.0 / 17.0;
  p = p * s2 + 1.0 / 15.0;
  p = p * s2 + 1.0 / 13.0;
  p = p * s2 + 1.0 / 11.0;
  p = p * s2 + 1.0 / 9.0;
  p = p * s2 + 1.0 / 7.0;
  p = p * s2 + 1.0 / 5.0;
  p = p * s2 + 1.0 / 3.0;
  p = p * s2 + 1.0;
  return static_cast<double>(e) * kLn2 + 2.0 * s * p;
}

inline double FastTanh(double x) {
  x = std::min(std::max(x, -20.0), 20.0);
  return 1.0 - 2.0 / (FastExp(2.0 * x) + 1.0);
}

inline double FastSigmoid(double x) { return 1.0 / (1.0 + FastExp(-x)); }

// Dot product with eight independent partial sums; fixed association order
// keeps results deterministic while still vectorising.
inline double Dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline double SumOf(const double* a, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace rateattack::internal

#endif  // RATEATTACK_SRC_FAST_MATH_H_
