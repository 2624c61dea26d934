#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace nanotile {

// Q4.12: 16-bit two's complement, value = raw * 2^-12, range [-8, 8 - 2^-12].
struct Q412 {
  int16_t raw = 0;

  static constexpr int kFracBits = 12;
  static constexpr int32_t kOne = 1 << kFracBits;
  static constexpr int32_t kMaxRaw = std::numeric_limits<int16_t>::max();
  static constexpr int32_t kMinRaw = std::numeric_limits<int16_t>::min();

  static constexpr Q412 from_raw(int32_t r) { return Q412{static_cast<int16_t>(r)}; }
  static constexpr Q412 saturate(int64_t r) {
    return from_raw(static_cast<int32_t>(std::clamp<int64_t>(r, kMinRaw, kMaxRaw)));
  }

  friend constexpr bool operator==(Q412, Q412) = default;
  friend constexpr auto operator<=>(Q412, Q412) = default;
};

// Accumulator at the product scale 2^-24 (two Q4.12 factors).
struct Acc32 {
  int32_t raw = 0;

  static constexpr int kFracBits = 2 * Q412::kFracBits;

  friend constexpr bool operator==(Acc32, Acc32) = default;
};

// Longest dot product a layer may declare; checked when the graph is built.
// Whether a given accumulation actually fits 32 bits depends on the operand
// magnitudes, so mac() additionally traps on overflow in debug builds.
inline constexpr int64_t kMaxAccumulationLength = int64_t{1} << 15;

class FxpError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// floor(x * 4096), saturated to the 16-bit range.
inline Q412 quantize(double x) {
  if (!std::isfinite(x)) throw FxpError("non-finite value");
  const double scaled = std::floor(x * Q412::kOne);
  if (scaled >= Q412::kMaxRaw) return Q412::from_raw(Q412::kMaxRaw);
  if (scaled <= Q412::kMinRaw) return Q412::from_raw(Q412::kMinRaw);
  return Q412::from_raw(static_cast<int32_t>(scaled));
}

constexpr double dequantize(Q412 q) { return static_cast<double>(q.raw) / Q412::kOne; }

inline bool mac_overflows(Acc32 acc, Q412 a, Q412 b) {
  int32_t out = 0;
  return __builtin_add_overflow(acc.raw, int32_t{a.raw} * int32_t{b.raw}, &out);
}

inline Acc32 mac(Acc32 acc, Q412 a, Q412 b) {
  const int32_t prod = int32_t{a.raw} * int32_t{b.raw};
#ifndef NDEBUG
  int32_t out = 0;
  if (__builtin_add_overflow(acc.raw, prod, &out)) {
    assert(false && "Acc32 overflow: accumulation headroom violated");
  }
  return Acc32{out};
#else
  return Acc32{static_cast<int32_t>(static_cast<uint32_t>(acc.raw) + static_cast<uint32_t>(prod))};
#endif
}

// Bias enters the accumulator pre-shifted, so it is exact.
constexpr Acc32 bias_to_acc(Q412 b) { return Acc32{int32_t{b.raw} * Q412::kOne}; }

// Arithmetic shift by 12 (floor), then saturate.
constexpr Q412 renorm(Acc32 acc) { return Q412::saturate(acc.raw >> Q412::kFracBits); }

constexpr Q412 relu(Q412 x) { return x.raw < 0 ? Q412{} : x; }

constexpr Q412 sat_add(Q412 a, Q412 b) { return Q412::saturate(int32_t{a.raw} + int32_t{b.raw}); }

}  // namespace nanotile
