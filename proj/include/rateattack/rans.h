#ifndef RATEATTACK_RANS_H_
#define RATEATTACK_RANS_H_

// Static rANS over per-channel integer CDF tables.
//
// Stream layout (all integers little-endian):
//   u32  n_rans            byte count of the rANS section
//   u8   rans[n_rans]      final encoder state (u32) then renormalisation
//                          bytes, in decoder read order
//   i32  escapes[...]      raw values of escaped symbols, in stream order
//
// The coder uses a 32-bit state in [2^23, 2^31), byte-wise renormalisation
// and 16-bit probabilities. Symbols are encoded last-to-first so the decoder
// runs forward. A well-formed stream ends with the decoder state back at
// 2^23 and every byte consumed; anything else is reported as corruption.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rateattack {

inline constexpr int kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

// Cumulative frequencies for symbols offset .. offset+range-1 followed by one
// escape slot. cdf.size() == range + 2, cdf.front() == 0,
// cdf.back() == kCdfTotal, strictly increasing.
struct CdfTable {
  std::int32_t offset = 0;
  std::vector<std::uint32_t> cdf;

  std::size_t range() const { return cdf.size() - 2; }
  std::size_t escape_index() const { return cdf.size() - 2; }
  std::uint32_t frequency(std::size_t index) const {
    return cdf[index + 1] - cdf[index];
  }
  bool in_range(std::int32_t symbol) const {
    return symbol >= offset &&
           static_cast<std::int64_t>(symbol) - offset <
               static_cast<std::int64_t>(range());
  }

  // Throws kInvalidArgument when an invariant is violated.
  void Validate() const;

  bool operator==(const CdfTable&) const = default;
};

struct SymbolStream {
  std::vector<std::int32_t> symbols;
  std::vector<std::uint32_t> channels;  // table index per symbol
};

std::vector<std::uint8_t> RansEncode(std::span<const std::int32_t> symbols,
                                     std::span<const std::uint32_t> channels,
                                     std::span<const CdfTable> tables);
inline std::vector<std::uint8_t> RansEncode(const SymbolStream& stream,
                                            std::span<const CdfTable> tables) {
  return RansEncode(stream.symbols, stream.channels, tables);
}

std::vector<std::int32_t> RansDecode(std::span<const std::uint8_t> bytes,
                                     std::span<const CdfTable> tables,
                                     std::size_t count,
                                     std::span<const std::uint32_t> channels);

// Ideal code length in bits under the tables: sum of -log2 p(symbol), plus
// 32 raw bits for each escaped symbol.
double TableCodeLengthBits(std::span<const std::int32_t> symbols,
                           std::span<const std::uint32_t> channels,
                           std::span<const CdfTable> tables);

}  // namespace rateattack

#endif  // RATEATTACK_RANS_H_
