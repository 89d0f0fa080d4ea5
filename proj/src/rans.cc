#include "rateattack/rans.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "rateattack/error.h"

namespace rateattack {

namespace {

constexpr std::uint32_t kStateLow = 1u << 23;

[[noreturn]] void Corrupt(const std::string& what) {
  throw Error(ErrorCode::kCorruptStream, "rANS: " + what);
}

void CheckChannels(std::size_t n, std::span<const std::uint32_t> channels,
                   std::span<const CdfTable> tables) {
  if (channels.size() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "rANS: " + std::to_string(n) + " symbols but " +
                    std::to_string(channels.size()) + " channel entries");
  }
  for (std::uint32_t c : channels) {
    if (c >= tables.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "rANS: channel " + std::to_string(c) + " has no table");
    }
  }
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t GetU32(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  return v;
}

}  // namespace

void CdfTable::Validate() const {
  if (cdf.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "CDF table needs an escape slot");
  }
  if (cdf.front() != 0 || cdf.back() != kCdfTotal) {
    throw Error(ErrorCode::kInvalidArgument,
                "CDF table must run from 0 to 2^16");
  }
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    if (cdf[i] <= cdf[i - 1]) {
      throw Error(ErrorCode::kInvalidArgument,
                  "CDF table is not strictly increasing at " +
                      std::to_string(i));
    }
  }
}

std::vector<std::uint8_t> RansEncode(std::span<const std::int32_t> symbols,
                                     std::span<const std::uint32_t> channels,
                                     std::span<const CdfTable> tables) {
  CheckChannels(symbols.size(), channels, tables);
  for (const CdfTable& t : tables) t.Validate();

  std::vector<std::uint8_t> reversed;
  std::vector<std::int32_t> escapes;
  reversed.reserve(symbols.size() / 2 + 16);
  std::uint32_t x = kStateLow;
  for (std::size_t i = symbols.size(); i-- > 0;) {
    const CdfTable& t = tables[channels[i]];
    std::size_t index = t.escape_index();
    if (t.in_range(symbols[i])) {
      index = static_cast<std::size_t>(symbols[i] - t.offset);
    } else {
      escapes.push_back(symbols[i]);
    }
    const std::uint32_t start = t.cdf[index];
    const std::uint32_t freq = t.frequency(index);
    const std::uint64_t x_max =
        static_cast<std::uint64_t>((kStateLow >> kCdfPrecisionBits) << 8) * freq;
    while (x >= x_max) {
      reversed.push_back(static_cast<std::uint8_t>(x & 0xFF));
      x >>= 8;
    }
    x = ((x / freq) << kCdfPrecisionBits) + (x % freq) + start;
  }
  for (int i = 3; i >= 0; --i) {
    reversed.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
  }

  std::vector<std::uint8_t> out;
  out.reserve(4 + reversed.size() + 4 * escapes.size());
  PutU32(out, static_cast<std::uint32_t>(reversed.size()));
  out.insert(out.end(), reversed.rbegin(), reversed.rend());
  for (auto it = escapes.rbegin(); it != escapes.rend(); ++it) {
    PutU32(out, static_cast<std::uint32_t>(*it));
  }
  return out;
}

std::vector<std::int32_t> RansDecode(std::span<const std::uint8_t> bytes,
                                     std::span<const CdfTable> tables,
                                     std::size_t count,
                                     std::span<const std::uint32_t> channels) {
  CheckChannels(count, channels, tables);
  for (const CdfTable& t : tables) t.Validate();
  if (bytes.size() < 4) Corrupt("missing length header");
  const std::size_t n_rans = GetU32(bytes, 0);
  if (n_rans < 4 || bytes.size() - 4 < n_rans) Corrupt("bad section length");
  const std::size_t rans_end = 4 + n_rans;
  std::size_t pos = 4;
  std::size_t escape_pos = rans_end;

  std::uint32_t x = GetU32(bytes, pos);
  pos += 4;
  if (x < kStateLow) Corrupt("initial state out of range");

  std::vector<std::int32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const CdfTable& t = tables[channels[i]];
    const std::uint32_t slot = x & (kCdfTotal - 1);
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), slot);
    const std::size_t index = static_cast<std::size_t>(it - t.cdf.begin()) - 1;
    const std::uint32_t start = t.cdf[index];
    const std::uint32_t freq = t.frequency(index);
    x = freq * (x >> kCdfPrecisionBits) + slot - start;
    while (x < kStateLow) {
      if (pos >= rans_end) Corrupt("ran out of bytes");
      x = (x << 8) | bytes[pos++];
    }
    if (index == t.escape_index()) {
      if (bytes.size() - escape_pos < 4) Corrupt("escape section truncated");
      const auto v = static_cast<std::int32_t>(GetU32(bytes, escape_pos));
      escape_pos += 4;
      if (t.in_range(v)) Corrupt("escaped value lies inside the table range");
      out[i] = v;
    } else {
      out[i] = t.offset + static_cast<std::int32_t>(index);
    }
  }
  if (x != kStateLow) Corrupt("final state mismatch");
  if (pos != rans_end) Corrupt("trailing rANS bytes");
  if (escape_pos != bytes.size()) Corrupt("trailing escape bytes");
  return out;
}

double TableCodeLengthBits(std::span<const std::int32_t> symbols,
                           std::span<const std::uint32_t> channels,
                           std::span<const CdfTable> tables) {
  CheckChannels(symbols.size(), channels, tables);
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = tables[channels[i]];
    std::size_t index = t.escape_index();
    if (t.in_range(symbols[i])) {
      index = static_cast<std::size_t>(symbols[i] - t.offset);
    } else {
      bits += 32.0;
    }
    bits -= std::log2(static_cast<double>(t.frequency(index)) / kCdfTotal);
  }
  return bits;
}

}  // namespace rateattack
