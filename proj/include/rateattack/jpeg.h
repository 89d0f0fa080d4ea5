#ifndef RATEATTACK_JPEG_H_
#define RATEATTACK_JPEG_H_

// Baseline sequential JPEG with 4:4:4 sampling and the Annex K Huffman
// tables. This is both the black-box target codec and the source of the
// quantisation tables used by DCT-Net.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rateattack/image.h"

namespace rateattack {

enum class TableRole { kLuma, kChroma };

// 64 entries in [1,255]. Stored in natural (row-major) order; zigzag()
// gives the order used inside DQT segments.
class QuantTable {
 public:
  QuantTable(std::array<std::uint16_t, 64> natural, TableRole role);

  TableRole role() const { return role_; }
  const std::array<std::uint16_t, 64>& natural() const { return natural_; }
  std::uint16_t at(std::size_t u, std::size_t v) const {
    return natural_[u * 8 + v];
  }
  std::array<std::uint16_t, 64> zigzag() const;

  bool operator==(const QuantTable&) const = default;

 private:
  std::array<std::uint16_t, 64> natural_;
  TableRole role_;
};

const QuantTable& BaseLumaTable();
const QuantTable& BaseChromaTable();

// IJG quality scaling: scale = 5000/Q below 50, else 200 - 2Q;
// entry = clamp((base * scale + 50) / 100, 1, 255).
QuantTable ScaleTable(const QuantTable& base, int quality);

// kZigzag[k] is the natural index of the k-th coefficient in zigzag order.
const std::array<std::uint8_t, 64>& ZigzagOrder();

struct HuffmanSpec {
  std::array<std::uint8_t, 16> bits;  // number of codes of length 1..16
  std::vector<std::uint8_t> values;
};

const HuffmanSpec& StdDcLuma();
const HuffmanSpec& StdAcLuma();
const HuffmanSpec& StdDcChroma();
const HuffmanSpec& StdAcChroma();

// Quantised coefficients of one component: blocks in raster order, each 64
// values in natural order.
struct ComponentCoeffs {
  std::size_t blocks_wide = 0;
  std::size_t blocks_high = 0;
  std::vector<std::int16_t> coeffs;

  std::span<std::int16_t, 64> block(std::size_t i) {
    return std::span<std::int16_t, 64>(coeffs.data() + 64 * i, 64);
  }
  std::span<const std::int16_t, 64> block(std::size_t i) const {
    return std::span<const std::int16_t, 64>(coeffs.data() + 64 * i, 64);
  }
  bool operator==(const ComponentCoeffs&) const = default;
};

struct QuantizedImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::array<ComponentCoeffs, 3> components;  // Y, Cb, Cr
};

struct SymbolStats {
  std::array<std::uint64_t, 12> dc_categories{};
  std::array<std::uint64_t, 256> ac_symbols{};
};

struct JpegBitstream {
  std::vector<std::uint8_t> bytes;
  // Entropy-coded segment of the single scan, [scan_begin, scan_end).
  std::size_t scan_begin = 0;
  std::size_t scan_end = 0;
  SymbolStats stats;

  std::size_t scan_bytes() const { return scan_end - scan_begin; }
};

struct DecodedJpeg {
  Image image;  // RGB, not rounded to 8 bits
  QuantizedImage quantized;
  std::array<std::uint16_t, 64> luma_table{};    // natural order
  std::array<std::uint16_t, 64> chroma_table{};  // natural order
};

// Colour conversion, level shift, DCT and table quantisation with round
// half away from zero. Dimensions must be multiples of 8.
QuantizedImage QuantizeForJpeg(const Image& rgb, int quality);

JpegBitstream EncodeQuantized(const QuantizedImage& q, int quality);
JpegBitstream EncodeJpeg(const Image& rgb, int quality);
DecodedJpeg DecodeJpeg(std::span<const std::uint8_t> bytes);

// 8 * scan bytes / pixels. Headers and markers are excluded.
double JpegBpp(const Image& rgb, int quality);
// 8 * whole file / pixels, for diagnostics.
double JpegFileBpp(const Image& rgb, int quality);

}  // namespace rateattack

#endif  // RATEATTACK_JPEG_H_
