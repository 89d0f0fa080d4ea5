#include "rateattack/jpeg.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>

#include "rateattack/blockdct.h"
#include "rateattack/error.h"
#include "rateattack/tensor.h"

namespace rateattack {

// ---------------------------------------------------------------------------
// Tables

QuantTable::QuantTable(std::array<std::uint16_t, 64> natural, TableRole role)
    : natural_(natural), role_(role) {
  for (std::uint16_t v : natural_) {
    if (v < 1 || v > 255) {
      throw Error(ErrorCode::kInvalidArgument,
                  "quantisation table entries must lie in [1,255]");
    }
  }
}

std::array<std::uint16_t, 64> QuantTable::zigzag() const {
  std::array<std::uint16_t, 64> out{};
  const auto& zz = ZigzagOrder();
  for (std::size_t k = 0; k < 64; ++k) out[k] = natural_[zz[k]];
  return out;
}

const QuantTable& BaseLumaTable() {
  static const QuantTable table(
      {16, 11, 10, 16, 24,  40,  51,  61,   //
       12, 12, 14, 19, 26,  58,  60,  55,   //
       14, 13, 16, 24, 40,  57,  69,  56,   //
       14, 17, 22, 29, 51,  87,  80,  62,   //
       18, 22, 37, 56, 68,  109, 103, 77,   //
       24, 35, 55, 64, 81,  104, 113, 92,   //
       49, 64, 78, 87, 103, 121, 120, 101,  //
       72, 92, 95, 98, 112, 100, 103, 99},
      TableRole::kLuma);
  return table;
}

const QuantTable& BaseChromaTable() {
  static const QuantTable table(
      {17, 18, 24, 47, 99, 99, 99, 99,  //
       18, 21, 26, 66, 99, 99, 99, 99,  //
       24, 26, 56, 99, 99, 99, 99, 99,  //
       47, 66, 99, 99, 99, 99, 99, 99,  //
       99, 99, 99, 99, 99, 99, 99, 99,  //
       99, 99, 99, 99, 99, 99, 99, 99,  //
       99, 99, 99, 99, 99, 99, 99, 99,  //
       99, 99, 99, 99, 99, 99, 99, 99},
      TableRole::kChroma);
  return table;
}

QuantTable ScaleTable(const QuantTable& base, int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorCode::kInvalidArgument,
                "JPEG quality must be in [1,100], got " +
                    std::to_string(quality));
  }
  const long scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<std::uint16_t, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const long v = (base.natural()[i] * scale + 50) / 100;
    out[i] = static_cast<std::uint16_t>(std::clamp(v, 1L, 255L));
  }
  return QuantTable(out, base.role());
}

const std::array<std::uint8_t, 64>& ZigzagOrder() {
  static const std::array<std::uint8_t, 64> order = [] {
    std::array<std::uint8_t, 64> zz{};
    std::size_t k = 0;
    for (std::size_t s = 0; s < 15; ++s) {
      // Anti-diagonal u + v = s; even diagonals run bottom-left to top-right.
      const std::size_t lo = s < 8 ? 0 : s - 7;
      const std::size_t hi = s < 8 ? s : 7;
      for (std::size_t i = lo; i <= hi; ++i) {
        const std::size_t u = (s % 2 == 0) ? s - i : i;
        const std::size_t v = s - u;
        zz[k++] = static_cast<std::uint8_t>(u * 8 + v);
      }
    }
    return zz;
  }();
  return order;
}

const HuffmanSpec& StdDcLuma() {
  static const HuffmanSpec spec{
      {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
      {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return spec;
}

const HuffmanSpec& StdDcChroma() {
  static const HuffmanSpec spec{
      {0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
      {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return spec;
}

const HuffmanSpec& StdAcLuma() {
  static const HuffmanSpec spec{
      {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
      {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41,
       0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91,
       0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24,
       0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a,
       0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38,
       0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53,
       0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66,
       0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79,
       0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93,
       0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
       0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7,
       0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9,
       0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1,
       0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2,
       0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return spec;
}

const HuffmanSpec& StdAcChroma() {
  static const HuffmanSpec spec{
      {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
      {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12,
       0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14,
       0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15,
       0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17,
       0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37,
       0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a,
       0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65,
       0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78,
       0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a,
       0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3,
       0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5,
       0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7,
       0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9,
       0xda, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2,
       0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
  return spec;
}

// ---------------------------------------------------------------------------
// Huffman coding

namespace {

struct EncodeTable {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> length{};  // 0 = symbol absent
};

EncodeTable BuildEncodeTable(const HuffmanSpec& spec) {
  EncodeTable t;
  std::uint32_t code = 0;
  std::size_t k = 0;
  for (std::size_t len = 1; len <= 16; ++len) {
    for (std::size_t i = 0; i < spec.bits[len - 1]; ++i, ++k) {
      t.code[spec.values.at(k)] = static_cast<std::uint16_t>(code++);
      t.length[spec.values[k]] = static_cast<std::uint8_t>(len);
    }
    code <<= 1;
  }
  return t;
}

struct DecodeTable {
  std::array<std::int32_t, 17> maxcode{};
  std::array<std::int32_t, 17> mincode{};
  std::array<std::int32_t, 17> valptr{};
  std::vector<std::uint8_t> values;
};

DecodeTable BuildDecodeTable(const HuffmanSpec& spec) {
  DecodeTable t;
  t.values = spec.values;
  std::int32_t code = 0;
  std::int32_t k = 0;
  for (std::size_t len = 1; len <= 16; ++len) {
    const std::int32_t n = spec.bits[len - 1];
    if (n == 0) {
      t.maxcode[len] = -1;
    } else {
      t.valptr[len] = k;
      t.mincode[len] = code;
      code += n;
      k += n;
      t.maxcode[len] = code - 1;
    }
    code <<= 1;
  }
  return t;
}

int Category(int v) {
  unsigned a = static_cast<unsigned>(std::abs(v));
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void Put(std::uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++filled_ == 8) Flush();
    }
  }

  // Pads the final byte with 1-bits.
  void Finish() {
    while (filled_ != 0) Put(1, 1);
  }

 private:
  void Flush() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    filled_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int filled_ = 0;
};

void PutMarker(std::vector<std::uint8_t>& out, std::uint8_t marker) {
  out.push_back(0xFF);
  out.push_back(marker);
}

void PutU16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void PutHuffmanSegment(std::vector<std::uint8_t>& out, int table_class,
                       int id, const HuffmanSpec& spec) {
  PutMarker(out, 0xC4);
  PutU16(out, 2 + 1 + 16 + spec.values.size());
  out.push_back(static_cast<std::uint8_t>((table_class << 4) | id));
  out.insert(out.end(), spec.bits.begin(), spec.bits.end());
  out.insert(out.end(), spec.values.begin(), spec.values.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

QuantizedImage QuantizeForJpeg(const Image& rgb, int quality) {
  if (rgb.width % 8 != 0 || rgb.height % 8 != 0 || rgb.width == 0 ||
      rgb.height == 0) {
    throw Error(ErrorCode::kDimension,
                "JPEG encode needs dimensions that are multiples of 8, got " +
                    std::to_string(rgb.width) + "x" +
                    std::to_string(rgb.height));
  }
  const QuantTable luma = ScaleTable(BaseLumaTable(), quality);
  const QuantTable chroma = ScaleTable(BaseChromaTable(), quality);
  Image ycc = RgbToYcbcr(rgb);
  for (double& v : ycc.data) v = (v - 0.5) * 255.0;
  const CoeffTensor coeffs =
      BlockDctForward(ycc.data, 3, ycc.height, ycc.width);

  QuantizedImage q;
  q.width = rgb.width;
  q.height = rgb.height;
  const std::size_t blocks = coeffs.channel_size();
  for (std::size_t p = 0; p < 3; ++p) {
    const QuantTable& table = p == 0 ? luma : chroma;
    ComponentCoeffs& comp = q.components[p];
    comp.blocks_wide = coeffs.width;
    comp.blocks_high = coeffs.height;
    comp.coeffs.resize(blocks * 64);
    for (std::size_t k = 0; k < 64; ++k) {
      const double step = table.natural()[k];
      const double* chan = coeffs.data.data() + (p * 64 + k) * blocks;
      for (std::size_t b = 0; b < blocks; ++b) {
        comp.coeffs[b * 64 + k] =
            static_cast<std::int16_t>(RoundHalfAway(chan[b] / step));
      }
    }
  }
  return q;
}

JpegBitstream EncodeQuantized(const QuantizedImage& q, int quality) {
  const QuantTable luma = ScaleTable(BaseLumaTable(), quality);
  const QuantTable chroma = ScaleTable(BaseChromaTable(), quality);
  JpegBitstream stream;
  auto& out = stream.bytes;

  PutMarker(out, 0xD8);  // SOI
  PutMarker(out, 0xE0);  // APP0 / JFIF
  PutU16(out, 16);
  for (char c : std::string("JFIF")) out.push_back(static_cast<std::uint8_t>(c));
  out.insert(out.end(), {0x00, 0x01, 0x01, 0x00, 0x00, 0x01, 0x00, 0x01,
                         0x00, 0x00});

  for (int id = 0; id < 2; ++id) {  // DQT
    const auto zz = (id == 0 ? luma : chroma).zigzag();
    PutMarker(out, 0xDB);
    PutU16(out, 2 + 1 + 64);
    out.push_back(static_cast<std::uint8_t>(id));
    for (auto v : zz) out.push_back(static_cast<std::uint8_t>(v));
  }

  PutMarker(out, 0xC0);  // SOF0
  PutU16(out, 8 + 3 * 3);
  out.push_back(8);
  PutU16(out, q.height);
  PutU16(out, q.width);
  out.push_back(3);
  for (int c = 0; c < 3; ++c) {
    out.push_back(static_cast<std::uint8_t>(c + 1));
    out.push_back(0x11);
    out.push_back(c == 0 ? 0 : 1);
  }

  PutHuffmanSegment(out, 0, 0, StdDcLuma());
  PutHuffmanSegment(out, 1, 0, StdAcLuma());
  PutHuffmanSegment(out, 0, 1, StdDcChroma());
  PutHuffmanSegment(out, 1, 1, StdAcChroma());

  PutMarker(out, 0xDA);  // SOS
  PutU16(out, 6 + 2 * 3);
  out.push_back(3);
  for (int c = 0; c < 3; ++c) {
    out.push_back(static_cast<std::uint8_t>(c + 1));
    out.push_back(c == 0 ? 0x00 : 0x11);
  }
  out.insert(out.end(), {0, 63, 0});

  stream.scan_begin = out.size();
  static const EncodeTable dc_tables[2] = {BuildEncodeTable(StdDcLuma()),
                                           BuildEncodeTable(StdDcChroma())};
  static const EncodeTable ac_tables[2] = {BuildEncodeTable(StdAcLuma()),
                                           BuildEncodeTable(StdAcChroma())};
  const auto& zz = ZigzagOrder();
  BitWriter writer(out);
  int predictor[3] = {0, 0, 0};
  const std::size_t blocks =
      q.components[0].blocks_wide * q.components[0].blocks_high;
  auto PutSymbol = [&](const EncodeTable& t, int symbol) {
    if (t.length[symbol] == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "symbol " + std::to_string(symbol) + " has no Huffman code");
    }
    writer.Put(t.code[symbol], t.length[symbol]);
  };
  auto PutValue = [&](int v, int cat) {
    if (cat == 0) return;
    const int bits = v < 0 ? v + (1 << cat) - 1 : v;
    writer.Put(static_cast<std::uint32_t>(bits), cat);
  };
  for (std::size_t b = 0; b < blocks; ++b) {
    for (int c = 0; c < 3; ++c) {
      const int t = c == 0 ? 0 : 1;
      const auto block = q.components[c].block(b);
      const int diff = block[0] - predictor[c];
      predictor[c] = block[0];
      const int dc_cat = Category(diff);
      if (dc_cat > 11) {
        throw Error(ErrorCode::kInvalidArgument, "DC difference out of range");
      }
      PutSymbol(dc_tables[t], dc_cat);
      PutValue(diff, dc_cat);
      ++stream.stats.dc_categories[dc_cat];
      int run = 0;
      for (std::size_t k = 1; k < 64; ++k) {
        const int v = block[zz[k]];
        if (v == 0) {
          ++run;
          continue;
        }
        while (run > 15) {
          PutSymbol(ac_tables[t], 0xF0);
          ++stream.stats.ac_symbols[0xF0];
          run -= 16;
        }
        const int cat = Category(v);
        if (cat > 10) {
          throw Error(ErrorCode::kInvalidArgument,
                      "AC coefficient out of range");
        }
        const int symbol = (run << 4) | cat;
        PutSymbol(ac_tables[t], symbol);
        PutValue(v, cat);
        ++stream.stats.ac_symbols[symbol];
        run = 0;
      }
      if (run > 0) {
        PutSymbol(ac_tables[t], 0x00);
        ++stream.stats.ac_symbols[0x00];
      }
    }
  }
  writer.Finish();
  stream.scan_end = out.size();
  PutMarker(out, 0xD9);  // EOI
  return stream;
}

JpegBitstream EncodeJpeg(const Image& rgb, int quality) {
  return EncodeQuantized(QuantizeForJpeg(rgb, quality), quality);
}

double JpegBpp(const Image& rgb, int quality) {
  const JpegBitstream s = EncodeJpeg(rgb, quality);
  return 8.0 * static_cast<double>(s.scan_bytes()) /
         static_cast<double>(rgb.num_pixels());
}

double JpegFileBpp(const Image& rgb, int quality) {
  const JpegBitstream s = EncodeJpeg(rgb, quality);
  return 8.0 * static_cast<double>(s.bytes.size()) /
         static_cast<double>(rgb.num_pixels());
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

[[noreturn]] void Corrupt(const std::string& what) {
  throw Error(ErrorCode::kCorruptStream, "JPEG: " + what);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t U8() {
    if (pos_ >= bytes_.size()) Corrupt("unexpected end of data");
    return bytes_[pos_++];
  }
  std::size_t U16() {
    const std::size_t hi = U8();
    return (hi << 8) | U8();
  }
  void Skip(std::size_t n) {
    if (bytes_.size() - pos_ < n) Corrupt("segment runs past end of data");
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  void set_pos(std::size_t p) { pos_ = p; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::size_t pos)
      : bytes_(bytes), pos_(pos) {}

  int Bit() {
    if (left_ == 0) Fill();
    --left_;
    return (cur_ >> left_) & 1;
  }

  int Bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | Bit();
    return v;
  }

  // Position of the first byte after the entropy-coded data (a marker).
  std::size_t MarkerPosition() {
    std::size_t p = pos_;
    while (p + 1 < bytes_.size()) {
      if (bytes_[p] == 0xFF && bytes_[p + 1] != 0x00) return p;
      p += bytes_[p] == 0xFF ? 2 : 1;
    }
    Corrupt("scan is not terminated by a marker");
  }

 private:
  void Fill() {
    if (pos_ >= bytes_.size()) Corrupt("scan data truncated");
    std::uint8_t b = bytes_[pos_];
    if (b == 0xFF) {
      if (pos_ + 1 >= bytes_.size()) Corrupt("scan data truncated");
      if (bytes_[pos_ + 1] != 0x00) Corrupt("scan ended before all blocks");
      pos_ += 2;
    } else {
      pos_ += 1;
    }
    cur_ = b;
    left_ = 8;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::uint8_t cur_ = 0;
  int left_ = 0;
};

int DecodeSymbol(BitReader& bits, const DecodeTable& t) {
  std::int32_t code = 0;
  for (std::size_t len = 1; len <= 16; ++len) {
    code = (code << 1) | bits.Bit();
    if (t.maxcode[len] >= 0 && code <= t.maxcode[len] &&
        code >= t.mincode[len]) {
      const std::size_t idx =
          static_cast<std::size_t>(t.valptr[len] + code - t.mincode[len]);
      if (idx >= t.values.size()) Corrupt("Huffman table overrun");
      return t.values[idx];
    }
  }
  Corrupt("invalid Huffman code");
}

int Extend(int v, int cat) {
  return v < (1 << (cat - 1)) ? v - (1 << cat) + 1 : v;
}

struct FrameComponent {
  int id = 0;
  int table = 0;
  int dc = 0;
  int ac = 0;
};

}  // namespace

DecodedJpeg DecodeJpeg(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.U8() != 0xFF || in.U8() != 0xD8) Corrupt("missing SOI marker");

  std::array<std::optional<std::array<std::uint16_t, 64>>, 4> qtables;
  std::array<std::optional<DecodeTable>, 4> dc_tables, ac_tables;
  std::vector<FrameComponent> comps;
  std::size_t width = 0, height = 0;
  bool scanned = false;
  QuantizedImage q;

  while (true) {
    std::uint8_t marker = 0;
    if (in.U8() != 0xFF) Corrupt("expected a marker");
    do {
      marker = in.U8();
    } while (marker == 0xFF);
    if (marker == 0xD9) break;  // EOI
    const std::size_t length = in.U16();
    if (length < 2) Corrupt("bad segment length");
    const std::size_t end = in.pos() + length - 2;
    if (end > bytes.size()) Corrupt("segment runs past end of data");

    if (marker == 0xDB) {
      while (in.pos() < end) {
        const std::uint8_t pq_tq = in.U8();
        const int precision = pq_tq >> 4, id = pq_tq & 15;
        if (id > 3 || precision > 1) Corrupt("bad DQT table");
        std::array<std::uint16_t, 64> table{};
        const auto& zz = ZigzagOrder();
        for (std::size_t k = 0; k < 64; ++k) {
          const std::size_t v = precision ? in.U16() : in.U8();
          if (v == 0) Corrupt("zero quantiser");
          table[zz[k]] = static_cast<std::uint16_t>(v);
        }
        qtables[id] = table;
      }
    } else if (marker == 0xC4) {
      while (in.pos() < end) {
        const std::uint8_t tc_th = in.U8();
        const int cls = tc_th >> 4, id = tc_th & 15;
        if (cls > 1 || id > 3) Corrupt("bad DHT table");
        HuffmanSpec spec;
        std::size_t total = 0;
        for (auto& b : spec.bits) total += (b = in.U8());
        if (total > 256) Corrupt("DHT has too many symbols");
        for (std::size_t i = 0; i < total; ++i) spec.values.push_back(in.U8());
        (cls == 0 ? dc_tables : ac_tables)[id] = BuildDecodeTable(spec);
      }
    } else if (marker == 0xC0) {
      if (in.U8() != 8) Corrupt("only 8-bit precision is supported");
      height = in.U16();
      width = in.U16();
      const std::size_t n = in.U8();
      if (width == 0 || height == 0) Corrupt("zero frame dimension");
      if (n != 1 && n != 3) Corrupt("only 1 or 3 components are supported");
      comps.resize(n);
      for (auto& c : comps) {
        c.id = in.U8();
        if (in.U8() != 0x11) Corrupt("only 4:4:4 sampling is supported");
        c.table = in.U8();
        if (c.table > 3) Corrupt("bad quantiser index");
      }
    } else if (marker >= 0xC1 && marker <= 0xCF && marker != 0xC4 &&
               marker != 0xC8 && marker != 0xCC) {
      throw Error(ErrorCode::kUnsupportedFormat,
                  "JPEG: only baseline sequential frames are supported");
    } else if (marker == 0xDA) {
      if (comps.empty()) Corrupt("SOS before SOF");
      if (scanned) Corrupt("multiple scans are not supported");
      const std::size_t n = in.U8();
      if (n != comps.size()) Corrupt("scan must include every component");
      for (std::size_t i = 0; i < n; ++i) {
        const int id = in.U8();
        const std::uint8_t tables = in.U8();
        auto it = std::find_if(comps.begin(), comps.end(),
                               [id](const FrameComponent& c) {
                                 return c.id == id;
                               });
        if (it == comps.end()) Corrupt("scan references unknown component");
        it->dc = tables >> 4;
        it->ac = tables & 15;
        if (it->dc > 3 || it->ac > 3 || !dc_tables[it->dc] ||
            !ac_tables[it->ac]) {
          Corrupt("scan references a missing Huffman table");
        }
      }
      if (in.U8() != 0 || in.U8() != 63 || in.U8() != 0) {
        Corrupt("not a baseline scan");
      }
      const std::size_t bw = (width + 7) / 8, bh = (height + 7) / 8;
      q.width = width;
      q.height = height;
      for (std::size_t c = 0; c < comps.size(); ++c) {
        q.components[c].blocks_wide = bw;
        q.components[c].blocks_high = bh;
        q.components[c].coeffs.assign(bw * bh * 64, 0);
      }
      BitReader bits(bytes, in.pos());
      const auto& zz = ZigzagOrder();
      std::vector<int> predictor(comps.size(), 0);
      for (std::size_t b = 0; b < bw * bh; ++b) {
        for (std::size_t c = 0; c < comps.size(); ++c) {
          auto block = q.components[c].block(b);
          const int cat = DecodeSymbol(bits, *dc_tables[comps[c].dc]);
          if (cat > 11) Corrupt("DC category out of range");
          const int diff = cat ? Extend(bits.Bits(cat), cat) : 0;
          predictor[c] += diff;
          block[0] = static_cast<std::int16_t>(predictor[c]);
          for (std::size_t k = 1; k < 64;) {
            const int symbol = DecodeSymbol(bits, *ac_tables[comps[c].ac]);
            const int run = symbol >> 4, size = symbol & 15;
            if (size == 0) {
              if (run == 15) {
                k += 16;
                continue;
              }
              break;
            }
            k += static_cast<std::size_t>(run);
            if (k > 63 || size > 10) Corrupt("AC coefficient out of range");
            block[zz[k]] = static_cast<std::int16_t>(Extend(bits.Bits(size), size));
            ++k;
          }
        }
      }
      in.set_pos(bits.MarkerPosition());
      scanned = true;
      continue;
    } else {
      // APPn, COM and anything else we can skip.
    }
    in.set_pos(end);
  }
  if (!scanned) Corrupt("no scan found");

  DecodedJpeg result;
  result.quantized = q;
  const std::size_t bw = q.components[0].blocks_wide;
  const std::size_t bh = q.components[0].blocks_high;
  const std::size_t pw = bw * 8, ph = bh * 8;
  std::vector<double> planes(3 * pw * ph, 0.0);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto& table = qtables[comps[c].table];
    if (!table) Corrupt("missing quantisation table");
    if (c == 0) result.luma_table = *table;
    if (c == 1) result.chroma_table = *table;
    std::vector<double> coeffs(64 * bw * bh);
    for (std::size_t b = 0; b < bw * bh; ++b) {
      const auto block = q.components[c].block(b);
      for (std::size_t k = 0; k < 64; ++k) {
        coeffs[k * bw * bh + b] = static_cast<double>(block[k]) * (*table)[k];
      }
    }
    BlockDctInverse(coeffs, 1, ph, pw,
                    std::span<double>(planes).subspan(c * pw * ph, pw * ph));
  }
  Image ycc(width, height);
  for (std::size_t p = 0; p < 3; ++p) {
    const std::size_t src = comps.size() == 1 ? 0 : p;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double v =
            (comps.size() == 1 && p > 0)
                ? 0.5
                : planes[(src * ph + y) * pw + x] / 255.0 + 0.5;
        ycc.at(p, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  result.image = YcbcrToRgb(ycc);
  return result;
}

}  // namespace rateattack
