#include "rateattack/blockdct.h"

#include <cmath>
#include <numbers>
#include <string>

#include "rateattack/error.h"

namespace rateattack {

namespace {

using Matrix8 = std::array<std::array<double, 8>, 8>;

Matrix8 MakeDct1d() {
  Matrix8 c{};
  for (std::size_t u = 0; u < 8; ++u) {
    const double scale = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (std::size_t x = 0; x < 8; ++x) {
      c[u][x] = scale * std::cos((2.0 * x + 1.0) * u * std::numbers::pi / 16.0);
    }
  }
  return c;
}

void CheckDims(std::size_t height, std::size_t width) {
  if (height % kBlock != 0 || width % kBlock != 0 || height == 0 ||
      width == 0) {
    throw Error(ErrorCode::kDimension,
                "block DCT needs positive multiples of 8, got " +
                    std::to_string(width) + "x" + std::to_string(height));
  }
}

}  // namespace

const Matrix8& Dct1d() {
  static const Matrix8 c = MakeDct1d();
  return c;
}

const std::vector<double>& DctBasis() {
  static const std::vector<double> basis = [] {
    const Matrix8& c = Dct1d();
    std::vector<double> b(kBlockArea * kBlockArea);
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t v = 0; v < 8; ++v)
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x)
            b[(u * 8 + v) * kBlockArea + y * 8 + x] = c[u][y] * c[v][x];
    return b;
  }();
  return basis;
}

void BlockDctForward(std::span<const double> planes, std::size_t num_planes,
                     std::size_t height, std::size_t width,
                     std::span<double> coeffs) {
  CheckDims(height, width);
  const std::size_t bh = height / kBlock, bw = width / kBlock;
  const std::size_t chan = bh * bw;
  if (planes.size() != num_planes * height * width ||
      coeffs.size() != num_planes * kBlockArea * chan) {
    throw Error(ErrorCode::kShapeMismatch, "block DCT buffer size mismatch");
  }
  const Matrix8& c = Dct1d();
  double block[8][8];
  double rows[8][8];
  for (std::size_t p = 0; p < num_planes; ++p) {
    const double* plane = planes.data() + p * height * width;
    double* out = coeffs.data() + p * kBlockArea * chan;
    for (std::size_t by = 0; by < bh; ++by) {
      for (std::size_t bx = 0; bx < bw; ++bx) {
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x)
            block[y][x] = plane[(by * 8 + y) * width + bx * 8 + x];
        // rows[y][v] = sum_x C[v][x] block[y][x]
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t v = 0; v < 8; ++v) {
            double s = 0.0;
            for (std::size_t x = 0; x < 8; ++x) s += c[v][x] * block[y][x];
            rows[y][v] = s;
          }
        const std::size_t pos = by * bw + bx;
        for (std::size_t u = 0; u < 8; ++u)
          for (std::size_t v = 0; v < 8; ++v) {
            double s = 0.0;
            for (std::size_t y = 0; y < 8; ++y) s += c[u][y] * rows[y][v];
            out[(u * 8 + v) * chan + pos] = s;
          }
      }
    }
  }
}

void BlockDctInverse(std::span<const double> coeffs, std::size_t num_planes,
                     std::size_t height, std::size_t width,
                     std::span<double> planes) {
  CheckDims(height, width);
  const std::size_t bh = height / kBlock, bw = width / kBlock;
  const std::size_t chan = bh * bw;
  if (planes.size() != num_planes * height * width ||
      coeffs.size() != num_planes * kBlockArea * chan) {
    throw Error(ErrorCode::kShapeMismatch, "block IDCT buffer size mismatch");
  }
  const Matrix8& c = Dct1d();
  double block[8][8];
  double cols[8][8];
  for (std::size_t p = 0; p < num_planes; ++p) {
    double* plane = planes.data() + p * height * width;
    const double* in = coeffs.data() + p * kBlockArea * chan;
    for (std::size_t by = 0; by < bh; ++by) {
      for (std::size_t bx = 0; bx < bw; ++bx) {
        const std::size_t pos = by * bw + bx;
        for (std::size_t u = 0; u < 8; ++u)
          for (std::size_t v = 0; v < 8; ++v)
            block[u][v] = in[(u * 8 + v) * chan + pos];
        // cols[y][v] = sum_u C[u][y] block[u][v]
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t v = 0; v < 8; ++v) {
            double s = 0.0;
            for (std::size_t u = 0; u < 8; ++u) s += c[u][y] * block[u][v];
            cols[y][v] = s;
          }
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) {
            double s = 0.0;
            for (std::size_t v = 0; v < 8; ++v) s += c[v][x] * cols[y][v];
            plane[(by * 8 + y) * width + bx * 8 + x] = s;
          }
      }
    }
  }
}

CoeffTensor BlockDctForward(std::span<const double> planes,
                            std::size_t num_planes, std::size_t height,
                            std::size_t width) {
  CheckDims(height, width);
  CoeffTensor out;
  out.channels = num_planes * kBlockArea;
  out.height = height / kBlock;
  out.width = width / kBlock;
  out.data.resize(out.channels * out.channel_size());
  BlockDctForward(planes, num_planes, height, width, out.data);
  return out;
}

std::vector<double> BlockDctInverse(const CoeffTensor& coeffs) {
  if (coeffs.channels % kBlockArea != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "coefficient channels must be a multiple of 64");
  }
  const std::size_t planes = coeffs.channels / kBlockArea;
  std::vector<double> out(planes * coeffs.height * kBlock * coeffs.width *
                          kBlock);
  BlockDctInverse(coeffs.data, planes, coeffs.height * kBlock,
                  coeffs.width * kBlock, out);
  return out;
}

Var BlockDctForward(Var planes) {
  const Shape& s = planes.shape();
  if (s.size() != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "block_dct expects [P,H,W], got " + ShapeString(s));
  }
  const std::size_t p = s[0], h = s[1], w = s[2];
  CheckDims(h, w);
  const Shape out_shape = {p * kBlockArea, h / kBlock, w / kBlock};
  std::vector<double> out(NumElements(out_shape));
  BlockDctForward(planes.value().data(), p, h, w, out);
  return planes.tape->Record(
      "block_dct", Tensor(out_shape, std::move(out)), {planes},
      [p, h, w, s](const Tensor& up) {
        std::vector<double> g(p * h * w);
        BlockDctInverse(up.data(), p, h, w, g);
        return std::vector<Tensor>{Tensor(s, std::move(g))};
      });
}

Var BlockDctInverse(Var coeffs) {
  const Shape& s = coeffs.shape();
  if (s.size() != 3 || s[0] % kBlockArea != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "block_idct expects [P*64,H/8,W/8], got " + ShapeString(s));
  }
  const std::size_t p = s[0] / kBlockArea, h = s[1] * kBlock,
                    w = s[2] * kBlock;
  const Shape out_shape = {p, h, w};
  std::vector<double> out(NumElements(out_shape));
  BlockDctInverse(coeffs.value().data(), p, h, w, out);
  return coeffs.tape->Record(
      "block_idct", Tensor(out_shape, std::move(out)), {coeffs},
      [p, h, w, s](const Tensor& up) {
        std::vector<double> g(NumElements(s));
        BlockDctForward(up.data(), p, h, w, g);
        return std::vector<Tensor>{Tensor(s, std::move(g))};
      });
}

}  // namespace rateattack
