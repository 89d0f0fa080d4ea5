#ifndef RATEATTACK_BLOCKDCT_H_
#define RATEATTACK_BLOCKDCT_H_

// Orthonormal 8x8 DCT-II applied on a stride-8 grid. A stack of P planes of
// size H x W maps to P*64 channels of size (H/8) x (W/8); channel index is
// plane * 64 + u * 8 + v, with u the vertical and v the horizontal frequency.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "rateattack/tensor.h"

namespace rateattack {

inline constexpr std::size_t kBlock = 8;
inline constexpr std::size_t kBlockArea = 64;

// 8-point orthonormal DCT-II matrix: C[u][x] = a(u) cos((2x+1) u pi / 16).
const std::array<std::array<double, 8>, 8>& Dct1d();

// 64x64 separable 2-D basis, row-major. Row u*8+v is the basis image for
// frequency (u,v); column y*8+x indexes the pixel.
const std::vector<double>& DctBasis();

struct CoeffTensor {
  std::size_t channels = 0;
  std::size_t height = 0;  // blocks
  std::size_t width = 0;   // blocks
  std::vector<double> data;

  std::size_t channel_size() const { return height * width; }
  double& at(std::size_t c, std::size_t by, std::size_t bx) {
    return data[(c * height + by) * width + bx];
  }
  double at(std::size_t c, std::size_t by, std::size_t bx) const {
    return data[(c * height + by) * width + bx];
  }
};

// `planes` holds num_planes planes of height x width (both multiples of 8).
CoeffTensor BlockDctForward(std::span<const double> planes,
                            std::size_t num_planes, std::size_t height,
                            std::size_t width);
// Inverse; writes num_planes * height * width values.
std::vector<double> BlockDctInverse(const CoeffTensor& coeffs);

// In-place variants over raw buffers, used by hot loops that reuse storage.
void BlockDctForward(std::span<const double> planes, std::size_t num_planes,
                     std::size_t height, std::size_t width,
                     std::span<double> coeffs);
void BlockDctInverse(std::span<const double> coeffs, std::size_t num_planes,
                     std::size_t height, std::size_t width,
                     std::span<double> planes);

// Differentiable versions on a tape. Input shape [P, H, W] maps to
// [P*64, H/8, W/8] and back. The backward pass of each is the other.
Var BlockDctForward(Var planes);
Var BlockDctInverse(Var coeffs);

}  // namespace rateattack

#endif  // RATEATTACK_BLOCKDCT_H_
