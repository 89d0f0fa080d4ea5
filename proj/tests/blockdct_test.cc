#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "rateattack/blockdct.h"
#include "rateattack/error.h"

namespace rateattack {
namespace {

std::vector<double> RandomPlanes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Direct cosine sum, no shared tables.
double BruteDct(const double* block, int u, int v) {
  const double au = u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
  const double av = v == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
  double s = 0.0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      s += block[y * 8 + x] *
           std::cos((2 * y + 1) * u * std::numbers::pi / 16.0) *
           std::cos((2 * x + 1) * v * std::numbers::pi / 16.0);
    }
  }
  return au * av * s;
}

TEST(BlockDct, BasisIsOrthonormal) {
  const std::vector<double>& b = DctBasis();
  ASSERT_EQ(b.size(), 64u * 64u);
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      double s = 0.0;
      for (int k = 0; k < 64; ++k) s += b[i * 64 + k] * b[j * 64 + k];
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(BlockDct, DcBasisIsConstant) {
  const std::vector<double>& b = DctBasis();
  for (int k = 0; k < 64; ++k) EXPECT_NEAR(b[k], 1.0 / 8.0, 1e-15);
}

TEST(BlockDct, MatchesCosineSum) {
  const std::vector<double> block = RandomPlanes(64, 3);
  const CoeffTensor c = BlockDctForward(block, 1, 8, 8);
  double worst = 0.0;
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      worst = std::max(worst, std::abs(c.at(u * 8 + v, 0, 0) -
                                       BruteDct(block.data(), u, v)));
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(BlockDct, ChannelLayout) {
  // Put a single impulse in plane 2, block (1, 2), pixel (3, 5).
  std::vector<double> planes(3 * 16 * 24, 0.0);
  const std::size_t h = 16, w = 24;
  planes[(2 * h + 8 + 3) * w + 16 + 5] = 1.0;
  const CoeffTensor c = BlockDctForward(planes, 3, h, w);
  EXPECT_EQ(c.channels, 192u);
  EXPECT_EQ(c.height, 2u);
  EXPECT_EQ(c.width, 3u);
  const std::vector<double>& b = DctBasis();
  for (std::size_t ch = 0; ch < 192; ++ch) {
    for (std::size_t by = 0; by < 2; ++by) {
      for (std::size_t bx = 0; bx < 3; ++bx) {
        const bool hit = ch / 64 == 2 && by == 1 && bx == 2;
        const double want = hit ? b[(ch % 64) * 64 + 3 * 8 + 5] : 0.0;
        EXPECT_NEAR(c.at(ch, by, bx), want, 1e-15);
      }
    }
  }
}

TEST(BlockDct, ConstantPlaneHasOnlyDc) {
  const double value = 0.37;
  const std::vector<double> planes(16 * 16, value);
  const CoeffTensor c = BlockDctForward(planes, 1, 16, 16);
  for (std::size_t ch = 0; ch < 64; ++ch) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(c.data[ch * 4 + i], ch == 0 ? 8 * value : 0.0, 1e-12);
    }
  }
}

TEST(BlockDct, DimensionErrors) {
  std::vector<double> bad(3 * 12 * 16);
  EXPECT_THROW(BlockDctForward(bad, 3, 12, 16), Error);
  std::vector<double> wrong_size(10);
  EXPECT_THROW(BlockDctForward(wrong_size, 1, 8, 8), Error);
}

TEST(BlockDct, PropertiesOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t h = 8 * (1 + seed % 3), w = 8 * (1 + seed % 4);
    const std::size_t n = 3 * h * w;
    const std::vector<double> x = RandomPlanes(n, seed);
    const std::vector<double> y = RandomPlanes(n, seed + 1000);
    const CoeffTensor fx = BlockDctForward(x, 3, h, w);

    const std::vector<double> back = BlockDctInverse(fx);
    double worst = 0.0, ex = 0.0, ec = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(back[i] - x[i]));
      ex += x[i] * x[i];
      ec += fx.data[i] * fx.data[i];
    }
    EXPECT_LE(worst, 1e-6);
    EXPECT_LE(std::abs(ex - ec) / ex, 1e-6);

    // Adjoint: <F x, y> == <x, F^-1 y>, with y read as coefficients.
    CoeffTensor cy = fx;
    cy.data = y;
    const std::vector<double> iy = BlockDctInverse(cy);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lhs += fx.data[i] * y[i];
      rhs += x[i] * iy[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-6 * std::max(1.0, std::abs(lhs)));

    // Linearity.
    std::vector<double> mix(n);
    for (std::size_t i = 0; i < n; ++i) mix[i] = 0.7 * x[i] - 1.3 * y[i];
    const CoeffTensor fm = BlockDctForward(mix, 3, h, w);
    const CoeffTensor fy = BlockDctForward(y, 3, h, w);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(fm.data[i], 0.7 * fx.data[i] - 1.3 * fy.data[i], 1e-6);
    }
  }
}

TEST(BlockDct, TapeOpsGradCheck) {
  std::vector<double> x = RandomPlanes(3 * 16 * 8, 5);
  const Tensor input({3, 16, 8}, x);
  const Tensor weights({192, 2, 1}, RandomPlanes(192 * 2, 6));
  const GradCheckResult f = GradCheck(
      [&](Var v) {
        return Sum(Mul(BlockDctForward(v), v.tape->Constant(weights)));
      },
      input, 1e-5);
  EXPECT_LE(f.max_rel_error, 1e-3);
  const Tensor coeffs({192, 2, 1}, RandomPlanes(384, 7));
  const Tensor pixel_weights({3, 16, 8}, RandomPlanes(384, 8));
  const GradCheckResult g = GradCheck(
      [&](Var v) {
        return Sum(Mul(BlockDctInverse(v), v.tape->Constant(pixel_weights)));
      },
      coeffs, 1e-5);
  EXPECT_LE(g.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace rateattack
