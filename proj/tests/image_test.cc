#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rateattack/error.h"
#include "rateattack/image.h"
#include "rateattack/synthetic.h"

namespace rateattack {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> RandomBytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(rng() & 0xFF);
  return v;
}

fs::path TempPath(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "rateattack_image_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> FileBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

TEST(Image, ByteNormalisationEndpoints) {
  const std::vector<std::uint8_t> px = {0, 128, 255};
  const Image im = FromBytes(1, 1, px);
  EXPECT_EQ(im.at(0, 0, 0), 0.0);
  EXPECT_EQ(im.at(2, 0, 0), 1.0);
  EXPECT_EQ(ToBytes(im), px);
}

TEST(Image, RandomBytesRoundtripAndRange) {
  const auto bytes = RandomBytes(3 * 40 * 24, 1);
  const Image im = FromBytes(40, 24, bytes);
  for (double v : im.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(ToBytes(im), bytes);
}

TEST(Image, PlanarLayout) {
  const std::vector<std::uint8_t> px = {10, 20, 30, 40, 50, 60};
  const Image im = FromBytes(2, 1, px);
  EXPECT_EQ(im.at(0, 0, 1), 40 / 255.0);
  EXPECT_EQ(im.at(1, 0, 0), 20 / 255.0);
  EXPECT_EQ(im.data[2], 20 / 255.0);  // green plane starts after red
}

TEST(Image, PpmAndPngSaveLoadAreByteIdentical) {
  const Image im = FromBytes(33, 17, RandomBytes(3 * 33 * 17, 2));
  for (const char* name : {"a.ppm", "a.png"}) {
    const fs::path p = TempPath(name);
    Save(im, p);
    const Image back = Load(p);
    EXPECT_EQ(back, im) << name;
    const fs::path p2 = TempPath(std::string("b_") + name);
    Save(back, p2);
    EXPECT_EQ(FileBytes(p), FileBytes(p2)) << name;
  }
}

TEST(Image, DecodeErrors) {
  const Image im = FromBytes(4, 4, RandomBytes(48, 3));
  std::vector<std::uint8_t> ppm = EncodePpm(im);
  std::vector<std::uint8_t> cut(ppm.begin(), ppm.end() - 5);
  EXPECT_EQ(CodeOf([&] { DecodePpm(cut); }), ErrorCode::kTruncated);

  const std::string p3 = "P3\n1 1\n255\n0 0 0\n";
  EXPECT_EQ(CodeOf([&] {
              DecodePpm(std::vector<std::uint8_t>(p3.begin(), p3.end()));
            }),
            ErrorCode::kUnsupportedFormat);
  const std::string deep = "P6\n1 1\n65535\n";
  std::vector<std::uint8_t> d(deep.begin(), deep.end());
  d.resize(d.size() + 6, 0);
  EXPECT_EQ(CodeOf([&] { DecodePpm(d); }), ErrorCode::kUnsupportedFormat);

  const fs::path junk = TempPath("junk.bin");
  std::ofstream(junk) << "not an image";
  EXPECT_EQ(CodeOf([&] { Load(junk); }), ErrorCode::kUnsupportedFormat);
}

TEST(Image, ColorWhiteAndBlackPoints) {
  const Image white = RgbToYcbcr(Image(1, 1, 1.0));
  EXPECT_NEAR(white.at(0, 0, 0), 1.0, 1e-12);
  EXPECT_NEAR(white.at(1, 0, 0), 0.5, 1e-12);
  EXPECT_NEAR(white.at(2, 0, 0), 0.5, 1e-12);
  const Image black = RgbToYcbcr(Image(1, 1, 0.0));
  EXPECT_NEAR(black.at(0, 0, 0), 0.0, 1e-12);
  EXPECT_NEAR(black.at(1, 0, 0), 0.5, 1e-12);
  EXPECT_NEAR(black.at(2, 0, 0), 0.5, 1e-12);
}

TEST(Image, ColorMatricesAreInverse) {
  const ColorMatrix& a = RgbToYccMatrix();
  const ColorMatrix& b = YccToRgbMatrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += b[i][k] * a[k][j];
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
  // BT.601 luma weights.
  EXPECT_NEAR(a[0][0], 0.299, 1e-15);
  EXPECT_NEAR(a[0][1], 0.587, 1e-15);
  EXPECT_NEAR(a[0][2], 0.114, 1e-15);
}

TEST(Image, ColorRoundtripOnRandomImages) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image im = FromBytes(16, 16, RandomBytes(3 * 256, 10 + seed));
    const Image ycc = RgbToYcbcr(im);
    for (double v : ycc.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const Image back = YcbcrToRgb(ycc);
    double worst = 0.0;
    for (std::size_t i = 0; i < im.data.size(); ++i) {
      worst = std::max(worst, std::abs(back.data[i] - im.data[i]));
    }
    EXPECT_LE(worst, 2.0 / 255.0);
  }
}

TEST(Image, PadReplicatesEdges) {
  const Image im = FromBytes(5, 3, RandomBytes(45, 4));
  const Image p = Pad(im);
  EXPECT_EQ(p.width, 8u);
  EXPECT_EQ(p.height, 8u);
  EXPECT_EQ(p.at(1, 7, 7), im.at(1, 2, 4));
  EXPECT_EQ(p.at(2, 1, 6), im.at(2, 1, 4));
  EXPECT_EQ(Crop(p, 0, 0, 5, 3), im);
  const Image aligned(16, 8, 0.25);
  EXPECT_EQ(Pad(aligned), aligned);
}

TEST(Image, ExtractPatches) {
  std::vector<Image> corpus = {SyntheticImage(1, 768, 512),
                               SyntheticImage(2, 64, 64)};
  EXPECT_TRUE(ExtractPatches(corpus, 256, 0, 1).empty());
  const auto a = ExtractPatches(corpus, 256, 6, 99);
  const auto b = ExtractPatches(corpus, 256, 6, 99);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  for (const Image& p : a) {
    EXPECT_EQ(p.width, 256u);
    EXPECT_EQ(p.height, 256u);
  }
  // Only the large image qualifies; every patch must be a crop of it.
  const Image& big = corpus[0];
  for (const Image& p : a) {
    bool found = false;
    for (std::size_t y = 0; y + 256 <= big.height && !found; ++y) {
      for (std::size_t x = 0; x + 256 <= big.width && !found; ++x) {
        if (big.at(0, y, x) == p.at(0, 0, 0) && Crop(big, x, y, 256, 256) == p) {
          found = true;
        }
      }
    }
    EXPECT_TRUE(found);
  }
  std::vector<Image> small = {Image(32, 32)};
  EXPECT_THROW(ExtractPatches(small, 256, 1, 1), Error);
  EXPECT_THROW(ExtractPatches(std::vector<Image>{}, 256, 1, 1), Error);
}

TEST(Synthetic, DeterministicByteLevelsAndSize) {
  const Image a = SyntheticImage(7, 96, 64);
  const Image b = SyntheticImage(7, 96, 64);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, SyntheticImage(8, 96, 64));
  EXPECT_EQ(FromBytes(96, 64, ToBytes(a)), a);
  const auto corpus = SyntheticCorpus(2, 3);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].width, 768u);
  EXPECT_EQ(corpus[0].height, 512u);
}

}  // namespace
}  // namespace rateattack
