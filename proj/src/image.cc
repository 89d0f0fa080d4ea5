#include "rateattack/image.h"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "rateattack/error.h"

namespace rateattack {

namespace fs = std::filesystem;

Image FromBytes(std::size_t width, std::size_t height,
                std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) {
    throw Error(ErrorCode::kInvalidArgument, "byte buffer size mismatch");
  }
  Image image(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    for (std::size_t p = 0; p < 3; ++p) {
      image.data[p * width * height + i] = rgb[3 * i + p] / 255.0;
    }
  }
  return image;
}

std::vector<std::uint8_t> ToBytes(const Image& image) {
  const std::size_t n = image.plane_size();
  std::vector<std::uint8_t> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < 3; ++p) {
      const double v = std::clamp(image.data[p * n + i], 0.0, 1.0);
      rgb[3 * i + p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return rgb;
}

// ---------------------------------------------------------------------------
// PPM

std::vector<std::uint8_t> EncodePpm(const Image& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto rgb = ToBytes(image);
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

namespace {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> bytes)
      : bytes_(bytes) {}

  std::size_t ReadNumber() {
    SkipSpaceAndComments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1u << 28)) {
        throw Error(ErrorCode::kUnsupportedFormat, "PPM dimension too large");
      }
      ++pos_;
      ++digits;
    }
    if (digits == 0) {
      throw Error(pos_ >= bytes_.size() ? ErrorCode::kTruncated
                                        : ErrorCode::kUnsupportedFormat,
                  "malformed PPM header");
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t RasterStart() {
    if (pos_ >= bytes_.size()) {
      throw Error(ErrorCode::kTruncated, "PPM header ends early");
    }
    if (!std::isspace(bytes_[pos_])) {
      throw Error(ErrorCode::kUnsupportedFormat, "malformed PPM header");
    }
    return pos_ + 1;
  }

  void Skip(std::size_t n) { pos_ += n; }

 private:
  void SkipSpaceAndComments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image DecodePpm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw Error(ErrorCode::kTruncated, "PPM too short");
  if (bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(ErrorCode::kUnsupportedFormat, "not a binary PPM (P6)");
  }
  PpmHeaderReader reader(bytes);
  reader.Skip(2);
  const std::size_t width = reader.ReadNumber();
  const std::size_t height = reader.ReadNumber();
  const std::size_t maxval = reader.ReadNumber();
  if (maxval != 255) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "PPM maxval " + std::to_string(maxval) + " is not 8-bit");
  }
  if (width == 0 || height == 0) {
    throw Error(ErrorCode::kUnsupportedFormat, "PPM has zero dimension");
  }
  const std::size_t start = reader.RasterStart();
  const std::size_t needed = width * height * 3;
  if (bytes.size() - start < needed) {
    throw Error(ErrorCode::kTruncated, "PPM raster truncated");
  }
  return FromBytes(width, height, bytes.subspan(start, needed));
}

// ---------------------------------------------------------------------------
// PNG (libpng simplified API)

std::vector<std::uint8_t> EncodePng(const Image& image) {
  const auto rgb = ToBytes(image);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, rgb.data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::kIo, std::string("PNG encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, rgb.data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::kIo, std::string("PNG encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image DecodePng(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71,
                                                 13,  10, 26, 10};
  if (bytes.size() < 8 || !std::equal(kSignature, kSignature + 8,
                                      bytes.begin())) {
    throw Error(ErrorCode::kUnsupportedFormat, "not a PNG file");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kTruncated, std::string("PNG header: ") + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw Error(ErrorCode::kUnsupportedFormat, "PNG is not 8-bit");
  }
  if (png.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&png);
    throw Error(ErrorCode::kUnsupportedFormat, "PNG alpha is not supported");
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kTruncated, "PNG data: " + message);
  }
  return FromBytes(png.width, png.height, rgb);
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::uint8_t> ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void WriteFile(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::string LowerExtension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Image Load(const fs::path& path) {
  const auto bytes = ReadFile(path);
  if (bytes.size() >= 2 && bytes[0] == 'P') return DecodePpm(bytes);
  if (bytes.size() >= 1 && bytes[0] == 137) return DecodePng(bytes);
  throw Error(ErrorCode::kUnsupportedFormat,
              path.string() + " is neither PPM nor PNG");
}

void Save(const Image& image, const fs::path& path) {
  const std::string ext = LowerExtension(path);
  if (ext == ".ppm" || ext == ".pnm") {
    WriteFile(path, EncodePpm(image));
  } else if (ext == ".png") {
    WriteFile(path, EncodePng(image));
  } else {
    throw Error(ErrorCode::kUnsupportedFormat,
                "unknown image extension '" + ext + "'");
  }
}

std::vector<fs::path> ListImages(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, dir.string() + " is not a directory");
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = LowerExtension(entry.path());
    if (ext == ".ppm" || ext == ".pnm" || ext == ".png") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Colour

namespace {

constexpr double kKr = 0.299;
constexpr double kKb = 0.114;
constexpr double kKg = 1.0 - kKr - kKb;

ColorMatrix MakeRgbToYcc() {
  return {{{kKr, kKg, kKb},
           {-0.5 * kKr / (1 - kKb), -0.5 * kKg / (1 - kKb), 0.5},
           {0.5, -0.5 * kKg / (1 - kKr), -0.5 * kKb / (1 - kKr)}}};
}

ColorMatrix MakeYccToRgb() {
  return {{{1.0, 0.0, 2 * (1 - kKr)},
           {1.0, -2 * kKb * (1 - kKb) / kKg, -2 * kKr * (1 - kKr) / kKg},
           {1.0, 2 * (1 - kKb), 0.0}}};
}

Image ApplyColor(const Image& in, const ColorMatrix& m,
                 const std::array<double, 3>& pre_offset,
                 const std::array<double, 3>& post_offset) {
  Image out(in.width, in.height);
  const std::size_t n = in.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = in.data[i] - pre_offset[0];
    const double b = in.data[n + i] - pre_offset[1];
    const double c = in.data[2 * n + i] - pre_offset[2];
    for (std::size_t p = 0; p < 3; ++p) {
      const double v = m[p][0] * a + m[p][1] * b + m[p][2] * c + post_offset[p];
      out.data[p * n + i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace

const ColorMatrix& RgbToYccMatrix() {
  static const ColorMatrix m = MakeRgbToYcc();
  return m;
}

const ColorMatrix& YccToRgbMatrix() {
  static const ColorMatrix m = MakeYccToRgb();
  return m;
}

Image RgbToYcbcr(const Image& rgb) {
  return ApplyColor(rgb, RgbToYccMatrix(), {0, 0, 0}, kYccOffset);
}

Image YcbcrToRgb(const Image& ycc) {
  return ApplyColor(ycc, YccToRgbMatrix(), kYccOffset, {0, 0, 0});
}

// ---------------------------------------------------------------------------
// Geometry

Image Pad(const Image& image) {
  const std::size_t w = (image.width + 7) / 8 * 8;
  const std::size_t h = (image.height + 7) / 8 * 8;
  if (w == image.width && h == image.height) return image;
  Image out(w, h);
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = std::min(y, image.height - 1);
      for (std::size_t x = 0; x < w; ++x) {
        out.at(p, y, x) = image.at(p, sy, std::min(x, image.width - 1));
      }
    }
  }
  return out;
}

Image Crop(const Image& image, std::size_t x0, std::size_t y0,
           std::size_t width, std::size_t height) {
  if (x0 + width > image.width || y0 + height > image.height) {
    throw Error(ErrorCode::kDimension, "crop window outside image");
  }
  Image out(width, height);
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        out.at(p, y, x) = image.at(p, y0 + y, x0 + x);
      }
    }
  }
  return out;
}

std::vector<Image> ExtractPatches(std::span<const Image> corpus,
                                  std::size_t patch, std::size_t count,
                                  std::uint64_t seed) {
  if (count == 0) return {};
  if (corpus.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "patch corpus is empty");
  }
  std::vector<const Image*> usable;
  for (const Image& image : corpus) {
    if (image.width >= patch && image.height >= patch) {
      usable.push_back(&image);
    }
  }
  if (usable.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no corpus image is at least " + std::to_string(patch) +
                    " pixels on each side");
  }
  std::mt19937_64 rng(seed);
  auto Uniform = [&rng](std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
  };
  std::vector<Image> patches;
  patches.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Image& src = *usable[Uniform(usable.size())];
    const std::size_t x = Uniform(src.width - patch + 1);
    const std::size_t y = Uniform(src.height - patch + 1);
    patches.push_back(Crop(src, x, y, patch, patch));
  }
  return patches;
}

std::vector<Image> ExtractPatches(const fs::path& corpus_dir,
                                  std::size_t patch, std::size_t count,
                                  std::uint64_t seed) {
  if (count == 0) return {};
  std::vector<Image> corpus;
  for (const auto& path : ListImages(corpus_dir)) {
    corpus.push_back(Load(path));
  }
  return ExtractPatches(corpus, patch, count, seed);
}

}  // namespace rateattack
