#ifndef RATEATTACK_IMAGE_H_
#define RATEATTACK_IMAGE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rateattack {

// Planar 3-channel raster with values in [0,1]. Plane p, row y, column x
// lives at data[(p * height + y) * width + x]. Planes are RGB unless a
// function says otherwise.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  static constexpr std::size_t kPlanes = 3;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), data(kPlanes * w * h, fill) {}

  std::size_t plane_size() const { return width * height; }
  std::size_t num_values() const { return data.size(); }
  std::size_t num_pixels() const { return width * height; }

  double& at(std::size_t p, std::size_t y, std::size_t x) {
    return data[(p * height + y) * width + x];
  }
  double at(std::size_t p, std::size_t y, std::size_t x) const {
    return data[(p * height + y) * width + x];
  }
  std::span<double> plane(std::size_t p) {
    return std::span<double>(data).subspan(p * plane_size(), plane_size());
  }
  std::span<const double> plane(std::size_t p) const {
    return std::span<const double>(data).subspan(p * plane_size(),
                                                 plane_size());
  }

  bool operator==(const Image&) const = default;
};

// 8-bit interleaved RGB <-> Image. Values map as byte/255; the reverse
// rounds to nearest and clamps.
Image FromBytes(std::size_t width, std::size_t height,
                std::span<const std::uint8_t> rgb);
std::vector<std::uint8_t> ToBytes(const Image& image);

// Reads binary PPM (P6, maxval 255) or 8-bit PNG, chosen by file signature.
Image Load(const std::filesystem::path& path);
// Writes PPM for .ppm/.pnm and PNG for .png.
void Save(const Image& image, const std::filesystem::path& path);

std::vector<std::uint8_t> EncodePpm(const Image& image);
Image DecodePpm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> EncodePng(const Image& image);
Image DecodePng(std::span<const std::uint8_t> bytes);

// BT.601 full-range colour matrices (Kr = 0.299, Kb = 0.114). Chroma carries
// a +0.5 offset so all three planes live in [0,1].
using ColorMatrix = std::array<std::array<double, 3>, 3>;
const ColorMatrix& RgbToYccMatrix();
const ColorMatrix& YccToRgbMatrix();
inline constexpr std::array<double, 3> kYccOffset = {0.0, 0.5, 0.5};

Image RgbToYcbcr(const Image& rgb);
Image YcbcrToRgb(const Image& ycc);

// Pads right/bottom by edge replication to multiples of 8.
Image Pad(const Image& image);

// Crops `patch` x `patch` windows. Each draw picks an image uniformly among
// the ones large enough, then a uniform top-left corner.
std::vector<Image> ExtractPatches(std::span<const Image> corpus,
                                  std::size_t patch, std::size_t count,
                                  std::uint64_t seed);
std::vector<Image> ExtractPatches(const std::filesystem::path& corpus_dir,
                                  std::size_t patch, std::size_t count,
                                  std::uint64_t seed);

// Sorted list of .ppm/.pnm/.png files in a directory.
std::vector<std::filesystem::path> ListImages(
    const std::filesystem::path& dir);

Image Crop(const Image& image, std::size_t x0, std::size_t y0,
           std::size_t width, std::size_t height);

}  // namespace rateattack

#endif  // RATEATTACK_IMAGE_H_
