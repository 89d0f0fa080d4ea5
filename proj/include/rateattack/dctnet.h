#ifndef RATEATTACK_DCTNET_H_
#define RATEATTACK_DCTNET_H_

// JPEG-like substitute compressor: colour transform, level shift, 8x8 block
// DCT, division by a scaled quantisation table, rounding, and a trainable
// factorised entropy model over the resulting 192 channels
// (plane * 64 + u * 8 + v).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rateattack/blockdct.h"
#include "rateattack/entropy_model.h"
#include "rateattack/image.h"
#include "rateattack/rans.h"
#include "rateattack/tensor.h"

namespace rateattack {

inline constexpr std::size_t kLatentChannels = 192;

// kYcbcr: luma table on Y, chroma table on Cb/Cr. kRgb: planes used as-is,
// luma table on all three.
enum class ColorMode { kYcbcr = 0, kRgb = 1 };

// How the latent crosses quantisation inside the differentiable rate.
// kSte rounds with an identity gradient, kNoise adds U(-1/2, 1/2), kNone
// leaves the latent continuous (the attack default, and the surrogate used
// for finite-difference checks).
enum class QuantMode { kSte, kNoise, kNone };

std::string ColorModeName(ColorMode mode);
ColorMode ParseColorMode(const std::string& name);
std::string QuantModeName(QuantMode mode);
QuantMode ParseQuantMode(const std::string& name);

class DctNet {
 public:
  explicit DctNet(int quality, ColorMode mode = ColorMode::kYcbcr);

  int quality() const { return quality_; }
  ColorMode color_mode() const { return color_mode_; }
  // Per-channel divisor in orthonormal-DCT units on [0,1] pixels.
  const std::array<double, kLatentChannels>& steps() const { return steps_; }

  bool trained() const { return density_.has_value(); }
  const FactorizedDensity& density() const;
  const std::vector<ChannelRange>& ranges() const { return ranges_; }
  const std::vector<CdfTable>& tables() const { return tables_; }
  // Installs a density and the observed symbol ranges, and builds tables.
  void SetModel(FactorizedDensity density, std::vector<ChannelRange> ranges);

  // Unquantised latent. Dimensions must be multiples of 8.
  CoeffTensor Forward(const Image& rgb) const;
  // Multiply back, inverse DCT, undo the shift, convert to RGB, clamp.
  Image Reconstruct(const CoeffTensor& latent) const;
  static CoeffTensor Quantize(const CoeffTensor& latent);

  // Differentiable pipeline on a [3, H, W] RGB variable.
  Var ForwardOnTape(Var rgb) const;  // -> [192, H/8 * W/8]
  Var RateOnTape(Var rgb, QuantMode mode, std::uint64_t seed = 0) const;

  // Bits of the rounded latent under the density.
  double RateEstimate(const Image& rgb) const;
  // Rate and d rate / d pixel (same layout as Image::data). `grad` may be
  // empty. For kSte this uses per-channel lookup tables over the integer
  // symbols actually present.
  // `bin_width` < 1 narrows the likelihood window of the kNone and kNoise
  // surrogates.
  double RateAndGradient(const Image& rgb, std::span<double> grad,
                         QuantMode mode = QuantMode::kSte,
                         std::uint64_t seed = 0, double bin_width = 1.0) const;

  // Container around the rANS payload; see docs/formats.md.
  std::vector<std::uint8_t> Compress(const Image& rgb) const;
  Image Decompress(std::span<const std::uint8_t> container) const;
  CoeffTensor DecompressLatent(std::span<const std::uint8_t> container,
                               std::size_t* width = nullptr,
                               std::size_t* height = nullptr) const;
  // 8 * rANS payload bytes / (H * W), container header excluded.
  double ActualBpp(const Image& rgb) const;
  static std::size_t PayloadBytes(std::span<const std::uint8_t> container);

 private:
  void RequireTrained() const;
  void ToShiftedPlanes(const Image& rgb, std::vector<double>& planes) const;

  int quality_;
  ColorMode color_mode_;
  std::array<double, kLatentChannels> steps_{};
  std::optional<FactorizedDensity> density_;
  std::vector<ChannelRange> ranges_;
  std::vector<CdfTable> tables_;
};

struct TrainOptions {
  int epochs = 20;
  std::size_t patches = 500;
  std::size_t patch_size = 256;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::string corpus_hash;  // FNV-1a 64 of the training patch bytes, hex
  int epochs = 0;
  std::size_t patches = 0;
  std::size_t patch_size = 0;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  double initial_nll = 0.0;  // bits per latent element, noisy corpus
  double final_nll = 0.0;
  std::vector<double> epoch_nll;
};

struct TrainedSubstitute {
  DctNet net;
  TrainingMetadata metadata;

  std::string label() const { return "dctnet-q" + std::to_string(net.quality()); }
};

// Fits the entropy model on noisy latents of random patches from `corpus`.
// The transforms stay fixed.
TrainedSubstitute Train(std::span<const Image> corpus, int quality,
                        const TrainOptions& options,
                        ColorMode mode = ColorMode::kYcbcr,
                        const EpochCallback& on_epoch = {});

nlohmann::json CheckpointToJson(const TrainedSubstitute& model);
TrainedSubstitute CheckpointFromJson(const nlohmann::json& j);
void SaveCheckpoint(const TrainedSubstitute& model,
                    const std::filesystem::path& path);
TrainedSubstitute LoadCheckpoint(const std::filesystem::path& path);

}  // namespace rateattack

#endif  // RATEATTACK_DCTNET_H_
