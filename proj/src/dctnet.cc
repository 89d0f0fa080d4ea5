#include "rateattack/dctnet.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "rateattack/error.h"
#include "rateattack/jpeg.h"

namespace rateattack {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'T', 'N'};
constexpr std::uint8_t kContainerVersion = 1;
constexpr std::size_t kFixedHeader = 4 + 1 + 1 + 1 + 1 + 4 + 4 + 2;
constexpr std::size_t kHeaderBytes = kFixedHeader + kLatentChannels * 8;
constexpr const char* kCheckpointFormat = "rateattack-dctnet";
constexpr int kCheckpointVersion = 1;

void PutU16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t GetU32(std::span<const std::uint8_t> b, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

std::uint16_t GetU16(std::span<const std::uint8_t> b, std::size_t pos) {
  return static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
}

std::string Hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t Fnv1a(std::uint64_t h, std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Latents of byte-stored patches, computed on demand.
class PatchLatentSource : public LatentSource {
 public:
  PatchLatentSource(const DctNet& net, std::size_t patch,
                    const std::vector<std::vector<std::uint8_t>>& patches)
      : net_(net), patch_(patch), patches_(patches) {}
  std::size_t size() const override { return patches_.size(); }
  std::size_t channels() const override { return kLatentChannels; }
  void Get(std::size_t index, std::vector<double>& latent) const override {
    latent = net_.Forward(FromBytes(patch_, patch_, patches_.at(index))).data;
  }

 private:
  const DctNet& net_;
  std::size_t patch_;
  const std::vector<std::vector<std::uint8_t>>& patches_;
};

}  // namespace

std::string ColorModeName(ColorMode mode) {
  return mode == ColorMode::kYcbcr ? "ycbcr" : "rgb";
}

ColorMode ParseColorMode(const std::string& name) {
  if (name == "ycbcr") return ColorMode::kYcbcr;
  if (name == "rgb") return ColorMode::kRgb;
  throw Error(ErrorCode::kInvalidArgument, "unknown colour mode '" + name + "'");
}

std::string QuantModeName(QuantMode mode) {
  switch (mode) {
    case QuantMode::kSte: return "ste";
    case QuantMode::kNoise: return "noise";
    case QuantMode::kNone: return "none";
  }
  return "ste";
}

QuantMode ParseQuantMode(const std::string& name) {
  if (name == "ste") return QuantMode::kSte;
  if (name == "noise") return QuantMode::kNoise;
  if (name == "none") return QuantMode::kNone;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown quantisation mode '" + name + "'");
}

// ---------------------------------------------------------------------------

DctNet::DctNet(int quality, ColorMode mode)
    : quality_(quality), color_mode_(mode) {
  const QuantTable luma = ScaleTable(BaseLumaTable(), quality);
  const QuantTable chroma = ScaleTable(BaseChromaTable(), quality);
  for (std::size_t p = 0; p < 3; ++p) {
    const QuantTable& t = (p == 0 || mode == ColorMode::kRgb) ? luma : chroma;
    for (std::size_t k = 0; k < kBlockArea; ++k) {
      // The JPEG FDCT on 0..255 samples equals the orthonormal DCT, so the
      // only conversion to [0,1] pixels is the factor 255.
      steps_[p * kBlockArea + k] = t.natural()[k] / 255.0;
    }
  }
}

const FactorizedDensity& DctNet::density() const {
  RequireTrained();
  return *density_;
}

void DctNet::RequireTrained() const {
  if (!density_) {
    throw Error(ErrorCode::kUntrained,
                "DCT-Net Q" + std::to_string(quality_) +
                    " has no trained entropy model");
  }
}

void DctNet::SetModel(FactorizedDensity density,
                      std::vector<ChannelRange> ranges) {
  if (density.channels() != kLatentChannels ||
      ranges.size() != kLatentChannels) {
    throw Error(ErrorCode::kShapeMismatch,
                "DCT-Net needs 192 density channels and ranges");
  }
  tables_ = BuildCdfTables(density, ranges);
  density_ = std::move(density);
  ranges_ = std::move(ranges);
}

void DctNet::ToShiftedPlanes(const Image& rgb,
                             std::vector<double>& planes) const {
  const std::size_t n = rgb.plane_size();
  planes.resize(3 * n);
  if (color_mode_ == ColorMode::kRgb) {
    for (std::size_t i = 0; i < 3 * n; ++i) planes[i] = rgb.data[i] - 0.5;
    return;
  }
  const ColorMatrix& m = RgbToYccMatrix();
  const double* r = rgb.data.data();
  const double* g = r + n;
  const double* b = g + n;
  for (std::size_t p = 0; p < 3; ++p) {
    const double m0 = m[p][0], m1 = m[p][1], m2 = m[p][2];
    const double shift = kYccOffset[p] - 0.5;
    double* out = planes.data() + p * n;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = m0 * r[i] + m1 * g[i] + m2 * b[i] + shift;
    }
  }
}

CoeffTensor DctNet::Forward(const Image& rgb) const {
  std::vector<double> planes;
  ToShiftedPlanes(rgb, planes);
  CoeffTensor latent = BlockDctForward(planes, 3, rgb.height, rgb.width);
  const std::size_t n = latent.channel_size();
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    double* row = latent.data.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) row[i] /= steps_[c];
  }
  return latent;
}

CoeffTensor DctNet::Quantize(const CoeffTensor& latent) {
  CoeffTensor q = latent;
  for (double& v : q.data) v = RoundHalfAway(v);
  return q;
}

Image DctNet::Reconstruct(const CoeffTensor& latent) const {
  if (latent.channels != kLatentChannels) {
    throw Error(ErrorCode::kShapeMismatch,
                "latent must have 192 channels, got " +
                    std::to_string(latent.channels));
  }
  CoeffTensor scaled = latent;
  const std::size_t n = latent.channel_size();
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    for (std::size_t i = 0; i < n; ++i) scaled.data[c * n + i] *= steps_[c];
  }
  const std::vector<double> planes = BlockDctInverse(scaled);
  Image out(latent.width * kBlock, latent.height * kBlock);
  const std::size_t pn = out.plane_size();
  if (color_mode_ == ColorMode::kRgb) {
    for (std::size_t i = 0; i < 3 * pn; ++i) {
      out.data[i] = std::clamp(planes[i] + 0.5, 0.0, 1.0);
    }
    return out;
  }
  const ColorMatrix& m = YccToRgbMatrix();
  for (std::size_t i = 0; i < pn; ++i) {
    const double ycc[3] = {planes[i] + 0.5 - kYccOffset[0],
                           planes[pn + i] + 0.5 - kYccOffset[1],
                           planes[2 * pn + i] + 0.5 - kYccOffset[2]};
    for (std::size_t p = 0; p < 3; ++p) {
      const double v = m[p][0] * ycc[0] + m[p][1] * ycc[1] + m[p][2] * ycc[2];
      out.data[p * pn + i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Var DctNet::ForwardOnTape(Var rgb) const {
  const Shape& s = rgb.shape();
  if (s.size() != 3 || s[0] != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "DCT-Net expects [3,H,W], got " + ShapeString(s));
  }
  const std::size_t h = s[1], w = s[2];
  if (h % kBlock != 0 || w % kBlock != 0) {
    throw Error(ErrorCode::kDimension,
                "DCT-Net needs dimensions that are multiples of 8");
  }
  Tape& tape = *rgb.tape;
  Var flat = Reshape(rgb, {3, h * w});
  Var planes;
  if (color_mode_ == ColorMode::kYcbcr) {
    const ColorMatrix& m = RgbToYccMatrix();
    std::vector<double> mat;
    for (const auto& row : m) mat.insert(mat.end(), row.begin(), row.end());
    Var mv = tape.Constant(Tensor({3, 3}, std::move(mat)));
    Var shift = tape.Constant(Tensor(
        {3, 1}, {kYccOffset[0] - 0.5, kYccOffset[1] - 0.5,
                 kYccOffset[2] - 0.5}));
    planes = Add(MatMul(mv, flat), shift);
  } else {
    planes = AddScalar(flat, -0.5);
  }
  Var coeffs = BlockDctForward(Reshape(planes, {3, h, w}));
  Var steps = tape.Constant(
      Tensor({kLatentChannels, 1},
             std::vector<double>(steps_.begin(), steps_.end())));
  return Div(Reshape(coeffs, {kLatentChannels, (h / kBlock) * (w / kBlock)}),
             steps);
}

Var DctNet::RateOnTape(Var rgb, QuantMode mode, std::uint64_t seed) const {
  RequireTrained();
  Var latent = ForwardOnTape(rgb);
  switch (mode) {
    case QuantMode::kSte: latent = RoundSte(latent); break;
    case QuantMode::kNoise: latent = AddUniformNoise(latent, seed); break;
    case QuantMode::kNone: break;
  }
  const std::vector<Var> params =
      DensityParamsOnTape(*rgb.tape, *density_, false);
  return ::rateattack::RateOnTape(latent, params);
}

double DctNet::RateEstimate(const Image& rgb) const {
  return RateAndGradient(rgb, {}, QuantMode::kSte, 0);
}

double DctNet::RateAndGradient(const Image& rgb, std::span<double> grad,
                               QuantMode mode, std::uint64_t seed,
                               double bin_width) const {
  RequireTrained();
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != rgb.num_values()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient buffer size mismatch");
  }
  std::vector<double> planes;
  ToShiftedPlanes(rgb, planes);
  const std::size_t bh = rgb.height / kBlock, bw = rgb.width / kBlock;
  const std::size_t n = bh * bw;
  std::vector<double> y(kLatentChannels * n);
  BlockDctForward(planes, 3, rgb.height, rgb.width, y);
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    for (std::size_t i = 0; i < n; ++i) y[c * n + i] /= steps_[c];
  }

  std::vector<double> dy(want_grad ? y.size() : 0);
  double total = 0.0;
  if (mode == QuantMode::kSte) {
    // Every rounded value is an integer, so evaluate the density once per
    // distinct symbol and look the rest up.
    std::vector<double> symbols, nll, dnll;
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
      double* row = y.data() + c * n;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = 0; i < n; ++i) {
        row[i] = RoundHalfAway(row[i]);
        lo = std::min(lo, row[i]);
        hi = std::max(hi, row[i]);
      }
      const auto span = static_cast<std::size_t>(hi - lo) + 1;
      symbols.resize(span);
      nll.resize(span);
      dnll.resize(want_grad ? span : 0);
      for (std::size_t k = 0; k < span; ++k) symbols[k] = lo + static_cast<double>(k);
      density_->ChannelNllElementwise(c, symbols, nll, dnll);
      double channel_bits = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(row[i] - lo);
        channel_bits += nll[k];
        if (want_grad) dy[c * n + i] = dnll[k];
      }
      total += channel_bits;
    }
  } else {
    if (mode == QuantMode::kNoise) {
      const std::vector<double> u = UniformNoise(y.size(), seed);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += u[i];
    }
    std::vector<double> nll(n);
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
      const std::span<const double> row(y.data() + c * n, n);
      density_->ChannelNllElementwise(
          c, row, nll,
          want_grad ? std::span<double>(dy.data() + c * n, n)
                    : std::span<double>(),
          bin_width);
      double channel_bits = 0.0;
      for (double v : nll) channel_bits += v;
      total += channel_bits;
    }
  }
  if (!std::isfinite(total)) {
    throw Error(ErrorCode::kNonFinite, "rate estimate is not finite");
  }
  if (!want_grad) return total;

  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    for (std::size_t i = 0; i < n; ++i) dy[c * n + i] /= steps_[c];
  }
  std::vector<double> dplanes(planes.size());
  BlockDctInverse(dy, 3, rgb.height, rgb.width, dplanes);
  const std::size_t pn = rgb.plane_size();
  if (color_mode_ == ColorMode::kRgb) {
    std::copy(dplanes.begin(), dplanes.end(), grad.begin());
  } else {
    const ColorMatrix& m = RgbToYccMatrix();
    for (std::size_t q = 0; q < 3; ++q) {
      const double m0 = m[0][q], m1 = m[1][q], m2 = m[2][q];
      double* out = grad.data() + q * pn;
      for (std::size_t i = 0; i < pn; ++i) {
        out[i] = m0 * dplanes[i] + m1 * dplanes[pn + i] +
                 m2 * dplanes[2 * pn + i];
      }
    }
  }
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw Error(ErrorCode::kNonFinite, "rate gradient is not finite");
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Codec

std::vector<std::uint8_t> DctNet::Compress(const Image& rgb) const {
  RequireTrained();
  if (rgb.width == 0 || rgb.height == 0) {
    throw Error(ErrorCode::kDimension, "cannot compress an empty image");
  }
  const Image padded = Pad(rgb);
  const CoeffTensor latent = Quantize(Forward(padded));
  const std::size_t n = latent.channel_size();
  SymbolStream stream;
  stream.symbols.resize(latent.data.size());
  stream.channels.resize(latent.data.size());
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      stream.symbols[c * n + i] = static_cast<std::int32_t>(latent.data[c * n + i]);
      stream.channels[c * n + i] = static_cast<std::uint32_t>(c);
    }
  }
  const std::vector<std::uint8_t> payload = RansEncode(stream, tables_);

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kContainerVersion);
  out.push_back(static_cast<std::uint8_t>(quality_));
  out.push_back(static_cast<std::uint8_t>(color_mode_));
  out.push_back(0);
  PutU32(out, static_cast<std::uint32_t>(rgb.width));
  PutU32(out, static_cast<std::uint32_t>(rgb.height));
  PutU16(out, static_cast<std::uint16_t>(kLatentChannels));
  for (const CdfTable& t : tables_) {
    PutU32(out, static_cast<std::uint32_t>(t.offset));
    PutU32(out, static_cast<std::uint32_t>(t.range()));
  }
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::size_t DctNet::PayloadBytes(std::span<const std::uint8_t> container) {
  if (container.size() < kHeaderBytes) {
    throw Error(ErrorCode::kTruncated, "DCT-Net container is truncated");
  }
  return container.size() - kHeaderBytes;
}

CoeffTensor DctNet::DecompressLatent(std::span<const std::uint8_t> b,
                                     std::size_t* width,
                                     std::size_t* height) const {
  RequireTrained();
  if (b.size() < kHeaderBytes) {
    throw Error(ErrorCode::kTruncated, "DCT-Net container is truncated");
  }
  if (!std::equal(kMagic, kMagic + 4, b.begin())) {
    throw Error(ErrorCode::kUnsupportedFormat, "not a DCT-Net container");
  }
  if (b[4] != kContainerVersion) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "unsupported DCT-Net container version " + std::to_string(b[4]));
  }
  if (b[5] != quality_ || b[6] != static_cast<std::uint8_t>(color_mode_)) {
    throw Error(ErrorCode::kInvalidArgument,
                "container was written by Q" + std::to_string(b[5]) +
                    ", model is Q" + std::to_string(quality_));
  }
  const std::size_t w = GetU32(b, 8);
  const std::size_t h = GetU32(b, 12);
  if (GetU16(b, 16) != kLatentChannels || w == 0 || h == 0 ||
      w > (1u << 16) || h > (1u << 16)) {
    throw Error(ErrorCode::kCorruptStream, "bad DCT-Net container header");
  }
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    const auto offset = static_cast<std::int32_t>(GetU32(b, kFixedHeader + 8 * c));
    const std::size_t range = GetU32(b, kFixedHeader + 8 * c + 4);
    if (offset != tables_[c].offset || range != tables_[c].range()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "container symbol ranges do not match the model (channel " +
                      std::to_string(c) + ")");
    }
  }
  const std::size_t pw = (w + 7) / 8 * 8, ph = (h + 7) / 8 * 8;
  CoeffTensor latent;
  latent.channels = kLatentChannels;
  latent.height = ph / kBlock;
  latent.width = pw / kBlock;
  const std::size_t n = latent.channel_size();
  std::vector<std::uint32_t> channels(kLatentChannels * n);
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    std::fill(channels.begin() + c * n, channels.begin() + (c + 1) * n,
              static_cast<std::uint32_t>(c));
  }
  const std::vector<std::int32_t> symbols =
      RansDecode(b.subspan(kHeaderBytes), tables_, channels.size(), channels);
  latent.data.assign(symbols.begin(), symbols.end());
  if (width) *width = w;
  if (height) *height = h;
  return latent;
}

Image DctNet::Decompress(std::span<const std::uint8_t> container) const {
  std::size_t w = 0, h = 0;
  const CoeffTensor latent = DecompressLatent(container, &w, &h);
  const Image full = Reconstruct(latent);
  if (full.width == w && full.height == h) return full;
  return Crop(full, 0, 0, w, h);
}

double DctNet::ActualBpp(const Image& rgb) const {
  const std::vector<std::uint8_t> c = Compress(rgb);
  return 8.0 * static_cast<double>(PayloadBytes(c)) /
         static_cast<double>(rgb.num_pixels());
}

// ---------------------------------------------------------------------------
// Training

TrainedSubstitute Train(std::span<const Image> corpus, int quality,
                        const TrainOptions& options, ColorMode mode,
                        const EpochCallback& on_epoch) {
  DctNet net(quality, mode);
  if (options.patch_size == 0 || options.patch_size % kBlock != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "patch size must be a positive multiple of 8");
  }
  if (options.patches == 0) {
    throw Error(ErrorCode::kInvalidArgument, "training needs patches");
  }

  std::vector<std::vector<std::uint8_t>> patches;
  std::uint64_t hash = 0xCBF29CE484222325ull;
  {
    const std::vector<Image> images =
        ExtractPatches(corpus, options.patch_size, options.patches, options.seed);
    patches.reserve(images.size());
    for (const Image& im : images) {
      patches.push_back(ToBytes(im));
      hash = Fnv1a(hash, patches.back());
    }
  }
  PatchLatentSource source(net, options.patch_size, patches);

  // Per-channel statistics set the initial scale and centre of each density
  // and the symbol range of the coder tables.
  std::vector<double> sum(kLatentChannels, 0.0), sum_sq(kLatentChannels, 0.0);
  std::vector<ChannelRange> ranges(
      kLatentChannels, {std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity()});
  std::vector<double> latent;
  std::size_t per_channel = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    source.Get(i, latent);
    per_channel = latent.size() / kLatentChannels;
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
      for (std::size_t k = 0; k < per_channel; ++k) {
        const double v = latent[c * per_channel + k];
        sum[c] += v;
        sum_sq[c] += v * v;
        ranges[c].min = std::min(ranges[c].min, v);
        ranges[c].max = std::max(ranges[c].max, v);
      }
    }
  }
  const double count = static_cast<double>(per_channel * source.size());
  std::vector<double> scales(kLatentChannels), means(kLatentChannels);
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    means[c] = sum[c] / count;
    const double var = std::max(0.0, sum_sq[c] / count - means[c] * means[c]);
    // Logistic scale with the variance of the noisy latent.
    scales[c] = std::sqrt(var + 1.0 / 12.0) * std::sqrt(3.0) / std::numbers::pi;
  }
  FactorizedDensity density = FactorizedDensity::Initialize(scales, options.seed);
  for (std::size_t c = 0; c < kLatentChannels; ++c) {
    density.mutable_params(c)[DensityLayout::kBias[kDensityLayers - 1]] -=
        means[c] / scales[c];
  }

  FitOptions fit;
  fit.epochs = options.epochs;
  fit.learning_rate = options.learning_rate;
  fit.batch_size = options.batch_size;
  fit.seed = options.seed;
  const FitReport report = Fit(density, source, fit, on_epoch);

  net.SetModel(std::move(density), std::move(ranges));
  TrainedSubstitute out{std::move(net), {}};
  out.metadata.seed = options.seed;
  out.metadata.corpus_hash = Hex64(hash);
  out.metadata.epochs = options.epochs;
  out.metadata.patches = options.patches;
  out.metadata.patch_size = options.patch_size;
  out.metadata.learning_rate = options.learning_rate;
  out.metadata.batch_size = options.batch_size;
  out.metadata.initial_nll = report.initial_nll;
  out.metadata.final_nll = report.final_nll;
  out.metadata.epoch_nll = report.epoch_nll;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json CheckpointToJson(const TrainedSubstitute& model) {
  const DctNet& net = model.net;
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["quality"] = net.quality();
  j["color_mode"] = ColorModeName(net.color_mode());
  j["density"] = net.density().ToJson();
  nlohmann::json ranges = nlohmann::json::array();
  for (const ChannelRange& r : net.ranges()) ranges.push_back({r.min, r.max});
  j["ranges"] = std::move(ranges);
  const TrainingMetadata& m = model.metadata;
  j["metadata"] = {{"seed", m.seed},
                   {"corpus_hash", m.corpus_hash},
                   {"epochs", m.epochs},
                   {"patches", m.patches},
                   {"patch_size", m.patch_size},
                   {"learning_rate", m.learning_rate},
                   {"batch_size", m.batch_size},
                   {"initial_nll", m.initial_nll},
                   {"final_nll", m.final_nll},
                   {"epoch_nll", m.epoch_nll}};
  return j;
}

TrainedSubstitute CheckpointFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format") != kCheckpointFormat) {
      throw Error(ErrorCode::kUnsupportedFormat, "not a DCT-Net checkpoint");
    }
    if (j.at("version") != kCheckpointVersion) {
      throw Error(ErrorCode::kUnsupportedFormat,
                  "unsupported checkpoint version " + j.at("version").dump());
    }
    DctNet net(j.at("quality").get<int>(),
               ParseColorMode(j.at("color_mode").get<std::string>()));
    FactorizedDensity density = FactorizedDensity::FromJson(j.at("density"));
    std::vector<ChannelRange> ranges;
    for (const auto& r : j.at("ranges")) {
      ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    }
    net.SetModel(std::move(density), std::move(ranges));
    TrainedSubstitute out{std::move(net), {}};
    const auto& m = j.at("metadata");
    out.metadata.seed = m.at("seed").get<std::uint64_t>();
    out.metadata.corpus_hash = m.at("corpus_hash").get<std::string>();
    out.metadata.epochs = m.at("epochs").get<int>();
    out.metadata.patches = m.at("patches").get<std::size_t>();
    out.metadata.patch_size = m.at("patch_size").get<std::size_t>();
    out.metadata.learning_rate = m.at("learning_rate").get<double>();
    out.metadata.batch_size = m.at("batch_size").get<std::size_t>();
    out.metadata.initial_nll = m.at("initial_nll").get<double>();
    out.metadata.final_nll = m.at("final_nll").get<double>();
    out.metadata.epoch_nll = m.at("epoch_nll").get<std::vector<double>>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat,
                std::string("malformed checkpoint: ") + e.what());
  }
}

void SaveCheckpoint(const TrainedSubstitute& model,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << CheckpointToJson(model).dump(1) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

TrainedSubstitute LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat,
                path.string() + " is not valid JSON: " + e.what());
  }
  return CheckpointFromJson(j);
}

}  // namespace rateattack
