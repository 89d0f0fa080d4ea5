#ifndef RATEATTACK_ENTROPY_MODEL_H_
#define RATEATTACK_ENTROPY_MODEL_H_

// Non-parametric factorised prior. Every latent channel owns a small
// monotone network c(t) = sigmoid(f5(f4(f3(f2(f1(t)))))) with
//   f_k(x) = g_k(softplus(M_k) x + b_k),
//   g_k(x) = x + tanh(F_k) * tanh(x)   for k < 5,
// and layer widths 1 -> 3 -> 3 -> 3 -> 3 -> 1. The probability of an integer
// symbol n (equivalently the density convolved with U(-1/2,1/2)) is
// c(n + 1/2) - c(n - 1/2).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "rateattack/blockdct.h"
#include "rateattack/rans.h"
#include "rateattack/tensor.h"

namespace rateattack {

inline constexpr std::size_t kDensityWidth = 3;
inline constexpr std::size_t kDensityLayers = 5;
inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kTableTailMass = 1e-4;

// Flat per-channel parameter layout.
struct DensityLayout {
  // Raw matrices (softplus gives the effective weight), row-major [out][in].
  static constexpr std::size_t kMatrix[kDensityLayers] = {0, 3, 12, 21, 30};
  static constexpr std::size_t kBias[kDensityLayers] = {33, 36, 39, 42, 45};
  // Raw gates (tanh gives the effective gate) for the first four layers.
  static constexpr std::size_t kFactor[kDensityLayers - 1] = {46, 49, 52, 55};
  static constexpr std::size_t kCount = 58;
  static constexpr std::size_t kIn[kDensityLayers] = {1, 3, 3, 3, 3};
  static constexpr std::size_t kOut[kDensityLayers] = {3, 3, 3, 3, 1};
};

using ChannelParams = std::array<double, DensityLayout::kCount>;

class FactorizedDensity {
 public:
  FactorizedDensity() = default;
  explicit FactorizedDensity(std::size_t channels);

  // Standard initialisation: each layer scales by init_scale^(-1/5) so the
  // whole network starts close to a logistic CDF of scale init_scale. Biases
  // are U(-1/2, 1/2) from `seed`, gates start at zero.
  static FactorizedDensity Initialize(std::span<const double> init_scales,
                                      std::uint64_t seed);

  std::size_t channels() const { return params_.size(); }
  const ChannelParams& params(std::size_t c) const { return params_.at(c); }
  ChannelParams& mutable_params(std::size_t c) { return params_.at(c); }

  // Network output before the final sigmoid.
  double Logit(std::size_t c, double t) const;
  double Cdf(std::size_t c, double t) const;
  // max(c(y+1/2) - c(y-1/2), floor), evaluated without cancellation.
  double Likelihood(std::size_t c, double y) const;

  // Sum over `values` of -log2 Likelihood(c, value). When non-empty,
  // `d_values` receives d/d value (same length) and `d_params` accumulates
  // d/d raw parameter.
  double ChannelNll(std::size_t c, std::span<const double> values,
                    std::span<double> d_values,
                    std::span<double> d_params) const;
  // Per-element -log2 likelihood into `nll`, optional d/d value. A bin
  // narrower than 1 gives -log2(c(y + w/2) - c(y - w/2)).
  void ChannelNllElementwise(std::size_t c, std::span<const double> values,
                             std::span<double> nll,
                             std::span<double> d_values,
                             double bin_width = 1.0) const;

  // Total bits of a [C, ...] latent laid out channel-major. Optional
  // gradient w.r.t. the latent values.
  double Rate(std::span<const double> latent, std::span<double> d_latent) const;
  double Rate(const CoeffTensor& latent) const;

  nlohmann::json ToJson() const;
  static FactorizedDensity FromJson(const nlohmann::json& j);

  bool operator==(const FactorizedDensity&) const = default;

 private:
  double Kernel(std::size_t c, std::span<const double> values,
                std::span<double> nll, std::span<double> d_values,
                std::span<double> d_params, double bin_width = 1.0) const;

  std::vector<ChannelParams> params_;
};

// Rate on a tape, composed only from tensorcore primitives. `latent` has
// shape [C, N]. `params` must hold DensityLayout::kCount variables, each of
// shape [C, 1] (see DensityParamsOnTape).
Var RateOnTape(Var latent, std::span<const Var> params);
Var LikelihoodOnTape(Var latent, std::span<const Var> params);
std::vector<Var> DensityParamsOnTape(Tape& tape,
                                     const FactorizedDensity& density,
                                     bool requires_grad);

// Supplies training latents one at a time. Each latent has the model's
// channel count and is laid out channel-major.
class LatentSource {
 public:
  virtual ~LatentSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t channels() const = 0;
  virtual void Get(std::size_t index, std::vector<double>& latent) const = 0;
};

class VectorLatentSource : public LatentSource {
 public:
  VectorLatentSource(std::size_t channels, std::vector<std::vector<double>> latents)
      : channels_(channels), latents_(std::move(latents)) {}
  std::size_t size() const override { return latents_.size(); }
  std::size_t channels() const override { return channels_; }
  void Get(std::size_t index, std::vector<double>& latent) const override {
    latent = latents_.at(index);
  }

 private:
  std::size_t channels_;
  std::vector<std::vector<double>> latents_;
};

struct FitOptions {
  int epochs = 20;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  // Evaluate the full noisy corpus NLL before and after training.
  bool evaluate_corpus = true;
};

struct FitReport {
  double initial_nll = 0.0;  // bits per element, noisy corpus
  double final_nll = 0.0;
  std::vector<double> epoch_nll;  // running mean over each epoch's batches
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(int epoch, double nll)>;

// Minimises mean -log2 p(y + u), u ~ U(-1/2, 1/2), by Adam.
FitReport Fit(FactorizedDensity& density, const LatentSource& source,
              const FitOptions& options, const EpochCallback& on_epoch = {});

// Mean bits/element of the corpus under the model, with the same noise draw
// used for seed `seed`.
double CorpusNll(const FactorizedDensity& density, const LatentSource& source,
                 std::uint64_t seed);

// Per-channel range of observed latent values.
struct ChannelRange {
  double min = 0.0;
  double max = 0.0;
};

// Integer CDF tables for the coder. Support starts at
// [floor(min) - 2, ceil(max) + 2] and widens until each tail holds at most
// kTableTailMass; the tails share the escape slot.
std::vector<CdfTable> BuildCdfTables(const FactorizedDensity& density,
                                     std::span<const ChannelRange> ranges);

// Quantises a pmf (in-range symbols then escape) to frequencies summing to
// kCdfTotal with every entry >= 1. Returns the cumulative table.
std::vector<std::uint32_t> QuantizePmf(std::span<const double> pmf);

}  // namespace rateattack

#endif  // RATEATTACK_ENTROPY_MODEL_H_
