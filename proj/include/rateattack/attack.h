#ifndef RATEATTACK_ATTACK_H_
#define RATEATTACK_ATTACK_H_

// Iterative gradient-sign bitrate attack under an L2 budget, and the
// Gaussian-noise control with the same budget.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rateattack/dctnet.h"
#include "rateattack/image.h"

namespace rateattack {

struct AttackConfig {
  // L2 radius is per_pixel_budget * sqrt(H * W * 3) unless `epsilon` is set.
  double per_pixel_budget = 7.0 / 255.0;
  std::optional<double> epsilon;
  double step = 0.004;
  int max_iterations = 600;
  int patience = 20;
  std::uint64_t seed = 0;
  // Gradient path through rounding. The continuous latent gives the
  // strongest ascent direction; the tracked loss is always the rounded rate.
  QuantMode quant_mode = QuantMode::kNone;
  // Likelihood window of the none/noise surrogates, in quantisation steps.
  // Narrower than a bin keeps a slope on coefficients that sit inside one;
  // 0.6 was picked on training images.
  double bin_width = 0.6;

  double Epsilon(const Image& image) const;
  // Throws kInvalidArgument unless eps > 0, step > 0, T >= 1, patience >= 1
  // and 0 < bin_width <= 1.
  void Validate() const;
};

enum class StopReason { kMaxIterations, kPatience };
std::string StopReasonName(StopReason reason);

struct AttackStep {
  int iteration = 0;
  double loss_bits = 0.0;
  double estimated_bpp = 0.0;
  double perturbation_l2 = 0.0;
  double best_loss_bits = 0.0;
};

struct AttackTrace {
  double epsilon = 0.0;
  double initial_loss_bits = 0.0;
  double best_loss_bits = 0.0;
  int best_iteration = 0;  // 0 means the clean image was never beaten
  StopReason stop_reason = StopReason::kMaxIterations;
  std::vector<AttackStep> steps;
  Image adversarial;  // best iterate
};

// Differentiable rate the attack maximises.
class RateModel {
 public:
  virtual ~RateModel() = default;
  // Bits of `image`; fills `grad` (same layout as Image::data) when it is
  // non-empty. `iteration` lets stochastic surrogates vary their draw.
  virtual double RateAndGradient(const Image& image, std::span<double> grad,
                                 std::uint64_t iteration) const = 0;
};

// Rate of the rounded latent; `mode` selects only how the gradient crosses
// quantisation.
class DctNetRate : public RateModel {
 public:
  DctNetRate(const DctNet& net, QuantMode mode, std::uint64_t seed = 0,
             double bin_width = 1.0)
      : net_(net), mode_(mode), seed_(seed), bin_width_(bin_width) {}
  double RateAndGradient(const Image& image, std::span<double> grad,
                         std::uint64_t iteration) const override;

 private:
  const DctNet& net_;
  QuantMode mode_;
  std::uint64_t seed_;
  double bin_width_;
};

// v if ||v||_2 <= eps, else v * eps / ||v||_2.
std::vector<double> ClipByNorm(std::span<const double> v, double eps);
double L2Distance(const Image& a, const Image& b);

AttackTrace WhiteBoxAttack(const RateModel& model, const Image& x0,
                           const AttackConfig& config);

// x0 + clip_by_norm(g, eps), g ~ N(0, 1) i.i.d., clipped to [0, 1].
Image NoiseBaseline(const Image& x0, const AttackConfig& config,
                    std::uint64_t seed);

// Rounds `adversarial` to 8-bit levels so that the stored image still
// satisfies sum((b' - b0)^2) < (255 * eps)^2. `x0` must hold exact byte
// levels. Rounding that moved a value away from x0 is undone first, largest
// excess first.
Image QuantizeWithinBudget(const Image& x0, const Image& adversarial,
                           double epsilon);
// Exact integer audit of two byte rasters against a budget.
bool WithinBudgetBytes(std::span<const std::uint8_t> original,
                       std::span<const std::uint8_t> adversarial,
                       double epsilon);

// One JSON object per line: a header record, then one per iteration.
std::string TraceToJsonLines(const AttackTrace& trace);

}  // namespace rateattack

#endif  // RATEATTACK_ATTACK_H_
