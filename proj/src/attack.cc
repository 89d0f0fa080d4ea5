#include "rateattack/attack.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rateattack/error.h"

namespace rateattack {

namespace {

std::uint64_t Mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Sign(double g) { return g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0); }

void CheckImage(const Image& x0) {
  if (x0.num_values() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "attack needs a non-empty image");
  }
  for (double v : x0.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "attack input has values outside [0,1]");
    }
  }
}

}  // namespace

double AttackConfig::Epsilon(const Image& image) const {
  if (epsilon) return *epsilon;
  return per_pixel_budget * std::sqrt(static_cast<double>(image.num_values()));
}

void AttackConfig::Validate() const {
  const bool eps_ok = epsilon ? *epsilon > 0 : per_pixel_budget > 0;
  if (!eps_ok || !(step > 0) || max_iterations < 1 || patience < 1 ||
      !(bin_width > 0 && bin_width <= 1)) {
    throw Error(ErrorCode::kInvalidArgument,
                "attack config needs eps > 0, step > 0, T >= 1, patience >= 1, "
                "0 < bin_width <= 1");
  }
}

std::string StopReasonName(StopReason reason) {
  return reason == StopReason::kPatience ? "patience" : "max-iter";
}

double DctNetRate::RateAndGradient(const Image& image, std::span<double> grad,
                                   std::uint64_t iteration) const {
  const double surrogate =
      net_.RateAndGradient(image, grad, mode_, Mix(seed_, iteration), bin_width_);
  // The loss that is tracked is always the rate of the rounded latent.
  return mode_ == QuantMode::kSte ? surrogate : net_.RateEstimate(image);
}

std::vector<double> ClipByNorm(std::span<const double> v, double eps) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  if (norm > eps) {
    const double scale = eps / norm;
    for (double& x : out) x *= scale;
  }
  return out;
}

double L2Distance(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::kShapeMismatch, "images differ in size");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

AttackTrace WhiteBoxAttack(const RateModel& model, const Image& x0,
                           const AttackConfig& config) {
  config.Validate();
  CheckImage(x0);
  const double eps = config.Epsilon(x0);
  const std::size_t n = x0.num_values();
  const double pixels = static_cast<double>(x0.num_pixels());

  AttackTrace trace;
  trace.epsilon = eps;
  std::vector<double> grad(n);
  Image x = x0;
  double loss = model.RateAndGradient(x, grad, 0);
  trace.initial_loss_bits = loss;
  trace.best_loss_bits = loss;
  trace.adversarial = x0;

  std::vector<double> delta(n);
  int stale = 0;
  for (int t = 1; t <= config.max_iterations; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      delta[i] = x.data[i] + config.step * Sign(grad[i]) - x0.data[i];
    }
    const std::vector<double> pert = ClipByNorm(delta, eps);
    for (std::size_t i = 0; i < n; ++i) {
      x.data[i] = std::clamp(x0.data[i] + pert[i], 0.0, 1.0);
    }
    try {
      loss = model.RateAndGradient(x, grad, static_cast<std::uint64_t>(t));
    } catch (const Error& e) {
      throw Error(e.code(), "attack aborted at iteration " + std::to_string(t) +
                                " (best " + std::to_string(trace.best_loss_bits) +
                                " bits): " + e.what());
    }
    AttackStep step;
    step.iteration = t;
    step.loss_bits = loss;
    step.estimated_bpp = loss / pixels;
    step.perturbation_l2 = L2Distance(x, x0);
    if (loss > trace.best_loss_bits) {
      trace.best_loss_bits = loss;
      trace.best_iteration = t;
      trace.adversarial = x;
      stale = 0;
    } else {
      ++stale;
    }
    step.best_loss_bits = trace.best_loss_bits;
    trace.steps.push_back(step);
    if (stale >= config.patience) {
      trace.stop_reason = StopReason::kPatience;
      return trace;
    }
  }
  trace.stop_reason = StopReason::kMaxIterations;
  return trace;
}

Image NoiseBaseline(const Image& x0, const AttackConfig& config,
                    std::uint64_t seed) {
  config.Validate();
  CheckImage(x0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> g(x0.num_values());
  for (double& v : g) v = normal(rng);
  const std::vector<double> pert = ClipByNorm(g, config.Epsilon(x0));
  Image out = x0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.data[i] = std::clamp(x0.data[i] + pert[i], 0.0, 1.0);
  }
  return out;
}

Image QuantizeWithinBudget(const Image& x0, const Image& adversarial,
                           double epsilon) {
  if (x0.width != adversarial.width || x0.height != adversarial.height) {
    throw Error(ErrorCode::kShapeMismatch, "images differ in size");
  }
  const std::vector<std::uint8_t> base = ToBytes(x0);
  if (FromBytes(x0.width, x0.height, base) != x0) {
    throw Error(ErrorCode::kInvalidArgument,
                "original image is not on 8-bit levels");
  }
  const std::vector<std::uint8_t> rounded = ToBytes(adversarial);
  const std::size_t pn = x0.plane_size();
  const std::size_t n = rounded.size();
  // Work in Image::data order: value index p * pn + i <-> byte 3 * i + p.
  auto byte_index = [pn](std::size_t k) { return 3 * (k % pn) + k / pn; };
  std::vector<int> delta(n);
  std::vector<double> excess(n);
  std::int64_t sum_sq = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t b = byte_index(k);
    delta[k] = static_cast<int>(rounded[b]) - static_cast<int>(base[b]);
    sum_sq += static_cast<std::int64_t>(delta[k]) * delta[k];
    excess[k] = std::abs(delta[k]) -
                255.0 * std::abs(adversarial.data[k] - x0.data[k]);
  }
  const double limit = 255.0 * epsilon * 255.0 * epsilon * (1.0 - 1e-12);
  if (static_cast<double>(sum_sq) > limit) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&excess](std::size_t a, std::size_t b) {
                       return excess[a] > excess[b];
                     });
    auto pull = [&](std::size_t k) {
      const int d = delta[k];
      sum_sq -= 2 * static_cast<std::int64_t>(std::abs(d)) - 1;
      delta[k] = d > 0 ? d - 1 : d + 1;
    };
    for (std::size_t k : order) {
      if (static_cast<double>(sum_sq) <= limit) break;
      if (delta[k] != 0 && excess[k] > 0) pull(k);
    }
    // Only reachable when the real-valued image sat on the boundary.
    while (static_cast<double>(sum_sq) > limit) {
      const auto it = std::max_element(
          delta.begin(), delta.end(),
          [](int a, int b) { return std::abs(a) < std::abs(b); });
      if (*it == 0) break;
      pull(static_cast<std::size_t>(it - delta.begin()));
    }
  }
  std::vector<std::uint8_t> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t b = byte_index(k);
    out[b] = static_cast<std::uint8_t>(static_cast<int>(base[b]) + delta[k]);
  }
  return FromBytes(x0.width, x0.height, out);
}

bool WithinBudgetBytes(std::span<const std::uint8_t> original,
                       std::span<const std::uint8_t> adversarial,
                       double epsilon) {
  if (original.size() != adversarial.size()) return false;
  std::int64_t sum_sq = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const std::int64_t d =
        static_cast<int>(adversarial[i]) - static_cast<int>(original[i]);
    sum_sq += d * d;
  }
  return static_cast<double>(sum_sq) <= 255.0 * epsilon * 255.0 * epsilon;
}

std::string TraceToJsonLines(const AttackTrace& trace) {
  std::string out;
  nlohmann::json head = {{"record", "attack"},
                         {"epsilon", trace.epsilon},
                         {"initial_loss_bits", trace.initial_loss_bits},
                         {"best_loss_bits", trace.best_loss_bits},
                         {"best_iteration", trace.best_iteration},
                         {"iterations", trace.steps.size()},
                         {"stop_reason", StopReasonName(trace.stop_reason)}};
  out += head.dump() + "\n";
  for (const AttackStep& s : trace.steps) {
    nlohmann::json j = {{"record", "iteration"},
                        {"iteration", s.iteration},
                        {"loss_bits", s.loss_bits},
                        {"estimated_bpp", s.estimated_bpp},
                        {"perturbation_l2", s.perturbation_l2},
                        {"best_loss_bits", s.best_loss_bits}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace rateattack
