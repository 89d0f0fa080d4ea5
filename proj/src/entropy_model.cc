#include "rateattack/entropy_model.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "fast_math.h"
#include "rateattack/error.h"

namespace rateattack {

namespace {

using L = DensityLayout;

double Softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Effective (constrained) parameters of one channel.
struct Effective {
  double w[kDensityLayers][kDensityWidth][kDensityWidth];
  double b[kDensityLayers][kDensityWidth];
  double g[kDensityLayers - 1][kDensityWidth];
};

Effective MakeEffective(const ChannelParams& p) {
  Effective e{};
  for (std::size_t k = 0; k < kDensityLayers; ++k) {
    for (std::size_t j = 0; j < L::kOut[k]; ++j) {
      for (std::size_t i = 0; i < L::kIn[k]; ++i) {
        e.w[k][j][i] = Softplus(p[L::kMatrix[k] + j * L::kIn[k] + i]);
      }
      e.b[k][j] = p[L::kBias[k] + j];
      if (k + 1 < kDensityLayers) e.g[k][j] = std::tanh(p[L::kFactor[k] + j]);
    }
  }
  return e;
}

constexpr std::size_t kChunk = 256;
constexpr std::size_t kLanes = 2 * kChunk;  // upper and lower evaluations

// Scratch for one chunk: activations per layer and unit.
struct Scratch {
  double h[kDensityLayers][kDensityWidth][kLanes];   // layer inputs
  double th[kDensityLayers - 1][kDensityWidth][kLanes];
  double logit[kLanes];
  double delta[kDensityWidth][kLanes];
  double delta_next[kDensityWidth][kLanes];
  double nll[kChunk];
};

void ForwardChunk(const Effective& e, std::size_t m, Scratch& s) {
  // s.h[0][0] holds the inputs.
  for (std::size_t k = 0; k < kDensityLayers; ++k) {
    const std::size_t in = L::kIn[k];
    if (k + 1 < kDensityLayers) {
      for (std::size_t j = 0; j < kDensityWidth; ++j) {
        double* out = s.h[k + 1][j];
        double* th = s.th[k][j];
        const double bias = e.b[k][j];
        const double gate = e.g[k][j];
        if (in == 1) {
          const double w0 = e.w[k][j][0];
          const double* x0 = s.h[k][0];
          for (std::size_t i = 0; i < m; ++i) {
            const double z = w0 * x0[i] + bias;
            const double t = internal::FastTanh(z);
            th[i] = t;
            out[i] = z + gate * t;
          }
        } else {
          const double w0 = e.w[k][j][0], w1 = e.w[k][j][1],
                       w2 = e.w[k][j][2];
          const double* x0 = s.h[k][0];
          const double* x1 = s.h[k][1];
          const double* x2 = s.h[k][2];
          for (std::size_t i = 0; i < m; ++i) {
            const double z = w0 * x0[i] + w1 * x1[i] + w2 * x2[i] + bias;
            const double t = internal::FastTanh(z);
            th[i] = t;
            out[i] = z + gate * t;
          }
        }
      }
    } else {
      const double w0 = e.w[k][0][0], w1 = e.w[k][0][1], w2 = e.w[k][0][2];
      const double bias = e.b[k][0];
      const double* x0 = s.h[k][0];
      const double* x1 = s.h[k][1];
      const double* x2 = s.h[k][2];
      for (std::size_t i = 0; i < m; ++i) {
        s.logit[i] = w0 * x0[i] + w1 * x1[i] + w2 * x2[i] + bias;
      }
    }
  }
}

// Gradient accumulators in effective-parameter space.
struct EffectiveGrad {
  double w[kDensityLayers][kDensityWidth][kDensityWidth] = {};
  double b[kDensityLayers][kDensityWidth] = {};
  double g[kDensityLayers - 1][kDensityWidth] = {};
};

// On entry s.delta[0] holds d/d logit. On exit s.delta[0] holds d/d input.
void BackwardChunk(const Effective& e, std::size_t m, Scratch& s,
                   EffectiveGrad* grad) {
  for (std::size_t k = kDensityLayers; k-- > 0;) {
    const std::size_t in = L::kIn[k];
    const std::size_t out = L::kOut[k];
    // s.delta[j] is d/d z_k[j] after this block (apply the gate first).
    if (k + 1 < kDensityLayers) {
      for (std::size_t j = 0; j < out; ++j) {
        const double gate = e.g[k][j];
        const double* th = s.th[k][j];
        double* d = s.delta[j];
        if (grad) grad->g[k][j] += internal::Dot(d, th, m);
        for (std::size_t i = 0; i < m; ++i) {
          d[i] *= 1.0 + gate * (1.0 - th[i] * th[i]);
        }
      }
    }
    if (grad) {
      for (std::size_t j = 0; j < out; ++j) {
        const double* d = s.delta[j];
        grad->b[k][j] += internal::SumOf(d, m);
        for (std::size_t r = 0; r < in; ++r) {
          grad->w[k][j][r] += internal::Dot(d, s.h[k][r], m);
        }
      }
    }
    for (std::size_t r = 0; r < in; ++r) {
      double* dn = s.delta_next[r];
      for (std::size_t i = 0; i < m; ++i) dn[i] = 0.0;
      for (std::size_t j = 0; j < out; ++j) {
        const double w = e.w[k][j][r];
        const double* d = s.delta[j];
        for (std::size_t i = 0; i < m; ++i) dn[i] += w * d[i];
      }
    }
    for (std::size_t r = 0; r < in; ++r) {
      std::copy(s.delta_next[r], s.delta_next[r] + m, s.delta[r]);
    }
  }
}

void AccumulateRawGrad(const ChannelParams& p, const Effective& e,
                       const EffectiveGrad& eg, std::span<double> d_params) {
  for (std::size_t k = 0; k < kDensityLayers; ++k) {
    for (std::size_t j = 0; j < L::kOut[k]; ++j) {
      for (std::size_t i = 0; i < L::kIn[k]; ++i) {
        const std::size_t idx = L::kMatrix[k] + j * L::kIn[k] + i;
        d_params[idx] += eg.w[k][j][i] * Sigmoid(p[idx]);
      }
      d_params[L::kBias[k] + j] += eg.b[k][j];
      if (k + 1 < kDensityLayers) {
        d_params[L::kFactor[k] + j] +=
            eg.g[k][j] * (1.0 - e.g[k][j] * e.g[k][j]);
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

FactorizedDensity::FactorizedDensity(std::size_t channels)
    : params_(channels, ChannelParams{}) {}

FactorizedDensity FactorizedDensity::Initialize(
    std::span<const double> init_scales, std::uint64_t seed) {
  FactorizedDensity d(init_scales.size());
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < init_scales.size(); ++c) {
    if (!(init_scales[c] > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "init scale must be positive");
    }
    const double scale =
        std::pow(init_scales[c], 1.0 / static_cast<double>(kDensityLayers));
    ChannelParams& p = d.params_[c];
    for (std::size_t k = 0; k < kDensityLayers; ++k) {
      const double init =
          std::log(std::expm1(1.0 / scale / static_cast<double>(L::kOut[k])));
      for (std::size_t i = 0; i < L::kOut[k] * L::kIn[k]; ++i) {
        p[L::kMatrix[k] + i] = init;
      }
      for (std::size_t j = 0; j < L::kOut[k]; ++j) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        p[L::kBias[k] + j] = u - 0.5;
      }
      if (k + 1 < kDensityLayers) {
        for (std::size_t j = 0; j < kDensityWidth; ++j) {
          p[L::kFactor[k] + j] = 0.0;
        }
      }
    }
  }
  return d;
}

double FactorizedDensity::Logit(std::size_t c, double t) const {
  const Effective e = MakeEffective(params_.at(c));
  double h[kDensityWidth] = {t, 0, 0};
  for (std::size_t k = 0; k < kDensityLayers; ++k) {
    double next[kDensityWidth] = {0, 0, 0};
    for (std::size_t j = 0; j < L::kOut[k]; ++j) {
      double z = e.b[k][j];
      for (std::size_t i = 0; i < L::kIn[k]; ++i) z += e.w[k][j][i] * h[i];
      next[j] = k + 1 < kDensityLayers ? z + e.g[k][j] * std::tanh(z) : z;
    }
    std::copy(next, next + kDensityWidth, h);
  }
  return h[0];
}

double FactorizedDensity::Cdf(std::size_t c, double t) const {
  return Sigmoid(Logit(c, t));
}

double FactorizedDensity::Likelihood(std::size_t c, double y) const {
  const double u = Logit(c, y + 0.5);
  const double l = Logit(c, y - 0.5);
  const double s = u + l > 0 ? -1.0 : 1.0;
  return std::max(std::abs(Sigmoid(s * u) - Sigmoid(s * l)), kLikelihoodFloor);
}

double FactorizedDensity::ChannelNll(std::size_t c,
                                     std::span<const double> values,
                                     std::span<double> d_values,
                                     std::span<double> d_params) const {
  return Kernel(c, values, {}, d_values, d_params);
}

void FactorizedDensity::ChannelNllElementwise(
    std::size_t c, std::span<const double> values, std::span<double> nll,
    std::span<double> d_values, double bin_width) const {
  if (nll.size() != values.size()) {
    throw Error(ErrorCode::kShapeMismatch, "nll size mismatch");
  }
  if (!(bin_width > 0.0 && bin_width <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "bin width must be in (0, 1]");
  }
  Kernel(c, values, nll, d_values, {}, bin_width);
}

double FactorizedDensity::Kernel(std::size_t c,
                                 std::span<const double> values,
                                 std::span<double> nll,
                                 std::span<double> d_values,
                                 std::span<double> d_params,
                                 double bin_width) const {
  const ChannelParams& p = params_.at(c);
  const double half = 0.5 * bin_width;
  const Effective e = MakeEffective(p);
  const bool want_values = !d_values.empty();
  const bool want_params = !d_params.empty();
  if (want_values && d_values.size() != values.size()) {
    throw Error(ErrorCode::kShapeMismatch, "d_values size mismatch");
  }
  if (want_params && d_params.size() != L::kCount) {
    throw Error(ErrorCode::kShapeMismatch, "d_params size mismatch");
  }
  auto scratch = std::make_unique<Scratch>();
  Scratch& s = *scratch;
  EffectiveGrad eg;
  double total = 0.0;
  for (std::size_t start = 0; start < values.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, values.size() - start);
    const double* v = values.data() + start;
    for (std::size_t i = 0; i < n; ++i) {
      s.h[0][0][i] = v[i] + half;
      s.h[0][0][n + i] = v[i] - half;
    }
    ForwardChunk(e, 2 * n, s);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = s.logit[i];
      const double l = s.logit[n + i];
      const double sign = u + l > 0 ? -1.0 : 1.0;
      const double su = internal::FastSigmoid(sign * u);
      const double sl = internal::FastSigmoid(sign * l);
      const double diff = su - sl;
      const double like = std::abs(diff);
      const bool floored = !(like > kLikelihoodFloor);
      s.nll[i] = -internal::FastLog(floored ? kLikelihoodFloor : like) /
                 std::numbers::ln2;
      // d nll / d like = -1 / (like ln 2); zero when floored.
      const double g =
          floored ? 0.0 : -1.0 / (like * std::numbers::ln2);
      const double abs_sign = diff >= 0 ? 1.0 : -1.0;
      s.delta[0][i] = g * abs_sign * sign * su * (1.0 - su);
      s.delta[0][n + i] = -g * abs_sign * sign * sl * (1.0 - sl);
    }
    total += internal::SumOf(s.nll, n);
    if (!nll.empty()) std::copy(s.nll, s.nll + n, nll.begin() + start);
    if (want_values || want_params) {
      BackwardChunk(e, 2 * n, s, want_params ? &eg : nullptr);
      if (want_values) {
        for (std::size_t i = 0; i < n; ++i) {
          d_values[start + i] = s.delta[0][i] + s.delta[0][n + i];
        }
      }
    }
  }
  if (want_params) AccumulateRawGrad(p, e, eg, d_params);
  return total;
}

double FactorizedDensity::Rate(std::span<const double> latent,
                               std::span<double> d_latent) const {
  const std::size_t channels = params_.size();
  if (channels == 0 || latent.size() % channels != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "latent of " + std::to_string(latent.size()) +
                    " values does not match " + std::to_string(channels) +
                    " channels");
  }
  const std::size_t n = latent.size() / channels;
  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    total += ChannelNll(
        c, latent.subspan(c * n, n),
        d_latent.empty() ? std::span<double>() : d_latent.subspan(c * n, n),
        {});
  }
  return total;
}

double FactorizedDensity::Rate(const CoeffTensor& latent) const {
  if (latent.channels != params_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "latent has " + std::to_string(latent.channels) +
                    " channels, model has " + std::to_string(params_.size()));
  }
  return Rate(latent.data, {});
}

nlohmann::json FactorizedDensity::ToJson() const {
  nlohmann::json j;
  j["channels"] = params_.size();
  j["layer_widths"] = {1, 3, 3, 3, 3, 1};
  j["params_per_channel"] = L::kCount;
  nlohmann::json params = nlohmann::json::array();
  for (const ChannelParams& p : params_) {
    params.push_back(std::vector<double>(p.begin(), p.end()));
  }
  j["params"] = std::move(params);
  return j;
}

FactorizedDensity FactorizedDensity::FromJson(const nlohmann::json& j) {
  const auto channels = j.at("channels").get<std::size_t>();
  if (j.at("layer_widths") != nlohmann::json({1, 3, 3, 3, 3, 1}) ||
      j.at("params_per_channel").get<std::size_t>() != L::kCount) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "density checkpoint has an unsupported layout");
  }
  const auto& params = j.at("params");
  if (params.size() != channels) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "density checkpoint channel count mismatch");
  }
  FactorizedDensity d(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto values = params[c].get<std::vector<double>>();
    if (values.size() != L::kCount) {
      throw Error(ErrorCode::kUnsupportedFormat,
                  "density checkpoint has a short parameter row");
    }
    std::copy(values.begin(), values.end(), d.params_[c].begin());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Tape route

std::vector<Var> DensityParamsOnTape(Tape& tape,
                                     const FactorizedDensity& density,
                                     bool requires_grad) {
  const std::size_t channels = density.channels();
  std::vector<Var> vars;
  vars.reserve(L::kCount);
  for (std::size_t k = 0; k < L::kCount; ++k) {
    std::vector<double> column(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      column[c] = density.params(c)[k];
    }
    vars.push_back(tape.Leaf(Tensor({channels, 1}, std::move(column)),
                             requires_grad));
  }
  return vars;
}

namespace {

Var LogitOnTape(Var t, std::span<const Var> params) {
  std::vector<Var> h = {t};
  for (std::size_t k = 0; k < kDensityLayers; ++k) {
    std::vector<Var> next;
    for (std::size_t j = 0; j < L::kOut[k]; ++j) {
      Var z = Add(Mul(Softplus(params[L::kMatrix[k] + j * L::kIn[k]]), h[0]),
                  params[L::kBias[k] + j]);
      for (std::size_t i = 1; i < L::kIn[k]; ++i) {
        z = Add(z, Mul(Softplus(params[L::kMatrix[k] + j * L::kIn[k] + i]),
                       h[i]));
      }
      if (k + 1 < kDensityLayers) {
        z = Add(z, Mul(Tanh(params[L::kFactor[k] + j]), Tanh(z)));
      }
      next.push_back(z);
    }
    h = std::move(next);
  }
  return h[0];
}

}  // namespace

Var LikelihoodOnTape(Var latent, std::span<const Var> params) {
  if (params.size() != L::kCount) {
    throw Error(ErrorCode::kInvalidArgument, "expected 58 parameter variables");
  }
  if (latent.shape().size() != 2 ||
      latent.shape()[0] != params[0].shape()[0]) {
    throw Error(ErrorCode::kShapeMismatch,
                "latent " + ShapeString(latent.shape()) +
                    " does not match parameter channels");
  }
  Var upper = LogitOnTape(AddScalar(latent, 0.5), params);
  Var lower = LogitOnTape(AddScalar(latent, -0.5), params);
  // Evaluate on the side of the median where both sigmoids are small.
  const auto u = upper.value().data();
  const auto l = lower.value().data();
  std::vector<double> sign(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) sign[i] = u[i] + l[i] > 0 ? -1.0 : 1.0;
  Var s = latent.tape->Constant(Tensor(latent.shape(), std::move(sign)));
  Var like = Abs(Sub(Sigmoid(Mul(s, upper)), Sigmoid(Mul(s, lower))));
  return ClampMin(like, kLikelihoodFloor);
}

Var RateOnTape(Var latent, std::span<const Var> params) {
  return Sum(Neg(Log2(LikelihoodOnTape(latent, params))));
}

// ---------------------------------------------------------------------------
// Training

double CorpusNll(const FactorizedDensity& density, const LatentSource& source,
                 std::uint64_t seed) {
  std::vector<double> latent;
  double bits = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    source.Get(i, latent);
    const auto noise = UniformNoise(latent.size(), MixSeed(seed, i));
    for (std::size_t k = 0; k < latent.size(); ++k) latent[k] += noise[k];
    bits += density.Rate(latent, {});
    count += latent.size();
  }
  return count ? bits / static_cast<double>(count) : 0.0;
}

FitReport Fit(FactorizedDensity& density, const LatentSource& source,
              const FitOptions& options, const EpochCallback& on_epoch) {
  const std::size_t channels = density.channels();
  if (source.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "fit needs at least one latent");
  }
  if (source.channels() != channels) {
    throw Error(ErrorCode::kShapeMismatch,
                "training latents have " + std::to_string(source.channels()) +
                    " channels, model has " + std::to_string(channels));
  }
  if (options.epochs < 0 || options.batch_size == 0 ||
      !(options.learning_rate > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid fit options");
  }

  FitReport report;
  const std::uint64_t eval_seed = MixSeed(options.seed, 0xE7A1);
  if (options.evaluate_corpus) {
    report.initial_nll = CorpusNll(density, source, eval_seed);
  }

  std::vector<ChannelParams> m(channels, ChannelParams{});
  std::vector<ChannelParams> v(channels, ChannelParams{});
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> latent;
  std::vector<std::vector<double>> batch;
  std::vector<double> values;
  std::array<double, L::kCount> grad{};
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_bits = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += options.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t b = start; b < end; ++b) {
        source.Get(order[b], latent);
        if (latent.size() % channels != 0) {
          throw Error(ErrorCode::kShapeMismatch, "latent size mismatch");
        }
        batch.push_back(latent);
      }
      const std::size_t per_channel = batch.front().size() / channels;
      const std::size_t total = batch.size() * batch.front().size();
      const auto noise =
          UniformNoise(batch.size() * per_channel * channels,
                       MixSeed(options.seed, report.steps + 1));
      ++report.steps;
      const double t = static_cast<double>(report.steps);
      const double bias1 = 1.0 - std::pow(options.beta1, t);
      const double bias2 = 1.0 - std::pow(options.beta2, t);
      for (std::size_t c = 0; c < channels; ++c) {
        values.clear();
        std::size_t nidx = c * batch.size() * per_channel;
        for (const auto& lat : batch) {
          if (lat.size() != per_channel * channels) {
            throw Error(ErrorCode::kShapeMismatch,
                        "latents in a batch differ in size");
          }
          for (std::size_t i = 0; i < per_channel; ++i) {
            values.push_back(lat[c * per_channel + i] + noise[nidx++]);
          }
        }
        grad.fill(0.0);
        const double bits = density.ChannelNll(c, values, {}, grad);
        if (!std::isfinite(bits)) {
          throw Error(ErrorCode::kDivergence,
                      "NLL became non-finite at epoch " +
                          std::to_string(epoch) + ", step " +
                          std::to_string(report.steps) + ", channel " +
                          std::to_string(c));
        }
        epoch_bits += bits;
        ChannelParams& p = density.mutable_params(c);
        for (std::size_t k = 0; k < L::kCount; ++k) {
          const double gk = grad[k] / static_cast<double>(total);
          if (!std::isfinite(gk)) {
            throw Error(ErrorCode::kDivergence,
                        "gradient became non-finite in channel " +
                            std::to_string(c));
          }
          m[c][k] = options.beta1 * m[c][k] + (1 - options.beta1) * gk;
          v[c][k] = options.beta2 * v[c][k] + (1 - options.beta2) * gk * gk;
          const double mhat = m[c][k] / bias1;
          const double vhat = v[c][k] / bias2;
          p[k] -= options.learning_rate * mhat /
                  (std::sqrt(vhat) + options.adam_epsilon);
        }
      }
      epoch_count += total;
    }
    const double nll = epoch_bits / static_cast<double>(epoch_count);
    report.epoch_nll.push_back(nll);
    if (on_epoch) on_epoch(epoch, nll);
  }
  if (options.evaluate_corpus) {
    report.final_nll = CorpusNll(density, source, eval_seed);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Tables

std::vector<std::uint32_t> QuantizePmf(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0 || n > kCdfTotal) {
    throw Error(ErrorCode::kInvalidArgument,
                "pmf of " + std::to_string(n) +
                    " symbols does not fit 16-bit precision");
  }
  std::vector<std::int64_t> freq(n);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::max(pmf[i], 0.0);
    freq[i] = std::max<std::int64_t>(1, std::llround(p * kCdfTotal));
    total += freq[i];
  }
  std::vector<std::size_t> by_size(n);
  std::iota(by_size.begin(), by_size.end(), 0);
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&freq](std::size_t a, std::size_t b) {
                     return freq[a] > freq[b];
                   });
  // Spread the correction over the largest entries, one count at a time.
  while (total != kCdfTotal) {
    bool changed = false;
    for (std::size_t idx : by_size) {
      if (total == kCdfTotal) break;
      if (total > kCdfTotal) {
        if (freq[idx] > 1) {
          --freq[idx];
          --total;
          changed = true;
        }
      } else {
        ++freq[idx];
        ++total;
        changed = true;
      }
    }
    if (!changed) {
      throw Error(ErrorCode::kInvalidArgument, "cannot normalise pmf");
    }
  }
  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cdf[i + 1] = cdf[i] + static_cast<std::uint32_t>(freq[i]);
  }
  return cdf;
}

std::vector<CdfTable> BuildCdfTables(const FactorizedDensity& density,
                                     std::span<const ChannelRange> ranges) {
  if (ranges.size() != density.channels()) {
    throw Error(ErrorCode::kShapeMismatch,
                "range count does not match channel count");
  }
  constexpr std::int64_t kMaxSymbols = kCdfTotal - 1;
  std::vector<CdfTable> tables;
  tables.reserve(ranges.size());
  for (std::size_t c = 0; c < ranges.size(); ++c) {
    if (!std::isfinite(ranges[c].min) || !std::isfinite(ranges[c].max) ||
        ranges[c].min > ranges[c].max) {
      throw Error(ErrorCode::kInvalidArgument,
                  "invalid latent range for channel " + std::to_string(c));
    }
    std::int64_t lo = static_cast<std::int64_t>(std::floor(ranges[c].min)) - 2;
    std::int64_t hi = static_cast<std::int64_t>(std::ceil(ranges[c].max)) + 2;
    auto LowerTail = [&](std::int64_t s) {
      return Sigmoid(density.Logit(c, static_cast<double>(s) - 0.5));
    };
    auto UpperTail = [&](std::int64_t s) {
      return Sigmoid(-density.Logit(c, static_cast<double>(s) + 0.5));
    };
    while (LowerTail(lo) > kTableTailMass && hi - lo + 1 < kMaxSymbols) --lo;
    while (UpperTail(hi) > kTableTailMass && hi - lo + 1 < kMaxSymbols) ++hi;
    if (hi - lo + 1 >= kMaxSymbols || LowerTail(lo) > kTableTailMass ||
        UpperTail(hi) > kTableTailMass) {
      throw Error(ErrorCode::kInvalidArgument,
                  "channel " + std::to_string(c) +
                      " support exceeds 2^16 symbols");
    }
    std::vector<double> pmf;
    pmf.reserve(static_cast<std::size_t>(hi - lo + 2));
    for (std::int64_t s = lo; s <= hi; ++s) {
      const double u = density.Logit(c, static_cast<double>(s) + 0.5);
      const double l = density.Logit(c, static_cast<double>(s) - 0.5);
      const double sign = u + l > 0 ? -1.0 : 1.0;
      pmf.push_back(std::abs(Sigmoid(sign * u) - Sigmoid(sign * l)));
    }
    pmf.push_back(LowerTail(lo) + UpperTail(hi));
    CdfTable t;
    t.offset = static_cast<std::int32_t>(lo);
    t.cdf = QuantizePmf(pmf);
    tables.push_back(std::move(t));
  }
  return tables;
}

}  // namespace rateattack
