// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rateattack/attack.h"
#include "rateattack/blockdct.h"
#include "rateattack/dctnet.h"
#include "rateattack/entropy_model.h"
#include "rateattack/error.h"
#include "rateattack/harness.h"
#include "rateattack/rans.h"
#include "rateattack/synthetic.h"
#include "rateattack/tensor.h"

namespace fs = std::filesystem;
using namespace rateattack;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string Fmt(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

void Log(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// 1. Coder fidelity

CdfTable RandomTable(std::mt19937_64& rng) {
  const std::size_t slots = 2 + rng() % 60;
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(slots);
  double total = 0.0;
  for (double& x : w) total += (x = e(rng) + 1e-3);
  CdfTable t;
  t.offset = static_cast<std::int32_t>(rng() % 61) - 40;
  t.cdf = {0};
  std::uint32_t used = 0;
  std::vector<std::uint32_t> f(slots);
  for (std::size_t i = 0; i < slots; ++i) {
    f[i] = std::max<std::uint32_t>(
        1, static_cast<std::uint32_t>(w[i] / total * (kCdfTotal - slots)));
    used += f[i];
  }
  f[rng() % slots] += kCdfTotal - used;
  for (std::uint32_t v : f) t.cdf.push_back(t.cdf.back() + v);
  return t;
}

Outcome CoderFidelity() {
  std::size_t lossless = 0, long_streams = 0, long_ok = 0;
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 1);
    std::vector<CdfTable> tables(1 + rng() % 8);
    for (CdfTable& t : tables) t = RandomTable(rng);
    const std::size_t n = seed % 10 == 0 ? 10000 + rng() % 90000 : rng() % 5000;
    SymbolStream s;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::uint32_t>(rng() % tables.size());
      const CdfTable& t = tables[c];
      const std::uint32_t slot = static_cast<std::uint32_t>(rng() % kCdfTotal);
      std::size_t k = 0;
      while (t.cdf[k + 1] <= slot) ++k;
      std::int32_t v = t.offset + static_cast<std::int32_t>(k);
      if (k == t.escape_index()) {
        v = rng() % 2 ? t.offset - 1 - static_cast<std::int32_t>(rng() % 1000)
                      : t.offset + static_cast<std::int32_t>(t.range() + rng() % 1000);
      }
      s.symbols.push_back(v);
      s.channels.push_back(c);
    }
    const auto bytes = RansEncode(s, tables);
    if (RansDecode(bytes, tables, n, s.channels) == s.symbols) ++lossless;
    if (n >= 10000) {
      ++long_streams;
      // Entropy-sum bound straight from the tables.
      double bits = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const CdfTable& t = tables[s.channels[i]];
        const std::int64_t rel = static_cast<std::int64_t>(s.symbols[i]) - t.offset;
        std::size_t k = t.escape_index();
        if (rel >= 0 && rel < static_cast<std::int64_t>(t.range())) {
          k = static_cast<std::size_t>(rel);
        } else {
          bits += 32.0;
        }
        bits += 16.0 - std::log2(static_cast<double>(t.cdf[k + 1] - t.cdf[k]));
      }
      const double limit = 1.02 * bits / 8.0 + 32.0;
      worst_ratio = std::max(worst_ratio, bytes.size() / (bits / 8.0));
      if (static_cast<double>(bytes.size()) <= limit) ++long_ok;
    }
  }
  return {lossless == 1000 && long_ok == long_streams && long_streams > 0,
          Fmt("%zu/1000 lossless, %zu/%zu long streams within 2%%+32B "
              "(worst length/bound %.5f)",
              lossless, long_ok, long_streams, worst_ratio)};
}

// ---------------------------------------------------------------------------
// 2. Transform fidelity

Outcome TransformFidelity() {
  const std::vector<double>& b = DctBasis();
  double ortho = 0.0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      double s = 0.0;
      for (int k = 0; k < 64; ++k) s += b[i * 64 + k] * b[j * 64 + k];
      ortho = std::max(ortho, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  double recon = 0.0, parseval = 0.0, adjoint = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::size_t h = 8 * (1 + rng() % 6), w = 8 * (1 + rng() % 6);
    std::vector<double> x(3 * h * w), y(3 * h * w);
    for (double& v : x) v = u(rng);
    for (double& v : y) v = u(rng);
    const CoeffTensor fx = BlockDctForward(x, 3, h, w);
    const std::vector<double> back = BlockDctInverse(fx);
    double ex = 0.0, ec = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      recon = std::max(recon, std::abs(back[i] - x[i]));
      ex += x[i] * x[i];
      ec += fx.data[i] * fx.data[i];
    }
    parseval = std::max(parseval, std::abs(ex - ec) / ex);
    CoeffTensor cy = fx;
    cy.data = y;
    const std::vector<double> iy = BlockDctInverse(cy);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += fx.data[i] * y[i];
      rhs += x[i] * iy[i];
    }
    adjoint = std::max(adjoint, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  return {ortho <= 1e-12 && recon <= 1e-6 && parseval <= 1e-6 && adjoint <= 1e-6,
          Fmt("orthonormality %.2e, reconstruction %.2e, Parseval %.2e, "
              "adjoint %.2e over 100 inputs",
              ortho, recon, parseval, adjoint)};
}

// ---------------------------------------------------------------------------
// 3. Differentiation

Tensor RandomTensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                    double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Var Project(Var y, std::uint64_t seed) {
  return Sum(Mul(y, y.tape->Constant(RandomTensor(y.shape(), seed))));
}

Outcome Differentiation(const TrainedSubstitute& q50) {
  struct Check {
    std::string name;
    ScalarFunction f;
    Tensor x;
  };
  const Tensor b34 = RandomTensor({3, 4}, 1), b45 = RandomTensor({4, 5}, 2);
  const Tensor pos = RandomTensor({8}, 3, 0.5, 2.0);
  std::vector<Check> checks = {
      {"add", [&](Var x) { return Project(Add(x, x.tape->Constant(b34)), 1); },
       RandomTensor({3, 1}, 10)},
      {"sub", [&](Var x) { return Project(Sub(x.tape->Constant(b34), x), 2); },
       RandomTensor({3, 4}, 11)},
      {"mul", [&](Var x) { return Project(Mul(x, x), 3); }, RandomTensor({6}, 12)},
      {"div", [&](Var x) { return Project(Div(x.tape->Constant(RandomTensor({8}, 4)), x), 4); },
       pos},
      {"matmul", [&](Var x) { return Project(MatMul(x, x.tape->Constant(b45)), 5); },
       RandomTensor({3, 4}, 13)},
      {"sum", [](Var x) { return Mul(Sum(x), Sum(x)); }, RandomTensor({5}, 14)},
      {"mean", [](Var x) { return Mul(Mean(x), Mean(x)); }, RandomTensor({5}, 15)},
      {"neg", [](Var x) { return Project(Neg(x), 6); }, RandomTensor({5}, 16)},
      {"log2", [](Var x) { return Project(Log2(x), 7); }, pos},
      {"tanh", [](Var x) { return Project(Tanh(x), 8); }, RandomTensor({8}, 17, -3, 3)},
      {"sigmoid", [](Var x) { return Project(Sigmoid(x), 9); }, RandomTensor({8}, 18, -6, 6)},
      {"softplus", [](Var x) { return Project(Softplus(x), 10); },
       RandomTensor({8}, 19, -6, 6)},
      {"abs", [](Var x) { return Project(Abs(x), 11); },
       Tensor({4}, {-1.2, -0.3, 0.4, 2.0})},
      {"clamp_min", [](Var x) { return Project(ClampMin(x, 0.1), 12); },
       Tensor({4}, {-1.0, 0.05 - 0.5, 0.3, 1.5})},
      {"add_scalar", [](Var x) { return Project(AddScalar(x, 2.0), 13); },
       RandomTensor({4}, 20)},
      {"mul_scalar", [](Var x) { return Project(MulScalar(x, -3.0), 14); },
       RandomTensor({4}, 21)},
      {"reshape", [](Var x) { return Project(Reshape(x, {2, 3}), 15); },
       RandomTensor({6}, 22)},
      {"add_uniform_noise", [](Var x) { return Project(AddUniformNoise(x, 5), 16); },
       RandomTensor({6}, 23)},
      {"block_dct", [](Var x) { return Project(BlockDctForward(x), 17); },
       RandomTensor({3, 8, 16}, 24)},
      {"block_idct", [](Var x) { return Project(BlockDctInverse(x), 18); },
       RandomTensor({192, 1, 2}, 25)},
      {"dctnet_rate_16x16x3", [&](Var x) { return q50.net.RateOnTape(x, QuantMode::kNone); },
       Tensor({3, 16, 16}, SyntheticImage(77, 16, 16).data)},
  };
  // Parameter gradients, one slot of the flat layout at a time. A fresh
  // density with latents at its own scale keeps every gradient well above
  // finite-difference noise, which a trained model's dead channels do not. The trained
  // model is covered end to end below.
  std::vector<double> scales(16);
  for (std::size_t c = 0; c < scales.size(); ++c) scales[c] = 0.5 + 0.3 * c;
  const FactorizedDensity fresh = FactorizedDensity::Initialize(scales, 4);
  Tensor spread = RandomTensor({scales.size(), 6}, 28, -2, 2);
  for (std::size_t i = 0; i < spread.size(); ++i) spread[i] *= scales[i / 6];
  checks.push_back({"density_rate",
                    [&](Var x) {
                      return RateOnTape(x, DensityParamsOnTape(*x.tape, fresh, false));
                    },
                    spread});
  for (std::size_t k = 0; k < DensityLayout::kCount; ++k) {
    Tensor init({scales.size(), 1}, std::vector<double>(scales.size()));
    for (std::size_t c = 0; c < scales.size(); ++c) init[c] = fresh.params(c)[k];
    checks.push_back({"density_param_" + std::to_string(k),
                      [&, k](Var x) {
                        std::vector<Var> params =
                            DensityParamsOnTape(*x.tape, fresh, false);
                        params[k] = x;
                        return RateOnTape(x.tape->Constant(spread), params);
                      },
                      init});
  }
  double worst = 0.0;
  std::string worst_name;
  for (const Check& c : checks) {
    const double h = c.name == "dctnet_rate_16x16x3" ? 1e-3 : 1e-5;
    const double e = GradCheck(c.f, c.x, h).max_rel_error;
    if (e > worst) {
      worst = e;
      worst_name = c.name;
    }
  }
  // STE: forward rounds, backward is the identity.
  Tape tape;
  const Var x = tape.Leaf(RandomTensor({10}, 27, -3, 3));
  tape.Backward(Sum(RoundSte(x)));
  const Tensor g = tape.grad(x);
  bool ste_ok = true;
  for (double v : g.data()) ste_ok = ste_ok && v == 1.0;

  // Fused kernel against central differences on the same input, with the
  // full bin and with the attack's narrower window.
  const Image im = SyntheticImage(77, 16, 16);
  double fused = 0.0;
  for (double w : {1.0, AttackConfig{}.bin_width}) {
    auto rate = [&](const Image& x, std::span<double> g) {
      return q50.net.RateAndGradient(x, g, QuantMode::kNone, 0, w);
    };
    std::vector<double> grad(im.num_values());
    rate(im, grad);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      Image lo = im, hi = im;
      lo.data[i] -= 1e-3;
      hi.data[i] += 1e-3;
      const double fd = (rate(hi, {}) - rate(lo, {})) / 2e-3;
      fused = std::max(fused, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  return {worst <= 1e-3 && fused <= 1e-3 && ste_ok,
          Fmt("%zu checks, worst %.2e (%s); fused rate kernel %.2e; STE identity %s",
              checks.size(), worst, worst_name.c_str(), fused, ste_ok ? "ok" : "broken")};
}

// ---------------------------------------------------------------------------
// 4. Calibration

Outcome Calibration(const TrainedSubstitute& q50, const Corpus& eval) {
  double gap = 0.0;
  const std::size_t n = std::min<std::size_t>(10, eval.images.size());
  double est_sum = 0.0, act_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Image& x = eval.images[i];
    const double est = q50.net.RateEstimate(x) / static_cast<double>(x.num_pixels());
    const double act = q50.net.ActualBpp(x);
    gap += std::abs(est - act) / act;
    est_sum += est;
    act_sum += act;
  }
  gap /= static_cast<double>(n);
  const TrainingMetadata& m = q50.metadata;
  const bool trained_enough = m.epochs >= 20 && m.patches >= 500 && m.patch_size >= 256;
  return {gap <= 0.05 && trained_enough && n == 10,
          Fmt("mean |estimate - actual| / actual = %.4f%% over %zu images "
              "(mean estimate %.4f bpp, actual %.4f bpp; model %d epochs, %zu "
              "patches of %zu)",
              100 * gap, n, est_sum / n, act_sum / n, m.epochs, m.patches,
              m.patch_size)};
}

// ---------------------------------------------------------------------------
// 5. Gaussian entropy

Outcome GaussianEntropy() {
  const double sigma = 3.0;
  auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  double oracle = 0.0;
  for (int k = -200; k <= 200; ++k) {
    const double p = phi((k + 0.5) / sigma) - phi((k - 0.5) / sigma);
    if (p > 0) oracle -= p * std::log2(p);
  }
  const std::size_t channels = 4;
  std::vector<std::vector<double>> latents;
  for (std::size_t i = 0; i < 64; ++i) {
    std::mt19937_64 rng(i);
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<double> v(channels * 512);
    for (double& x : v) x = g(rng);
    latents.push_back(std::move(v));
  }
  VectorLatentSource src(channels, latents);
  const double s0 = std::sqrt(sigma * sigma + 1.0 / 12.0) * std::sqrt(3.0) / M_PI;
  FactorizedDensity d = FactorizedDensity::Initialize(std::vector<double>(channels, s0), 1);
  FitOptions opt;
  opt.epochs = 20;
  opt.learning_rate = 1e-2;
  opt.seed = 3;
  Fit(d, src, opt);
  double worst = 0.0, mean_nll = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    std::mt19937_64 rng(1000 + c);
    std::normal_distribution<double> g(0.0, sigma);
    double bits = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) bits -= std::log2(d.Likelihood(c, RoundHalfAway(g(rng))));
    const double nll = bits / n;
    mean_nll += nll / channels;
    worst = std::max(worst, std::abs(nll - oracle));
  }
  return {worst <= 0.1,
          Fmt("held-out NLL %.4f bits vs discretised oracle %.4f (worst channel "
              "gap %.4f)",
              mean_nll, oracle, worst)};
}

// ---------------------------------------------------------------------------
// 6-9. Transfer experiment

double MeanChange(const std::vector<EvalRecord>& rs, const std::string& source,
                  const std::string& target, std::size_t* count = nullptr) {
  std::vector<EvalRecord> sel;
  for (const EvalRecord& r : rs) {
    if (r.source == source && r.target == target) sel.push_back(r);
  }
  const EvalSummary s = Summarize(sel);
  if (count) *count = s.failures ? 0 : s.count;
  return s.mean_bpp_change;
}

Outcome WhiteBox(const TransferResult& r) {
  std::size_t n = 0;
  const double m = MeanChange(r.records, "dctnet-q50", "dctnet:50", &n);
  double est = 0.0;
  std::size_t k = 0;
  for (const AttackSummary& a : r.attacks) {
    if (a.substitute == "dctnet-q50") {
      est += a.best_bpp_estimate / a.initial_bpp_estimate;
      ++k;
    }
  }
  return {n >= 10 && m >= 1.5,
          Fmt("mean actual-bpp change %.4f over %zu images (estimated-rate "
              "change %.4f); floor 1.5",
              m, n, k ? est / k : 0.0)};
}

Outcome Transfer(const TransferResult& r) {
  const TransferMatrix& m = r.matrix;
  std::vector<std::size_t> jpeg_cols;
  for (std::size_t c = 0; c < m.columns.size(); ++c) {
    if (m.columns[c].rfind("jpeg:", 0) == 0) jpeg_cols.push_back(c);
  }
  const auto argmax = m.ColumnArgmax();
  bool matched_ok = true;
  std::string matched;
  for (int q : {10, 50, 90}) {
    const std::string col = "jpeg:" + std::to_string(q);
    const auto ci = std::find(m.columns.begin(), m.columns.end(), col) - m.columns.begin();
    const auto ri = std::find(m.row_qualities.begin(), m.row_qualities.end(), q) -
                    m.row_qualities.begin();
    if (static_cast<std::size_t>(ci) == m.columns.size() ||
        static_cast<std::size_t>(ri) == m.row_qualities.size()) {
      matched_ok = false;
      continue;
    }
    const double v = m.cells[ri][ci];
    matched_ok = matched_ok && v >= 1.15;
    matched += Fmt(" Q%d=%.4f", q, v);
  }
  // Adjacent: the next substitute up or down the ladder, 20 quality steps.
  std::size_t near = 0;
  std::string bests;
  for (std::size_t c : jpeg_cols) {
    const int t = std::stoi(m.columns[c].substr(5));
    const int best = m.row_qualities[argmax[c]];
    if (std::abs(best - t) <= 20) ++near;
    bests += Fmt(" %d->%d", t, best);
  }
  bool floor_ok = true;
  for (const auto& row : m.cells) {
    for (std::size_t c : jpeg_cols) floor_ok = floor_ok && row[c] >= 0.9;
  }
  return {matched_ok && near >= 3 && jpeg_cols.size() == 5,
          Fmt("matched-Q changes%s (floor 1.15); best substitute matched or "
              "adjacent in %zu/%zu columns (target->best:%s); all cells >= 0.9: %s",
              matched.c_str(), near, jpeg_cols.size(), bests.c_str(),
              floor_ok ? "yes" : "no")};
}

Outcome NoiseControl(const TransferResult& r) {
  const double nd = MeanChange(r.noise_records, "noise", "dctnet:50");
  const double nj = MeanChange(r.noise_records, "noise", "jpeg:50");
  const double ad = MeanChange(r.records, "dctnet-q50", "dctnet:50");
  const double aj = MeanChange(r.records, "dctnet-q50", "jpeg:50");
  return {nd <= 1.15 && nj <= 1.15 && nd < ad && nj < aj,
          Fmt("noise %.4f on DCT-Net Q50 (adversarial %.4f), %.4f on JPEG Q50 "
              "(adversarial %.4f); ceiling 1.15",
              nd, ad, nj, aj)};
}

Outcome Feasibility(const fs::path& image_dir, std::size_t expected) {
  std::ifstream in(image_dir / "manifest.csv");
  std::string line;
  std::getline(in, line);
  std::size_t total = 0, ok = 0;
  std::set<std::string> listed;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    ++total;
    if (f.size() < 6) continue;
    listed.insert(f[0]);
    try {
      // Decoding checks the 8-bit maxval; values are then in [0, 1] exactly.
      const Image adv = Load(image_dir / f[0]);
      const Image orig = Load(image_dir / f[1]);
      bool range = true;
      for (double v : adv.data) range = range && v >= 0.0 && v <= 1.0;
      const double eps = std::stod(f[5]);
      if (range && WithinBudgetBytes(ToBytes(orig), ToBytes(adv), eps)) ++ok;
    } catch (const std::exception& e) {
      Log(std::string("audit: ") + e.what());
    }
  }
  std::size_t on_disk = 0;
  for (const auto& e : fs::recursive_directory_iterator(image_dir)) {
    if (e.path().extension() == ".ppm" &&
        e.path().parent_path().filename() != "original") {
      ++on_disk;
    }
  }
  return {total == expected && ok == total && on_disk == total,
          Fmt("%zu/%zu persisted adversarial PPMs inside the L2 ball and [0,1] "
              "(integer audit); %zu files on disk, %zu expected",
              ok, total, on_disk, expected)};
}

// ---------------------------------------------------------------------------
// 10. Reproducibility through the CLI

Outcome Reproducibility(const std::string& cli, const fs::path& work,
                        const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.eval_corpus = {"", 3, 3003, 128, 128, 0};
  c.workers = 0;
  const fs::path config = work / "repro_config.json";
  {
    std::ofstream out(config);
    out << c.ToJson().dump(2) << "\n";
  }
  std::vector<fs::path> runs = {work / "repro_a", work / "repro_b"};
  for (const fs::path& out : runs) {
    fs::remove_all(out);
    const std::string cmd = "\"" + cli + "\" transfer --config \"" + config.string() +
                            "\" -o \"" + out.string() + "\" > \"" +
                            (work / (out.filename().string() + ".log")).string() +
                            "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      return {false, "transfer command failed: " + cmd};
    }
  }
  std::size_t compared = 0, identical = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
    if (e.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(e.path(), runs[0]);
    ++compared;
    if (fs::exists(runs[1] / rel) && Slurp(e.path()) == Slurp(runs[1] / rel)) ++identical;
  }
  const bool manifest = fs::exists(runs[0] / "images" / "manifest.csv");
  return {compared >= 5 && manifest && identical == compared,
          Fmt("%zu/%zu CSV reports byte-identical across two CLI transfer runs",
              identical, compared)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::string work = "acceptance_work", cli;
  std::vector<int> only;
  app.add_option("--work", work, "Working directory (checkpoints are cached here)");
  app.add_option("--cli", cli, "Path to the rateattack executable")->required();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir);
  auto wanted = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };

  ExperimentConfig config;
  config.checkpoint_dir = (dir / "checkpoints").string();
  config.targets = {"jpeg:10", "jpeg:20", "jpeg:50", "jpeg:70", "jpeg:90", "dctnet:50"};

  // ctest hides the output of passing tests, so the lines also go to a file.
  std::ofstream report(dir / "acceptance_report.txt");
  int failures = 0;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    std::fprintf(stderr, "criterion %d: %s\n", id, name.c_str());
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    const std::string line = Fmt("[%s] %2d %-26s %s (%.1f s)", o.pass ? "PASS" : "FAIL",
                                 id, name.c_str(), o.detail.c_str(), secs);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n' << std::flush;
  };

  std::vector<TrainedSubstitute> subs;
  auto substitutes = [&]() -> const std::vector<TrainedSubstitute>& {
    if (subs.empty()) {
      subs = PrepareSubstitutes(config, LoadCorpus(config.train_corpus), Log);
    }
    return subs;
  };
  auto q50 = [&]() -> const TrainedSubstitute& {
    for (const TrainedSubstitute& s : substitutes()) {
      if (s.net.quality() == 50) return s;
    }
    throw Error(ErrorCode::kUntrained, "no Q50 substitute");
  };

  std::optional<TransferResult> transfer;
  const fs::path transfer_dir = dir / "transfer";
  auto full_transfer = [&]() -> const TransferResult& {
    if (!transfer) {
      fs::remove_all(transfer_dir);
      const Corpus eval = LoadCorpus(config.eval_corpus);
      transfer = TransferExperiment(substitutes(), config.targets, eval, config,
                                    {transfer_dir / "images"}, Log);
      WriteTransferReports(*transfer, transfer_dir);
    }
    return *transfer;
  };

  run(1, "coder fidelity", CoderFidelity);
  run(2, "transform fidelity", TransformFidelity);
  run(3, "differentiation", [&] { return Differentiation(q50()); });
  run(4, "entropy calibration",
      [&] { return Calibration(q50(), LoadCorpus(config.eval_corpus)); });
  run(5, "gaussian entropy", GaussianEntropy);
  run(6, "white-box effectiveness", [&] { return WhiteBox(full_transfer()); });
  run(7, "black-box transfer",
      [&] { return Transfer(full_transfer()); });
  run(8, "noise control", [&] { return NoiseControl(full_transfer()); });
  run(9, "feasibility audit", [&] {
    const TransferResult& r = full_transfer();
    return Feasibility(transfer_dir / "images",
                       (r.matrix.rows.size() + 1) * config.eval_corpus.synthetic_count);
  });
  run(10, "reproducibility", [&] {
    substitutes();  // checkpoints must exist before the CLI runs
    return Reproducibility(cli, dir, config);
  });

  std::printf("%d criteria failed\n", failures);
  report << failures << " criteria failed\n";
  return failures == 0 ? 0 : 1;
}
