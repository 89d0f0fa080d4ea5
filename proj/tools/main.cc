// rateattack command-line front end.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rateattack/attack.h"
#include "rateattack/dctnet.h"
#include "rateattack/error.h"
#include "rateattack/harness.h"
#include "rateattack/image.h"
#include "rateattack/synthetic.h"
#include "rateattack/tensor.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rateattack;

namespace {

void Log(const std::string& s) { std::cerr << s << std::endl; }

std::vector<std::uint8_t> ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void WriteBytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

fs::path DirOf(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// Flags that mirror AttackConfig. Values are only applied when given.
struct AttackFlags {
  double budget = 7.0;  // in 1/255 units per value
  double epsilon = 0.0;
  double step = 0.004;
  int iterations = 600;
  int patience = 20;
  std::uint64_t seed = 0;
  std::string quant_mode = "none";
  double bin_width = 0.6;
  CLI::Option* o_budget = nullptr;
  CLI::Option* o_epsilon = nullptr;
  CLI::Option* o_step = nullptr;
  CLI::Option* o_iterations = nullptr;
  CLI::Option* o_patience = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_mode = nullptr;
  CLI::Option* o_bin = nullptr;

  void Register(CLI::App* app, bool gradient_flags) {
    o_budget = app->add_option("--budget", budget,
                               "Per-value L2 budget in 1/255 units (eps = "
                               "budget/255 * sqrt(3HW))")
                   ->capture_default_str();
    o_epsilon = app->add_option("--epsilon", epsilon,
                                "Absolute L2 radius; overrides --budget");
    o_seed = app->add_option("--seed", seed, "Random seed")->capture_default_str();
    if (!gradient_flags) return;
    o_step = app->add_option("--step", step, "Sign-step size delta")
                 ->capture_default_str();
    o_iterations = app->add_option("--iterations", iterations,
                                   "Maximum iterations T")
                       ->capture_default_str();
    o_patience = app->add_option("--patience", patience,
                                 "Stop after this many non-improving iterations")
                     ->capture_default_str();
    o_mode = app->add_option("--quant-mode", quant_mode,
                             "Gradient through rounding: none, noise or ste")
                 ->check(CLI::IsMember({"none", "noise", "ste"}))
                 ->capture_default_str();
    o_bin = app->add_option("--bin-width", bin_width,
                            "Likelihood window of the none/noise gradient")
                ->capture_default_str();
  }

  AttackConfig Apply(AttackConfig c) const {
    if (o_budget && o_budget->count()) c.per_pixel_budget = budget / 255.0;
    if (o_epsilon && o_epsilon->count()) c.epsilon = epsilon;
    if (o_step && o_step->count()) c.step = step;
    if (o_iterations && o_iterations->count()) c.max_iterations = iterations;
    if (o_patience && o_patience->count()) c.patience = patience;
    if (o_seed && o_seed->count()) c.seed = seed;
    if (o_mode && o_mode->count()) c.quant_mode = ParseQuantMode(quant_mode);
    if (o_bin && o_bin->count()) c.bin_width = bin_width;
    c.Validate();
    return c;
  }
};

ExperimentConfig BaseConfig(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : LoadExperimentConfig(path);
}

void SaveSnapshot(const fs::path& dir, const json& j) {
  WriteTextFile(dir / "effective_config.json", j.dump(2) + "\n");
}

// Files of `path`, or `path` itself when it is a file.
std::vector<fs::path> ImagesAt(const fs::path& path) {
  if (fs::is_directory(path)) return ListImages(path);
  return {path};
}

// --- subcommands -----------------------------------------------------------

struct TrainArgs {
  std::string config, corpus_dir, out_dir, color_mode;
  std::vector<int> qualities;
  std::size_t synthetic_count = 0, patches = 0, patch_size = 0, batch = 0;
  std::uint64_t synthetic_seed = 0, seed = 0;
  int epochs = 0;
  double lr = 0.0;
};

int RunTrain(const TrainArgs& a, const CLI::App& cmd) {
  ExperimentConfig c = BaseConfig(a.config);
  if (cmd.count("--corpus-dir")) c.train_corpus.dir = a.corpus_dir;
  if (cmd.count("--synthetic-count")) c.train_corpus.synthetic_count = a.synthetic_count;
  if (cmd.count("--synthetic-seed")) c.train_corpus.synthetic_seed = a.synthetic_seed;
  if (cmd.count("--quality")) c.substitute_qualities = a.qualities;
  if (cmd.count("--epochs")) c.train.epochs = a.epochs;
  if (cmd.count("--patches")) c.train.patches = a.patches;
  if (cmd.count("--patch-size")) c.train.patch_size = a.patch_size;
  if (cmd.count("--lr")) c.train.learning_rate = a.lr;
  if (cmd.count("--batch")) c.train.batch_size = a.batch;
  if (cmd.count("--seed")) c.train.seed = a.seed;
  if (cmd.count("--color-mode")) c.color_mode = ParseColorMode(a.color_mode);
  if (cmd.count("--out-dir")) c.checkpoint_dir = a.out_dir;
  fs::create_directories(c.checkpoint_dir);
  SaveSnapshot(c.checkpoint_dir, c.ToJson());

  const Corpus corpus = LoadCorpus(c.train_corpus);
  Log("training corpus: " + std::to_string(corpus.images.size()) + " images");
  for (int q : c.substitute_qualities) {
    TrainedSubstitute s = Train(corpus.images, q, c.train, c.color_mode,
                                [q](int epoch, double nll) {
                                  char buf[80];
                                  std::snprintf(buf, sizeof buf,
                                                "Q=%d epoch %d nll %.5f bits", q,
                                                epoch, nll);
                                  Log(buf);
                                });
    const fs::path path =
        fs::path(c.checkpoint_dir) / ("dctnet_q" + std::to_string(q) + ".json");
    SaveCheckpoint(s, path);
    std::cout << path.string() << '\n';
  }
  return 0;
}

// Fails before any work when Save() would reject the output name.
void RequireImageExtension(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext != ".ppm" && ext != ".pnm" && ext != ".png") {
    throw Error(ErrorCode::kInvalidArgument,
                path + ": output must end in .ppm, .pnm or .png");
  }
}

struct AttackArgs {
  std::string config, model, input, output, trace;
  AttackFlags flags;
};

int RunAttack(const AttackArgs& a) {
  RequireImageExtension(a.output);
  ExperimentConfig c = BaseConfig(a.config);
  const AttackConfig ac = a.flags.Apply(c.attack);
  c.attack = ac;
  const TrainedSubstitute model = LoadCheckpoint(a.model);
  const Image x0 = Load(a.input);
  const AttackTrace trace =
      WhiteBoxAttack(DctNetRate(model.net, ac.quant_mode, ac.seed, ac.bin_width), x0, ac);
  const Image adv = QuantizeWithinBudget(x0, trace.adversarial, trace.epsilon);
  Save(adv, a.output);
  if (!a.trace.empty()) WriteTextFile(a.trace, TraceToJsonLines(trace));
  json snap = c.ToJson();
  snap["run"] = {{"command", "attack"}, {"model", a.model}, {"input", a.input}};
  SaveSnapshot(DirOf(a.output), snap);

  const double before = model.net.ActualBpp(x0), after = model.net.ActualBpp(adv);
  const double px = static_cast<double>(x0.num_pixels());
  std::printf("epsilon          %.6f\n", trace.epsilon);
  std::printf("iterations       %zu (%s, best at %d)\n", trace.steps.size(),
              StopReasonName(trace.stop_reason).c_str(), trace.best_iteration);
  std::printf("estimated bpp    %.5f -> %.5f\n", trace.initial_loss_bits / px,
              trace.best_loss_bits / px);
  std::printf("actual bpp       %.5f -> %.5f (x%.4f)\n", before, after,
              after / before);
  std::printf("perturbation L2  %.6f (stored 8-bit image)\n", L2Distance(adv, x0));
  return 0;
}

int RunNoise(const std::string& config, const std::string& input,
             const std::string& output, const AttackFlags& flags) {
  RequireImageExtension(output);
  ExperimentConfig c = BaseConfig(config);
  c.attack = flags.Apply(c.attack);
  const Image x0 = Load(input);
  const double eps = c.attack.Epsilon(x0);
  const Image noisy =
      QuantizeWithinBudget(x0, NoiseBaseline(x0, c.attack, c.attack.seed), eps);
  Save(noisy, output);
  json snap = c.ToJson();
  snap["run"] = {{"command", "noise"}, {"input", input}};
  SaveSnapshot(DirOf(output), snap);
  std::printf("epsilon %.6f, perturbation L2 %.6f\n", eps, L2Distance(noisy, x0));
  return 0;
}

struct TransferArgs {
  std::string config, out = "transfer_out", checkpoint_dir, eval_dir;
  std::size_t workers = 0, limit = 0;
  bool no_images = false;
  AttackFlags flags;
};

int RunTransfer(const TransferArgs& a, const CLI::App& cmd) {
  ExperimentConfig c = BaseConfig(a.config);
  c.attack = a.flags.Apply(c.attack);
  if (cmd.count("--workers")) c.workers = a.workers;
  if (cmd.count("--limit")) c.eval_corpus.limit = a.limit;
  if (cmd.count("--checkpoint-dir")) c.checkpoint_dir = a.checkpoint_dir;
  if (cmd.count("--eval-dir")) c.eval_corpus.dir = a.eval_dir;
  if (a.no_images) c.save_images = false;
  const fs::path out = a.out;
  fs::create_directories(out);
  SaveSnapshot(out, c.ToJson());

  const Corpus train = LoadCorpus(c.train_corpus);
  const std::vector<TrainedSubstitute> subs = PrepareSubstitutes(c, train, Log);
  const Corpus eval = LoadCorpus(c.eval_corpus);
  Log("evaluating on " + std::to_string(eval.images.size()) + " images");
  TransferOutputs outputs;
  if (c.save_images) outputs.image_dir = out / "images";
  const TransferResult r =
      TransferExperiment(subs, c.targets, eval, c, outputs, Log);
  WriteTransferReports(r, out);

  const TransferMatrix& m = r.matrix;
  const auto best = m.ColumnArgmax();
  std::printf("%-14s", "bpp change");
  for (const std::string& col : m.columns) std::printf(" %9s", col.c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    std::printf("%-14s", m.rows[i].c_str());
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      std::printf(" %8.4f%c", m.cells[i][j], best[j] == i ? '*' : ' ');
    }
    std::printf("\n");
  }
  if (!m.noise.empty()) {
    std::printf("%-14s", "noise");
    for (double v : m.noise) std::printf(" %8.4f ", v);
    std::printf("\n");
  }
  return 0;
}

int RunCompress(const std::string& model, const std::string& input,
                const std::string& output) {
  const TrainedSubstitute m = LoadCheckpoint(model);
  const Image x = Load(input);
  const std::vector<std::uint8_t> c = m.net.Compress(x);
  WriteBytes(output, c);
  std::printf("%zu bytes, %.5f bpp (payload)\n", c.size(),
              8.0 * DctNet::PayloadBytes(c) / static_cast<double>(x.num_pixels()));
  return 0;
}

int RunDecompress(const std::string& model, const std::string& input,
                  const std::string& output) {
  RequireImageExtension(output);
  const TrainedSubstitute m = LoadCheckpoint(model);
  Save(m.net.Decompress(ReadBytes(input)), output);
  return 0;
}

struct EvalArgs {
  std::string codec, model, original, adversarial, source = "white-box", out;
};

int RunEval(const EvalArgs& a) {
  std::vector<TrainedSubstitute> models;
  if (!a.model.empty()) models.push_back(LoadCheckpoint(a.model));
  const std::unique_ptr<Codec> codec = MakeCodec(a.codec, models);
  const std::vector<fs::path> originals = ImagesAt(a.original);
  std::vector<std::string> ids;
  std::vector<Image> xs, advs;
  for (const fs::path& o : originals) {
    fs::path adv = a.adversarial;
    if (fs::is_directory(adv)) adv /= o.filename();
    ids.push_back(o.stem().string());
    xs.push_back(Load(o));
    advs.push_back(Load(adv));
  }
  const std::vector<EvalRecord> recs =
      Evaluate(*codec, ids, xs, advs, a.source, 0);
  if (!a.out.empty()) WriteRecordsCsv(recs, a.out);
  for (const EvalRecord& r : recs) {
    if (!r.error.empty()) {
      std::printf("%-20s error: %s\n", r.image_id.c_str(), r.error.c_str());
      continue;
    }
    std::printf("%-20s bpp %.5f -> %.5f (x%.4f)  psnr %s -> %s  L2 %.4f\n",
                r.image_id.c_str(), r.original_bpp, r.adversarial_bpp,
                r.bpp_change, FormatPsnr(r.psnr_clean).c_str(),
                FormatPsnr(r.psnr_adversarial).c_str(), r.perturbation_l2);
  }
  const EvalSummary s = Summarize(recs);
  std::printf("mean bpp change %.4f, mean PSNR change %.4f over %zu images",
              s.mean_bpp_change, s.mean_psnr_change, s.count);
  if (s.failures) std::printf(" (%zu failed)", s.failures);
  std::printf("\n");
  return s.failures ? 1 : 0;
}

int RunGradcheck(const std::string& model, std::size_t size, std::uint64_t seed,
                 double h) {
  DctNet net(50);
  if (!model.empty()) {
    net = LoadCheckpoint(model).net;
  } else {
    std::vector<double> scales(kLatentChannels, 2.0);
    net.SetModel(FactorizedDensity::Initialize(scales, seed),
                 std::vector<ChannelRange>(kLatentChannels, {-16.0, 16.0}));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Image x(size, size);
  for (double& v : x.data) v = u(rng);

  const Tensor input({3, size, size}, x.data);
  const GradCheckResult tape = GradCheck(
      [&net](Var v) { return net.RateOnTape(v, QuantMode::kNone); }, input, h);
  std::vector<double> fused(x.num_values());
  net.RateAndGradient(x, fused, QuantMode::kNone);
  double fused_err = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const double n = tape.numeric[i];
    fused_err = std::max(fused_err, std::abs(fused[i] - n) /
                                        std::max({std::abs(fused[i]), std::abs(n), 1e-8}));
  }
  std::printf("tape gradient   max rel error %.3e\n", tape.max_rel_error);
  std::printf("fused gradient  max rel error %.3e\n", fused_err);
  const bool ok = tape.max_rel_error <= 1e-3 && fused_err <= 1e-3;
  std::printf("%s\n", ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

int RunSynth(std::size_t count, std::uint64_t seed, std::size_t w, std::size_t h,
             const std::string& out) {
  fs::create_directories(out);
  const CorpusConfig cc{"", count, seed, w, h, 0};
  const Corpus c = LoadCorpus(cc);
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    const fs::path p = fs::path(out) / (c.ids[i] + ".png");
    Save(c.images[i], p);
    std::cout << p.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bitrate attacks on image compressors"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "Train DCT-Net substitutes");
  c_train->add_option("--config", train.config, "JSON config file");
  c_train->add_option("--quality,-q", train.qualities, "Quantisation qualities");
  c_train->add_option("--corpus-dir", train.corpus_dir, "Training images (PPM/PNG)");
  c_train->add_option("--synthetic-count", train.synthetic_count,
                      "Synthetic training images when no directory is given");
  c_train->add_option("--synthetic-seed", train.synthetic_seed);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--patches", train.patches);
  c_train->add_option("--patch-size", train.patch_size);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--batch", train.batch);
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--color-mode", train.color_mode)
      ->check(CLI::IsMember({"ycbcr", "rgb"}));
  c_train->add_option("--out-dir,-o", train.out_dir, "Checkpoint directory");

  AttackArgs attack;
  CLI::App* c_attack = app.add_subcommand("attack", "White-box attack on a DCT-Net");
  c_attack->add_option("--config", attack.config, "JSON config file");
  c_attack->add_option("--model,-m", attack.model, "Checkpoint")->required();
  c_attack->add_option("--input,-i", attack.input, "Clean image")->required();
  c_attack->add_option("--output,-o", attack.output, "Adversarial image")->required();
  c_attack->add_option("--trace", attack.trace, "Per-iteration JSON lines");
  attack.flags.Register(c_attack, true);

  std::string noise_config, noise_in, noise_out;
  AttackFlags noise_flags;
  CLI::App* c_noise = app.add_subcommand("noise", "Gaussian noise control");
  c_noise->add_option("--config", noise_config, "JSON config file");
  c_noise->add_option("--input,-i", noise_in)->required();
  c_noise->add_option("--output,-o", noise_out)->required();
  noise_flags.Register(c_noise, false);

  TransferArgs transfer;
  CLI::App* c_transfer =
      app.add_subcommand("transfer", "Substitute-to-target transfer matrix");
  c_transfer->add_option("--config", transfer.config, "JSON config file");
  c_transfer->add_option("--out,-o", transfer.out, "Output directory")
      ->capture_default_str();
  c_transfer->add_option("--workers", transfer.workers, "Worker threads (0 = all)");
  c_transfer->add_option("--limit", transfer.limit, "Use the first N eval images");
  c_transfer->add_option("--checkpoint-dir", transfer.checkpoint_dir);
  c_transfer->add_option("--eval-dir", transfer.eval_dir, "Evaluation images");
  c_transfer->add_flag("--no-images", transfer.no_images,
                       "Do not write adversarial PPMs");
  transfer.flags.Register(c_transfer, true);

  std::string cmp_model, cmp_in, cmp_out;
  CLI::App* c_compress = app.add_subcommand("compress", "DCT-Net encode");
  c_compress->add_option("--model,-m", cmp_model)->required();
  c_compress->add_option("--input,-i", cmp_in)->required();
  c_compress->add_option("--output,-o", cmp_out)->required();

  std::string dec_model, dec_in, dec_out;
  CLI::App* c_decompress = app.add_subcommand("decompress", "DCT-Net decode");
  c_decompress->add_option("--model,-m", dec_model)->required();
  c_decompress->add_option("--input,-i", dec_in)->required();
  c_decompress->add_option("--output,-o", dec_out)->required();

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand("eval", "bpp and PSNR change of saved images");
  c_eval->add_option("--codec,-c", eval.codec, "jpeg:Q or dctnet:Q")->required();
  c_eval->add_option("--model,-m", eval.model, "Checkpoint for dctnet targets");
  c_eval->add_option("--original", eval.original, "File or directory")->required();
  c_eval->add_option("--adversarial", eval.adversarial, "File or directory")
      ->required();
  c_eval->add_option("--source", eval.source, "Label for the records")
      ->capture_default_str();
  c_eval->add_option("--out,-o", eval.out, "Records CSV");

  std::string gc_model;
  std::size_t gc_size = 16;
  std::uint64_t gc_seed = 1;
  double gc_h = 1e-6;
  CLI::App* c_grad = app.add_subcommand(
      "gradcheck", "Finite-difference check of the end-to-end rate gradient");
  c_grad->add_option("--model,-m", gc_model, "Checkpoint (default: initialised model)");
  c_grad->add_option("--size", gc_size, "Square input side, multiple of 8")
      ->capture_default_str();
  c_grad->add_option("--seed", gc_seed)->capture_default_str();
  c_grad->add_option("--fd-step", gc_h, "Central-difference step")->capture_default_str();

  std::size_t syn_count = 24, syn_w = 768, syn_h = 512;
  std::uint64_t syn_seed = 2002;
  std::string syn_out = "synthetic";
  CLI::App* c_synth = app.add_subcommand("synth", "Write a synthetic image corpus");
  c_synth->add_option("--count", syn_count)->capture_default_str();
  c_synth->add_option("--seed", syn_seed)->capture_default_str();
  c_synth->add_option("--width", syn_w)->capture_default_str();
  c_synth->add_option("--height", syn_h)->capture_default_str();
  c_synth->add_option("--out,-o", syn_out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_train) return RunTrain(train, *c_train);
    if (*c_attack) return RunAttack(attack);
    if (*c_noise) return RunNoise(noise_config, noise_in, noise_out, noise_flags);
    if (*c_transfer) return RunTransfer(transfer, *c_transfer);
    if (*c_compress) return RunCompress(cmp_model, cmp_in, cmp_out);
    if (*c_decompress) return RunDecompress(dec_model, dec_in, dec_out);
    if (*c_eval) return RunEval(eval);
    if (*c_grad) return RunGradcheck(gc_model, gc_size, gc_seed, gc_h);
    if (*c_synth) return RunSynth(syn_count, syn_seed, syn_w, syn_h, syn_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
