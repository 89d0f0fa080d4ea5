#include "rateattack/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "rateattack/error.h"
#include "rateattack/jpeg.h"
#include "rateattack/synthetic.h"

namespace rateattack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t Mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

bool MultipleOf8(const Image& im) {
  return im.width % 8 == 0 && im.height % 8 == 0;
}

double PsnrRatio(double adversarial, double clean) {
  if (std::isinf(clean)) return std::isinf(adversarial) ? 1.0 : 0.0;
  if (std::isinf(adversarial)) return 1.0;
  return adversarial / clean;
}

// Shortest text that parses back to the same double.
std::string Num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

double ParseNum(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw Error(ErrorCode::kUnsupportedFormat, "bad number in CSV: '" + s + "'");
  }
  return v;
}

// Fields never contain quotes or newlines; commas are quoted defensively.
std::string Field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(SplitCsvLine(line));
  }
  return rows;
}

// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
// exception is rethrown after all threads finish.
template <typename Fn>
void ParallelFor(std::size_t count, std::size_t workers, Fn&& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct CleanStats {
  double bpp = 0.0;
  double psnr = 0.0;
  std::string error;
};

CleanStats MeasureClean(const Codec& target, const Image& original) {
  CleanStats c;
  try {
    const CodecOutput out = target.Run(original);
    c.bpp = out.bpp;
    c.psnr = Psnr(original, out.reconstruction);
  } catch (const std::exception& e) {
    c.error = e.what();
  }
  return c;
}

EvalRecord EvaluateWithClean(const Codec& target, const CleanStats& clean,
                             const std::string& image_id, const Image& original,
                             const Image& adversarial, const std::string& source,
                             int source_quality) {
  EvalRecord r;
  r.image_id = image_id;
  r.target = target.id();
  r.source = source;
  r.source_quality = source_quality;
  if (!clean.error.empty()) {
    r.error = clean.error;
    return r;
  }
  r.original_bpp = clean.bpp;
  r.psnr_clean = clean.psnr;
  try {
    r.perturbation_l2 = L2Distance(adversarial, original);
    const CodecOutput out = target.Run(adversarial);
    r.adversarial_bpp = out.bpp;
    r.psnr_adversarial = Psnr(original, out.reconstruction);
    if (!(r.original_bpp > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "original bpp is zero");
    }
    r.bpp_change = r.adversarial_bpp / r.original_bpp;
    r.psnr_change = PsnrRatio(r.psnr_adversarial, r.psnr_clean);
  } catch (const std::exception& e) {
    r.error = e.what();
    r.adversarial_bpp = r.bpp_change = r.psnr_adversarial = r.psnr_change = 0.0;
  }
  return r;
}

template <typename T>
T Get(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void RejectUnknown(const json& j, std::initializer_list<const char*> known,
                   const std::string& where) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidArgument, where + " must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown key '" + key + "' in " + where);
    }
  }
}

CorpusConfig CorpusFromJson(const json& j, CorpusConfig c,
                            const std::string& where) {
  RejectUnknown(j, {"dir", "synthetic_count", "synthetic_seed", "width",
                    "height", "limit"},
                where);
  c.dir = Get(j, "dir", c.dir);
  c.synthetic_count = Get(j, "synthetic_count", c.synthetic_count);
  c.synthetic_seed = Get(j, "synthetic_seed", c.synthetic_seed);
  c.width = Get(j, "width", c.width);
  c.height = Get(j, "height", c.height);
  c.limit = Get(j, "limit", c.limit);
  return c;
}

json CorpusToJson(const CorpusConfig& c) {
  return {{"dir", c.dir},
          {"synthetic_count", c.synthetic_count},
          {"synthetic_seed", c.synthetic_seed},
          {"width", c.width},
          {"height", c.height},
          {"limit", c.limit}};
}

std::string SafeName(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' &&
        c != '.') {
      c = '_';
    }
  }
  return s;
}

}  // namespace

double Psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::kShapeMismatch, "PSNR of images with different sizes");
  }
  if (a.data.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "PSNR of empty images");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(sq / static_cast<double>(a.data.size()));
}

std::string FormatPsnr(double db) {
  if (std::isinf(db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", db);
  return buf;
}

JpegCodec::JpegCodec(int quality) : quality_(quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorCode::kInvalidArgument, "JPEG quality must be in [1,100]");
  }
}

CodecOutput JpegCodec::Run(const Image& image) const {
  const bool aligned = MultipleOf8(image);
  const Image padded = aligned ? image : Pad(image);
  const JpegBitstream s = EncodeJpeg(padded, quality_);
  CodecOutput out;
  out.bpp = 8.0 * static_cast<double>(s.scan_bytes()) /
            static_cast<double>(image.num_pixels());
  out.reconstruction = DecodeJpeg(s.bytes).image;
  if (!aligned) {
    out.reconstruction =
        Crop(out.reconstruction, 0, 0, image.width, image.height);
  }
  return out;
}

CodecOutput DctNetCodec::Run(const Image& image) const {
  const std::vector<std::uint8_t> c = net_.Compress(image);
  CodecOutput out;
  out.bpp = 8.0 * static_cast<double>(DctNet::PayloadBytes(c)) /
            static_cast<double>(image.num_pixels());
  out.reconstruction = net_.Decompress(c);
  return out;
}

std::unique_ptr<Codec> MakeCodec(const std::string& spec,
                                 std::span<const TrainedSubstitute> substitutes) {
  const std::size_t colon = spec.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument,
                "codec spec must look like jpeg:Q or dctnet:Q, got '" + spec + "'");
  }
  const std::string kind = spec.substr(0, colon);
  int q = 0;
  try {
    std::size_t used = 0;
    q = std::stoi(spec.substr(colon + 1), &used);
    if (used != spec.size() - colon - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad quality in '" + spec + "'");
  }
  if (kind == "jpeg") return std::make_unique<JpegCodec>(q);
  if (kind == "dctnet") {
    for (const TrainedSubstitute& s : substitutes) {
      if (s.net.quality() == q) return std::make_unique<DctNetCodec>(s.net);
    }
    throw Error(ErrorCode::kInvalidArgument,
                "no trained DCT-Net with quality " + std::to_string(q));
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown codec '" + kind + "'");
}

EvalRecord EvaluateOne(const Codec& target, const std::string& image_id,
                       const Image& original, const Image& adversarial,
                       const std::string& source, int source_quality) {
  return EvaluateWithClean(target, MeasureClean(target, original), image_id,
                           original, adversarial, source, source_quality);
}

std::vector<EvalRecord> Evaluate(const Codec& target,
                                 std::span<const std::string> ids,
                                 std::span<const Image> originals,
                                 std::span<const Image> adversarials,
                                 const std::string& source, int source_quality) {
  if (ids.size() != originals.size() || originals.size() != adversarials.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "evaluate needs matching ids, originals and adversarials");
  }
  std::vector<EvalRecord> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.push_back(EvaluateOne(target, ids[i], originals[i], adversarials[i],
                              source, source_quality));
  }
  return out;
}

EvalSummary Summarize(std::span<const EvalRecord> records) {
  EvalSummary s;
  for (const EvalRecord& r : records) {
    if (!r.error.empty()) {
      ++s.failures;
      continue;
    }
    ++s.count;
    s.mean_bpp_change += r.bpp_change;
    s.mean_psnr_change += r.psnr_change;
    s.mean_original_bpp += r.original_bpp;
    s.mean_psnr_clean += r.psnr_clean;
  }
  if (s.count) {
    const double n = static_cast<double>(s.count);
    s.mean_bpp_change /= n;
    s.mean_psnr_change /= n;
    s.mean_original_bpp /= n;
    s.mean_psnr_clean /= n;
  }
  return s;
}

std::vector<std::size_t> TransferMatrix::ColumnArgmax() const {
  std::vector<std::size_t> best(columns.size(), 0);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (cells[r][c] > cells[best[c]][c]) best[c] = r;
    }
  }
  return best;
}

// --- configuration ---------------------------------------------------------

AttackConfig AttackConfigFromJson(const json& j, AttackConfig c) {
  RejectUnknown(j, {"per_pixel_budget", "epsilon", "step", "max_iterations",
                    "patience", "seed", "quant_mode", "bin_width"},
                "attack");
  c.per_pixel_budget = Get(j, "per_pixel_budget", c.per_pixel_budget);
  if (j.contains("epsilon")) {
    if (j.at("epsilon").is_null()) {
      c.epsilon.reset();
    } else {
      c.epsilon = j.at("epsilon").get<double>();
    }
  }
  c.step = Get(j, "step", c.step);
  c.max_iterations = Get(j, "max_iterations", c.max_iterations);
  c.patience = Get(j, "patience", c.patience);
  c.seed = Get(j, "seed", c.seed);
  if (j.contains("quant_mode")) {
    c.quant_mode = ParseQuantMode(j.at("quant_mode").get<std::string>());
  }
  c.bin_width = Get(j, "bin_width", c.bin_width);
  c.Validate();
  return c;
}

json AttackConfigToJson(const AttackConfig& c) {
  return {{"per_pixel_budget", c.per_pixel_budget},
          {"epsilon", c.epsilon ? json(*c.epsilon) : json(nullptr)},
          {"step", c.step},
          {"max_iterations", c.max_iterations},
          {"patience", c.patience},
          {"seed", c.seed},
          {"quant_mode", QuantModeName(c.quant_mode)},
          {"bin_width", c.bin_width}};
}

ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  ExperimentConfig c;
  try {
    RejectUnknown(j, {"corpus", "train", "attack", "transfer"}, "config");
    if (j.contains("corpus")) {
      const json& cj = j.at("corpus");
      RejectUnknown(cj, {"train", "eval"}, "corpus");
      if (cj.contains("train")) {
        c.train_corpus = CorpusFromJson(cj.at("train"), c.train_corpus,
                                        "corpus.train");
      }
      if (cj.contains("eval")) {
        c.eval_corpus = CorpusFromJson(cj.at("eval"), c.eval_corpus,
                                       "corpus.eval");
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      RejectUnknown(t, {"epochs", "patches", "patch_size", "learning_rate",
                        "batch_size", "seed", "color_mode", "qualities",
                        "checkpoint_dir"},
                    "train");
      c.train.epochs = Get(t, "epochs", c.train.epochs);
      c.train.patches = Get(t, "patches", c.train.patches);
      c.train.patch_size = Get(t, "patch_size", c.train.patch_size);
      c.train.learning_rate = Get(t, "learning_rate", c.train.learning_rate);
      c.train.batch_size = Get(t, "batch_size", c.train.batch_size);
      c.train.seed = Get(t, "seed", c.train.seed);
      if (t.contains("color_mode")) {
        c.color_mode = ParseColorMode(t.at("color_mode").get<std::string>());
      }
      c.substitute_qualities = Get(t, "qualities", c.substitute_qualities);
      c.checkpoint_dir = Get(t, "checkpoint_dir", c.checkpoint_dir);
    }
    if (j.contains("attack")) c.attack = AttackConfigFromJson(j.at("attack"), c.attack);
    if (j.contains("transfer")) {
      const json& t = j.at("transfer");
      RejectUnknown(t, {"targets", "include_noise", "noise_seed", "workers",
                        "save_images"},
                    "transfer");
      c.targets = Get(t, "targets", c.targets);
      c.include_noise = Get(t, "include_noise", c.include_noise);
      c.noise_seed = Get(t, "noise_seed", c.noise_seed);
      c.workers = Get(t, "workers", c.workers);
      c.save_images = Get(t, "save_images", c.save_images);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  for (int q : c.substitute_qualities) {
    if (q < 1 || q > 100) {
      throw Error(ErrorCode::kInvalidArgument, "substitute quality out of range");
    }
  }
  return c;
}

json ExperimentConfig::ToJson() const {
  return {{"corpus",
           {{"train", CorpusToJson(train_corpus)},
            {"eval", CorpusToJson(eval_corpus)}}},
          {"train",
           {{"epochs", train.epochs},
            {"patches", train.patches},
            {"patch_size", train.patch_size},
            {"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"seed", train.seed},
            {"color_mode", ColorModeName(color_mode)},
            {"qualities", substitute_qualities},
            {"checkpoint_dir", checkpoint_dir}}},
          {"attack", AttackConfigToJson(attack)},
          {"transfer",
           {{"targets", targets},
            {"include_noise", include_noise},
            {"noise_seed", noise_seed},
            {"workers", workers},
            {"save_images", save_images}}}};
}

ExperimentConfig LoadExperimentConfig(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kUnsupportedFormat,
                path.string() + ": " + std::string(e.what()));
  }
  return ExperimentConfig::FromJson(j);
}

Corpus LoadCorpus(const CorpusConfig& config) {
  Corpus corpus;
  if (!config.dir.empty()) {
    std::vector<fs::path> files = ListImages(config.dir);
    if (config.limit && files.size() > config.limit) files.resize(config.limit);
    for (const fs::path& f : files) {
      Image im = Load(f);
      const std::size_t w = im.width / 8 * 8, h = im.height / 8 * 8;
      if (w == 0 || h == 0) {
        throw Error(ErrorCode::kDimension, f.string() + " is smaller than 8x8");
      }
      if (w != im.width || h != im.height) im = Crop(im, 0, 0, w, h);
      corpus.ids.push_back(f.stem().string());
      corpus.images.push_back(std::move(im));
    }
    if (corpus.images.empty()) {
      throw Error(ErrorCode::kIo, "no images in " + config.dir);
    }
    return corpus;
  }
  std::size_t count = config.synthetic_count;
  if (config.limit) count = std::min(count, config.limit);
  corpus.images = SyntheticCorpus(count, config.synthetic_seed, config.width,
                                  config.height);
  for (std::size_t i = 0; i < count; ++i) {
    corpus.ids.push_back("synth-" + std::to_string(config.synthetic_seed) + "-" +
                         std::to_string(i));
  }
  return corpus;
}

std::vector<TrainedSubstitute> PrepareSubstitutes(const ExperimentConfig& config,
                                                  const Corpus& train_corpus,
                                                  const Logger& log) {
  std::vector<TrainedSubstitute> out;
  if (!config.checkpoint_dir.empty()) fs::create_directories(config.checkpoint_dir);
  for (int q : config.substitute_qualities) {
    const fs::path path = config.checkpoint_dir.empty()
                              ? fs::path()
                              : fs::path(config.checkpoint_dir) /
                                    ("dctnet_q" + std::to_string(q) + ".json");
    if (!path.empty() && fs::exists(path)) {
      TrainedSubstitute s = LoadCheckpoint(path);
      const TrainingMetadata& m = s.metadata;
      const TrainOptions& t = config.train;
      if (s.net.quality() == q && s.net.color_mode() == config.color_mode &&
          m.epochs == t.epochs && m.patches == t.patches &&
          m.patch_size == t.patch_size && m.learning_rate == t.learning_rate &&
          m.batch_size == t.batch_size && m.seed == t.seed) {
        if (log) log("loaded " + path.string());
        out.push_back(std::move(s));
        continue;
      }
      if (log) log(path.string() + " was trained with other settings; retraining");
    }
    if (log) log("training DCT-Net Q=" + std::to_string(q));
    EpochCallback on_epoch;
    if (log) {
      on_epoch = [&log, q](int epoch, double nll) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  Q=%d epoch %d nll %.5f bits", q,
                      epoch, nll);
        log(buf);
      };
    }
    TrainedSubstitute s = Train(train_corpus.images, q, config.train,
                                config.color_mode, on_epoch);
    if (!path.empty()) SaveCheckpoint(s, path);
    out.push_back(std::move(s));
  }
  return out;
}

TransferResult TransferExperiment(std::span<const TrainedSubstitute> substitutes,
                                  std::span<const std::string> targets,
                                  const Corpus& corpus,
                                  const ExperimentConfig& config,
                                  const TransferOutputs& outputs,
                                  const Logger& log) {
  config.attack.Validate();
  if (corpus.ids.size() != corpus.images.size() || corpus.images.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "transfer needs a non-empty corpus");
  }
  for (const TrainedSubstitute& s : substitutes) {
    if (!s.net.trained()) {
      throw Error(ErrorCode::kUntrained, s.label() + " has no entropy model");
    }
  }
  for (const Image& im : corpus.images) {
    if (!MultipleOf8(im)) {
      throw Error(ErrorCode::kDimension, "corpus images must be multiples of 8");
    }
  }
  std::vector<std::unique_ptr<Codec>> codecs;
  for (const std::string& t : targets) codecs.push_back(MakeCodec(t, substitutes));

  const std::size_t n_img = corpus.images.size();
  const std::size_t n_sub = substitutes.size();
  const std::size_t n_tgt = codecs.size();
  std::mutex log_mu;
  auto say = [&](const std::string& s) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    log(s);
  };

  // Clean measurements, one work item per image.
  std::vector<std::vector<CleanStats>> clean(n_img, std::vector<CleanStats>(n_tgt));
  ParallelFor(n_img, config.workers, [&](std::size_t i) {
    for (std::size_t t = 0; t < n_tgt; ++t) {
      clean[i][t] = MeasureClean(*codecs[t], corpus.images[i]);
    }
  });

  // Attacked images are kept as bytes; the coordinator writes them later.
  struct Slot {
    std::vector<EvalRecord> records;
    AttackSummary summary;
    std::vector<std::uint8_t> bytes;
    std::uint64_t seed = 0;
  };
  const std::size_t rows = n_sub + (config.include_noise ? 1 : 0);
  std::vector<Slot> slots(rows * n_img);
  ParallelFor(slots.size(), config.workers, [&](std::size_t k) {
    const std::size_t row = k / n_img, i = k % n_img;
    const bool noise = row == n_sub;
    const Image& x0 = corpus.images[i];
    Slot& slot = slots[k];
    const std::string source = noise ? "noise" : substitutes[row].label();
    const int source_q = noise ? 0 : substitutes[row].net.quality();
    AttackSummary& sum = slot.summary;
    sum.image_id = corpus.ids[i];
    sum.substitute = source;
    sum.epsilon = config.attack.Epsilon(x0);
    Image adversarial;
    try {
      if (noise) {
        slot.seed = Mix(config.noise_seed, i);
        adversarial = NoiseBaseline(x0, config.attack, slot.seed);
        sum.stop_reason = "noise";
      } else {
        AttackConfig ac = config.attack;
        slot.seed = ac.seed = Mix(config.attack.seed, i);
        const DctNet& net = substitutes[row].net;
        const AttackTrace trace =
            WhiteBoxAttack(DctNetRate(net, ac.quant_mode, ac.seed, ac.bin_width),
                           x0, ac);
        adversarial = trace.adversarial;
        const double px = static_cast<double>(x0.num_pixels());
        sum.iterations = static_cast<int>(trace.steps.size());
        sum.best_iteration = trace.best_iteration;
        sum.stop_reason = StopReasonName(trace.stop_reason);
        sum.initial_bpp_estimate = trace.initial_loss_bits / px;
        sum.best_bpp_estimate = trace.best_loss_bits / px;
      }
      adversarial = QuantizeWithinBudget(x0, adversarial, sum.epsilon);
      sum.perturbation_l2 = L2Distance(adversarial, x0);
      slot.bytes = ToBytes(adversarial);
    } catch (const std::exception& e) {
      sum.error = e.what();
    }
    for (std::size_t t = 0; t < n_tgt; ++t) {
      if (!sum.error.empty()) {
        EvalRecord r;
        r.image_id = corpus.ids[i];
        r.target = codecs[t]->id();
        r.source = source;
        r.source_quality = source_q;
        r.error = sum.error;
        slot.records.push_back(r);
        continue;
      }
      slot.records.push_back(EvaluateWithClean(*codecs[t], clean[i][t],
                                               corpus.ids[i], x0, adversarial,
                                               source, source_q));
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s vs %s: %d iterations, est %.4f -> %.4f bpp",
                  source.c_str(), corpus.ids[i].c_str(), sum.iterations,
                  sum.initial_bpp_estimate, sum.best_bpp_estimate);
    say(sum.error.empty() ? std::string(buf) : source + " vs " + corpus.ids[i] +
                                                   " failed: " + sum.error);
  });

  // Aggregation and output, single-threaded.
  TransferResult result;
  TransferMatrix& m = result.matrix;
  for (const auto& c : codecs) m.columns.push_back(c->id());
  for (std::size_t s = 0; s < n_sub; ++s) {
    m.rows.push_back(substitutes[s].label());
    m.row_qualities.push_back(substitutes[s].net.quality());
  }
  m.cells.assign(n_sub, std::vector<double>(n_tgt, 0.0));
  m.failures.assign(n_sub, std::vector<std::size_t>(n_tgt, 0));
  auto column_summary = [&](std::size_t row, std::size_t t) {
    std::vector<EvalRecord> col;
    for (std::size_t i = 0; i < n_img; ++i) {
      col.push_back(slots[row * n_img + i].records[t]);
    }
    return Summarize(col);
  };
  for (std::size_t s = 0; s < n_sub; ++s) {
    for (std::size_t t = 0; t < n_tgt; ++t) {
      const EvalSummary sum = column_summary(s, t);
      m.cells[s][t] = sum.mean_bpp_change;
      m.failures[s][t] = sum.failures;
    }
  }
  if (config.include_noise) {
    for (std::size_t t = 0; t < n_tgt; ++t) {
      m.noise.push_back(column_summary(n_sub, t).mean_bpp_change);
    }
  }
  for (std::size_t row = 0; row < rows; ++row) {
    for (std::size_t i = 0; i < n_img; ++i) {
      const Slot& slot = slots[row * n_img + i];
      auto& dst = row == n_sub ? result.noise_records : result.records;
      dst.insert(dst.end(), slot.records.begin(), slot.records.end());
      result.attacks.push_back(slot.summary);
    }
  }

  if (!outputs.image_dir.empty()) {
    fs::create_directories(outputs.image_dir / "original");
    std::ostringstream manifest;
    manifest << "file,original,image_id,substitute,seed,epsilon,step,"
                "max_iterations,patience,quant_mode,bin_width\n";
    for (std::size_t i = 0; i < n_img; ++i) {
      const fs::path orig =
          fs::path("original") / (SafeName(corpus.ids[i]) + ".ppm");
      Save(corpus.images[i], outputs.image_dir / orig);
      for (std::size_t row = 0; row < rows; ++row) {
        const Slot& slot = slots[row * n_img + i];
        if (slot.bytes.empty()) continue;
        const std::string& source = slot.summary.substitute;
        fs::create_directories(outputs.image_dir / SafeName(source));
        const fs::path file =
            fs::path(SafeName(source)) / (SafeName(corpus.ids[i]) + ".ppm");
        const Image& x0 = corpus.images[i];
        Save(FromBytes(x0.width, x0.height, slot.bytes), outputs.image_dir / file);
        manifest << Field(file.generic_string()) << ','
                 << Field(orig.generic_string()) << ',' << Field(corpus.ids[i])
                 << ',' << Field(source) << ',' << slot.seed << ','
                 << Num(slot.summary.epsilon) << ',' << Num(config.attack.step)
                 << ',' << config.attack.max_iterations << ','
                 << config.attack.patience << ','
                 << (row == n_sub ? "n/a" : QuantModeName(config.attack.quant_mode))
                 << ',' << (row == n_sub ? "n/a" : Num(config.attack.bin_width))
                 << '\n';
      }
    }
    WriteTextFile(outputs.image_dir / "manifest.csv", manifest.str());
  }
  return result;
}

// --- reports ---------------------------------------------------------------

void WriteTextFile(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

void WriteMatrixCsv(const TransferMatrix& m, const fs::path& path) {
  std::ostringstream os;
  os << "substitute,quality";
  for (const std::string& c : m.columns) os << ',' << Field(c);
  os << '\n';
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    os << Field(m.rows[r]) << ',' << m.row_qualities[r];
    for (double v : m.cells[r]) os << ',' << Num(v);
    os << '\n';
  }
  WriteTextFile(path, os.str());
}

TransferMatrix ReadMatrixCsv(const fs::path& path) {
  const auto rows = ReadCsv(path);
  if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "substitute") {
    throw Error(ErrorCode::kUnsupportedFormat, path.string() + " is not a matrix CSV");
  }
  TransferMatrix m;
  m.columns.assign(rows[0].begin() + 2, rows[0].end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) {
      throw Error(ErrorCode::kUnsupportedFormat, "ragged matrix CSV");
    }
    m.rows.push_back(rows[r][0]);
    m.row_qualities.push_back(static_cast<int>(ParseNum(rows[r][1])));
    std::vector<double> cells;
    for (std::size_t c = 2; c < rows[r].size(); ++c) {
      cells.push_back(ParseNum(rows[r][c]));
    }
    m.cells.push_back(std::move(cells));
    m.failures.emplace_back(m.columns.size(), 0);
  }
  return m;
}

namespace {
constexpr const char* kRecordHeader =
    "image_id,target,source,source_quality,original_bpp,adversarial_bpp,"
    "bpp_change,psnr_clean,psnr_adversarial,psnr_change,perturbation_l2,error";
}  // namespace

void WriteRecordsCsv(std::span<const EvalRecord> records, const fs::path& path) {
  std::ostringstream os;
  os << kRecordHeader << '\n';
  for (const EvalRecord& r : records) {
    os << Field(r.image_id) << ',' << Field(r.target) << ',' << Field(r.source)
       << ',' << r.source_quality << ',' << Num(r.original_bpp) << ','
       << Num(r.adversarial_bpp) << ',' << Num(r.bpp_change) << ','
       << Num(r.psnr_clean) << ',' << Num(r.psnr_adversarial) << ','
       << Num(r.psnr_change) << ',' << Num(r.perturbation_l2) << ','
       << Field(r.error) << '\n';
  }
  WriteTextFile(path, os.str());
}

std::vector<EvalRecord> ReadRecordsCsv(const fs::path& path) {
  const auto rows = ReadCsv(path);
  if (rows.empty() || rows[0] != SplitCsvLine(kRecordHeader)) {
    throw Error(ErrorCode::kUnsupportedFormat, path.string() + " is not a records CSV");
  }
  std::vector<EvalRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 12) throw Error(ErrorCode::kUnsupportedFormat, "ragged records CSV");
    EvalRecord r;
    r.image_id = f[0];
    r.target = f[1];
    r.source = f[2];
    r.source_quality = static_cast<int>(ParseNum(f[3]));
    r.original_bpp = ParseNum(f[4]);
    r.adversarial_bpp = ParseNum(f[5]);
    r.bpp_change = ParseNum(f[6]);
    r.psnr_clean = ParseNum(f[7]);
    r.psnr_adversarial = ParseNum(f[8]);
    r.psnr_change = ParseNum(f[9]);
    r.perturbation_l2 = ParseNum(f[10]);
    r.error = f[11];
    out.push_back(r);
  }
  return out;
}

void WriteAttacksCsv(std::span<const AttackSummary> attacks, const fs::path& path) {
  std::ostringstream os;
  os << "image_id,substitute,iterations,best_iteration,stop_reason,"
        "initial_bpp_estimate,best_bpp_estimate,perturbation_l2,epsilon,error\n";
  for (const AttackSummary& a : attacks) {
    os << Field(a.image_id) << ',' << Field(a.substitute) << ',' << a.iterations
       << ',' << a.best_iteration << ',' << a.stop_reason << ','
       << Num(a.initial_bpp_estimate) << ',' << Num(a.best_bpp_estimate) << ','
       << Num(a.perturbation_l2) << ',' << Num(a.epsilon) << ',' << Field(a.error)
       << '\n';
  }
  WriteTextFile(path, os.str());
}

json TransferToJson(const TransferResult& result) {
  const TransferMatrix& m = result.matrix;
  json j;
  j["columns"] = m.columns;
  j["rows"] = m.rows;
  j["row_qualities"] = m.row_qualities;
  j["cells"] = m.cells;
  j["failures"] = m.failures;
  json best = json::array();
  const std::vector<std::size_t> argmax = m.ColumnArgmax();
  for (std::size_t c = 0; c < m.columns.size() && !m.rows.empty(); ++c) {
    best.push_back({{"target", m.columns[c]},
                    {"row", argmax[c]},
                    {"substitute", m.rows[argmax[c]]},
                    {"bpp_change", m.cells[argmax[c]][c]}});
  }
  j["best_substitute"] = best;
  if (!m.noise.empty()) j["noise"] = m.noise;
  json psnr = json::array();
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    std::vector<double> row;
    for (const std::string& col : m.columns) {
      std::vector<EvalRecord> sel;
      for (const EvalRecord& rec : result.records) {
        if (rec.source == m.rows[r] && rec.target == col) sel.push_back(rec);
      }
      row.push_back(Summarize(sel).mean_psnr_change);
    }
    psnr.push_back(row);
  }
  j["psnr_change"] = psnr;
  return j;
}

void WritePlotData(const TransferResult& result, const fs::path& dir) {
  const TransferMatrix& m = result.matrix;
  const std::vector<std::size_t> argmax = m.ColumnArgmax();
  std::ostringstream bpp, psnr;
  const std::string tail = m.noise.empty() ? "\n" : ",noise_bpp_change\n";
  bpp << "target,x_bpp,y_bpp_change" << tail;
  psnr << "target,x_psnr,y_bpp_change" << tail;
  for (std::size_t c = 0; c < m.columns.size() && !m.rows.empty(); ++c) {
    std::vector<EvalRecord> sel;
    for (const EvalRecord& r : result.records) {
      if (r.target == m.columns[c] && r.source == m.rows[argmax[c]]) sel.push_back(r);
    }
    const EvalSummary s = Summarize(sel);
    const std::string y = Num(m.cells[argmax[c]][c]);
    const std::string noise = m.noise.empty() ? "" : "," + Num(m.noise[c]);
    bpp << Field(m.columns[c]) << ',' << Num(s.mean_original_bpp) << ',' << y
        << noise << '\n';
    psnr << Field(m.columns[c]) << ',' << Num(s.mean_psnr_clean) << ',' << y
         << noise << '\n';
  }
  WriteTextFile(dir / "plot_bpp.csv", bpp.str());
  WriteTextFile(dir / "plot_psnr.csv", psnr.str());
}

void WriteTransferReports(const TransferResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  WriteMatrixCsv(result.matrix, dir / "matrix.csv");
  WriteRecordsCsv(result.records, dir / "records.csv");
  if (!result.matrix.noise.empty()) {
    TransferMatrix noise;
    noise.columns = result.matrix.columns;
    noise.rows = {"noise"};
    noise.row_qualities = {0};
    noise.cells = {result.matrix.noise};
    WriteMatrixCsv(noise, dir / "noise_row.csv");
    WriteRecordsCsv(result.noise_records, dir / "noise.csv");
  }
  WriteAttacksCsv(result.attacks, dir / "attacks.csv");
  WriteTextFile(dir / "report.json", TransferToJson(result).dump(2) + "\n");
  WritePlotData(result, dir);
}

}  // namespace rateattack
