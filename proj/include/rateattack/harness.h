#ifndef RATEATTACK_HARNESS_H_
#define RATEATTACK_HARNESS_H_

// Metrics, target codecs, the substitute-to-target transfer experiment and
// its reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rateattack/attack.h"
#include "rateattack/dctnet.h"
#include "rateattack/image.h"

namespace rateattack {

// 10 log10(1 / MSE) over all values, peak 1. +inf when identical.
double Psnr(const Image& a, const Image& b);
std::string FormatPsnr(double db);

// A compressor under evaluation.
struct CodecOutput {
  double bpp = 0.0;
  Image reconstruction;
};

class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::string id() const = 0;  // e.g. "jpeg:50"
  virtual int quality() const = 0;
  virtual CodecOutput Run(const Image& image) const = 0;

  double Bpp(const Image& image) const { return Run(image).bpp; }
};

// Baseline JPEG, scan-only bpp. Odd sizes are edge-padded and cropped back.
class JpegCodec : public Codec {
 public:
  explicit JpegCodec(int quality);
  std::string id() const override { return "jpeg:" + std::to_string(quality_); }
  int quality() const override { return quality_; }
  CodecOutput Run(const Image& image) const override;

 private:
  int quality_;
};

// DCT-Net with its rANS coder, payload-only bpp.
class DctNetCodec : public Codec {
 public:
  explicit DctNetCodec(const DctNet& net) : net_(net) {}
  std::string id() const override {
    return "dctnet:" + std::to_string(net_.quality());
  }
  int quality() const override { return net_.quality(); }
  CodecOutput Run(const Image& image) const override;

 private:
  const DctNet& net_;
};

// "jpeg:Q" builds a JPEG target. "dctnet:Q" resolves against `substitutes`.
std::unique_ptr<Codec> MakeCodec(const std::string& spec,
                                 std::span<const TrainedSubstitute> substitutes);

struct EvalRecord {
  std::string image_id;
  std::string target;   // codec id
  std::string source;   // substitute label, "noise" or "identity"
  int source_quality = 0;  // 0 when not a substitute
  double original_bpp = 0.0;
  double adversarial_bpp = 0.0;
  double bpp_change = 0.0;
  double psnr_clean = 0.0;
  double psnr_adversarial = 0.0;
  double psnr_change = 0.0;
  double perturbation_l2 = 0.0;
  std::string error;  // non-empty when the codec failed on this image
};

struct EvalSummary {
  std::size_t count = 0;
  std::size_t failures = 0;
  double mean_bpp_change = 0.0;  // mean of per-image ratios
  double mean_psnr_change = 0.0;
  double mean_original_bpp = 0.0;
  double mean_psnr_clean = 0.0;
};

EvalRecord EvaluateOne(const Codec& target, const std::string& image_id,
                       const Image& original, const Image& adversarial,
                       const std::string& source, int source_quality);
std::vector<EvalRecord> Evaluate(const Codec& target,
                                 std::span<const std::string> ids,
                                 std::span<const Image> originals,
                                 std::span<const Image> adversarials,
                                 const std::string& source,
                                 int source_quality = 0);
EvalSummary Summarize(std::span<const EvalRecord> records);

// Rows are substitutes, columns targets; cells hold mean bpp change.
struct TransferMatrix {
  std::vector<std::string> rows;
  std::vector<int> row_qualities;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> cells;
  std::vector<std::vector<std::size_t>> failures;
  std::vector<double> noise;  // control row, empty when not run

  // Row index of the largest cell in each column.
  std::vector<std::size_t> ColumnArgmax() const;
};

// --- configuration ---------------------------------------------------------

struct CorpusConfig {
  std::string dir;  // real images when non-empty, else synthetic
  std::size_t synthetic_count = 24;
  std::uint64_t synthetic_seed = 0;
  std::size_t width = 768;
  std::size_t height = 512;
  std::size_t limit = 0;  // use the first `limit` images; 0 = all
};

struct ExperimentConfig {
  CorpusConfig train_corpus{"", 24, 1001, 768, 512, 0};
  CorpusConfig eval_corpus{"", 24, 2002, 768, 512, 0};
  TrainOptions train;
  ColorMode color_mode = ColorMode::kYcbcr;
  std::vector<int> substitute_qualities = {10, 30, 50, 70, 90};
  std::vector<std::string> targets = {"jpeg:10", "jpeg:20", "jpeg:50",
                                      "jpeg:70", "jpeg:90"};
  AttackConfig attack;
  bool include_noise = true;
  std::uint64_t noise_seed = 7;
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::string checkpoint_dir = "checkpoints";
  bool save_images = true;

  static ExperimentConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

AttackConfig AttackConfigFromJson(const nlohmann::json& j,
                                  AttackConfig base = {});
nlohmann::json AttackConfigToJson(const AttackConfig& c);

ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

struct Corpus {
  std::vector<std::string> ids;
  std::vector<Image> images;
};
// Real images are cropped to multiples of 8.
Corpus LoadCorpus(const CorpusConfig& config);

// Loads "<dir>/dctnet_q<Q>.json" when present, otherwise trains and saves.
using Logger = std::function<void(const std::string&)>;
std::vector<TrainedSubstitute> PrepareSubstitutes(
    const ExperimentConfig& config, const Corpus& train_corpus,
    const Logger& log = {});

struct AttackSummary {
  std::string image_id;
  std::string substitute;
  int iterations = 0;
  int best_iteration = 0;
  std::string stop_reason;
  double initial_bpp_estimate = 0.0;
  double best_bpp_estimate = 0.0;
  double perturbation_l2 = 0.0;
  double epsilon = 0.0;
  std::string error;
};

struct TransferResult {
  TransferMatrix matrix;
  std::vector<EvalRecord> records;  // substitute rows
  std::vector<EvalRecord> noise_records;
  std::vector<AttackSummary> attacks;
};

struct TransferOutputs {
  std::filesystem::path image_dir;  // PPM files and manifest; empty = none
};

// For each image and substitute, attacks the substitute, snaps the result to
// 8-bit levels inside the budget and evaluates it on every target. Work
// items run on a bounded pool; results do not depend on the pool size.
TransferResult TransferExperiment(std::span<const TrainedSubstitute> substitutes,
                                  std::span<const std::string> targets,
                                  const Corpus& corpus,
                                  const ExperimentConfig& config,
                                  const TransferOutputs& outputs = {},
                                  const Logger& log = {});

// --- reports ---------------------------------------------------------------

void WriteMatrixCsv(const TransferMatrix& m, const std::filesystem::path& path);
TransferMatrix ReadMatrixCsv(const std::filesystem::path& path);
void WriteRecordsCsv(std::span<const EvalRecord> records,
                     const std::filesystem::path& path);
std::vector<EvalRecord> ReadRecordsCsv(const std::filesystem::path& path);
void WriteAttacksCsv(std::span<const AttackSummary> attacks,
                     const std::filesystem::path& path);
nlohmann::json TransferToJson(const TransferResult& result);
// Scatter data: one row per target point, x = mean clean bpp or PSNR,
// y = mean bpp change of the best substitute (and of the noise control).
void WritePlotData(const TransferResult& result,
                   const std::filesystem::path& dir);
// matrix.csv, records.csv, noise.csv, attacks.csv, report.json, plot files.
void WriteTransferReports(const TransferResult& result,
                          const std::filesystem::path& dir);

void WriteTextFile(const std::filesystem::path& path, const std::string& text);

}  // namespace rateattack

#endif  // RATEATTACK_HARNESS_H_
