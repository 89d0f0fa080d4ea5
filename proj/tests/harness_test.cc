#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rateattack/error.h"
#include "rateattack/harness.h"
#include "rateattack/synthetic.h"

namespace rateattack {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / "rateattack_harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> Rows(const fs::path& p) {
  std::istringstream in(Slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

TEST(Psnr, IdenticalIsInfinite) {
  const Image a = SyntheticImage(1, 16, 16);
  EXPECT_TRUE(std::isinf(Psnr(a, a)));
  EXPECT_EQ(FormatPsnr(Psnr(a, a)), "inf");
  EXPECT_EQ(FormatPsnr(31.25), "31.250");
}

TEST(Psnr, ConstantOffsetOfOneTenthIsTwentyDb) {
  const Image a(8, 8, 0.3), b(8, 8, 0.4);
  EXPECT_NEAR(Psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    Image a(9, 7), b(9, 7);
    long double sq = 0.0L;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      a.data[i] = u(rng);
      b.data[i] = u(rng);
      sq += static_cast<long double>(a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    }
    const double mse = static_cast<double>(sq / a.data.size());
    EXPECT_NEAR(Psnr(a, b), 10.0 * std::log10(1.0 / mse), 1e-9);
  }
  EXPECT_THROW(Psnr(Image(8, 8), Image(8, 16)), Error);
}

TEST(Evaluate, IdentityGivesUnitRatios) {
  const Image x = SyntheticImage(2, 64, 48);
  const JpegCodec jpeg(50);
  const EvalRecord r = EvaluateOne(jpeg, "a", x, x, "identity", 0);
  EXPECT_TRUE(r.error.empty());
  EXPECT_EQ(r.target, "jpeg:50");
  EXPECT_EQ(r.bpp_change, 1.0);
  EXPECT_EQ(r.psnr_change, 1.0);
  EXPECT_EQ(r.perturbation_l2, 0.0);
  EXPECT_EQ(r.original_bpp, jpeg.Bpp(x));
}

TEST(Evaluate, SummaryIsMeanOfRatios) {
  std::vector<EvalRecord> rs(4);
  const double orig[] = {1.0, 2.0, 4.0, 3.0};
  const double adv[] = {1.5, 2.0, 8.0, 9.0};
  for (int i = 0; i < 4; ++i) {
    rs[i].original_bpp = orig[i];
    rs[i].adversarial_bpp = adv[i];
    rs[i].bpp_change = adv[i] / orig[i];
    rs[i].psnr_clean = 30.0 + i;
    rs[i].psnr_change = 0.9;
  }
  rs[3].error = "boom";
  const EvalSummary s = Summarize(rs);
  EXPECT_EQ(s.count, 3u);
  EXPECT_EQ(s.failures, 1u);
  // (1.5 + 1 + 2) / 3, not (1.5 + 2 + 8) / (1 + 2 + 4).
  EXPECT_DOUBLE_EQ(s.mean_bpp_change, 1.5);
  EXPECT_DOUBLE_EQ(s.mean_original_bpp, 7.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.mean_psnr_clean, 31.0);
}

TEST(Evaluate, OddSizedImagesAndFailures) {
  const Image x = Crop(SyntheticImage(3, 64, 64), 0, 0, 37, 29);
  const JpegCodec jpeg(70);
  const CodecOutput out = jpeg.Run(x);
  EXPECT_EQ(out.reconstruction.width, 37u);
  EXPECT_EQ(out.reconstruction.height, 29u);
  const EvalRecord bad = EvaluateOne(jpeg, "b", x, Image(8, 8), "noise", 0);
  EXPECT_FALSE(bad.error.empty());
  const std::vector<std::string> ids = {"a"};
  const std::vector<Image> one = {x}, none;
  EXPECT_THROW(Evaluate(jpeg, ids, one, none, "noise"), Error);
}

TEST(Codecs, MakeCodec) {
  EXPECT_EQ(MakeCodec("jpeg:20", {})->id(), "jpeg:20");
  EXPECT_EQ(MakeCodec("jpeg:20", {})->quality(), 20);
  EXPECT_THROW(MakeCodec("jpeg:0", {}), Error);
  EXPECT_THROW(MakeCodec("png:5", {}), Error);
  EXPECT_THROW(MakeCodec("dctnet:50", {}), Error);
}

TEST(Reports, RecordsCsvRoundtrip) {
  std::vector<EvalRecord> rs(3);
  rs[0] = {"img,1", "jpeg:50", "dctnet-q50", 50, 0.1, 0.30000000000000004,
           3.0000000000000004, std::numeric_limits<double>::infinity(), 28.5,
           0.0, 1.0 / 3.0, ""};
  rs[1] = {"say \"hi\"", "dctnet:10", "noise", 0, 1e-300, 2.5, 2.5e300, 30.1, 29.9,
           29.9 / 30.1, 7.0, ""};
  rs[2] = {"c", "jpeg:90", "dctnet-q90", 90, 1.0, 0, 0, 40.0, 0, 0, 0,
           "codec failed: bad, very bad"};
  const fs::path p = TempDir("records") / "r.csv";
  WriteRecordsCsv(rs, p);
  const std::vector<EvalRecord> back = ReadRecordsCsv(p);
  ASSERT_EQ(back.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back[i].image_id, rs[i].image_id);
    EXPECT_EQ(back[i].target, rs[i].target);
    EXPECT_EQ(back[i].source, rs[i].source);
    EXPECT_EQ(back[i].source_quality, rs[i].source_quality);
    EXPECT_EQ(back[i].original_bpp, rs[i].original_bpp);
    EXPECT_EQ(back[i].adversarial_bpp, rs[i].adversarial_bpp);
    EXPECT_EQ(back[i].bpp_change, rs[i].bpp_change);
    EXPECT_EQ(back[i].psnr_clean, rs[i].psnr_clean);
    EXPECT_EQ(back[i].psnr_adversarial, rs[i].psnr_adversarial);
    EXPECT_EQ(back[i].psnr_change, rs[i].psnr_change);
    EXPECT_EQ(back[i].perturbation_l2, rs[i].perturbation_l2);
    EXPECT_EQ(back[i].error, rs[i].error);
  }
}

TEST(Reports, MatrixCsvShapeArgmaxAndRoundtrip) {
  TransferMatrix m;
  m.rows = {"dctnet-q10", "dctnet-q30", "dctnet-q50", "dctnet-q70", "dctnet-q90"};
  m.row_qualities = {10, 30, 50, 70, 90};
  m.columns = {"jpeg:10", "jpeg:20", "jpeg:50", "jpeg:70", "jpeg:90"};
  m.cells = {{1.3, 1.2, 1.1, 1.0, 0.95},
             {1.2, 1.25, 1.2, 1.1, 1.0},
             {1.1, 1.2, 1.4, 1.3, 1.2},
             {1.0, 1.1, 1.3, 1.45, 1.4},
             {0.9, 1.0, 1.2, 1.4, 1.5}};
  m.failures.assign(5, std::vector<std::size_t>(5, 0));
  EXPECT_EQ(m.ColumnArgmax(), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  const fs::path p = TempDir("matrix") / "m.csv";
  WriteMatrixCsv(m, p);
  const auto rows = Rows(p);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"substitute", "quality", "jpeg:10",
                                               "jpeg:20", "jpeg:50", "jpeg:70",
                                               "jpeg:90"}));
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(rows[r].size(), 7u);
  const TransferMatrix back = ReadMatrixCsv(p);
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_EQ(back.row_qualities, m.row_qualities);
  EXPECT_EQ(back.columns, m.columns);
  EXPECT_EQ(back.cells, m.cells);
}

TEST(Config, JsonRoundtripAndUnknownKeys) {
  ExperimentConfig c;
  c.attack.epsilon = 3.5;
  c.attack.quant_mode = QuantMode::kSte;
  c.attack.bin_width = 0.75;
  c.targets = {"jpeg:50", "dctnet:50"};
  c.train_corpus.dir = "some/dir";
  c.workers = 3;
  const nlohmann::json j = c.ToJson();
  EXPECT_EQ(ExperimentConfig::FromJson(j).ToJson(), j);

  nlohmann::json extra = j;
  extra["attack"]["stepsize"] = 1;
  EXPECT_THROW(ExperimentConfig::FromJson(extra), Error);
  nlohmann::json top = j;
  top["atack"] = nlohmann::json::object();
  EXPECT_THROW(ExperimentConfig::FromJson(top), Error);
  nlohmann::json bad = j;
  bad["attack"]["max_iterations"] = 0;
  EXPECT_THROW(ExperimentConfig::FromJson(bad), Error);
}

TEST(Config, FileWithCommentsAndDefaults) {
  const fs::path p = TempDir("config") / "c.json";
  std::ofstream(p) << "{\n  // override only what differs\n"
                      "  \"attack\": {\"max_iterations\": 50},\n"
                      "  \"transfer\": {\"targets\": [\"jpeg:50\"]}\n}\n";
  const ExperimentConfig c = LoadExperimentConfig(p);
  EXPECT_EQ(c.attack.max_iterations, 50);
  EXPECT_EQ(c.attack.patience, 20);
  EXPECT_DOUBLE_EQ(c.attack.step, 0.004);
  EXPECT_EQ(c.targets, std::vector<std::string>{"jpeg:50"});
  EXPECT_EQ(c.substitute_qualities, (std::vector<int>{10, 30, 50, 70, 90}));
  EXPECT_THROW(LoadExperimentConfig(p.parent_path() / "missing.json"), Error);
}

TEST(Corpus, SyntheticIdsAndLimit) {
  CorpusConfig cc;
  cc.synthetic_count = 5;
  cc.synthetic_seed = 9;
  cc.width = 32;
  cc.height = 24;
  cc.limit = 3;
  const Corpus c = LoadCorpus(cc);
  ASSERT_EQ(c.images.size(), 3u);
  EXPECT_EQ(c.ids[2], "synth-9-2");
  const fs::path dir = TempDir("corpus");
  Save(SyntheticImage(1, 37, 20), dir / "b.png");
  Save(SyntheticImage(2, 16, 16), dir / "a.ppm");
  CorpusConfig real;
  real.dir = dir.string();
  const Corpus r = LoadCorpus(real);
  ASSERT_EQ(r.ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.images[1].width, 32u);
  EXPECT_EQ(r.images[1].height, 16u);
}

// Small end-to-end run shared by the transfer tests.
class TransferTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new ExperimentConfig();
    config_->train_corpus = {"", 2, 5, 128, 128, 0};
    config_->eval_corpus = {"", 3, 6, 32, 32, 0};
    config_->train.epochs = 2;
    config_->train.patches = 16;
    config_->train.patch_size = 64;
    config_->train.learning_rate = 1e-2;
    config_->substitute_qualities = {30, 50};
    config_->targets = {"jpeg:30", "jpeg:50", "dctnet:50"};
    config_->attack.max_iterations = 6;
    config_->checkpoint_dir = TempDir("checkpoints").string();
    subs_ = new std::vector<TrainedSubstitute>(
        PrepareSubstitutes(*config_, LoadCorpus(config_->train_corpus)));
  }
  static void TearDownTestSuite() {
    delete subs_;
    delete config_;
  }

  static TransferResult Run(std::size_t workers, const fs::path& dir) {
    ExperimentConfig c = *config_;
    c.workers = workers;
    const TransferResult r = TransferExperiment(
        *subs_, c.targets, LoadCorpus(c.eval_corpus), c, {dir / "images"});
    WriteTransferReports(r, dir);
    return r;
  }

  static ExperimentConfig* config_;
  static std::vector<TrainedSubstitute>* subs_;
};

ExperimentConfig* TransferTest::config_ = nullptr;
std::vector<TrainedSubstitute>* TransferTest::subs_ = nullptr;

TEST_F(TransferTest, CheckpointsAreReused) {
  std::vector<std::string> lines;
  const auto again = PrepareSubstitutes(*config_, LoadCorpus(config_->train_corpus),
                                        [&](const std::string& s) { lines.push_back(s); });
  ASSERT_EQ(again.size(), 2u);
  EXPECT_EQ(again[1].net.density(), (*subs_)[1].net.density());
  for (const std::string& s : lines) EXPECT_EQ(s.rfind("loaded", 0), 0u) << s;
}

TEST_F(TransferTest, ReportsAreIdenticalAcrossWorkerCounts) {
  const fs::path a = TempDir("run_a"), b = TempDir("run_b");
  const TransferResult ra = Run(1, a);
  Run(3, b);
  for (const char* f : {"matrix.csv", "records.csv", "noise.csv", "noise_row.csv",
                        "attacks.csv", "report.json", "plot_bpp.csv",
                        "plot_psnr.csv", "images/manifest.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(Slurp(a / f), Slurp(b / f)) << f;
  }

  const TransferMatrix& m = ra.matrix;
  EXPECT_EQ(m.rows, (std::vector<std::string>{"dctnet-q30", "dctnet-q50"}));
  EXPECT_EQ(m.columns, config_->targets);
  EXPECT_EQ(m.noise.size(), 3u);
  EXPECT_EQ(ra.records.size(), 2u * 3u * 3u);
  EXPECT_EQ(ra.noise_records.size(), 3u * 3u);
  // Cells are the mean of the per-image ratios.
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      double sum = 0.0;
      int n = 0;
      for (const EvalRecord& e : ra.records) {
        if (e.source == m.rows[r] && e.target == m.columns[c] && e.error.empty()) {
          EXPECT_DOUBLE_EQ(e.bpp_change, e.adversarial_bpp / e.original_bpp);
          sum += e.bpp_change;
          ++n;
        }
      }
      ASSERT_EQ(n, 3);
      EXPECT_DOUBLE_EQ(m.cells[r][c], sum / n);
      EXPECT_GE(m.cells[r][c], 0.0);
    }
  }

  for (const std::string plot : {"plot_bpp.csv", "plot_psnr.csv"}) {
    const auto rows = Rows(a / plot);
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      ASSERT_EQ(rows[r].size(), 4u);
      for (std::size_t k = 1; k < 4; ++k) EXPECT_TRUE(std::isfinite(std::stod(rows[r][k])));
    }
  }
}

TEST_F(TransferTest, PersistedImagesSatisfyTheBudget) {
  const fs::path dir = TempDir("audit");
  Run(2, dir);
  const auto rows = Rows(dir / "images" / "manifest.csv");
  ASSERT_EQ(rows.size(), 1u + 3u * 3u);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const Image adv = Load(dir / "images" / rows[r][0]);
    const Image orig = Load(dir / "images" / rows[r][1]);
    const double eps = std::stod(rows[r][5]);
    EXPECT_TRUE(WithinBudgetBytes(ToBytes(orig), ToBytes(adv), eps)) << rows[r][0];
  }
}

}  // namespace
}  // namespace rateattack
