#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "commands.hpp"
#include "modwatch/checkpoint.hpp"
#include "modwatch/error.hpp"
#include "modwatch/evaluation.hpp"
#include "modwatch/hash.hpp"
#include "modwatch/pipeline.hpp"
#include "modwatch/training.hpp"
#include "modwatch/waveform.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using modwatch::ConfigError;
using modwatch::cli::RunConfig;
using modwatch::cli::run_cli;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch_root() { return fs::temp_directory_path() / ("modwatch_cli_" + std::to_string(::getpid())); }

struct RemoveScratch : ::testing::Environment {
  void TearDown() override { fs::remove_all(scratch_root()); }
};
[[maybe_unused]] auto* const remove_scratch = ::testing::AddGlobalTestEnvironment(new RemoveScratch);

fs::path scratch(const std::string& name) {
  const auto p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> tiny_model = {"--kernels", "4", "--latent-dim", "4", "--dense-units", "16",
                                             "--set", "model.decoder_dense_units=16"};
const std::vector<std::string> tiny_train = {"--epochs", "3", "--batch-size", "8"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// One dataset and one trained cvae shared by the command tests.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch("shared");
    data_ = root_ / "gen" / "dataset.mwts";
    auto r = cli({"generate", "--out", (root_ / "gen").string(), "--modules", "3", "--samples-per-module", "40",
                  "--faults", "12", "--time-steps", "64", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli(join(join({"train", "--data", data_.string(), "--out", (root_ / "cvae").string(), "--seed", "3"},
                      tiny_model),
                 tiny_train));
    ASSERT_EQ(r.code, 0) << r.err;
    model_ = root_ / "cvae" / "cvae.mwck";
  }

  static fs::path root_, data_, model_;
};

fs::path CliFixture::root_, CliFixture::data_, CliFixture::model_;

}  // namespace

// ---- config ------------------------------------------------------------------

TEST(RunConfigTest, UnknownKeyIsConfigError) {
  RunConfig c;
  EXPECT_THROW(c.set("model.width", "3"), ConfigError);
  EXPECT_THROW(c.get("nope.key"), ConfigError);
}

TEST(RunConfigTest, FileThenSetThenExplicit) {
  const auto dir = scratch("precedence");
  {
    std::ofstream os(dir / "run.ini");
    os << "[generate]\nmodules = 2\nfaults = 9\n";
  }
  RunConfig c;
  c.load_file(dir / "run.ini");
  c.set("generate.modules", "5");
  c.resolve();
  EXPECT_EQ(c.get_size("generate.modules"), 5u);
  EXPECT_EQ(c.get_size("generate.faults"), 9u);
  EXPECT_EQ(c.get_size("generate.samples_per_module"), 40u);
}

TEST(RunConfigTest, BadIniIsConfigError) {
  const auto dir = scratch("badini");
  {
    std::ofstream os(dir / "run.ini");
    os << "[generate]\nwidth = 2\n";
  }
  RunConfig c;
  EXPECT_THROW(c.load_file(dir / "run.ini"), ConfigError);
}

TEST(RunConfigTest, SeedFallsBackToEnvironment) {
  ::setenv("MODWATCH_SEED", "77", 1);
  RunConfig a;
  a.resolve();
  EXPECT_EQ(a.get_u64("run.seed"), 77u);
  RunConfig b;
  b.set("run.seed", "5");
  b.resolve();
  EXPECT_EQ(b.get_u64("run.seed"), 5u);
  ::unsetenv("MODWATCH_SEED");
  RunConfig d;
  d.resolve();
  EXPECT_EQ(d.get_u64("run.seed"), 1u);
}

TEST(RunConfigTest, FullScalePresetKeepsExplicitKeys) {
  RunConfig c;
  c.set("run.scale", "paper");
  c.set("model.kernels", "8");
  c.resolve();
  EXPECT_EQ(c.get_size("model.kernels"), 8u);
  EXPECT_EQ(c.get_size("model.latent_dim"), 512u);
  EXPECT_EQ(c.get_size("generate.time_steps"), 4500u);
  EXPECT_DOUBLE_EQ(c.get_double("train.learning_rate"), 1e-5);
}

TEST(RunConfigTest, NumberForms) {
  RunConfig c;
  c.set("generate.fault_mix", "1/6 0.5 0 0 inf 1/3");
  const auto v = c.get_doubles("generate.fault_mix");
  ASSERT_EQ(v.size(), 6u);
  EXPECT_DOUBLE_EQ(v[0], 1.0 / 6.0);
  EXPECT_TRUE(std::isinf(v[4]));
  c.set("generate.noise_sd", "abc");
  EXPECT_THROW(c.get_double("generate.noise_sd"), ConfigError);
  c.set("generate.modules", "-1");
  EXPECT_THROW(c.get_size("generate.modules"), ConfigError);
}

TEST(RunConfigTest, WriteRoundTrips) {
  const auto dir = scratch("roundtrip");
  RunConfig c;
  c.set("train.eta", "0.25");
  c.set("landscape.depths", "3 5");
  c.write(dir / "out.ini");
  RunConfig d;
  d.load_file(dir / "out.ini");
  EXPECT_EQ(c.flat(), d.flat());
}

// ---- generate ------------------------------------------------------------------

TEST(CliGenerate, DefaultsGiveFifteenModulesOfFourteenChannels) {
  const auto dir = scratch("gen_default");
  const auto r = cli({"generate", "--out", dir.string(), "--samples-per-module", "2", "--faults", "0",
                      "--time-steps", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ds = modwatch::data::load_waveforms(dir / "dataset.mwts");
  EXPECT_EQ(ds.channels(), 14u);
  EXPECT_EQ(ds.time_steps(), 32u);
  std::vector<std::uint32_t> mods(ds.module_ids.begin(), ds.module_ids.end());
  std::sort(mods.begin(), mods.end());
  mods.erase(std::unique(mods.begin(), mods.end()), mods.end());
  EXPECT_EQ(mods.size(), 15u);
  EXPECT_TRUE(fs::exists(dir / "dataset.csv"));
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
}

TEST(CliGenerate, SameSeedSameBytes) {
  const auto a = scratch("gen_a"), b = scratch("gen_b"), c = scratch("gen_c");
  const std::vector<std::string> common = {"--modules", "2", "--samples-per-module", "5", "--faults", "4",
                                           "--time-steps", "32"};
  ASSERT_EQ(cli(join({"generate", "--out", a.string(), "--seed", "7"}, common)).code, 0);
  ASSERT_EQ(cli(join({"generate", "--out", b.string(), "--seed", "7"}, common)).code, 0);
  ASSERT_EQ(cli(join({"generate", "--out", c.string(), "--seed", "8"}, common)).code, 0);
  EXPECT_EQ(modwatch::git_blob_sha1_file(a / "dataset.mwts"), modwatch::git_blob_sha1_file(b / "dataset.mwts"));
  EXPECT_NE(modwatch::git_blob_sha1_file(a / "dataset.mwts"), modwatch::git_blob_sha1_file(c / "dataset.mwts"));
}

TEST(CliGenerate, MetadataRowsMatchCounts) {
  const auto dir = scratch("gen_counts");
  ASSERT_EQ(cli({"generate", "--out", dir.string(), "--modules", "2", "--samples-per-module", "5", "--faults", "6",
                 "--time-steps", "32"})
                .code,
            0);
  EXPECT_EQ(lines(dir / "dataset.csv").size(), 1u + 10u + 6u);
}

TEST(CliGenerate, FlagBeatsSetBeatsConfigFile) {
  const auto dir = scratch("gen_prec");
  {
    std::ofstream os(dir / "in.ini");
    os << "[generate]\nmodules = 2\nsamples_per_module = 3\nfaults = 0\ntime_steps = 32\n";
  }
  const auto r = cli({"generate", "--out", (dir / "o").string(), "--config", (dir / "in.ini").string(), "--set",
                      "generate.modules=3", "generate.samples_per_module=4", "--modules", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  RunConfig written;
  written.load_file(dir / "o" / "config.ini");
  EXPECT_EQ(written.get_size("generate.modules"), 4u);
  EXPECT_EQ(written.get_size("generate.samples_per_module"), 4u);
  EXPECT_EQ(lines(dir / "o" / "dataset.csv").size(), 1u + 16u);
}

// ---- exit codes -------------------------------------------------------------------

TEST(CliExit, ParseAndConfigErrorsAreTwo) {
  const auto dir = scratch("exit2");
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"bogus"}).code, 2);
  EXPECT_EQ(cli({"generate"}).code, 2);  // --out missing
  EXPECT_EQ(cli({"generate", "--out", dir.string(), "--set", "generate.width=3"}).code, 2);
  EXPECT_EQ(cli({"generate", "--out", dir.string(), "--set", "novalue"}).code, 2);
  EXPECT_EQ(cli({"generate", "--out", dir.string(), "--modules", "0"}).code, 2);
  EXPECT_EQ(cli({"generate", "--out", dir.string(), "--scale", "huge"}).code, 2);
}

TEST(CliExit, CorruptDatasetIsFour) {
  const auto dir = scratch("exit4");
  {
    std::ofstream os(dir / "bad.mwts", std::ios::binary);
    os << "MWTS-not-really";
  }
  const auto r = cli({"train", "--data", (dir / "bad.mwts").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(CliExit, IndivisibleTimeAxisIsFive) {
  const auto dir = scratch("exit5");
  ASSERT_EQ(cli({"generate", "--out", dir.string(), "--modules", "1", "--samples-per-module", "20", "--faults", "0",
                 "--time-steps", "60"})
                .code,
            0);
  const auto r = cli(join({"train", "--data", (dir / "dataset.mwts").string(), "--out", (dir / "o").string(),
                           "--strided-blocks", "3", "--epochs", "1"},
                          tiny_model));
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST(CliExit, FullScaleReproduceNeedsForce) {
  const auto dir = scratch("exit_full");
  const auto r = cli({"reproduce", "--paper-experiment", "figs", "--scale", "paper", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "data"));
  EXPECT_EQ(cli({"reproduce", "--paper-experiment", "fig99", "--out", dir.string()}).code, 2);
}

// ---- train ---------------------------------------------------------------------------

TEST_F(CliFixture, CvaeWritesOneCheckpointAndLog) {
  const auto dir = root_ / "cvae";
  std::size_t checkpoints = 0;
  for (const auto& e : fs::directory_iterator(dir)) checkpoints += e.path().extension() == ".mwck";
  EXPECT_EQ(checkpoints, 1u);
  const auto log = lines(dir / "trainlog.csv");
  EXPECT_EQ(log.size(), 1u + 3u);
  const auto manifest = modwatch::train::read_manifest(dir / "manifest.txt");
  EXPECT_EQ(manifest.at("checkpoint.cvae.sha1"), modwatch::git_blob_sha1_file(model_));
  EXPECT_EQ(manifest.at("mode"), "cvae");
  EXPECT_EQ(manifest.at("data.sha1"), modwatch::git_blob_sha1_file(data_));
}

TEST_F(CliFixture, RerunGivesIdenticalLosses) {
  const auto dir = scratch("train_rerun");
  const auto r = cli(join(join({"train", "--data", data_.string(), "--out", dir.string(), "--seed", "3"}, tiny_model),
                          tiny_train));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = modwatch::train::read_manifest(root_ / "cvae" / "manifest.txt");
  const auto b = modwatch::train::read_manifest(dir / "manifest.txt");
  EXPECT_EQ(a.at("checkpoint.cvae.final_train_total"), b.at("checkpoint.cvae.final_train_total"));
  EXPECT_EQ(a.at("checkpoint.cvae.final_val_total"), b.at("checkpoint.cvae.final_val_total"));
  EXPECT_EQ(slurp(model_), slurp(dir / "cvae.mwck"));
}

TEST_F(CliFixture, VaeSuiteWritesOneCheckpointPerModule) {
  const auto dir = scratch("train_vae");
  const auto r = cli(join(join({"train", "--data", data_.string(), "--out", dir.string(), "--mode", "vae", "--jobs",
                                "2", "--seed", "3"},
                               tiny_model),
                          tiny_train));
  ASSERT_EQ(r.code, 0) << r.err;
  for (int m = 0; m < 3; ++m) {
    EXPECT_TRUE(fs::exists(dir / ("vae_module" + std::to_string(m) + ".mwck"))) << m;
    EXPECT_TRUE(fs::exists(dir / ("trainlog_module" + std::to_string(m) + ".csv"))) << m;
  }
  EXPECT_FALSE(fs::exists(dir / "vae_module3.mwck"));

  const auto one = scratch("train_vae_one");
  ASSERT_EQ(cli(join(join({"train", "--data", data_.string(), "--out", one.string(), "--mode", "vae", "--module",
                           "1", "--seed", "3"},
                          tiny_model),
                     tiny_train))
                .code,
            0);
  EXPECT_TRUE(fs::exists(one / "vae_module1.mwck"));
  EXPECT_FALSE(fs::exists(one / "vae_module0.mwck"));
  // A single module trained alone matches its suite counterpart.
  EXPECT_EQ(slurp(one / "vae_module1.mwck"), slurp(dir / "vae_module1.mwck"));

  EXPECT_EQ(cli(join({"train", "--data", data_.string(), "--out", one.string(), "--mode", "vae", "--module", "9"},
                     tiny_model))
                .code,
            4);
  EXPECT_EQ(cli({"train", "--data", data_.string(), "--out", one.string(), "--module", "1"}).code, 2);
}

// ---- eval ------------------------------------------------------------------------------

TEST_F(CliFixture, FullBudgetThresholdIsMinimumCalibrationScore) {
  const auto dir = scratch("eval_budget");
  const auto r = cli({"eval", "--data", data_.string(), "--model", model_.string(), "--out", dir.string(),
                      "--fpr-budget", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(dir / "multi" / "threshold.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "method,source,fpr_budget,threshold,calibration_fpr,eval_fpr,eval_tpr");
  const auto f = fields(rows[1]);
  ASSERT_EQ(f.size(), 7u);
  EXPECT_EQ(f[1], "validation");
  EXPECT_DOUBLE_EQ(std::stod(f[4]), 1.0);

  // Oracle: rebuild the validation normals and score them directly.
  namespace data = modwatch::data;
  const auto ck = modwatch::model::load_checkpoint(model_);
  const data::SplitFractions fr{std::stod(ck.metadata.at("split.train")),
                                std::stod(ck.metadata.at("split.validation")),
                                std::stod(ck.metadata.at("split.test"))};
  const auto p = modwatch::pipeline::prepare(data::load_waveforms(data_), fr,
                                             std::stoull(ck.metadata.at("split.seed")));
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < p.validation.size(); ++i) {
    if (p.validation.labels[i].is_normal()) normals.push_back(i);
  }
  ASSERT_GE(normals.size(), 10u);
  const auto det = modwatch::eval::Detector::conditional(ck.spec, ck.params);
  const auto scores = modwatch::eval::score(det, p.validation.subset(normals), {});
  double lo = scores.front().aggregate;
  for (const auto& s : scores) lo = std::min(lo, s.aggregate);
  EXPECT_DOUBLE_EQ(std::stod(f[3]), lo);
}

TEST_F(CliFixture, EvalWritesTablesForEveryClassAndModule) {
  const auto dir = scratch("eval_tables");
  const auto r = cli({"eval", "--data", data_.string(), "--model", model_.string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = lines(dir / "multi" / "auc_table.csv");
  ASSERT_FALSE(table.empty());
  EXPECT_EQ(table[0], "fault,module,auc,positives,negatives");
  EXPECT_EQ(table.size(), 1u + 6u * (3u + 1u));
  for (const auto* name : {"scores.csv", "boxstats.csv", "density.csv", "channel_auc.csv", "threshold.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "multi" / name)) << name;
  }
  EXPECT_FALSE(fs::exists(dir / "comparison.csv"));
  EXPECT_FALSE(fs::exists(dir / "single"));

  const auto again = scratch("eval_tables_again");
  ASSERT_EQ(cli({"eval", "--data", data_.string(), "--model", model_.string(), "--out", again.string()}).code, 0);
  EXPECT_EQ(slurp(dir / "multi" / "scores.csv"), slurp(again / "multi" / "scores.csv"));
}

TEST_F(CliFixture, EvalRejectsForeignDataset) {
  const auto dir = scratch("eval_foreign");
  ASSERT_EQ(cli({"generate", "--out", dir.string(), "--modules", "3", "--samples-per-module", "40", "--faults", "12",
                 "--time-steps", "64", "--seed", "4"})
                .code,
            0);
  const auto r = cli({"eval", "--data", (dir / "dataset.mwts").string(), "--model", model_.string(), "--out",
                      (dir / "o").string()});
  EXPECT_EQ(r.code, 4);
}

// ---- landscape -------------------------------------------------------------------------------

namespace {

std::pair<std::string, std::string> landscape_losses(const std::string& log) {
  const auto c = log.find("center loss ");
  const auto t = log.find(", training loss ");
  if (c == std::string::npos || t == std::string::npos) return {};
  const auto end = log.find('\n', t);
  return {log.substr(c + 12, t - c - 12), log.substr(t + 16, end - t - 16)};
}

}  // namespace

TEST_F(CliFixture, SinglePointLandscapeIsTheTrainingLoss) {
  const auto dir = scratch("ls_center");
  const auto r = cli({"landscape", "--data", data_.string(), "--model", model_.string(), "--out", dir.string(),
                      "--res", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto [center, training] = landscape_losses(r.out);
  ASSERT_FALSE(center.empty()) << r.out;
  EXPECT_EQ(center, training);
  EXPECT_FALSE(fs::exists(dir / "report.csv"));

  // Independent recomputation of the loss on the training split.
  const auto ck = modwatch::model::load_checkpoint(model_);
  const modwatch::data::SplitFractions fr{std::stod(ck.metadata.at("split.train")),
                                          std::stod(ck.metadata.at("split.validation")),
                                          std::stod(ck.metadata.at("split.test"))};
  const auto p = modwatch::pipeline::prepare(modwatch::data::load_waveforms(data_), fr,
                                             std::stoull(ck.metadata.at("split.seed")));
  const modwatch::model::Cvae model(ck.spec);
  const auto loss = modwatch::train::evaluate_loss(model, ck.params, p.train, 1.0, 7, std::nullopt);
  EXPECT_NEAR(std::stod(center), loss.total, 1e-6 * std::abs(loss.total));
}

TEST_F(CliFixture, LandscapeIsReproducibleAcrossJobs) {
  const auto a = scratch("ls_a"), b = scratch("ls_b");
  ASSERT_EQ(cli({"landscape", "--data", data_.string(), "--model", model_.string(), "--out", a.string(), "--res", "5",
                 "--max-samples", "20"})
                .code,
            0);
  ASSERT_EQ(cli({"landscape", "--data", data_.string(), "--model", model_.string(), "--out", b.string(), "--res", "5",
                 "--max-samples", "20", "--jobs", "3"})
                .code,
            0);
  EXPECT_EQ(slurp(a / "grid.csv"), slurp(b / "grid.csv"));
  EXPECT_EQ(lines(a / "grid.csv").size(), 1u + 5u);
  EXPECT_TRUE(fs::exists(a / "report.csv"));
  EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
}

TEST_F(CliFixture, DepthSweepReportsEveryDepth) {
  const auto dir = scratch("ls_sweep");
  const auto r = cli({"landscape", "--data", data_.string(), "--model", model_.string(), "--out", dir.string(),
                      "--depth-sweep", "--depths", "3 4", "--res", "5", "--max-samples", "16", "--set",
                      "train.epochs=1", "train.batch_size=8"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(dir / "report.csv").size(), 1u + 2u);
  for (const auto* d : {"3", "4"}) {
    EXPECT_TRUE(fs::exists(dir / (std::string("grid_depth") + d + ".csv"))) << d;
    EXPECT_TRUE(fs::exists(dir / (std::string("trainlog_depth") + d + ".csv"))) << d;
  }
  // Fewer blocks than stride-2 blocks cannot be built.
  const auto bad = cli({"landscape", "--data", data_.string(), "--model", model_.string(), "--out",
                        (dir / "bad").string(), "--depth-sweep", "--depths", "2", "--res", "3"});
  EXPECT_NE(bad.code, 0);
}

// ---- uq -------------------------------------------------------------------------------------

TEST_F(CliFixture, UqWritesTablesAndBands) {
  const auto dir = scratch("uq");
  const auto r = cli({"uq", "--data", data_.string(), "--model", model_.string(), "--out", dir.string(), "--draws",
                      "20", "--examples", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t bands = 0;
  for (const auto& e : fs::directory_iterator(dir)) bands += e.path().filename().string().rfind("bands_", 0) == 0;
  EXPECT_EQ(bands, 3u);
  for (int m = 0; m < 3; ++m) {
    const auto table = lines(dir / ("uq_" + std::to_string(m) + ".csv"));
    EXPECT_GE(table.size(), 1u + 14u) << m;
  }
  const auto again = scratch("uq_again");
  ASSERT_EQ(cli({"uq", "--data", data_.string(), "--model", model_.string(), "--out", again.string(), "--draws", "20",
                 "--examples", "2"})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "uq_0.csv"), slurp(again / "uq_0.csv"));
}
