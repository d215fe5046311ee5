#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "mdae/binio.hpp"
#include "mdae/volume.hpp"

// End-to-end checks of the command-line surface. The binary path comes from
// the MDAE_CLI environment variable set by CMake.

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("MDAE_CLI");
  if (!p) throw std::runtime_error("MDAE_CLI not set");
  return p;
}

int run(const std::string& args, const std::string& log) {
  const std::string cmd = cli() + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  return mdae::detail::read_file(path);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() /
           ("mdae_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string at(const std::string& name) {
    return (dir_ / name).string();
  }
  static fs::path dir_;
};

fs::path CliPipeline::dir_;

}  // namespace

TEST_F(CliPipeline, A_SynthIsDeterministicPerSeed) {
  ASSERT_EQ(run("synth --out " + at("data") + " --count 5 --size 32 "
                "--slices 4 --seed 3",
                at("synth.log")),
            0);
  ASSERT_EQ(run("synth --out " + at("data2") + " --count 5 --size 32 "
                "--slices 4 --seed 3",
                at("synth2.log")),
            0);
  EXPECT_EQ(slurp(at("data/s00_lf.mvol")), slurp(at("data2/s00_lf.mvol")));
  EXPECT_EQ(slurp(at("data/manifest.json")), slurp(at("data2/manifest.json")));
  const auto entries = mdae::read_manifest(at("data/manifest.json"));
  EXPECT_EQ(entries.size(), 5u);
}

TEST_F(CliPipeline, B_TrainProducesArtifacts) {
  std::ofstream(at("cfg.json")) << R"({
    "dataset": ")" << at("data/manifest.json") << R"(",
    "out": ")" << at("run") << R"(",
    "seed": 5, "epochs": 2, "batch_size": 4,
    "decoders": 2, "channels": [2, 4, 8], "bottleneck": 16,
    "split_train": 3, "split_val": 1, "split_test": 1
  })";
  ASSERT_EQ(run("train --config " + at("cfg.json"), at("train.log")), 0);
  EXPECT_TRUE(fs::exists(at("run/checkpoint.mdae")));
  EXPECT_TRUE(fs::exists(at("run/history.csv")));
  EXPECT_TRUE(fs::exists(at("run/summary.json")));
  const auto csv = slurp(at("run/history.csv"));
  EXPECT_NE(csv.find("epoch,lr,loss_d0,loss_d1,sel_d0,sel_d1,val_psnr"),
            std::string::npos);
}

TEST_F(CliPipeline, C_UnknownConfigKeyExitsTwo) {
  std::ofstream(at("bad.json")) << R"({"dataset": "x", "learning_rate": 1})";
  EXPECT_EQ(run("train --config " + at("bad.json"), at("bad.log")), 2);
  const auto log = slurp(at("bad.log"));
  EXPECT_NE(log.find("learning_rate"), std::string::npos);
}

TEST_F(CliPipeline, D_ReconstructIsDeterministicAndShapePreserving) {
  ASSERT_EQ(run("reconstruct --checkpoint " + at("run/checkpoint.mdae") +
                    " --input " + at("data/manifest.json") + " --out " +
                    at("pred") + " --dump-pgm",
                at("rec.log")),
            0);
  ASSERT_EQ(run("reconstruct --checkpoint " + at("run/checkpoint.mdae") +
                    " --input " + at("data/manifest.json") + " --out " +
                    at("pred2"),
                at("rec2.log")),
            0);
  EXPECT_EQ(slurp(at("pred/s00_pred.mvol")), slurp(at("pred2/s00_pred.mvol")));

  const auto pred = mdae::load_volume(at("pred/s00_pred.mvol"));
  const auto truth = mdae::load_volume(at("data/s00_hf.mvol"));
  ASSERT_EQ(pred.size(), truth.size());
  EXPECT_TRUE(pred[0].same_dims(truth[0]));
  EXPECT_TRUE(fs::exists(at("pred/s00_pgm/slice_0000.pgm")));
}

TEST_F(CliPipeline, E_EvaluateWritesReports) {
  // dice needs prediction-side label maps; reuse the truth labels (dice 1.0)
  for (const auto& e : mdae::read_manifest(at("data/manifest.json")))
    fs::copy_file(at("data/" + e.labels_path),
                  at("pred/" + e.id + "_labels.mvol"),
                  fs::copy_options::overwrite_existing);
  ASSERT_EQ(run("evaluate --pred " + at("pred") + " --truth " +
                    at("data/manifest.json") + " --labels",
                at("eval.log")),
            0);
  ASSERT_TRUE(fs::exists(at("pred/evaluation_summary.json")));
  const auto summary = slurp(at("pred/evaluation_summary.json"));
  EXPECT_NE(summary.find("\"psnr\""), std::string::npos);
  EXPECT_NE(summary.find("\"dice\""), std::string::npos);
  // identical label volumes give dice 1.0 for every class
  EXPECT_NE(summary.find("\"mean\": 1.0"), std::string::npos);

  // perfect predictions: evaluating truth against itself reports inf PSNR
  fs::create_directories(at("perfect"));
  for (const auto& e : mdae::read_manifest(at("data/manifest.json"))) {
    auto hf = mdae::load_volume(at("data/" + e.hf_path));
    mdae::normalize_01(hf);
    mdae::save_volume(at("perfect/" + e.id + "_pred.mvol"), hf);
  }
  ASSERT_EQ(run("evaluate --pred " + at("perfect") + " --truth " +
                    at("data/manifest.json"),
                at("eval2.log")),
            0);
  EXPECT_NE(slurp(at("perfect/evaluation_summary.json")).find("\"inf\""),
            std::string::npos);
}

TEST_F(CliPipeline, F_EvaluateMissingPredictionsExitTwoListsIds) {
  fs::create_directories(at("empty_pred"));
  EXPECT_EQ(run("evaluate --pred " + at("empty_pred") + " --truth " +
                    at("data/manifest.json"),
                at("eval3.log")),
            2);
  const auto log = slurp(at("eval3.log"));
  EXPECT_NE(log.find("s00"), std::string::npos);
  EXPECT_NE(log.find("s04"), std::string::npos);
}

TEST_F(CliPipeline, G_MacsScalingLawAndSingleConv) {
  ASSERT_EQ(run("macs --conv 1:1:3:8", at("macs1.log")), 0);
  EXPECT_NE(slurp(at("macs1.log")).find("576"), std::string::npos);

  ASSERT_EQ(run("macs --size 32 --channels 2 4 8 --bottleneck 16",
                at("macs2.log")),
            0);
  ASSERT_EQ(run("macs --size 64 --channels 2 4 8 --bottleneck 16",
                at("macs3.log")),
            0);
  auto total = [](const std::string& log) {
    const auto text = slurp(log);
    const auto pos = text.find("total (per sample)");
    return std::stoll(text.substr(pos + 18));
  };
  EXPECT_EQ(total(at("macs3.log")), 4 * total(at("macs2.log")));
}

TEST_F(CliPipeline, H_ImportPgmStacks) {
  fs::create_directories(at("pgm_lf"));
  fs::create_directories(at("pgm_hf"));
  mdae::Image2 img(16, 16, 0.25f);
  for (int z = 0; z < 3; ++z) {
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%02d.pgm", z);
    mdae::write_pgm8(at("pgm_lf/" + std::string(name)), img);
    mdae::write_pgm8(at("pgm_hf/" + std::string(name)), img);
  }
  ASSERT_EQ(run("import --out " + at("imported") + " --id subj --lf-dir " +
                    at("pgm_lf") + " --hf-dir " + at("pgm_hf"),
                at("import.log")),
            0);
  const auto entries = mdae::read_manifest(at("imported/manifest.json"));
  ASSERT_EQ(entries.size(), 1u);
  const auto vol = mdae::load_volume(at("imported/subj_lf.mvol"));
  EXPECT_EQ(vol.size(), 3u);
  EXPECT_EQ(vol[0].h, 16);
}

TEST_F(CliPipeline, I_GradcheckPasses) {
  EXPECT_EQ(run("gradcheck", at("gc.log")), 0);
  EXPECT_NE(slurp(at("gc.log")).find("PASS"), std::string::npos);
  EXPECT_EQ(slurp(at("gc.log")).find("FAIL"), std::string::npos);
}
