/* Copyright 2026 The adabit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adabit/datapipe.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = 0;
  std::string output;
};

// Runs the CLI with stderr folded into stdout.
Outcome run(const std::string& args) {
  const std::string cmd = std::string(ADABIT_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {-1, "popen failed"};
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) o.output += buf.data();
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

constexpr const char* kTinyConfig =
    "[net]\nnum_blocks = 1\nchannels = 4\n"
    "[pretrain]\nsteps = 5\nbatch = 2\nhr_patch = 16\n"
    "[data]\npool_size = 6\nlr_size = 16\ncalib_count = 4\npatch = 16\neval_patch = 16\n"
    "test_count = 3\ntest_size = 32\n"
    "[calib]\nbatch = 4\n"
    "[finetune]\nepochs = 1\n";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "adabit_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.ini") << kTinyConfig;
    pretrain_ = run("pretrain --config " + (dir_ / "tiny.ini").string() + " --out " + (dir_ / "run").string());
  }
  static std::string common() {
    return " --config " + (dir_ / "tiny.ini").string() + " --out " + (dir_ / "run").string();
  }
  static inline fs::path dir_;
  static inline Outcome pretrain_;
};

TEST_F(Cli, VersionAndHelp) {
  const auto v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find("0.1.0"), std::string::npos);
  EXPECT_NE(run("").code, 0);
}

TEST_F(Cli, ConfigErrorsListEveryKeyOnOneLine) {
  std::ofstream(dir_ / "bad.ini") << "[net]\nchannels = x\n[finetune]\nepochs = -1\nwhat = 1\n";
  const auto o = run("pretrain --config " + (dir_ / "bad.ini").string() + " --out " + (dir_ / "bad").string());
  EXPECT_NE(o.code, 0);
  ASSERT_EQ(std::count(o.output.begin(), o.output.end(), '\n'), 1) << o.output;
  EXPECT_EQ(o.output.rfind("error: config: ", 0), 0u) << o.output;
  for (const char* key : {"net.channels", "finetune.epochs", "finetune.what"}) {
    EXPECT_NE(o.output.find(key), std::string::npos) << key;
  }
}

TEST_F(Cli, MissingCheckpointIsAnIoError) {
  const auto o = run("eval" + common() + " --checkpoint " + (dir_ / "nope.adbm").string());
  EXPECT_NE(o.code, 0);
  EXPECT_EQ(o.output.rfind("error: ", 0), 0u) << o.output;
}

TEST_F(Cli, PretrainWritesCheckpointAndManifest) {
  ASSERT_EQ(pretrain_.code, 0) << pretrain_.output;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "fp.adbm"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "pretrain_loss.csv"));
  const std::string manifest = slurp(dir_ / "run" / "manifest_pretrain.json");
  EXPECT_NE(manifest.find("\"version\""), std::string::npos);
  EXPECT_NE(manifest.find("\"seed\""), std::string::npos);
  EXPECT_NE(manifest.find("[net]"), std::string::npos);
}

TEST_F(Cli, MinMaxModeHasNoBitMapping) {
  ASSERT_EQ(pretrain_.code, 0);
  const fs::path out = dir_ / "minmax";
  fs::create_directories(out);
  fs::copy_file(dir_ / "run" / "fp.adbm", out / "fp.adbm", fs::copy_options::overwrite_existing);
  const std::string args = " --config " + (dir_ / "tiny.ini").string() + " --out " + out.string();
  const auto q = run("quantize --mode minmax" + args);
  ASSERT_EQ(q.code, 0) << q.output;
  EXPECT_NE(q.output.find("0 iterations"), std::string::npos) << q.output;
  const auto e = run("eval" + args);
  ASSERT_EQ(e.code, 0) << e.output;
  const auto rows = read_csv(out / "eval.csv");
  ASSERT_GE(rows.size(), 3u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_DOUBLE_EQ(std::stod(rows[i][2]), 0.0);
    EXPECT_DOUBLE_EQ(std::stod(rows[i][3]), 4.0);
  }
}

TEST_F(Cli, QuantizeEvalInferDiagnose) {
  ASSERT_EQ(pretrain_.code, 0);
  const auto q = run("quantize" + common());
  ASSERT_EQ(q.code, 0) << q.output;
  EXPECT_NE(q.output.find("init phase"), std::string::npos);
  EXPECT_NE(q.output.find("finetune phase"), std::string::npos);
  EXPECT_NE(q.output.find("FAB"), std::string::npos);
  for (const char* f : {"quant.adbm", "calibration.csv", "finetune_epochs.csv", "finetune_log.jsonl",
                        "manifest_quantize.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }

  // Two identical HR images must give identical rows.
  const fs::path images = dir_ / "images";
  fs::create_directories(images);
  const adabit::Tensor img = adabit::synth_pool(1, 40, 36, 5).front();
  adabit::save_png(img, images / "a.png");
  adabit::save_png(img, images / "b.png");
  const auto e = run("eval" + common() + " --images " + images.string());
  ASSERT_EQ(e.code, 0) << e.output;
  const auto rows = read_csv(dir_ / "run" / "eval.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"image", "complexity", "b_I", "FAB", "PSNR", "SSIM"}));
  EXPECT_EQ(rows[1][0], "a.png");
  EXPECT_EQ(rows[3][0], "mean");
  EXPECT_EQ(std::vector<std::string>(rows[1].begin() + 1, rows[1].end()),
            std::vector<std::string>(rows[2].begin() + 1, rows[2].end()));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 6u);
    for (std::size_t c = 1; c < 6; ++c) EXPECT_NO_THROW((void)std::stod(rows[i][c]));
  }

  const fs::path lr = dir_ / "lr.png";
  adabit::save_png(adabit::box_downsample(img, 2), lr);
  const auto i = run("infer" + common() + " --input " + lr.string() + " --output " + (dir_ / "sr.png").string());
  ASSERT_EQ(i.code, 0) << i.output;
  EXPECT_EQ(adabit::load_png(dir_ / "sr.png").shape(), (adabit::Shape{1, 3, 40, 36}));

  const auto d = run("diagnose" + common() + " --resamples 5");
  ASSERT_EQ(d.code, 0) << d.output;
  const std::string sep = slurp(dir_ / "run" / "separability.csv");
  EXPECT_NE(sep.find("# mean_image_similarity"), std::string::npos);
  EXPECT_NE(sep.find("# shuffle_control"), std::string::npos);
}

TEST_F(Cli, SeedFlagOverridesConfig) {
  ASSERT_EQ(pretrain_.code, 0);
  const fs::path out = dir_ / "seeded";
  const auto o = run("pretrain --seed 3 --config " + (dir_ / "tiny.ini").string() + " --out " + out.string());
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_NE(slurp(out / "manifest_pretrain.json").find("\"seed\": 3"), std::string::npos);
  EXPECT_NE(slurp(out / "fp.adbm"), slurp(dir_ / "run" / "fp.adbm"));
}

}  // namespace
