// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <regex>

#include <gtest/gtest.h>

#include "ppmunet/bytes.hpp"
#include "ppmunet/nt4.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;  // stdout and stderr interleaved
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(PPMUNET_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, "popen failed"};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string digest(const std::string& out) {
  std::smatch m;
  return std::regex_search(out, m, std::regex("manifest digest ([0-9a-f]{16})")) ? m[1].str() : "";
}

class Cli : public ::testing::Test {
 protected:
  static inline fs::path root_;
  static inline std::string data_;

  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "ppmunet_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    data_ = (root_ / "data").string();
    const auto r = cli("synth --out " + data_ + " --patients 4 --scans 1 --bscans 3 --size 32 --seed 5 --split 2,1,1");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto t = cli("train --data " + data_ + " --variant unet-ppm --size 32 --depth 2 --base-channels 4 --epochs 1 " +
                       "--batch-size 2 --lr 1e-3 --out " + (root_ / "m.pun").string() + " --log " +
                       (root_ / "m.csv").string());
    ASSERT_EQ(t.code, 0) << t.out;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string at(const std::string& name) { return (root_ / name).string(); }
};

TEST_F(Cli, NoSubcommandIsAUsageError) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("bogus").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, SynthReportsCountsAndStableDigest) {
  const auto a = cli("synth --out " + at("s1") + " --patients 3 --scans 2 --bscans 2 --size 32 --seed 9 --split 1,1,1");
  const auto b = cli("synth --out " + at("s2") + " --patients 3 --scans 2 --bscans 2 --size 32 --seed 9 --split 1,1,1");
  const auto c = cli("synth --out " + at("s3") + " --patients 3 --scans 2 --bscans 2 --size 32 --seed 8 --split 1,1,1");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("wrote 12 B-scans for 3 patients"), std::string::npos) << a.out;
  EXPECT_FALSE(digest(a.out).empty());
  EXPECT_EQ(digest(a.out), digest(b.out));
  EXPECT_NE(digest(a.out), digest(c.out));
  EXPECT_EQ(ppmunet::read_file(at("s1") + "/manifest.json"), ppmunet::read_file(at("s2") + "/manifest.json"));
}

TEST_F(Cli, InvalidArgumentsExitWithOne) {
  EXPECT_EQ(cli("synth --out " + at("z") + " --patients 0").code, 1);
  EXPECT_EQ(cli("synth --out " + at("z") + " --split 0.5,0.1").code, 1);
  EXPECT_EQ(cli("synth --patients 2").code, 1);
  EXPECT_EQ(cli("train --data " + data_ + " --epochs 0").code, 1);
  EXPECT_EQ(cli("train --data " + data_ + " --variant resnet").code, 1);
  EXPECT_EQ(cli("train --data " + data_ + " --profile huge").code, 1);
  EXPECT_EQ(cli("eval --data " + data_ + " --checkpoint " + at("missing.pun")).code, 2);
  EXPECT_EQ(cli("eval --data " + at("nowhere") + " --oracle").code, 1);
}

TEST_F(Cli, DumpConfigShowsPrecedence) {
  ppmunet::write_file(at("cfg.json"), std::string_view(R"({"epochs": 7, "batch_size": 5, "seed": 3})"));
  const auto r = cli("train --profile desk --config " + at("cfg.json") + " --seed 11 --dump-config");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("\"epochs\": 7"), std::string::npos) << r.out;      // config over profile
  EXPECT_NE(r.out.find("\"batch_size\": 5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"seed\": 11"), std::string::npos) << r.out;       // flag over config
  EXPECT_NE(r.out.find("\"base_channels\": 8"), std::string::npos) << r.out;  // profile over default
}

TEST_F(Cli, GradcheckPassesAndCatchesInjectedError) {
  const auto ok = cli("gradcheck --op conv2d");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("conv2d_k3"), std::string::npos);
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const auto bad = cli("gradcheck --op conv2d_k3 --inject-sign-error conv2d_k3");
  EXPECT_EQ(bad.code, 3) << bad.out;
  EXPECT_NE(bad.out.find("gradcheck failed: conv2d_k3"), std::string::npos) << bad.out;
  EXPECT_EQ(cli("gradcheck --op nothing").code, 1);
}

TEST_F(Cli, EvalWritesCsvAndGuardsVariant) {
  const auto r = cli("eval --checkpoint " + at("m.pun") + " --data " + data_ + " --out " + at("metrics.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto csv = ppmunet::read_file(at("metrics.csv"));
  EXPECT_EQ(std::string(csv.begin(), csv.end()).rfind("patient,dice_drusen,mae_obrpe,mae_bm,degenerate_cols\n", 0), 0u);
  const auto again = cli("eval --checkpoint " + at("m.pun") + " --data " + data_ + " --out " + at("metrics2.csv"));
  EXPECT_EQ(ppmunet::read_file(at("metrics2.csv")), csv);
  const auto mismatch = cli("eval --checkpoint " + at("m.pun") + " --data " + data_ + " --variant unet-2c");
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.out.find("variant"), std::string::npos) << mismatch.out;
  const auto oracle = cli("eval --oracle --data " + data_ + " --out " + at("oracle.csv"));
  EXPECT_NE(oracle.out.find("MEAN,1.000000,0.000000,0.000000,0.000000"), std::string::npos) << oracle.out;
}

TEST_F(Cli, PredictIsRepeatableAndChecksSize) {
  const std::string input = data_ + "/scans/p000/0/bscan_0.nt4";
  ASSERT_EQ(cli("predict --checkpoint " + at("m.pun") + " --input " + input + " --out " + at("a")).code, 0);
  ASSERT_EQ(cli("predict --checkpoint " + at("m.pun") + " --input " + input + " --out " + at("b")).code, 0);
  for (const char* suffix : {"_mask.nt4", "_overlay.ppm", "_surfaces.csv"})
    EXPECT_EQ(ppmunet::read_file(at(std::string("a") + suffix)), ppmunet::read_file(at(std::string("b") + suffix)));
  EXPECT_EQ(ppmunet::read_nt4(at("a_mask.nt4")).dims, (std::vector<std::uint32_t>{32, 32}));

  ppmunet::Nt4Array wrong;
  wrong.dtype = ppmunet::Nt4Dtype::f32;
  wrong.dims = {1, 1, 16, 16};
  wrong.f32.assign(256, 0.5f);
  ppmunet::write_nt4(at("small.nt4"), wrong);
  const auto r = cli("predict --checkpoint " + at("m.pun") + " --input " + at("small.nt4") + " --out " + at("c"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--resize"), std::string::npos) << r.out;
  EXPECT_EQ(cli("predict --checkpoint " + at("m.pun") + " --input " + at("small.nt4") + " --out " + at("c") +
                " --resize").code,
            0);
  EXPECT_EQ(cli("predict --checkpoint " + at("m.pun") + " --input " + input + " --variant unet-3c").code, 1);
}

TEST_F(Cli, CorruptInputsAreFormatErrors) {
  ppmunet::write_file(at("junk.pun"), std::string_view("PUNX...."));
  const auto r = cli("eval --checkpoint " + at("junk.pun") + " --data " + data_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("magic"), std::string::npos) << r.out;
}

}  // namespace
