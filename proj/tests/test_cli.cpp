// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmface/config.hpp"
#include "mmface/evalkit.hpp"
#include "mmface/pgm.hpp"

#ifndef MMFACE_CLI
#error "MMFACE_CLI must name the mmface executable"
#endif

using namespace mmface;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const std::string cmd = std::string(MMFACE_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// A small run directory shared by the tests that need a checkpoint.
class CliRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "mmface_cli_run";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        RunConfig c = RunConfig::micro();
        c.iters = 20;
        c.T = 20;
        c.out_dir = (dir_ / "train").string();
        c.save(dir_ / "micro.ini");
        const auto r = cli("train --config " + (dir_ / "micro.ini").string() + " --quiet");
        ASSERT_EQ(r.code, 0) << r.out;
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }
    static fs::path ckpt() { return dir_ / "train" / "final"; }
    static inline fs::path dir_;
};

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(cli("").code, 1);
    EXPECT_EQ(cli("frobnicate").code, 1);
    EXPECT_EQ(cli("datagen --count 1").code, 1);  // --export is required
    EXPECT_EQ(cli("train --config /nonexistent.ini").code, 1);
    EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, MalformedConfigIsRejectedWithMessage) {
    const auto path = fs::temp_directory_path() / "mmface_cli_bad.ini";
    std::ofstream(path) << "[train]\nlearnin_rate = 0.1\n";
    const auto r = cli("train --config " + path.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("unknown config key [train] learnin_rate"), std::string::npos) << r.out;
    fs::remove(path);
}

TEST(Cli, DivergentTrainingExitsThree) {
    const auto dir = fs::temp_directory_path() / "mmface_cli_diverge";
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig c = RunConfig::micro();
    c.iters = 50;
    c.lr = 1e30;
    c.out_dir = (dir / "out").string();
    c.save(dir / "c.ini");
    const auto r = cli("train --config " + (dir / "c.ini").string() + " --quiet");
    EXPECT_EQ(r.code, 3) << r.out;
    EXPECT_NE(r.out.find("non-finite loss at iteration"), std::string::npos) << r.out;
    fs::remove_all(dir);
}

TEST(Cli, GradcheckPasses) {
    const auto r = cli("gradcheck");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("probes 64"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, OracleCheckPasses) {
    const auto csv = fs::temp_directory_path() / "mmface_cli_oracle.csv";
    const auto r = cli("oracle-check --csv " + csv.string());
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
    const auto rows = lines(csv);
    ASSERT_EQ(rows.size(), 7u);  // header, conditional, unconditional, 4 guided
    EXPECT_EQ(rows[0], "scenario,w,n,mean,std,frac_0,frac_1");
    fs::remove(csv);
}

TEST(Cli, DatagenExportsEveryModality) {
    const auto dir = fs::temp_directory_path() / "mmface_cli_datagen";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "c.ini") << "[data]\nseed = 40\n";
    const auto r = cli("datagen --config " + (dir / "c.ini").string() + " --count 3 --export " + (dir / "out").string());
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* sub : {"images", "masks", "sketches", "lowres"}) EXPECT_TRUE(fs::exists(dir / "out" / sub / "000002.pgm"));
    // Exports reproduce the generator for seeds 40, 41, 42.
    const auto p = sample_params(41);
    const auto cs = derive_conditions(p, 16);
    EXPECT_EQ(read_mask_pgm(dir / "out" / "masks" / "000001.pgm"), cs.payload(Modality::Mask));
    EXPECT_EQ(read_sketch_pgm(dir / "out" / "sketches" / "000001.pgm"), cs.payload(Modality::Sketch));
    EXPECT_EQ(read_attr_csv(dir / "out" / "attributes.csv", 1), cs.payload(Modality::Attr));
    EXPECT_EQ(read_pgm(dir / "out" / "lowres" / "000001.pgm").width, 4u);
    EXPECT_EQ(lines(dir / "out" / "attributes.csv").size(), 4u);
    EXPECT_EQ(RunConfig::load(dir / "out" / "config.ini").seed, 40u);
    fs::remove_all(dir);
}

TEST_F(CliRun, TrainWritesResolvedConfigLossCurveAndCheckpoint) {
    EXPECT_EQ(lines(dir_ / "train" / "loss.csv").size(), 21u);
    EXPECT_TRUE(fs::exists(ckpt() / "manifest.json"));
    EXPECT_EQ(RunConfig::load(dir_ / "train" / "config.ini").iters, 20u);
    // Resuming a finished run is a no-op.
    const auto r = cli("train --config " + (dir_ / "micro.ini").string() + " --resume --quiet");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(lines(dir_ / "train" / "loss.csv").size(), 21u);
}

TEST_F(CliRun, SampleIsReproducibleAndAcceptsAnySubset) {
    const auto out1 = dir_ / "s1", out2 = dir_ / "s2", out3 = dir_ / "s3";
    // Attribute row from a file, mask regenerated from an eval seed.
    std::ofstream(dir_ / "attrs.csv") << attr_csv_header() << "\n1,0,1,0,1,0\n0,1,0,1,0,1\n";
    const std::string cond = "--cond mask=eval_seed:3,attr=" + (dir_ / "attrs.csv").string() + "@1";
    auto r = cli("sample --ckpt " + ckpt().string() + " " + cond + " --count 2 --seed 5 --out " + out1.string());
    ASSERT_EQ(r.code, 0) << r.out;
    r = cli("sample --ckpt " + ckpt().string() + " " + cond + " --count 2 --seed 5 --out " + out2.string());
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"sample_0000.pgm", "sample_0001.pgm"}) EXPECT_EQ(slurp(out1 / f), slurp(out2 / f)) << f;
    const auto csv = lines(out1 / "samples.csv");
    ASSERT_EQ(csv.size(), 3u);
    EXPECT_NE(csv[1].find(",mask+attr,scalar,"), std::string::npos) << csv[1];
    EXPECT_EQ(RunConfig::load(out1 / "config.ini").sample_seed, 5u);

    // No active conditions: unconditional faces.
    r = cli("sample --ckpt " + ckpt().string() + " --count 1 --guidance none --out " + out3.string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(read_pgm(out3 / "sample_0000.pgm").width, 16u);
    EXPECT_NE(lines(out3 / "samples.csv")[1].find(",none,none,"), std::string::npos);

    EXPECT_EQ(cli("sample --ckpt " + (dir_ / "nope").string() + " --out " + out3.string()).code, 1);
    EXPECT_EQ(cli("sample --ckpt " + ckpt().string() + " --cond text=eval_seed:1 --out " + out3.string()).code, 1);
    EXPECT_EQ(cli("sample --ckpt " + ckpt().string() + " --w-m 1,2 --out " + out3.string()).code, 1);
}

TEST_F(CliRun, EvalEmitsReportCsv) {
    const auto csv = dir_ / "eval" / "report.csv";
    auto r = cli("eval --ckpt " + ckpt().string() + " --protocol uni:mask --n 2 --out " + csv.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = lines(csv);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], EvalReport::csv_header());
    EXPECT_NE(rows[1].find(",uni:mask,2,"), std::string::npos);
    r = cli("eval --ckpt " + ckpt().string() + " --against " + ckpt().string() + " --protocol none --n 1");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("difference (first - against)"), std::string::npos);
    EXPECT_NE(r.out.find("mask_acc 0\n"), std::string::npos) << r.out;  // same checkpoint, same seeds
    EXPECT_EQ(cli("eval --ckpt " + ckpt().string() + " --protocol multi:mask").code, 1);
}

TEST(Cli, AblateEmitsOneRowPerVariant) {
    const auto dir = fs::temp_directory_path() / "mmface_cli_ablate";
    fs::remove_all(dir);
    fs::create_directories(dir / "configs");
    RunConfig base = RunConfig::micro();
    base.iters = 3;
    base.T = 5;
    base.out_dir = (dir / "out").string();
    base.save(dir / "configs" / "base.ini");
    const auto r = cli("ablate --configs " + (dir / "configs").string() + " --n 2 --quiet");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = lines(dir / "out" / "ablation.csv");
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0], "variant,decoration,inter_modal,adjust_noise,training," + EvalReport::csv_header());
    const std::vector<std::string> names{"M1_PARALLEL", "M2_DECOR_ONLY", "M3_FULL", "M5_MULTI_SURR", "M6_FULL_EAM"};
    for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(rows[i + 1].substr(0, names[i].size()), names[i]);
    EXPECT_EQ(lines(dir / "out" / "ablation_tasks.csv").size(), 1u + 5u * 4u);
    fs::remove_all(dir);
}
