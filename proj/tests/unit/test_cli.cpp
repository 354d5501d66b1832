#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include "xferlab/experiment.hpp"

using namespace xferlab;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = XFERLAB_CONFIG_DIR;

int cli(const std::string& args) {
    const std::string cmd = std::string("'") + XFERLAB_CLI_PATH + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("xferlab_cli_" + name);
    fs::remove_all(p);
    return p;
}

fs::path write_config(const std::string& name, const std::string& extra) {
    const fs::path p = scratch(name + ".ini");
    write_file_atomic(p, read_file(kConfigs / "smoke.ini") + "\n" + extra);
    return p;
}

Json summary_without_timing(const fs::path& dir) {
    Json j = Json::parse(read_file(dir / "summary.json"));
    j.erase("timing");
    return j;
}

std::string smoke() { return (kConfigs / "smoke.ini").string(); }

}  // namespace

TEST(Cli, RunWritesEveryArtifact) {
    const auto out = scratch("run");
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + out.string()), 0);
    for (const char* f : {"summary.json", "folds.csv", "pretrain.csv", "checkpoints/pretrained.ckpt"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    for (int s = 1; s <= 3; ++s)
        for (int f = 0; f < 2; ++f) {
            const std::string tag = std::to_string(s) + "_" + std::to_string(f);
            const auto csv = out / ("stage_" + std::to_string(s) + "_fold_" + std::to_string(f) + ".csv");
            ASSERT_TRUE(fs::exists(csv));
            EXPECT_EQ(read_file(csv).rfind("stage,epoch,train_loss,valid_loss,error_rate,accuracy\n", 0), 0u);
            EXPECT_TRUE(fs::exists(out / ("confusion_" + tag + ".json")));
            EXPECT_TRUE(fs::exists(out / "checkpoints" / ("stage_" + tag + ".ckpt")));
        }
    for (const auto& e : fs::recursive_directory_iterator(out))
        EXPECT_EQ(e.path().string().find(".tmp"), std::string::npos) << e.path();

    const Json s = Json::parse(read_file(out / "summary.json"));
    ASSERT_EQ(s["folds"].size(), 2u);
    for (const auto& fold : s["folds"]) {
        EXPECT_TRUE(fold["stages"][0]["base_unchanged"].get<bool>());
        EXPECT_TRUE(fold["stages"][1]["base_unchanged"].get<bool>());
        for (const auto& st : fold["stages"]) {
            const double acc = st["metrics"]["accuracy"], err = st["metrics"]["error_rate"];
            EXPECT_NEAR(acc + err, 1.0, 1e-12);
        }
    }
    EXPECT_TRUE(s["aggregate"].contains("stage_3"));
    EXPECT_TRUE(s.contains("baseline"));
    EXPECT_TRUE(s["timing"].contains("total_seconds"));
    EXPECT_EQ(read_file(out / "folds.csv").rfind("sample_id,fold\n", 0), 0u);
}

TEST(Cli, FiveFoldSummaryHasFiveEntries) {
    const auto cfg = write_config("k5", "");
    std::string text = read_file(cfg);
    text.replace(text.find("folds = 2"), 9, "folds = 5");
    write_file_atomic(cfg, text);
    const auto out = scratch("k5");
    ASSERT_EQ(cli("run --config " + cfg.string() + " --out " + out.string()), 0);
    const Json s = Json::parse(read_file(out / "summary.json"));
    EXPECT_EQ(s["folds"].size(), 5u);
    EXPECT_EQ(s["baseline"]["folds"].size(), 5u);
    EXPECT_TRUE(s["aggregate"]["stage_1"]["accuracy"].contains("mean"));
}

TEST(Cli, RepeatedRunsMatchExceptTiming) {
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + a.string()), 0);
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + b.string()), 0);
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + c.string() + " --jobs 2"), 0);
    EXPECT_EQ(summary_without_timing(a).dump(), summary_without_timing(b).dump());
    EXPECT_EQ(summary_without_timing(a).dump(), summary_without_timing(c).dump());
    for (const char* f : {"stage_3_fold_1.csv", "folds.csv", "checkpoints/stage_3_0.ckpt", "confusion_2_0.json"})
        EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

TEST(Cli, SeedFlagOverridesConfig) {
    const auto a = scratch("seed_a"), b = scratch("seed_b");
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + a.string() + " --seed 3"), 0);
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + b.string() + " --seed 4"), 0);
    EXPECT_EQ(Json::parse(read_file(a / "summary.json"))["config"]["seed"], 3);
    EXPECT_NE(read_file(a / "folds.csv"), read_file(b / "folds.csv"));
}

TEST(Cli, NonEmptyOutputNeedsForce) {
    const auto out = scratch("force");
    fs::create_directories(out);
    write_file_atomic(out / "keep.txt", "x");
    EXPECT_EQ(cli("run --config " + smoke() + " --out " + out.string()), 5);
    EXPECT_FALSE(fs::exists(out / "summary.json"));
    EXPECT_EQ(cli("run --config " + smoke() + " --out " + out.string() + " --force"), 0);
    EXPECT_TRUE(fs::exists(out / "summary.json"));
}

TEST(Cli, ConfigErrorsExitTwoAndWriteNothing) {
    const auto out = scratch("bad");
    const auto cfg = write_config("bad", "[stage1]\nwarmup = 3\n");
    EXPECT_EQ(cli("run --config " + cfg.string() + " --out " + out.string()), 2);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_EQ(cli("run --config " + (kConfigs / "missing.ini").string() + " --out " + out.string()), 2);
    EXPECT_EQ(cli("run --out " + out.string()), 2);
    EXPECT_EQ(cli("run --config " + smoke() + " --bogus"), 2);
    EXPECT_EQ(cli("run --config " + smoke() + " --jobs 0"), 2);
    EXPECT_EQ(cli("launch"), 2);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, DivergenceExitsThree) {
    const auto cfg = scratch("diverge.ini");
    std::string text = read_file(kConfigs / "smoke.ini");
    text.replace(text.find("lr = 0.01"), 9, "lr = 1e308");
    write_file_atomic(cfg, text);
    EXPECT_EQ(cli("run --config " + cfg.string() + " --out " + scratch("diverge").string()), 3);
}

TEST(Cli, MissingDatasetExitsFour) {
    const auto cfg = scratch("nodata.ini");
    write_file_atomic(cfg, "[dataset]\nkind = directory\nsource_dir = /nonexistent/a\ntarget_dir = /nonexistent/b\n");
    EXPECT_EQ(cli("run --config " + cfg.string() + " --out " + scratch("nodata").string()), 4);
}

TEST(Cli, GenRoundTripsAndIsIdempotent) {
    const auto out = scratch("gen");
    const std::string args = "gen --seed 5 --source-classes 3 --target-classes 4 --source-per-class 6 "
                             "--target-per-class 5 --out " + out.string();
    ASSERT_EQ(cli(args), 0);
    const auto src = load_directory(out / "source", {1, 16, 16});
    const auto tgt = load_directory(out / "target", {1, 16, 16});
    EXPECT_EQ(src.size(), 18u);
    EXPECT_EQ(tgt.size(), 20u);
    EXPECT_EQ(tgt.num_classes(), 4u);

    const std::string first = read_file(out / "target" / tgt.class_names[2] / "s00003.pgm");
    EXPECT_EQ(cli(args), 5);
    ASSERT_EQ(cli(args + " --force"), 0);
    EXPECT_EQ(read_file(out / "target" / tgt.class_names[2] / "s00003.pgm"), first);

    // the generated folders feed a directory-kind run
    const auto cfg = scratch("gen_run.ini");
    std::string text = read_file(kConfigs / "smoke.ini");
    text.replace(text.find("[dataset]"), 9,
                 "[dataset]\nkind = directory\nsource_dir = " + (out / "source").string() +
                     "\ntarget_dir = " + (out / "target").string());
    for (const char* key : {"source_classes = 3\n", "target_classes = 3\n", "source_per_class = 24\n",
                            "target_per_class = 12\n"})
        text.erase(text.find(key), std::string(key).size());
    write_file_atomic(cfg, text);
    EXPECT_EQ(cli("run --config " + cfg.string() + " --out " + scratch("gen_run").string()), 0);
}

TEST(Cli, GenMirrorsThirtySevenClasses) {
    const auto out = scratch("gen37");
    ASSERT_EQ(cli("gen --target-classes 37 --source-classes 4 --source-per-class 2 --target-per-class 2 --out " +
                  out.string()),
              0);
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(out / "target")) dirs += e.is_directory();
    EXPECT_EQ(dirs, 37u);
    EXPECT_EQ(cli("gen --target-classes 45 --out " + scratch("gen45").string()), 2);
}

TEST(Cli, LrFindWritesGeometricSweep) {
    const auto out = scratch("lrfind");
    ASSERT_EQ(cli("lrfind --config " + smoke() + " --lr-lo 1e-7 --lr-hi 10 --iters 100 --out " + out.string()), 0);
    std::istringstream csv(read_file(out / "lrfind.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "iter,lr,raw_loss,smoothed_loss");
    std::vector<double> lrs;
    while (std::getline(csv, line)) lrs.push_back(std::stod(line.substr(line.find(',') + 1)));
    ASSERT_GE(lrs.size(), 3u);
    EXPECT_LE(lrs.size(), 100u);
    EXPECT_EQ(lrs.front(), 1e-7);
    const double ratio = std::pow(1e8, 1.0 / 99.0);
    for (std::size_t i = 1; i < lrs.size(); ++i) EXPECT_NEAR(lrs[i] / lrs[i - 1], ratio, 1e-9);
    const Json j = Json::parse(read_file(out / "lrfind.json"));
    const double lr = j["suggested_lr"];
    EXPECT_GT(lr, 1e-7);
    EXPECT_LT(lr, 10.0);
    EXPECT_FALSE(fs::exists(out / "checkpoints"));
    EXPECT_EQ(cli("lrfind --config " + smoke() + " --lr-lo 1 --lr-hi 0.1 --out " + scratch("lrbad").string()), 2);
}

TEST(Cli, BaselineCommandSkipsTheProtocol) {
    const auto out = scratch("baseline");
    ASSERT_EQ(cli("baseline --config " + smoke() + " --out " + out.string()), 0);
    const Json s = Json::parse(read_file(out / "summary.json"));
    EXPECT_FALSE(s.contains("folds"));
    EXPECT_EQ(s["baseline"]["folds"].size(), 2u);
    EXPECT_TRUE(fs::exists(out / "baseline_fold_1.csv"));
}

TEST(Cli, StageThreeResumesFromEmittedCheckpoint) {
    const auto out = scratch("resume");
    ASSERT_EQ(cli("run --config " + smoke() + " --out " + out.string()), 0);
    const auto cfg = load_config(smoke());
    const auto data = load_experiment_data(cfg);
    const Model stage2 = load_checkpoint(out / "checkpoints" / "stage_2_1.ckpt");
    auto run = ProtocolRun::resume(stage2, 2, data.task.target, data.plan, 1, cfg.stages, cfg.training,
                                   seeds::protocol(cfg.seed));
    run.run_stage(StageId::III);
    EXPECT_EQ(serialize_checkpoint(run.model()), read_file(out / "checkpoints" / "stage_3_1.ckpt"));
}
