#include "cgrs/cli.hpp"
#include "cgrs/persistence.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace cgrs;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

// Flags shrinking the model to the test architecture.
std::vector<std::string> tiny_flags(const std::filesystem::path& root) {
    return {"--latent-channels", "4", "--base-width", "4", "--generator-width", "4", "--generator-blocks", "1",
            "--disc-width", "4", "--disc-feature-width", "16", "--batch-size", "8", "--eval-batch-size", "64",
            "--data-root", root.string(), "--log-every", "100"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

class ScopedUnsetEnv {
public:
    explicit ScopedUnsetEnv(const char* name) : name_(name) {
        if (const char* v = std::getenv(name)) saved_ = v;
        ::unsetenv(name);
    }
    ~ScopedUnsetEnv() {
        if (saved_) ::setenv(name_, saved_->c_str(), 1);
    }
    ScopedUnsetEnv(const ScopedUnsetEnv&) = delete;
    ScopedUnsetEnv& operator=(const ScopedUnsetEnv&) = delete;

private:
    const char* name_;
    std::optional<std::string> saved_;
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"train", "--no-such-flag", "1"}).code, 2);
    EXPECT_EQ(cli({"eval"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, InvalidConfigurationExitsTwo) {
    testkit::TempDir dir;
    const auto r = cli({"train", "--split", "H3L2", "--out-dir", dir.path().string(), "--dry-run"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("n_high"), std::string::npos) << r.err;
    EXPECT_EQ(cli({"train", "--batch-size", "0", "--out-dir", dir.path().string(), "--dry-run"}).code, 2);
    EXPECT_EQ(cli({"train", "--scenario", "mnist:svhn", "--dry-run"}).code, 2);
}

TEST(Cli, MissingDataRootExitsTwo) {
    testkit::TempDir dir;
    ScopedUnsetEnv unset("CGRS_DATA_ROOT");
    EXPECT_EQ(cli({"train", "--out-dir", dir.path().string(), "--steps", "1"}).code, 2);
}

TEST(Cli, MissingArchiveExitsThree) {
    testkit::TempDir dir;
    const auto r = cli({"train", "--data-root", (dir.path() / "empty").string(), "--out-dir",
                        (dir.path() / "out").string(), "--steps", "1"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("mnist"), std::string::npos) << r.err;
}

TEST(Cli, MissingCheckpointExitsFive) {
    EXPECT_EQ(cli({"inspect", "/nonexistent/x.ckpt"}).code, 5);
    EXPECT_EQ(cli({"eval", "--checkpoint", "/nonexistent/x.ckpt"}).code, 5);
}

TEST(Cli, DryRunHasNoSideEffects) {
    testkit::TempDir dir;
    const auto out = dir.path() / "out";
    const auto r = cli({"train", "--out-dir", out.string(), "--dry-run", "--data-root", dir.path().string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("lambda1: 10"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("total_steps: 50000"), std::string::npos) << r.err;
    EXPECT_FALSE(std::filesystem::exists(out));
}

TEST(Cli, ConfigFileThenFlagOverrides) {
    testkit::TempDir dir;
    std::ofstream(dir.path() / "c.yaml") << "config_version: 1\nbatch_size: 16\nseed: 3\n";
    const auto r = cli({"train", "--config", (dir.path() / "c.yaml").string(), "--seed", "9", "--out-dir",
                        dir.path().string(), "--dry-run"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("batch_size: 16"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("seed: 9"), std::string::npos) << r.err;
}

TEST(Cli, SynthIsDeterministic) {
    testkit::TempDir dir;
    testkit::write_fake_mnist(dir.path() / "raw", 60, 20);
    for (const auto* out : {"a", "b"}) {
        const auto r = cli({"synth", "mnist-m", "--data-root", (dir.path() / "raw").string(), "--out",
                            (dir.path() / out).string(), "--seed", "77"});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    for (const auto* split : {"train", "test"}) {
        EXPECT_EQ(testkit::read_bytes(dir.path() / "a" / split / "manifest.json"),
                  testkit::read_bytes(dir.path() / "b" / split / "manifest.json"));
        EXPECT_EQ(testkit::read_bytes(dir.path() / "a" / split / "images.bin"),
                  testkit::read_bytes(dir.path() / "b" / split / "images.bin"));
    }
    EXPECT_EQ(cli({"synth", "mnist", "--data-root", (dir.path() / "raw").string(), "--out",
                   (dir.path() / "c").string()})
                  .code,
              2);
}

TEST(Cli, TrainEvalExportInspectEndToEnd) {
    testkit::TempDir dir;
    const auto root = dir.path() / "data";
    const auto run = dir.path() / "run";
    testkit::write_fake_mnist(root, 80, 30);
    const auto flags = tiny_flags(root);

    auto r = cli(concat({"train", "--scenario", "mnist:mnist-m", "--steps", "3", "--out-dir", run.string(),
                         "--checkpoint-every", "2"},
                        flags));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ckpt = run / "final.ckpt";
    ASSERT_TRUE(std::filesystem::exists(ckpt));
    EXPECT_TRUE(std::filesystem::exists(run / "checkpoint_2.ckpt"));
    EXPECT_EQ(read_checkpoint_index(ckpt).step, 3);

    r = cli({"eval", "--checkpoint", ckpt.string(), "--channel", "all", "--results", (run / "r.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("channel=st"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("channel=ts"), std::string::npos);
    EXPECT_NE(r.out.find("channel=combined"), std::string::npos);
    EXPECT_NE(r.out.find("/30)"), std::string::npos) << r.out;
    EXPECT_TRUE(std::filesystem::exists(run / "r.csv"));

    r = cli({"export-assoc", "--checkpoint", ckpt.string(), "--out", (run / "grid").string(), "--rows", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(run / "grid_st.png"));
    EXPECT_TRUE(std::filesystem::exists(run / "grid_ts.png"));

    r = cli({"export-features", "--checkpoint", ckpt.string(), "--out", (run / "f.tsv").string(), "--count", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto tsv = testkit::read_bytes(run / "f.tsv");
    EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 15);

    r = cli({"inspect", ckpt.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("\"step\": 3"), std::string::npos) << r.out;

    r = cli(concat({"train", "--scenario", "mnist:mnist-m", "--steps", "5", "--out-dir", run.string(), "--resume",
                    ckpt.string()},
                   flags));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_checkpoint_index(ckpt).step, 5);

    r = cli(concat({"train", "--scenario", "mnist:mnist-m", "--split", "H2L4", "--steps", "6", "--out-dir",
                    run.string(), "--resume", ckpt.string()},
                   flags));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("n_low"), std::string::npos) << r.err;

    r = cli(concat({"source-only", "--scenario", "mnist:mnist-m", "--baseline-steps", "5"}, flags));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("channel=source-only"), std::string::npos) << r.out;
}

TEST(Cli, TamperedCheckpointExitsThree) {
    testkit::TempDir dir;
    const auto root = dir.path() / "data";
    testkit::write_fake_mnist(root, 40, 10);
    auto r = cli(concat({"train", "--steps", "1", "--scenario", "mnist:mnist-m", "--out-dir", dir.path().string()},
                        tiny_flags(root)));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ckpt = dir.path() / "final.ckpt";
    {
        std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-5, std::ios::end);
        f.put('\x7f');
    }
    EXPECT_EQ(cli({"inspect", ckpt.string()}).code, 3);
}
