#include "cgrs/config.hpp"
#include "cgrs/error.hpp"
#include "cgrs/training.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace cgrs;

TEST(StackSplit, ParsesAndLabels) {
    const auto s = StackSplit::parse("H2L4");
    EXPECT_EQ(s.n_high, 2);
    EXPECT_EQ(s.n_low, 4);
    EXPECT_EQ(s.label(), "H2L4");
    EXPECT_EQ(StackSplit::parse("H6L0").n_low, 0);
    EXPECT_EQ(StackSplit::parse("H0L6").n_high, 0);
}

TEST(StackSplit, RejectsMalformedOrUnbalanced) {
    for (const char* bad : {"H3L2", "H7L-1", "4L2", "H4", "HxLy", "H4L2x", ""}) {
        EXPECT_THROW(StackSplit::parse(bad), ConfigError) << bad;
    }
}

TEST(GraftChannel, DomainsAndParse) {
    EXPECT_EQ(GraftChannel::st().high_domain(), Domain::source);
    EXPECT_EQ(GraftChannel::st().low_domain(), Domain::target);
    EXPECT_EQ(GraftChannel::ts().high_domain(), Domain::target);
    EXPECT_EQ(GraftChannel::parse("ts"), GraftChannel::ts());
    EXPECT_EQ(GraftChannel::st().index(), 0);
    EXPECT_EQ(GraftChannel::ts().index(), 1);
    EXPECT_THROW(GraftChannel::parse("ss"), ConfigError);
}

TEST(Scenario, ParsesAllDatasetIds) {
    for (const auto id : kAllDatasets) EXPECT_EQ(parse_dataset_id(to_string(id)), id);
    const auto s = Scenario::parse("mnist:mnist-m");
    EXPECT_EQ(s.source, DatasetId::mnist);
    EXPECT_EQ(s.target, DatasetId::mnist_m);
    EXPECT_EQ(s.label(), "mnist:mnist-m");
    EXPECT_THROW(Scenario::parse("mnist"), ConfigError);
    EXPECT_THROW(Scenario::parse("mnist:svhn"), ConfigError);
}

TEST(Config, DefaultStepsDependOnScenario) {
    ExperimentConfig c;
    c.scenario = Scenario::parse("fashion:fashion-m");
    EXPECT_EQ(c.resolved().total_steps, 100000);
    c.scenario = Scenario::parse("mnist:usps");
    EXPECT_EQ(c.resolved().total_steps, 50000);
    c.total_steps = 7;
    EXPECT_EQ(c.resolved().total_steps, 7);
}

TEST(Config, ReferenceDefaults) {
    const ExperimentConfig c;
    EXPECT_EQ(c.batch_size, 64);
    EXPECT_DOUBLE_EQ(c.lr0, 2e-4);
    EXPECT_DOUBLE_EQ(c.decay, 0.95);
    EXPECT_EQ(c.decay_every, 20000);
    EXPECT_DOUBLE_EQ(c.weights.lambda0, 1.0);
    EXPECT_DOUBLE_EQ(c.weights.lambda1, 10.0);
    EXPECT_DOUBLE_EQ(c.weights.lambda2, 0.01);
    EXPECT_DOUBLE_EQ(c.weights.lambda3, 1.0);
}

TEST(Config, KeyValueRoundTrip) {
    auto c = testkit::tiny_config(42);
    c.lr0 = 1.2345678901234e-4;
    c.scenario = Scenario::parse("usps:m-digits");
    c.split = StackSplit::parse("H1L5");
    c.graft_noise = true;
    c.out_dir = "/tmp/some dir";
    const auto back = ExperimentConfig::from_key_values(c.to_key_values());
    EXPECT_EQ(back.to_key_values(), c.to_key_values());
    EXPECT_EQ(back.lr0, c.lr0);
    EXPECT_EQ(back.arch, c.arch);
    EXPECT_EQ(c.to_key_values().size(), config_keys().size());
}

TEST(Config, UnknownKeyAndBadValueAreConfigErrors) {
    EXPECT_THROW(ExperimentConfig::from_key_values({{"no_such_key", "1"}}), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_key_values({{"batch_size", "ten"}}), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_key_values({{"content_constancy", "maybe"}}), ConfigError);
}

TEST(Config, ValidateNamesOffendingField) {
    const auto expect_field = [](ExperimentConfig c, const std::string& field) {
        try {
            c.validate();
            FAIL() << field;
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
        }
    };
    auto c = testkit::tiny_config();
    c.batch_size = 0;
    expect_field(c, "batch_size");
    c = testkit::tiny_config();
    c.lr0 = 0;
    expect_field(c, "lr0");
    c = testkit::tiny_config();
    c.decay = 1.5;
    expect_field(c, "decay");
    c = testkit::tiny_config();
    c.semi_supervised_target_count = -1;
    expect_field(c, "semi_supervised_target_count");
    EXPECT_NO_THROW(testkit::tiny_config().validate());
}

TEST(Config, FileRoundTripAndOverrides) {
    testkit::TempDir dir;
    auto c = testkit::tiny_config(5);
    c.scenario = Scenario::parse("mnist:mnist-m");
    save_config_file(c, dir.path() / "c.yaml");
    const auto loaded = load_config_file(dir.path() / "c.yaml");
    EXPECT_EQ(loaded.to_key_values(), c.to_key_values());
}

TEST(Config, FileRequiresVersion) {
    testkit::TempDir dir;
    std::ofstream(dir.path() / "c.yaml") << "batch_size: 3\n";
    EXPECT_THROW(load_config_file(dir.path() / "c.yaml"), ConfigError);
    std::ofstream(dir.path() / "d.yaml") << "config_version: 1\nbatch_size: 3\n";
    EXPECT_EQ(load_config_file(dir.path() / "d.yaml").batch_size, 3);
    EXPECT_THROW(load_config_file(dir.path() / "missing.yaml"), IoError);
}

TEST(LrSchedule, ReferenceValues) {
    const ExperimentConfig c;
    EXPECT_DOUBLE_EQ(lr_schedule(0, c), 0.0002);
    EXPECT_NEAR(lr_schedule(20000, c), 0.00019, 1e-15);
    EXPECT_NEAR(lr_schedule(40000, c), 0.0001805, 1e-15);
    EXPECT_DOUBLE_EQ(lr_schedule(19999, c), 0.0002);
}

TEST(LrSchedule, MonotoneNonincreasing) {
    ExperimentConfig c;
    c.decay_every = 7;
    double previous = lr_schedule(0, c);
    for (std::int64_t s = 1; s < 500; ++s) {
        const double lr = lr_schedule(s, c);
        EXPECT_LE(lr, previous);
        previous = lr;
    }
}

TEST(Errors, ExitCodesByCategory) {
    EXPECT_EQ(ConfigError("x").exit_code(), 2);
    EXPECT_EQ(MigrationError("x").exit_code(), 2);
    EXPECT_EQ(DataError("x").exit_code(), 3);
    EXPECT_EQ(IntegrityError("x").exit_code(), 3);
    EXPECT_EQ(NumericError("x").exit_code(), 4);
    EXPECT_EQ(IoError("x").exit_code(), 5);
}
