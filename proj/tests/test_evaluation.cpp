#include "cgrs/error.hpp"
#include "cgrs/evaluation.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace cgrs;
using torch::indexing::Slice;

namespace {

TrainState small_trained(std::uint64_t seed, std::int64_t steps = 2) {
    auto config = testkit::tiny_config(seed);
    config.total_steps = steps;
    TrainOptions options;
    options.write_files = false;
    return run_training(config, testkit::tiny_training_data(32, seed), options);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST(Evaluation, PredictionIsPureAndRestoresMode) {
    auto state = small_trained(1);
    const auto images = testkit::tiny_target(20, 5).images;
    state.model->train();
    const auto before = testkit::snapshot(*state.model);
    const auto a = predict_classes(state.model, state.config, images, GraftChannel::st());
    const auto b = predict_classes(state.model, state.config, images, GraftChannel::st());
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_TRUE(state.model->is_training());
    EXPECT_TRUE(state.model->vae->decoder_s->is_training());
    EXPECT_TRUE(testkit::changed_tensors(before, testkit::snapshot(*state.model)).empty());
    EXPECT_EQ(a.size(0), 20);
    EXPECT_GE(a.min().item<std::int64_t>(), 0);
    EXPECT_LT(a.max().item<std::int64_t>(), 10);
}

TEST(Evaluation, PredictionDoesNotDependOnBatchComposition) {
    auto state = small_trained(2);
    const auto images = testkit::tiny_target(12, 6).images;
    const auto all = predict_classes(state.model, state.config, images, GraftChannel::ts());
    const auto half = predict_classes(state.model, state.config, images.index({Slice(0, 6)}), GraftChannel::ts());
    EXPECT_TRUE(torch::equal(all.index({Slice(0, 6)}), half));
}

TEST(Evaluation, AccuracyIsCorrectOverTotal) {
    const auto state = small_trained(3);
    auto test = testkit::tiny_target(37, 7);
    for (const auto channel : kChannels) {
        const auto report = evaluate_accuracy(state, test, channel);
        EXPECT_EQ(report.n_test, 37);
        EXPECT_EQ(report.channel, channel.name());
        EXPECT_EQ(report.split, "H4L2");
        EXPECT_EQ(report.checkpoint_step, 2);
        EXPECT_DOUBLE_EQ(report.accuracy, static_cast<double>(report.n_correct) / 37.0);
        auto model = state.model;
        const auto predicted = predict_classes(model, state.config, test.images, channel);
        EXPECT_EQ(report.n_correct, predicted.eq(test.labels).sum().item<std::int64_t>());
    }
    const auto combined = evaluate_combined(state, test);
    EXPECT_EQ(combined.channel, "combined");
    EXPECT_DOUBLE_EQ(combined.accuracy, static_cast<double>(combined.n_correct) / 37.0);
}

TEST(Evaluation, EmptyTestSetIsDataError) {
    const auto state = small_trained(4, 1);
    auto test = testkit::tiny_target(10, 8);
    test.images = test.images.index({Slice(0, 0)});
    test.labels = test.labels.index({Slice(0, 0)});
    EXPECT_THROW(evaluate_accuracy(state, test, GraftChannel::st()), DataError);
}

TEST(Evaluation, PixelMapping) {
    const auto p = to_pixels(torch::tensor({-1.0F, -0.5F, 0.0F, 1.0F, 1.5F, -3.0F}));
    EXPECT_EQ(p.scalar_type(), torch::kUInt8);
    const std::vector<int> expected{0, 64, 128, 255, 255, 0};
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(p[static_cast<std::int64_t>(i)].item<int>(), expected[i]);
}

TEST(Evaluation, AssociationGridLayout) {
    auto state = small_trained(5);
    const auto s = testkit::tiny_source(3, 9).images;
    const auto t = testkit::tiny_target(3, 9).images;
    const auto grid = association_grid(state.model, state.config, s, t, GraftChannel::st());
    EXPECT_EQ(grid.sizes(), (std::vector<std::int64_t>{3 * 28, 5 * 28, 3}));
    EXPECT_EQ(grid.scalar_type(), torch::kUInt8);
    for (std::int64_t r = 0; r < 3; ++r) {
        const auto rows = Slice(r * 28, (r + 1) * 28);
        EXPECT_TRUE(torch::equal(grid.index({rows, Slice(0, 28)}), to_pixels(s[r])));
        EXPECT_TRUE(torch::equal(grid.index({rows, Slice(4 * 28, 5 * 28)}), to_pixels(t[r])));
    }
}

TEST(Evaluation, ExportIsByteIdentical) {
    testkit::TempDir dir;
    auto state = small_trained(6);
    const auto s = testkit::tiny_source(4, 10).images;
    const auto t = testkit::tiny_target(4, 10).images;
    const auto first = export_associations(state.model, state.config, s, t, dir.path() / "a" / "grid");
    const auto second = export_associations(state.model, state.config, s, t, dir.path() / "b" / "grid");
    ASSERT_EQ(first.size(), 2U);
    EXPECT_EQ(first[0].filename(), "grid_st.png");
    EXPECT_EQ(first[1].filename(), "grid_ts.png");
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(testkit::read_bytes(first[i]), testkit::read_bytes(second[i]));
    }
}

TEST(Evaluation, FeatureExportRows) {
    testkit::TempDir dir;
    auto state = small_trained(7);
    const auto src = testkit::tiny_source(6, 11);
    const auto tgt = testkit::tiny_target(5, 11);
    const std::vector<FeatureBatch> batches{{src.images, src.labels, Domain::source},
                                            {tgt.images, tgt.labels, Domain::target}};
    const auto path = dir.path() / "features.tsv";
    EXPECT_EQ(export_features(state.model, state.config, batches, GraftChannel::st(), path), 11);
    const auto lines = lines_of(testkit::read_bytes(path));
    ASSERT_EQ(lines.size(), 12U);
    EXPECT_TRUE(lines[0].starts_with("domain\tlabel\tf0\t"));
    const auto width = state.config.arch.disc_feature_width;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        EXPECT_EQ(std::count(lines[i].begin(), lines[i].end(), '\t'), width + 1) << i;
        if (i == 0) continue;
        EXPECT_EQ(lines[i][0], i <= 6 ? '0' : '1') << i;
    }
}

TEST(Evaluation, SweepRecordsFailedSplitsAndContinues) {
    auto config = testkit::tiny_config(8);
    config.total_steps = 10;
    const auto data = testkit::tiny_training_data(24, 8);
    const auto test = testkit::tiny_target(20, 12);
    const std::vector<StackSplit> splits{StackSplit::parse("H6L0"), StackSplit{3, 2}, StackSplit::parse("H0L6")};
    const auto reports = sweep_cgrs(config, splits, data, test);
    ASSERT_EQ(reports.size(), 6U);
    for (const auto& r : reports) EXPECT_EQ(r.budget_steps, 2);
    EXPECT_TRUE(reports[0].error.empty());
    EXPECT_EQ(reports[0].split, "H6L0");
    EXPECT_EQ(reports[0].checkpoint_step, 2);
    EXPECT_FALSE(reports[2].error.empty());
    EXPECT_FALSE(reports[3].error.empty());
    EXPECT_TRUE(reports[4].error.empty());
    EXPECT_EQ(reports[5].channel, "ts");
    EXPECT_EQ(sweep_budget(config, 7), 7);
}

TEST(Evaluation, TransferKeepsDecodersFixed) {
    const auto source = small_trained(9);
    auto config = testkit::tiny_config(19);
    config.scenario = Scenario::parse("mnist:mnist-m");
    config.total_steps = 3;
    TrainOptions options;
    options.write_files = false;
    const auto result = transfer_cgrs(source, config, testkit::tiny_training_data(24, 19), options);
    EXPECT_TRUE(result.config.freeze_cgrs);
    EXPECT_EQ(result.step, 3);
    for (const auto d : {Domain::source, Domain::target}) {
        EXPECT_TRUE(testkit::changed_tensors(testkit::snapshot(*source.model->vae->decoder(d)),
                                             testkit::snapshot(*result.model->vae->decoder(d)))
                        .empty());
    }
    EXPECT_FALSE(testkit::changed_tensors(testkit::snapshot(*source.model->vae->encoder_high_shared),
                                          testkit::snapshot(*result.model->vae->encoder_high_shared))
                     .empty());

    auto other = config;
    other.arch.base_width = 8;
    EXPECT_THROW(transfer_cgrs(source, other, testkit::tiny_training_data(24, 19), options), ConfigError);
}

TEST(Evaluation, SourceOnlyBaselineLearnsSourceDomain) {
    auto config = testkit::tiny_config(10);
    config.baseline_steps = 150;
    config.lr0 = 1e-3;
    const auto train = testkit::tiny_source(200, 13);
    const auto test = testkit::tiny_source(100, 14);
    const auto report = evaluate_source_only(config, train, test);
    EXPECT_EQ(report.channel, "source-only");
    EXPECT_EQ(report.n_test, 100);
    EXPECT_EQ(report.budget_steps, 150);
    EXPECT_GT(report.accuracy, 0.5);
    EXPECT_EQ(evaluate_source_only(config, train, test, true).channel, "target-only");
}

TEST(Evaluation, ReportsCsvAppends) {
    testkit::TempDir dir;
    EvalReport r;
    r.scenario = "mnist:usps";
    r.channel = "st";
    r.split = "H4L2";
    r.accuracy = 0.5;
    r.n_correct = 1;
    r.n_test = 2;
    r.error = "bad, really\nbad";
    append_reports_csv({r}, dir.path() / "r.csv");
    append_reports_csv({r}, dir.path() / "r.csv");
    const auto lines = lines_of(testkit::read_bytes(dir.path() / "r.csv"));
    ASSERT_EQ(lines.size(), 3U);
    EXPECT_EQ(lines[0], "scenario,channel,split,accuracy,n_correct,n_test,checkpoint_step,budget_steps,error");
    EXPECT_EQ(lines[1], "mnist:usps,st,H4L2,0.5,1,2,0,0,bad  really bad");
    EXPECT_NE(format_report(r).find("accuracy=0.5000"), std::string::npos);
}
