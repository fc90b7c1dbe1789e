#pragma once

#include "cgrs/config.hpp"
#include "cgrs/datasets.hpp"
#include "cgrs/networks.hpp"
#include "cgrs/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cgrs {

struct EvalReport {
    std::string scenario;
    std::string channel;  // "st", "ts", "combined", "source-only" or "target-only"
    std::string split;    // StackSplit label; empty for baselines
    double accuracy = 0.0;  // n_correct / n_test
    std::int64_t n_correct = 0;
    std::int64_t n_test = 0;
    std::int64_t checkpoint_step = 0;
    std::int64_t budget_steps = 0;  // training steps behind the number
    std::string error;              // non-empty when producing this row failed
};

// Class predictions on the test pipeline encode(target) -> graft(channel)
// -> generate(channel) -> class head of discriminate(channel), with the
// latent mean standing in for a sample. Runs in inference mode and restores
// the model's previous mode.
torch::Tensor predict_classes(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& target_images,
                              GraftChannel channel);
// Softmax of both channels averaged, then argmax.
torch::Tensor predict_classes_combined(CgrsModel& model, const ExperimentConfig& config,
                                       const torch::Tensor& target_images);

EvalReport evaluate_accuracy(const TrainState& state, const LabeledImageSet& target_test, GraftChannel channel);
EvalReport evaluate_combined(const TrainState& state, const LabeledImageSet& target_test);

// Trains a bare classifier (the discriminator trunk and class head) on raw
// preprocessed `train` images for config.baseline_steps and reports its
// accuracy on `test`. With source training data this is the source-only
// lower bound; with target training data the target-only upper bound.
EvalReport evaluate_source_only(const ExperimentConfig& config, const LabeledImageSet& train,
                                const LabeledImageSet& test, bool target_only = false);

// Training budget per split: 20% of the resolved total_steps unless
// budget_steps > 0.
std::int64_t sweep_budget(const ExperimentConfig& config, std::int64_t budget_steps = 0);

// One model per split, both channels reported per split. A failing split
// yields rows carrying `error` instead of aborting the sweep. Checkpoints go
// to out_dir/<split label>/ when out_dir is set.
std::vector<EvalReport> sweep_cgrs(const ExperimentConfig& config, const std::vector<StackSplit>& splits,
                                   const TrainingData& data, const LabeledImageSet& target_test,
                                   std::int64_t budget_steps = 0);

// Copies the decoder stacks of `source` into a fresh model for new_config,
// freezes them, then trains the remaining networks. Throws ConfigError when
// the architectures differ.
TrainState transfer_cgrs(const TrainState& source, const ExperimentConfig& new_config, const TrainingData& data,
                         const TrainOptions& options = {});

// Writes one PNG per channel at `<prefix>_<channel>.png`. Rows are samples;
// columns are source, source association, adversarial target association,
// target association, target. Pixels map [-1, 1] -> [0, 255].
std::vector<std::filesystem::path> export_associations(CgrsModel& model, const ExperimentConfig& config,
                                                       const torch::Tensor& batch_s, const torch::Tensor& batch_t,
                                                       const std::filesystem::path& prefix);
// Grid image (rows x 5 tiles, each 28x28 RGB) as uint8 (H, W, 3).
torch::Tensor association_grid(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& batch_s,
                               const torch::Tensor& batch_t, GraftChannel channel);
torch::Tensor to_pixels(const torch::Tensor& images);

struct FeatureBatch {
    torch::Tensor images;  // (B, 28, 28, 3) in [-1, 1]
    torch::Tensor labels;  // (B)
    Domain domain = Domain::source;
};

// Tab-separated: header "domain<TAB>label<TAB>f0..f{n-1}", one row per
// sample, domain 0 = source and 1 = target. Features are the top fully
// connected layer of the channel's discriminator, fed with the source
// association (source rows) or the adversarial target association (target
// rows). Returns the row count.
std::int64_t export_features(CgrsModel& model, const ExperimentConfig& config, const std::vector<FeatureBatch>& batches,
                             GraftChannel channel, const std::filesystem::path& path);

// Appends rows to a CSV, writing the header when the file is new.
void append_reports_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
std::string format_report(const EvalReport& report);

}  // namespace cgrs
