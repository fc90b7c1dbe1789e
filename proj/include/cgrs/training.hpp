#pragma once

#include "cgrs/config.hpp"
#include "cgrs/datasets.hpp"
#include "cgrs/losses.hpp"
#include "cgrs/networks.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

namespace cgrs {

// lr0 * decay^floor(step / decay_every).
double lr_schedule(std::int64_t step, const ExperimentConfig& config);

// Everything needed to continue training bit-for-bit. Randomness is a pure
// function of (config.seed, step), so no generator state is carried.
struct TrainState {
    ExperimentConfig config;
    std::int64_t step = 0;
    CgrsModel model{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_vae;   // encoders + decoders
    std::unique_ptr<torch::optim::Adam> opt_disc;  // D1, D2 including their class heads
    std::unique_ptr<torch::optim::Adam> opt_gen;   // encoders + G1, G2
    torch::Tensor content_mask;                    // broadcastable against (28, 28, 3)
};

// Fresh model (seeded by config.seed) and optimizers. Validates the config.
TrainState make_train_state(const ExperimentConfig& config);

// Rebuilds the three optimizers, e.g. after toggling freeze_cgrs. Moment
// buffers are discarded.
void reset_optimizers(TrainState& state);

// One training round's worth of preprocessed inputs.
struct Batch {
    torch::Tensor source_images;  // (B, 28, 28, 3) in [-1, 1]
    torch::Tensor source_labels;  // (B)
    torch::Tensor target_images;  // (B, 28, 28, 3) in [-1, 1]
    std::optional<torch::Tensor> target_labeled_images;
    std::optional<torch::Tensor> target_labeled_labels;
};

enum class Phase : std::uint8_t { vae = 1, discriminator = 2, generator = 3 };

// Each phase reads state.step for its random streams and leaves it unchanged.
LossReport step_vae(TrainState& state, const Batch& batch);
LossReport step_discriminator(TrainState& state, const Batch& batch);
LossReport step_generator(TrainState& state, const Batch& batch);
// The three phases in order, merged into one report; increments state.step.
LossReport run_round(TrainState& state, const Batch& batch);

// Index stream over `count` items in batches of `batch_size`: epoch e is a
// permutation seeded by (seed, stream, e) and batches tile the concatenation
// of epochs, so batch n depends only on (seed, stream, n).
class BatchSampler {
public:
    BatchSampler(std::int64_t count, std::int64_t batch_size, std::uint64_t seed, std::uint64_t stream);
    torch::Tensor indices(std::int64_t batch_number);

private:
    const std::vector<std::int64_t>& epoch(std::int64_t e);

    std::int64_t count_;
    std::int64_t batch_size_;
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::int64_t cached_epoch_ = -1;
    std::vector<std::int64_t> cached_;
};

// Deterministic batch provider for a TrainingData bundle.
class BatchSource {
public:
    BatchSource(const TrainingData& data, std::int64_t batch_size, std::uint64_t seed);
    Batch at(std::int64_t step);

private:
    const TrainingData& data_;
    BatchSampler source_;
    BatchSampler target_;
    std::optional<BatchSampler> labeled_;
};

// Train splits of the configured scenario, preprocessed to 3 channels and
// truncated to max_train_samples. Target labels are only retained for the
// semi-supervised subset.
TrainingData load_training_data(const ExperimentConfig& config);
// Preprocessed test split of the scenario's target.
LabeledImageSet load_target_test(const ExperimentConfig& config);
SynthesisOptions synthesis_options(const ExperimentConfig& config);
// config.data_root, else $CGRS_DATA_ROOT; ConfigError when neither is set.
std::filesystem::path resolve_data_root(const ExperimentConfig& config);

struct TrainOptions {
    std::optional<std::filesystem::path> resume_from;
    // Called after every round with the new step and its report.
    std::function<void(std::int64_t, const LossReport&)> on_round;
    bool write_files = true;  // checkpoints and log under config.out_dir
};

// Runs rounds until config.total_steps. Writes out_dir/train_log.csv,
// out_dir/checkpoint_<step>.ckpt every checkpoint_every steps and
// out_dir/final.ckpt. On a non-finite loss, writes out_dir/diagnostic.ckpt
// and throws NumericError.
TrainState run_training(const ExperimentConfig& config, const TrainingData& data, const TrainOptions& options = {});
TrainState run_training(TrainState state, const TrainingData& data, const TrainOptions& options = {});

// Applies config.threads and deterministic algorithm selection.
void configure_runtime(const ExperimentConfig& config);

}  // namespace cgrs
