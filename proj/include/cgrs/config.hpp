#pragma once

#include "cgrs/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cgrs {

inline constexpr int kConfigVersion = 1;

struct LossWeights {
    double lambda0 = 1.0;   // adversarial
    double lambda1 = 10.0;  // reconstruction likelihood
    double lambda2 = 0.01;  // KL prior
    double lambda3 = 1.0;   // content constancy
};

// Widths of the reference architecture. The defaults reproduce the full-size
// model; tests shrink them.
struct ArchitectureConfig {
    std::int64_t latent_channels = 512;  // latent code is latent_channels x 4 x 4
    std::int64_t base_width = 64;        // encoder 64/128/256/512, decoder 512/256/128/64/32/3
    std::int64_t generator_width = 64;
    std::int64_t generator_blocks = 4;
    std::int64_t disc_width = 64;
    std::int64_t disc_feature_width = 512;  // penultimate (top, fully connected) layer

    std::int64_t latent_dim() const { return latent_channels * 4 * 4; }
    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

struct ExperimentConfig {
    int config_version = kConfigVersion;
    Scenario scenario{};
    StackSplit split{};
    LossWeights weights{};
    ArchitectureConfig arch{};

    std::int64_t batch_size = 64;
    std::int64_t total_steps = 0;  // 0 resolves to the scenario default
    double lr0 = 2e-4;
    double decay = 0.95;
    std::int64_t decay_every = 20000;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    bool content_constancy = true;
    std::int64_t semi_supervised_target_count = 0;  // per class; 0 = unsupervised
    bool graft_noise = false;
    double graft_noise_sigma = 0.01;
    bool freeze_cgrs = false;  // decoders excluded from every update set

    std::filesystem::path data_root{};
    std::filesystem::path out_dir{};
    std::filesystem::path backgrounds{};  // empty = procedural patches
    std::filesystem::path mask{};         // empty = all-ones mask
    std::uint64_t synth_seed = 1234;
    std::int64_t max_train_samples = 0;  // 0 = full split
    std::int64_t log_every = 10;
    std::int64_t checkpoint_every = 5000;
    std::int64_t baseline_steps = 5000;
    std::int64_t eval_batch_size = 256;
    std::int64_t threads = 0;  // 0 = libtorch default

    // Fills scenario-dependent defaults (total_steps).
    ExperimentConfig resolved() const;
    // Throws ConfigError naming the offending field.
    void validate() const;

    // Flat key/value view shared by the config file, CLI flags and the
    // checkpoint's config snapshot.
    std::map<std::string, std::string> to_key_values() const;
    static ExperimentConfig from_key_values(const std::map<std::string, std::string>& values,
                                            const ExperimentConfig& base);
    static ExperimentConfig from_key_values(const std::map<std::string, std::string>& values);
};

std::int64_t default_total_steps(const Scenario& scenario);

// Every recognised configuration key, in documentation order.
const std::vector<std::string>& config_keys();

ExperimentConfig load_config_file(const std::filesystem::path& path, const ExperimentConfig& base = {});
void save_config_file(const ExperimentConfig& config, const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& config);

}  // namespace cgrs
