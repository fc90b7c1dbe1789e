#include "cgrs/training.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"
#include "cgrs/persistence.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>

namespace cgrs {

double lr_schedule(std::int64_t step, const ExperimentConfig& config) {
    if (step < 0) throw ContractViolation("lr_schedule: negative step");
    const auto period = config.decay_every > 0 ? step / config.decay_every : 0;
    return config.lr0 * std::pow(config.decay, static_cast<double>(period));
}

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const ExperimentConfig& config) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(config.lr0)
                               .betas({config.adam_beta1, config.adam_beta2})
                               .eps(config.adam_eps));
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

void set_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

torch::Generator phase_generator(const TrainState& state, Phase phase, std::uint64_t salt = 0) {
    return at::make_generator<at::CPUGeneratorImpl>(
        mix_seed(state.config.seed, static_cast<std::uint64_t>(state.step),
                 static_cast<std::uint64_t>(phase) + (salt << 8)));
}

std::optional<GraftNoise> graft_noise_for(const TrainState& state, Phase phase) {
    if (!state.config.graft_noise || state.config.graft_noise_sigma <= 0.0) return std::nullopt;
    return GraftNoise{state.config.graft_noise_sigma, phase_generator(state, phase, 1)};
}

// Only networks whose parameters the phase updates run in training mode.
void set_modes(CgrsModel& model, Phase phase, bool freeze_cgrs) {
    auto& vae = model->vae;
    auto& heads = model->heads;
    const bool encoders = phase != Phase::discriminator;
    const bool decoders = phase == Phase::vae && !freeze_cgrs;
    vae->encoder_low_s->train(encoders);
    vae->encoder_low_t->train(encoders);
    vae->encoder_high_shared->train(encoders);
    vae->decoder_s->train(decoders);
    vae->decoder_t->train(decoders);
    heads->generator_1->train(phase == Phase::generator);
    heads->generator_2->train(phase == Phase::generator);
    heads->discriminator_1->train(phase == Phase::discriminator);
    heads->discriminator_2->train(phase == Phase::discriminator);
}

void check_batch(const Batch& batch) {
    if (!batch.source_images.defined() || !batch.target_images.defined() || !batch.source_labels.defined()) {
        throw ContractViolation("training batch is incomplete");
    }
    if (batch.source_labels.size(0) != batch.source_images.size(0)) {
        throw ContractViolation("training batch: source label count differs from image count");
    }
}

double value(const torch::Tensor& t) { return t.item<double>(); }

}  // namespace

TrainState make_train_state(const ExperimentConfig& config) {
    auto resolved = config.resolved();
    resolved.validate();
    TrainState state;
    state.config = resolved;
    state.model = build_model(resolved);
    state.content_mask = load_content_mask(resolved.mask);
    reset_optimizers(state);
    return state;
}

void reset_optimizers(TrainState& state) {
    const auto& vae = state.model->vae;
    const auto& heads = state.model->heads;
    const auto encoders = encoder_parameters(vae);
    state.opt_vae = make_adam(state.config.freeze_cgrs ? encoders : concat(encoders, decoder_parameters(vae)),
                              state.config);
    state.opt_disc = make_adam(discriminator_parameters(heads), state.config);
    state.opt_gen = make_adam(concat(encoders, generator_parameters(heads)), state.config);
}

LossReport step_vae(TrainState& state, const Batch& batch) {
    check_batch(batch);
    auto& model = state.model;
    set_modes(model, Phase::vae, state.config.freeze_cgrs);
    model->zero_grad();
    set_lr(*state.opt_vae, lr_schedule(state.step, state.config));

    auto gen = phase_generator(state, Phase::vae);
    const auto lat_s = encode(model->vae, batch.source_images, Domain::source, std::nullopt, gen);
    const auto lat_t = encode(model->vae, batch.target_images, Domain::target, std::nullopt, gen);
    const auto recon_s = decode(model->vae, lat_s, Domain::source);
    const auto recon_t = decode(model->vae, lat_t, Domain::target);
    const auto terms = vae_loss(batch.source_images, batch.target_images, recon_s, recon_t, lat_s, lat_t,
                                state.config.weights);
    check_finite(terms.total, "VAE loss", state.step);
    terms.total.backward();
    state.opt_vae->step();

    LossReport report;
    report.vae_total = value(terms.total);
    report.vae_like = value(terms.like);
    report.vae_prior = value(terms.prior);
    return report;
}

LossReport step_discriminator(TrainState& state, const Batch& batch) {
    check_batch(batch);
    auto& model = state.model;
    auto& vae = model->vae;
    auto& heads = model->heads;
    const auto& cfg = state.config;
    set_modes(model, Phase::discriminator, cfg.freeze_cgrs);
    model->zero_grad();
    set_lr(*state.opt_disc, lr_schedule(state.step, cfg));

    auto gen = phase_generator(state, Phase::discriminator);
    auto noise = graft_noise_for(state, Phase::discriminator);
    const GraftNoise* noise_ptr = noise ? &*noise : nullptr;
    const bool semi = batch.target_labeled_images.has_value();

    std::array<torch::Tensor, 2> real;
    std::array<torch::Tensor, 2> fake;
    std::array<torch::Tensor, 2> labeled;
    {
        torch::NoGradGuard no_grad;
        const auto lat_s = encode(vae, batch.source_images, Domain::source, std::nullopt, gen);
        const auto lat_t = encode(vae, batch.target_images, Domain::target, std::nullopt, gen);
        std::optional<LatentBatch> lat_l;
        if (semi) lat_l = encode(vae, *batch.target_labeled_images, Domain::target, std::nullopt, gen);
        for (const auto channel : kChannels) {
            const auto c = static_cast<std::size_t>(channel.index());
            real[c] = graft(vae, lat_s, channel, cfg.split, noise_ptr);
            fake[c] = generate(heads, graft(vae, lat_t, channel, cfg.split, noise_ptr), channel);
            if (semi) labeled[c] = generate(heads, graft(vae, *lat_l, channel, cfg.split, noise_ptr), channel);
        }
    }

    std::array<torch::Tensor, 2> disc;
    std::array<torch::Tensor, 2> class_logits;
    torch::Tensor semi_task;
    for (const auto channel : kChannels) {
        const auto c = static_cast<std::size_t>(channel.index());
        const auto on_real = discriminate(heads, real[c], channel);
        const auto on_fake = discriminate(heads, fake[c], channel);
        disc[c] = adversarial_losses_from_logits(on_real.domain_logit, on_fake.domain_logit, cfg.weights).disc;
        class_logits[c] = on_real.class_logits;
        if (semi) {
            auto term = cross_entropy(discriminate(heads, labeled[c], channel).class_logits, *batch.target_labeled_labels);
            semi_task = semi_task.defined() ? semi_task + term : term;
        }
    }
    auto task = task_loss(class_logits[0], class_logits[1], batch.source_labels);
    if (semi_task.defined()) task = task + semi_task;
    const auto total = disc[0] + disc[1] + task;
    check_finite(total, "discriminator loss", state.step);
    total.backward();
    state.opt_disc->step();

    LossReport report;
    report.adv_st = -value(disc[0]);
    report.adv_ts = -value(disc[1]);
    report.task = value(task);
    return report;
}

LossReport step_generator(TrainState& state, const Batch& batch) {
    check_batch(batch);
    auto& model = state.model;
    auto& vae = model->vae;
    auto& heads = model->heads;
    const auto& cfg = state.config;
    set_modes(model, Phase::generator, cfg.freeze_cgrs);
    model->zero_grad();
    set_lr(*state.opt_gen, lr_schedule(state.step, cfg));

    auto gen = phase_generator(state, Phase::generator);
    auto noise = graft_noise_for(state, Phase::generator);
    const GraftNoise* noise_ptr = noise ? &*noise : nullptr;

    const auto lat_s = encode(vae, batch.source_images, Domain::source, std::nullopt, gen);
    const auto lat_t = encode(vae, batch.target_images, Domain::target, std::nullopt, gen);

    std::array<torch::Tensor, 2> gen_terms;
    std::array<torch::Tensor, 2> content_terms;
    torch::Tensor total;
    for (const auto channel : kChannels) {
        const auto c = static_cast<std::size_t>(channel.index());
        const auto real = graft(vae, lat_s, channel, cfg.split, noise_ptr);
        const auto fake = generate(heads, graft(vae, lat_t, channel, cfg.split, noise_ptr), channel);
        const auto on_fake = discriminate(heads, fake, channel);
        gen_terms[c] = cfg.weights.lambda0 * torch::nn::functional::softplus(-on_fake.domain_logit).mean();
        auto term = gen_terms[c];
        if (cfg.content_constancy) {
            content_terms[c] = content_loss(real, fake, state.content_mask, cfg.weights);
            term = term + content_terms[c];
        }
        total = total.defined() ? total + term : term;
    }
    check_finite(total, "generator loss", state.step);
    total.backward();
    state.opt_gen->step();

    LossReport report;
    report.gen_st = value(gen_terms[0]);
    report.gen_ts = value(gen_terms[1]);
    if (cfg.content_constancy) {
        report.content_st = value(content_terms[0]);
        report.content_ts = value(content_terms[1]);
    }
    return report;
}

LossReport run_round(TrainState& state, const Batch& batch) {
    const auto vae = step_vae(state, batch);
    const auto disc = step_discriminator(state, batch);
    const auto gen = step_generator(state, batch);
    LossReport report;
    report.vae_total = vae.vae_total;
    report.vae_like = vae.vae_like;
    report.vae_prior = vae.vae_prior;
    report.adv_st = disc.adv_st;
    report.adv_ts = disc.adv_ts;
    report.task = disc.task;
    report.gen_st = gen.gen_st;
    report.gen_ts = gen.gen_ts;
    report.content_st = gen.content_st;
    report.content_ts = gen.content_ts;
    ++state.step;
    return report;
}

BatchSampler::BatchSampler(std::int64_t count, std::int64_t batch_size, std::uint64_t seed, std::uint64_t stream)
    : count_(count), batch_size_(batch_size), seed_(seed), stream_(stream) {
    if (count_ <= 0) throw DataError("cannot sample batches from an empty dataset");
    if (batch_size_ <= 0) throw ConfigError("batch_size must be positive");
}

const std::vector<std::int64_t>& BatchSampler::epoch(std::int64_t e) {
    if (e != cached_epoch_) {
        cached_.resize(static_cast<std::size_t>(count_));
        std::iota(cached_.begin(), cached_.end(), 0);
        std::mt19937_64 rng(mix_seed(seed_, stream_, static_cast<std::uint64_t>(e)));
        std::shuffle(cached_.begin(), cached_.end(), rng);
        cached_epoch_ = e;
    }
    return cached_;
}

torch::Tensor BatchSampler::indices(std::int64_t batch_number) {
    std::vector<std::int64_t> out(static_cast<std::size_t>(batch_size_));
    const auto start = batch_number * batch_size_;
    for (std::int64_t i = 0; i < batch_size_; ++i) {
        const auto position = start + i;
        out[static_cast<std::size_t>(i)] = epoch(position / count_)[static_cast<std::size_t>(position % count_)];
    }
    return torch::tensor(out, torch::kInt64);
}

BatchSource::BatchSource(const TrainingData& data, std::int64_t batch_size, std::uint64_t seed)
    : data_(data),
      source_(data.source.count(), batch_size, seed, 1),
      target_(data.target.count(), batch_size, seed, 2) {
    if (data.target_labeled && data.target_labeled->count() > 0) {
        labeled_.emplace(data.target_labeled->count(), std::min(batch_size, data.target_labeled->count()), seed, 3);
    }
}

Batch BatchSource::at(std::int64_t step) {
    Batch batch;
    const auto s = source_.indices(step);
    batch.source_images = data_.source.images.index_select(0, s);
    batch.source_labels = data_.source.labels.index_select(0, s);
    batch.target_images = data_.target.images().index_select(0, target_.indices(step));
    if (labeled_) {
        const auto l = labeled_->indices(step);
        batch.target_labeled_images = data_.target_labeled->images.index_select(0, l);
        batch.target_labeled_labels = data_.target_labeled->labels.index_select(0, l);
    }
    return batch;
}

SynthesisOptions synthesis_options(const ExperimentConfig& config) {
    SynthesisOptions options;
    options.seed = config.synth_seed;
    options.backgrounds = config.backgrounds;
    return options;
}

std::filesystem::path resolve_data_root(const ExperimentConfig& config) {
    if (!config.data_root.empty()) return config.data_root;
    if (const char* env = std::getenv("CGRS_DATA_ROOT"); env != nullptr && *env != '\0') return env;
    throw ConfigError("no dataset root: set data_root or the CGRS_DATA_ROOT environment variable");
}

TrainingData load_training_data(const ExperimentConfig& config) {
    const auto root = resolve_data_root(config);
    const auto synthesis = synthesis_options(config);
    const auto load = [&](DatasetId id) {
        return preprocess(take_first(load_dataset(id, Split::train, root, synthesis), config.max_train_samples),
                          kImageChannels);
    };
    return make_training_data(load(config.scenario.source), load(config.scenario.target),
                              config.semi_supervised_target_count, config.seed);
}

LabeledImageSet load_target_test(const ExperimentConfig& config) {
    return preprocess(load_dataset(config.scenario.target, Split::test, resolve_data_root(config), synthesis_options(config)),
                      kImageChannels);
}

void configure_runtime(const ExperimentConfig& config) {
    if (config.threads > 0) torch::set_num_threads(static_cast<int>(config.threads));
    at::globalContext().setDeterministicAlgorithms(true, true);
}

TrainState run_training(const ExperimentConfig& config, const TrainingData& data, const TrainOptions& options) {
    if (options.resume_from) return run_training(load_checkpoint(*options.resume_from, config.resolved()), data, options);
    return run_training(make_train_state(config), data, options);
}

namespace {

class TrainingLog {
public:
    TrainingLog(const std::filesystem::path& path, bool append) {
        const bool header = !append || !std::filesystem::exists(path);
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw IoError("cannot write training log " + path.string());
        out_ << std::setprecision(10);
        if (header) {
            out_ << "step,lr";
            for (const auto& f : loss_report_fields()) out_ << ',' << f;
            out_ << '\n';
        }
    }

    void append(std::int64_t step, double lr, const LossReport& report) {
        out_ << step << ',' << lr;
        for (double v : loss_report_values(report)) out_ << ',' << v;
        out_ << '\n';
        if (!out_) throw IoError("failed writing training log");
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

}  // namespace

TrainState run_training(TrainState state, const TrainingData& data, const TrainOptions& options) {
    const auto& cfg = state.config;
    configure_runtime(cfg);
    if (data.source.count() == 0 || data.target.count() == 0) throw DataError("training data is empty");

    std::optional<TrainingLog> log;
    if (options.write_files) {
        if (cfg.out_dir.empty()) throw ConfigError("out_dir is required to write checkpoints and the training log");
        std::filesystem::create_directories(cfg.out_dir);
        log.emplace(cfg.out_dir / "train_log.csv", state.step > 0);
    }

    BatchSource batches(data, cfg.batch_size, cfg.seed);
    while (state.step < cfg.total_steps) {
        const auto step = state.step;
        const auto lr = lr_schedule(step, cfg);
        LossReport report;
        try {
            report = run_round(state, batches.at(step));
        } catch (const NumericError&) {
            if (options.write_files) save_checkpoint(state, cfg.out_dir / "diagnostic.ckpt");
            throw;
        }
        if (log) log->append(state.step, lr, report);
        if (options.on_round) options.on_round(state.step, report);
        if (cfg.log_every > 0 && state.step % cfg.log_every == 0) {
            if (log) log->flush();
            std::cerr << "[train] step " << state.step << "/" << cfg.total_steps << " lr " << lr << " vae "
                      << report.vae_total << " adv " << report.adv_st << "/" << report.adv_ts << " task "
                      << report.task << '\n';
        }
        if (options.write_files && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
            state.step < cfg.total_steps) {
            save_checkpoint(state, cfg.out_dir / ("checkpoint_" + std::to_string(state.step) + ".ckpt"));
        }
    }
    if (options.write_files) save_checkpoint(state, cfg.out_dir / "final.ckpt");
    return state;
}

}  // namespace cgrs
