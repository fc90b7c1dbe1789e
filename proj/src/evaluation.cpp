#include "cgrs/evaluation.hpp"

#include "cgrs/error.hpp"
#include "cgrs/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace cgrs {

namespace {

// Puts every network in inference mode for its lifetime.
class InferenceScope {
public:
    explicit InferenceScope(torch::nn::Module& module) : module_(module), was_training_(module.is_training()) {
        module_.eval();
    }
    ~InferenceScope() { module_.train(was_training_); }
    InferenceScope(const InferenceScope&) = delete;
    InferenceScope& operator=(const InferenceScope&) = delete;

private:
    torch::nn::Module& module_;
    bool was_training_;
    torch::NoGradGuard no_grad_;
};

torch::Tensor latent_mean(VaePair& vae, const torch::Tensor& images, Domain domain) {
    return encode(vae, images, domain, std::nullopt, at::make_generator<at::CPUGeneratorImpl>(0)).mean;
}

torch::Tensor adversarial_association(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& target,
                                      GraftChannel channel) {
    const auto z = latent_mean(model->vae, target, Domain::target);
    return generate(model->heads, graft(model->vae, z, channel, config.split), channel);
}

torch::Tensor class_logits(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& target,
                           GraftChannel channel) {
    return discriminate(model->heads, adversarial_association(model, config, target, channel), channel).class_logits;
}

template <typename Fn>
torch::Tensor batched(const torch::Tensor& images, std::int64_t batch_size, Fn&& fn) {
    std::vector<torch::Tensor> parts;
    const auto n = images.size(0);
    const auto step = batch_size > 0 ? batch_size : n;
    for (std::int64_t begin = 0; begin < n; begin += step) {
        parts.push_back(fn(images.slice(0, begin, std::min(n, begin + step))));
    }
    if (parts.empty()) return torch::empty({0}, torch::kInt64);
    return torch::cat(parts);
}

EvalReport score(const ExperimentConfig& config, std::int64_t step, const torch::Tensor& predictions,
                 const LabeledImageSet& test, std::string channel) {
    EvalReport report;
    report.scenario = config.scenario.label();
    report.channel = std::move(channel);
    report.split = config.split.label();
    report.n_test = test.count();
    report.n_correct = predictions.eq(test.labels).sum().item<std::int64_t>();
    report.accuracy = report.n_test > 0 ? static_cast<double>(report.n_correct) / static_cast<double>(report.n_test) : 0.0;
    report.checkpoint_step = step;
    report.budget_steps = step;
    return report;
}

void check_test_set(const LabeledImageSet& test) {
    test.check();
    if (test.count() == 0) throw DataError("test set '" + test.name + "' is empty");
    if (test.channels() != kImageChannels) {
        throw ConfigError("test set '" + test.name + "' must be preprocessed to 3 channels");
    }
}

}  // namespace

torch::Tensor predict_classes(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& target_images,
                              GraftChannel channel) {
    InferenceScope scope(*model);
    return batched(target_images, config.eval_batch_size, [&](const torch::Tensor& chunk) {
        return class_logits(model, config, chunk, channel).argmax(1);
    });
}

torch::Tensor predict_classes_combined(CgrsModel& model, const ExperimentConfig& config,
                                       const torch::Tensor& target_images) {
    InferenceScope scope(*model);
    return batched(target_images, config.eval_batch_size, [&](const torch::Tensor& chunk) {
        const auto p_st = torch::softmax(class_logits(model, config, chunk, GraftChannel::st()), 1);
        const auto p_ts = torch::softmax(class_logits(model, config, chunk, GraftChannel::ts()), 1);
        return ((p_st + p_ts) / 2).argmax(1);
    });
}

EvalReport evaluate_accuracy(const TrainState& state, const LabeledImageSet& target_test, GraftChannel channel) {
    check_test_set(target_test);
    auto model = state.model;
    return score(state.config, state.step, predict_classes(model, state.config, target_test.images, channel),
                 target_test, channel.name());
}

EvalReport evaluate_combined(const TrainState& state, const LabeledImageSet& target_test) {
    check_test_set(target_test);
    auto model = state.model;
    return score(state.config, state.step, predict_classes_combined(model, state.config, target_test.images),
                 target_test, "combined");
}

EvalReport evaluate_source_only(const ExperimentConfig& config, const LabeledImageSet& train,
                                const LabeledImageSet& test, bool target_only) {
    const auto cfg = config.resolved();
    cfg.validate();
    train.check();
    check_test_set(test);
    configure_runtime(cfg);

    torch::manual_seed(cfg.seed);
    Discriminator classifier(cfg.arch);
    torch::optim::Adam opt(classifier->parameters(), torch::optim::AdamOptions(cfg.lr0)
                                                         .betas({cfg.adam_beta1, cfg.adam_beta2})
                                                         .eps(cfg.adam_eps));
    BatchSampler sampler(train.count(), cfg.batch_size, cfg.seed, 7);
    classifier->train();
    for (std::int64_t step = 0; step < cfg.baseline_steps; ++step) {
        for (auto& group : opt.param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr_schedule(step, cfg));
        }
        const auto idx = sampler.indices(step);
        opt.zero_grad();
        const auto logits = classifier->forward(to_channels_first(train.images.index_select(0, idx))).class_logits;
        const auto loss = cross_entropy(logits, train.labels.index_select(0, idx));
        check_finite(loss, "baseline classifier loss", step);
        loss.backward();
        opt.step();
    }

    classifier->eval();
    torch::NoGradGuard no_grad;
    const auto predictions = batched(test.images, cfg.eval_batch_size, [&](const torch::Tensor& chunk) {
        return classifier->forward(to_channels_first(chunk)).class_logits.argmax(1);
    });
    auto report = score(cfg, cfg.baseline_steps, predictions, test, target_only ? "target-only" : "source-only");
    report.split.clear();
    return report;
}

std::int64_t sweep_budget(const ExperimentConfig& config, std::int64_t budget_steps) {
    if (budget_steps > 0) return budget_steps;
    return std::max<std::int64_t>(1, config.resolved().total_steps / 5);
}

std::vector<EvalReport> sweep_cgrs(const ExperimentConfig& config, const std::vector<StackSplit>& splits,
                                   const TrainingData& data, const LabeledImageSet& target_test,
                                   std::int64_t budget_steps) {
    const auto budget = sweep_budget(config, budget_steps);
    std::vector<EvalReport> reports;
    for (const auto& split : splits) {
        auto cfg = config.resolved();
        cfg.split = split;
        cfg.total_steps = budget;
        if (!cfg.out_dir.empty()) cfg.out_dir = config.out_dir / split.label();
        try {
            split.validate();
            TrainOptions options;
            options.write_files = !cfg.out_dir.empty();
            const auto state = run_training(cfg, data, options);
            for (const auto channel : kChannels) reports.push_back(evaluate_accuracy(state, target_test, channel));
        } catch (const std::exception& e) {
            std::cerr << "[sweep] split " << split.label() << " failed: " << e.what() << '\n';
            for (const auto channel : kChannels) {
                EvalReport failed;
                failed.scenario = cfg.scenario.label();
                failed.channel = channel.name();
                failed.split = split.label();
                failed.budget_steps = budget;
                failed.error = e.what();
                reports.push_back(failed);
            }
        }
    }
    return reports;
}

TrainState transfer_cgrs(const TrainState& source, const ExperimentConfig& new_config, const TrainingData& data,
                         const TrainOptions& options) {
    auto cfg = new_config.resolved();
    if (!(cfg.arch == source.config.arch)) {
        throw ConfigError("transfer: architecture of the new configuration differs from the checkpoint's");
    }
    cfg.freeze_cgrs = true;
    auto state = make_train_state(cfg);
    {
        torch::NoGradGuard no_grad;
        for (const auto domain : {Domain::source, Domain::target}) {
            auto from = source.model->vae->decoder(domain);
            auto to = state.model->vae->decoder(domain);
            const auto src_params = from->named_parameters();
            for (auto& item : to->named_parameters()) item.value().copy_(src_params[item.key()]);
            const auto src_buffers = from->named_buffers();
            for (auto& item : to->named_buffers()) item.value().copy_(src_buffers[item.key()]);
        }
    }
    return run_training(std::move(state), data, options);
}

torch::Tensor to_pixels(const torch::Tensor& images) {
    return ((images.to(torch::kFloat32) + 1.0) * 127.5).round().clamp(0.0, 255.0).to(torch::kUInt8);
}

torch::Tensor association_grid(CgrsModel& model, const ExperimentConfig& config, const torch::Tensor& batch_s,
                               const torch::Tensor& batch_t, GraftChannel channel) {
    if (batch_s.size(0) != batch_t.size(0)) {
        throw ContractViolation("export_associations: source and target batches differ in size");
    }
    InferenceScope scope(*model);
    auto& vae = model->vae;
    const auto z_s = latent_mean(vae, batch_s, Domain::source);
    const auto z_t = latent_mean(vae, batch_t, Domain::target);
    const auto source_assoc = graft(vae, z_s, channel, config.split);
    const auto target_assoc = graft(vae, z_t, channel, config.split);
    const auto adversarial = generate(model->heads, target_assoc, channel);
    // Columns side by side: (B, 28, 5 * 28, 3), then rows stacked.
    const auto row = torch::cat({batch_s, source_assoc, adversarial, target_assoc, batch_t}, 2);
    return to_pixels(row.reshape({-1, row.size(2), row.size(3)}));
}

std::vector<std::filesystem::path> export_associations(CgrsModel& model, const ExperimentConfig& config,
                                                       const torch::Tensor& batch_s, const torch::Tensor& batch_t,
                                                       const std::filesystem::path& prefix) {
    std::vector<std::filesystem::path> written;
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    for (const auto channel : kChannels) {
        const auto grid = association_grid(model, config, batch_s, batch_t, channel).contiguous();
        cv::Mat rgb(static_cast<int>(grid.size(0)), static_cast<int>(grid.size(1)), CV_8UC3, grid.data_ptr<std::uint8_t>());
        cv::Mat bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        auto path = prefix;
        path += "_" + channel.name() + ".png";
        if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image grid " + path.string());
        written.push_back(path);
    }
    return written;
}

std::int64_t export_features(CgrsModel& model, const ExperimentConfig& config, const std::vector<FeatureBatch>& batches,
                             GraftChannel channel, const std::filesystem::path& path) {
    InferenceScope scope(*model);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write feature file " + path.string());
    out << std::setprecision(8);
    out << "domain\tlabel";
    for (std::int64_t i = 0; i < config.arch.disc_feature_width; ++i) out << "\tf" << i;
    out << '\n';

    std::int64_t rows = 0;
    for (const auto& batch : batches) {
        if (batch.labels.size(0) != batch.images.size(0)) {
            throw ContractViolation("export_features: label count differs from image count");
        }
        torch::Tensor input;
        if (batch.domain == Domain::source) {
            input = graft(model->vae, latent_mean(model->vae, batch.images, Domain::source), channel, config.split);
        } else {
            input = adversarial_association(model, config, batch.images, channel);
        }
        const auto features = discriminate(model->heads, input, channel).features.contiguous();
        const auto acc = features.accessor<float, 2>();
        const auto labels = batch.labels.to(torch::kInt64).contiguous();
        for (std::int64_t r = 0; r < features.size(0); ++r) {
            out << (batch.domain == Domain::source ? 0 : 1) << '\t' << labels[r].item<std::int64_t>();
            for (std::int64_t c = 0; c < features.size(1); ++c) out << '\t' << acc[r][c];
            out << '\n';
            ++rows;
        }
    }
    if (!out) throw IoError("failed writing feature file " + path.string());
    return rows;
}

void append_reports_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
    const bool header = !std::filesystem::exists(path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot write results file " + path.string());
    if (header) out << "scenario,channel,split,accuracy,n_correct,n_test,checkpoint_step,budget_steps,error\n";
    out << std::setprecision(10);
    for (const auto& r : reports) {
        std::string error = r.error;
        for (auto& ch : error) {
            if (ch == ',' || ch == '\n') ch = ' ';
        }
        out << r.scenario << ',' << r.channel << ',' << r.split << ',' << r.accuracy << ',' << r.n_correct << ','
            << r.n_test << ',' << r.checkpoint_step << ',' << r.budget_steps << ',' << error << '\n';
    }
    if (!out) throw IoError("failed writing results file " + path.string());
}

std::string format_report(const EvalReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4) << "scenario=" << r.scenario << " channel=" << r.channel;
    if (!r.split.empty()) out << " split=" << r.split;
    out << " accuracy=" << r.accuracy << " (" << r.n_correct << "/" << r.n_test << ") step=" << r.checkpoint_step;
    if (!r.error.empty()) out << " error=\"" << r.error << "\"";
    return out.str();
}

}  // namespace cgrs
