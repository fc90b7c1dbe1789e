#include "cgrs/cli.hpp"

#include "cgrs/config.hpp"
#include "cgrs/datasets.hpp"
#include "cgrs/error.hpp"
#include "cgrs/evaluation.hpp"
#include "cgrs/persistence.hpp"
#include "cgrs/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <map>
#include <ostream>
#include <sstream>

namespace cgrs {

namespace {

// Every configuration key as a flag, under its own name and its dashed form.
class ConfigFlags {
public:
    void attach(CLI::App& app, bool include_seed = true) {
        app.add_option("--config", file_, "Key-value configuration file (YAML)");
        app.add_flag("--dry-run", dry_run_, "Validate and print the plan without side effects");
        for (const auto& key : config_keys()) {
            if (key == "config_version" || (!include_seed && key == "seed")) continue;
            std::string names = "--" + key;
            auto dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            if (dashed != key) names += ",--" + dashed;
            if (key == "total_steps") names += ",--steps";
            options_[key] = app.add_option(names, values_[key], "Configuration key '" + key + "'");
        }
    }

    std::map<std::string, std::string> overrides() const {
        std::map<std::string, std::string> out;
        for (const auto& [key, option] : options_) {
            if (option->count() > 0) out[key] = values_.at(key);
        }
        return out;
    }

    ExperimentConfig resolve(ExperimentConfig base = {}) const {
        if (!file_.empty()) base = load_config_file(file_, base);
        return ExperimentConfig::from_key_values(overrides(), base).resolved();
    }

    bool dry_run() const { return dry_run_; }

private:
    std::string file_;
    bool dry_run_ = false;
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> options_;
};

ExperimentConfig checkpoint_config(const std::string& checkpoint, const ConfigFlags& flags) {
    const auto index = read_checkpoint_index(checkpoint);
    return flags.resolve(ExperimentConfig::from_key_values(index.config));
}

void announce(std::ostream& err, const std::string& command, const ExperimentConfig& config) {
    err << "[" << command << "] resolved configuration:\n" << dump_config(config);
}

std::vector<StackSplit> parse_splits(const std::string& text) {
    std::vector<StackSplit> splits;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) splits.push_back(StackSplit::parse(item));
    }
    if (splits.empty()) throw ConfigError("no splits given");
    return splits;
}

std::vector<StackSplit> all_splits() {
    std::vector<StackSplit> splits;
    for (int h = kDecoderDepth; h >= 0; --h) splits.push_back(StackSplit{h, kDecoderDepth - h});
    return splits;
}

void emit(std::ostream& out, const std::vector<EvalReport>& reports, const std::string& results) {
    for (const auto& r : reports) out << format_report(r) << '\n';
    if (!results.empty()) append_reports_csv(reports, results);
}

LabeledImageSet preprocessed(DatasetId id, Split split, const ExperimentConfig& config, std::int64_t limit) {
    return preprocess(take_first(load_dataset(id, split, resolve_data_root(config), synthesis_options(config)), limit),
                      kImageChannels);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-grafted representation stacks for unsupervised domain adaptation", "cgrs"};
    app.require_subcommand(1);

    // fetch
    auto* fetch = app.add_subcommand("fetch", "Download and verify raw dataset archives");
    ConfigFlags fetch_flags;
    fetch_flags.attach(*fetch);
    std::vector<std::string> fetch_ids{"mnist", "usps", "fashion"};
    fetch->add_option("datasets", fetch_ids, "Raw datasets: mnist, usps, fashion");

    // synth
    auto* synth = app.add_subcommand("synth", "Synthesise a derived dataset (mnist-m, m-digits, fashion-m)");
    ConfigFlags synth_flags;
    synth_flags.attach(*synth, false);
    std::string synth_id;
    std::string synth_split = "all";
    std::string synth_out;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("dataset", synth_id, "Derived dataset id")->required();
    synth->add_option("--data-split", synth_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    synth->add_option("--out", synth_out, "Output directory; one subdirectory per split")->required();
    synth->add_option("--seed", synth_seed, "Synthesis seed (overrides synth_seed)");

    // train
    auto* train = app.add_subcommand("train", "Train a CGRS-LA model");
    ConfigFlags train_flags;
    train_flags.attach(*train);
    std::string resume;
    train->add_option("--resume", resume, "Checkpoint to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "Target accuracy of a checkpoint");
    ConfigFlags eval_flags;
    eval_flags.attach(*eval);
    std::string eval_ckpt;
    std::string eval_channel = "all";
    std::string eval_results;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--channel", eval_channel, "st, ts, combined or all")
        ->check(CLI::IsMember({"st", "ts", "combined", "all"}));
    eval->add_option("--results", eval_results, "Append report rows to this CSV");

    // source-only
    auto* baseline = app.add_subcommand("source-only", "Source-only (or target-only) classifier baseline");
    ConfigFlags baseline_flags;
    baseline_flags.attach(*baseline);
    bool target_only = false;
    std::string baseline_results;
    baseline->add_flag("--target-only", target_only, "Train on labelled target data instead (upper bound)");
    baseline->add_option("--results", baseline_results, "Append the report row to this CSV");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate one model per stack split");
    ConfigFlags sweep_flags;
    sweep_flags.attach(*sweep);
    std::string sweep_splits;
    std::int64_t sweep_budget_steps = 0;
    std::string sweep_results;
    sweep->add_option("--splits", sweep_splits, "Comma-separated splits (default H6L0..H0L6)");
    sweep->add_option("--budget", sweep_budget_steps, "Steps per split (default 20% of total_steps)");
    sweep->add_option("--results", sweep_results, "Append report rows to this CSV");

    // transfer
    auto* transfer = app.add_subcommand("transfer", "Reuse a trained CGRS (frozen decoders) on a new scenario");
    ConfigFlags transfer_flags;
    transfer_flags.attach(*transfer);
    std::string transfer_ckpt;
    std::string transfer_results;
    transfer->add_option("--checkpoint", transfer_ckpt, "Checkpoint providing the decoder stacks")->required();
    transfer->add_option("--results", transfer_results, "Append report rows to this CSV");

    // export-assoc
    auto* assoc = app.add_subcommand("export-assoc", "Write association image grids");
    ConfigFlags assoc_flags;
    assoc_flags.attach(*assoc);
    std::string assoc_ckpt;
    std::string assoc_out;
    std::int64_t assoc_rows = 10;
    assoc->add_option("--checkpoint", assoc_ckpt, "Checkpoint file")->required();
    assoc->add_option("--out", assoc_out, "Output prefix; writes <prefix>_st.png and <prefix>_ts.png")->required();
    assoc->add_option("--rows", assoc_rows, "Test samples per domain")->check(CLI::PositiveNumber);

    // export-features
    auto* features = app.add_subcommand("export-features", "Write discriminator features as TSV");
    ConfigFlags features_flags;
    features_flags.attach(*features);
    std::string features_ckpt;
    std::string features_out;
    std::int64_t features_count = 500;
    std::string features_channel = "st";
    features->add_option("--checkpoint", features_ckpt, "Checkpoint file")->required();
    features->add_option("--out", features_out, "Output TSV path")->required();
    features->add_option("--count", features_count, "Test samples per domain")->check(CLI::PositiveNumber);
    features->add_option("--channel", features_channel, "st or ts")->check(CLI::IsMember({"st", "ts"}));

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's index");
    std::string inspect_path;
    bool inspect_dry = false;
    inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();
    inspect->add_flag("--dry-run", inspect_dry, "Accepted for uniformity; inspect has no side effects");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return static_cast<int>(ErrorCategory::config);
    }

    try {
        if (*fetch) {
            const auto config = fetch_flags.resolve();
            const auto root = resolve_data_root(config);
            std::vector<DatasetId> ids;
            for (const auto& name : fetch_ids) {
                ids.push_back(parse_dataset_id(name));
                archive_files(ids.back());
            }
            for (const auto id : ids) {
                err << "[fetch] plan: " << to_string(id) << " -> " << archive_dir(root, id).string() << '\n';
                if (!fetch_flags.dry_run()) fetch_dataset(id, root);
            }
            return 0;
        }

        if (*synth) {
            auto config = synth_flags.resolve();
            if (synth_seed) config.synth_seed = *synth_seed;
            announce(err, "synth", config);
            const auto id = parse_dataset_id(synth_id);
            if (!is_synthesized(id)) throw ConfigError("'" + synth_id + "' is a raw dataset; use fetch");
            std::vector<Split> splits;
            if (synth_split != "test") splits.push_back(Split::train);
            if (synth_split != "train") splits.push_back(Split::test);
            const auto root = resolve_data_root(config);
            for (const auto split : splits) {
                const auto dir = std::filesystem::path(synth_out) / to_string(split);
                err << "[synth] plan: " << synth_id << " " << to_string(split) << " seed " << config.synth_seed
                    << " -> " << dir.string() << '\n';
                if (synth_flags.dry_run()) continue;
                const auto set = synthesize_dataset(id, split, root, synthesis_options(config));
                err << "[synth] wrote " << set.count() << " samples, digest " << write_dataset_cache(set, dir) << '\n';
            }
            return 0;
        }

        if (*train) {
            const auto config = train_flags.resolve();
            config.validate();
            announce(err, "train", config);
            if (config.out_dir.empty()) throw ConfigError("train requires out_dir");
            err << "[train] plan: " << config.scenario.label() << " split " << config.split.label() << " for "
                << config.total_steps << " steps -> " << config.out_dir.string() << '\n';
            if (!resume.empty()) read_checkpoint_index(resume);
            if (train_flags.dry_run()) return 0;
            const auto data = load_training_data(config);
            TrainOptions options;
            if (!resume.empty()) options.resume_from = resume;
            const auto state = run_training(config, data, options);
            err << "[train] finished at step " << state.step << '\n';
            return 0;
        }

        if (*eval) {
            const auto config = checkpoint_config(eval_ckpt, eval_flags);
            announce(err, "eval", config);
            if (eval_flags.dry_run()) return 0;
            const auto state = load_checkpoint(eval_ckpt, config);
            const auto test = load_target_test(config);
            std::vector<EvalReport> reports;
            if (eval_channel == "st" || eval_channel == "all") {
                reports.push_back(evaluate_accuracy(state, test, GraftChannel::st()));
            }
            if (eval_channel == "ts" || eval_channel == "all") {
                reports.push_back(evaluate_accuracy(state, test, GraftChannel::ts()));
            }
            if (eval_channel == "combined" || eval_channel == "all") reports.push_back(evaluate_combined(state, test));
            emit(out, reports, eval_results);
            return 0;
        }

        if (*baseline) {
            const auto config = baseline_flags.resolve();
            config.validate();
            announce(err, "source-only", config);
            const auto train_id = target_only ? config.scenario.target : config.scenario.source;
            err << "[source-only] plan: classifier on " << to_string(train_id) << " for " << config.baseline_steps
                << " steps, tested on " << to_string(config.scenario.target) << '\n';
            if (baseline_flags.dry_run()) return 0;
            const auto train_set = preprocessed(train_id, Split::train, config, config.max_train_samples);
            const auto test = load_target_test(config);
            emit(out, {evaluate_source_only(config, train_set, test, target_only)}, baseline_results);
            return 0;
        }

        if (*sweep) {
            const auto config = sweep_flags.resolve();
            config.validate();
            announce(err, "sweep", config);
            const auto splits = sweep_splits.empty() ? all_splits() : parse_splits(sweep_splits);
            const auto budget = sweep_budget(config, sweep_budget_steps);
            err << "[sweep] plan: " << splits.size() << " splits, " << budget << " steps each\n";
            if (sweep_flags.dry_run()) return 0;
            const auto data = load_training_data(config);
            const auto test = load_target_test(config);
            emit(out, sweep_cgrs(config, splits, data, test, budget), sweep_results);
            return 0;
        }

        if (*transfer) {
            const auto config = transfer_flags.resolve();
            config.validate();
            announce(err, "transfer", config);
            const auto index = read_checkpoint_index(transfer_ckpt);
            err << "[transfer] plan: decoders from " << transfer_ckpt << " (step " << index.step << "), "
                << config.total_steps << " steps on " << config.scenario.label() << '\n';
            if (transfer_flags.dry_run()) return 0;
            if (config.out_dir.empty()) throw ConfigError("transfer requires out_dir");
            const auto source = load_checkpoint(transfer_ckpt);
            const auto data = load_training_data(config);
            const auto state = transfer_cgrs(source, config, data);
            const auto test = load_target_test(config);
            emit(out,
                 {evaluate_accuracy(state, test, GraftChannel::st()), evaluate_accuracy(state, test, GraftChannel::ts())},
                 transfer_results);
            return 0;
        }

        if (*assoc) {
            const auto config = checkpoint_config(assoc_ckpt, assoc_flags);
            announce(err, "export-assoc", config);
            err << "[export-assoc] plan: " << assoc_rows << " rows -> " << assoc_out << "_{st,ts}.png\n";
            if (assoc_flags.dry_run()) return 0;
            const auto state = load_checkpoint(assoc_ckpt, config);
            const auto source = preprocessed(config.scenario.source, Split::test, config, assoc_rows);
            const auto target = preprocessed(config.scenario.target, Split::test, config, assoc_rows);
            const auto rows = std::min(source.count(), target.count());
            auto model = state.model;
            for (const auto& path : export_associations(model, config, source.images.slice(0, 0, rows),
                                                        target.images.slice(0, 0, rows), assoc_out)) {
                err << "[export-assoc] wrote " << path.string() << '\n';
            }
            return 0;
        }

        if (*features) {
            const auto config = checkpoint_config(features_ckpt, features_flags);
            announce(err, "export-features", config);
            err << "[export-features] plan: " << features_count << " samples per domain -> " << features_out << '\n';
            if (features_flags.dry_run()) return 0;
            const auto state = load_checkpoint(features_ckpt, config);
            const auto source = preprocessed(config.scenario.source, Split::test, config, features_count);
            const auto target = preprocessed(config.scenario.target, Split::test, config, features_count);
            auto model = state.model;
            const auto rows = export_features(
                model, config,
                {FeatureBatch{source.images, source.labels, Domain::source},
                 FeatureBatch{target.images, target.labels, Domain::target}},
                GraftChannel::parse(features_channel), features_out);
            err << "[export-features] wrote " << rows << " rows to " << features_out << '\n';
            return 0;
        }

        if (*inspect) {
            out << describe_checkpoint(inspect_path) << '\n';
            return 0;
        }
    } catch (const Error& e) {
        err << "error (" << to_string(e.category()) << "): " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cgrs
