#include "cgrs/config.hpp"

#include "cgrs/error.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace cgrs {

// ---------------------------------------------------------------------------
// types.hpp parsing

StackSplit StackSplit::parse(std::string_view text) {
    const auto fail = [&] {
        return ConfigError("invalid split '" + std::string(text) + "': expected H<k>L<6-k>, e.g. H4L2");
    };
    if (text.size() < 4 || (text[0] != 'H' && text[0] != 'h')) throw fail();
    const auto l_pos = text.find_first_of("Ll");
    if (l_pos == std::string_view::npos || l_pos < 2) throw fail();
    StackSplit split{};
    const auto high = text.substr(1, l_pos - 1);
    const auto low = text.substr(l_pos + 1);
    auto [p1, e1] = std::from_chars(high.data(), high.data() + high.size(), split.n_high);
    auto [p2, e2] = std::from_chars(low.data(), low.data() + low.size(), split.n_low);
    if (e1 != std::errc{} || e2 != std::errc{} || p1 != high.data() + high.size() ||
        p2 != low.data() + low.size()) {
        throw fail();
    }
    split.validate();
    return split;
}

std::string StackSplit::label() const { return "H" + std::to_string(n_high) + "L" + std::to_string(n_low); }

void StackSplit::validate() const {
    if (n_high < 0 || n_low < 0 || n_high + n_low != kDecoderDepth) {
        throw ConfigError("invalid split (n_high=" + std::to_string(n_high) + ", n_low=" + std::to_string(n_low) +
                          "): n_high + n_low must equal " + std::to_string(kDecoderDepth) +
                          " with both nonnegative");
    }
}

GraftChannel GraftChannel::parse(std::string_view text) {
    if (text == "st") return st();
    if (text == "ts") return ts();
    throw ConfigError("unknown channel '" + std::string(text) + "': expected st or ts");
}

DatasetId parse_dataset_id(std::string_view text) {
    for (auto id : kAllDatasets) {
        if (to_string(id) == text) return id;
    }
    throw ConfigError("unknown dataset '" + std::string(text) +
                      "': expected one of mnist, mnist-m, usps, m-digits, fashion, fashion-m");
}

std::string to_string(DatasetId id) {
    switch (id) {
        case DatasetId::mnist: return "mnist";
        case DatasetId::mnist_m: return "mnist-m";
        case DatasetId::usps: return "usps";
        case DatasetId::m_digits: return "m-digits";
        case DatasetId::fashion: return "fashion";
        case DatasetId::fashion_m: return "fashion-m";
    }
    return "?";
}

bool is_synthesized(DatasetId id) {
    return id == DatasetId::mnist_m || id == DatasetId::m_digits || id == DatasetId::fashion_m;
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw ConfigError("unknown split id '" + std::string(text) + "': expected train or test");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Scenario Scenario::parse(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw ConfigError("invalid scenario '" + std::string(text) + "': expected source:target");
    }
    return Scenario{parse_dataset_id(text.substr(0, colon)), parse_dataset_id(text.substr(colon + 1))};
}

std::string Scenario::label() const { return to_string(source) + ":" + to_string(target); }

bool Scenario::involves_fashion() const {
    const auto f = [](DatasetId d) { return d == DatasetId::fashion || d == DatasetId::fashion_m; };
    return f(source) || f(target);
}

// ---------------------------------------------------------------------------
// ExperimentConfig

std::int64_t default_total_steps(const Scenario& scenario) {
    return scenario.involves_fashion() ? 100000 : 50000;
}

ExperimentConfig ExperimentConfig::resolved() const {
    ExperimentConfig out = *this;
    if (out.total_steps == 0) out.total_steps = default_total_steps(out.scenario);
    return out;
}

void ExperimentConfig::validate() const {
    const auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid configuration: " + what);
    };
    require(config_version == kConfigVersion,
            "config_version " + std::to_string(config_version) + " is not supported (expected " +
                std::to_string(kConfigVersion) + ")");
    split.validate();
    require(batch_size > 0, "batch_size must be > 0");
    require(total_steps >= 0, "total_steps must be >= 0");
    require(lr0 > 0.0, "lr0 must be > 0");
    require(decay > 0.0 && decay <= 1.0, "decay must lie in (0, 1]");
    require(decay_every > 0, "decay_every must be > 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be > 0");
    require(weights.lambda0 >= 0 && weights.lambda1 >= 0 && weights.lambda2 >= 0 && weights.lambda3 >= 0,
            "loss weights must be nonnegative");
    require(semi_supervised_target_count >= 0, "semi_supervised_target_count must be >= 0");
    require(graft_noise_sigma >= 0.0, "graft_noise_sigma must be >= 0");
    require(arch.latent_channels > 0 && arch.base_width >= 2 && arch.generator_width > 0 &&
                arch.generator_blocks >= 0 && arch.disc_width > 0 && arch.disc_feature_width > 0,
            "architecture widths must be positive (base_width >= 2)");
    require(max_train_samples >= 0, "max_train_samples must be >= 0");
    require(log_every > 0, "log_every must be > 0");
    require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
    require(baseline_steps >= 0, "baseline_steps must be >= 0");
    require(eval_batch_size > 0, "eval_batch_size must be > 0");
    require(threads >= 0, "threads must be >= 0");
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("invalid boolean '" + text + "' for key '" + key + "'");
}

struct KeyBinding {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
KeyBinding int_key(std::string key, T ExperimentConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
            [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_number<T>(k, v);
            }};
}

template <typename T>
KeyBinding arch_key(std::string key, T ArchitectureConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return std::to_string(c.arch.*member); },
            [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.arch.*member = parse_number<T>(k, v);
            }};
}

KeyBinding real_key(std::string key, double ExperimentConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return format_double(c.*member); },
            [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_number<double>(k, v);
            }};
}

KeyBinding weight_key(std::string key, double LossWeights::*member) {
    return {key, [member](const ExperimentConfig& c) { return format_double(c.weights.*member); },
            [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.weights.*member = parse_number<double>(k, v);
            }};
}

KeyBinding bool_key(std::string key, bool ExperimentConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return format_bool(c.*member); },
            [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_bool(k, v);
            }};
}

KeyBinding path_key(std::string key, std::filesystem::path ExperimentConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return (c.*member).string(); },
            [member](ExperimentConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

const std::vector<KeyBinding>& bindings() {
    static const std::vector<KeyBinding> table = [] {
        std::vector<KeyBinding> t;
        t.push_back(int_key("config_version", &ExperimentConfig::config_version));
        t.push_back({"scenario", [](const ExperimentConfig& c) { return c.scenario.label(); },
                     [](ExperimentConfig& c, const std::string&, const std::string& v) {
                         c.scenario = Scenario::parse(v);
                     }});
        t.push_back({"split", [](const ExperimentConfig& c) { return c.split.label(); },
                     [](ExperimentConfig& c, const std::string&, const std::string& v) {
                         c.split = StackSplit::parse(v);
                     }});
        t.push_back(weight_key("lambda0", &LossWeights::lambda0));
        t.push_back(weight_key("lambda1", &LossWeights::lambda1));
        t.push_back(weight_key("lambda2", &LossWeights::lambda2));
        t.push_back(weight_key("lambda3", &LossWeights::lambda3));
        t.push_back(arch_key("latent_channels", &ArchitectureConfig::latent_channels));
        t.push_back(arch_key("base_width", &ArchitectureConfig::base_width));
        t.push_back(arch_key("generator_width", &ArchitectureConfig::generator_width));
        t.push_back(arch_key("generator_blocks", &ArchitectureConfig::generator_blocks));
        t.push_back(arch_key("disc_width", &ArchitectureConfig::disc_width));
        t.push_back(arch_key("disc_feature_width", &ArchitectureConfig::disc_feature_width));
        t.push_back(int_key("batch_size", &ExperimentConfig::batch_size));
        t.push_back(int_key("total_steps", &ExperimentConfig::total_steps));
        t.push_back(real_key("lr0", &ExperimentConfig::lr0));
        t.push_back(real_key("decay", &ExperimentConfig::decay));
        t.push_back(int_key("decay_every", &ExperimentConfig::decay_every));
        t.push_back(real_key("adam_beta1", &ExperimentConfig::adam_beta1));
        t.push_back(real_key("adam_beta2", &ExperimentConfig::adam_beta2));
        t.push_back(real_key("adam_eps", &ExperimentConfig::adam_eps));
        t.push_back(int_key("seed", &ExperimentConfig::seed));
        t.push_back(bool_key("content_constancy", &ExperimentConfig::content_constancy));
        t.push_back(int_key("semi_supervised_target_count", &ExperimentConfig::semi_supervised_target_count));
        t.push_back(bool_key("graft_noise", &ExperimentConfig::graft_noise));
        t.push_back(real_key("graft_noise_sigma", &ExperimentConfig::graft_noise_sigma));
        t.push_back(bool_key("freeze_cgrs", &ExperimentConfig::freeze_cgrs));
        t.push_back(path_key("data_root", &ExperimentConfig::data_root));
        t.push_back(path_key("out_dir", &ExperimentConfig::out_dir));
        t.push_back(path_key("backgrounds", &ExperimentConfig::backgrounds));
        t.push_back(path_key("mask", &ExperimentConfig::mask));
        t.push_back(int_key("synth_seed", &ExperimentConfig::synth_seed));
        t.push_back(int_key("max_train_samples", &ExperimentConfig::max_train_samples));
        t.push_back(int_key("log_every", &ExperimentConfig::log_every));
        t.push_back(int_key("checkpoint_every", &ExperimentConfig::checkpoint_every));
        t.push_back(int_key("baseline_steps", &ExperimentConfig::baseline_steps));
        t.push_back(int_key("eval_batch_size", &ExperimentConfig::eval_batch_size));
        t.push_back(int_key("threads", &ExperimentConfig::threads));
        return t;
    }();
    return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& b : bindings()) k.push_back(b.key);
        return k;
    }();
    return keys;
}

std::map<std::string, std::string> ExperimentConfig::to_key_values() const {
    std::map<std::string, std::string> out;
    for (const auto& b : bindings()) out.emplace(b.key, b.get(*this));
    return out;
}

ExperimentConfig ExperimentConfig::from_key_values(const std::map<std::string, std::string>& values,
                                                   const ExperimentConfig& base) {
    ExperimentConfig config = base;
    for (const auto& [key, value] : values) {
        const auto it = std::find_if(bindings().begin(), bindings().end(),
                                     [&](const KeyBinding& b) { return b.key == key; });
        if (it == bindings().end()) throw ConfigError("unknown configuration key '" + key + "'");
        it->set(config, key, value);
    }
    return config;
}

ExperimentConfig ExperimentConfig::from_key_values(const std::map<std::string, std::string>& values) {
    return from_key_values(values, ExperimentConfig{});
}

ExperimentConfig load_config_file(const std::filesystem::path& path, const ExperimentConfig& base) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::BadFile&) {
        throw IoError("cannot read config file " + path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("malformed config file " + path.string() + ": " + e.what());
    }
    if (!root.IsMap()) throw ConfigError("config file " + path.string() + " must be a key-value mapping");
    if (!root["config_version"]) {
        throw ConfigError("config file " + path.string() + " lacks the config_version field");
    }
    std::map<std::string, std::string> values;
    for (const auto& entry : root) {
        if (!entry.second.IsScalar()) {
            throw ConfigError("config key '" + entry.first.as<std::string>() + "' must hold a scalar");
        }
        values[entry.first.as<std::string>()] = entry.second.as<std::string>();
    }
    return ExperimentConfig::from_key_values(values, base);
}

std::string dump_config(const ExperimentConfig& config) {
    const auto kv = config.to_key_values();
    std::ostringstream out;
    for (const auto& key : config_keys()) {
        const auto& value = kv.at(key);
        out << key << ": " << (value.empty() ? "\"\"" : value) << '\n';
    }
    return out.str();
}

void save_config_file(const ExperimentConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file " + path.string());
    out << dump_config(config);
    if (!out) throw IoError("failed writing config file " + path.string());
}

}  // namespace cgrs
