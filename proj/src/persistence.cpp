#include "cgrs/persistence.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"
#include "cgrs/training.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace cgrs {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'C', 'G', 'R', 'S', 'C', 'K', 'P', 'T'};

struct OptimizerRef {
    const char* name;
    torch::optim::Adam* optimizer;
};

std::array<OptimizerRef, 3> optimizers(const TrainState& state) {
    return {{{"opt_vae", state.opt_vae.get()}, {"opt_disc", state.opt_disc.get()}, {"opt_gen", state.opt_gen.get()}}};
}

std::map<const void*, std::string> parameter_names(const TrainState& state) {
    std::map<const void*, std::string> names;
    for (const auto& item : state.model->named_parameters()) names[item.value().unsafeGetTensorImpl()] = item.key();
    return names;
}

std::uint64_t align_up(std::uint64_t n) {
    return (n + kCheckpointAlignment - 1) / kCheckpointAlignment * kCheckpointAlignment;
}

template <typename T>
void put_le(std::string& out, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
    T value;
    std::memcpy(&value, in.data() + offset, sizeof(T));
    return value;
}

std::vector<std::int64_t> shape_of(const torch::Tensor& t) { return t.sizes().vec(); }

std::string shape_text(const std::vector<std::int64_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? ", " : "") + std::to_string(shape[i]);
    return out + "]";
}

struct ParsedCheckpoint {
    CheckpointIndex index;
    std::string bytes;
    std::size_t payload_start = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ParsedCheckpoint parse(const std::filesystem::path& path) {
    ParsedCheckpoint parsed;
    parsed.bytes = read_file(path);
    const auto& bytes = parsed.bytes;
    if (bytes.size() < kCheckpointHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw DataError(path.string() + " is not a checkpoint file");
    }
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kCheckpointVersion) {
        throw MigrationError("unsupported version " + std::to_string(version) + " in checkpoint " + path.string() +
                             " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto index_len = get_le<std::uint64_t>(bytes, 16);
    const auto payload_len = get_le<std::uint64_t>(bytes, 24);
    if (kCheckpointHeaderSize + index_len + payload_len != bytes.size()) {
        throw IntegrityError("checkpoint " + path.string() + " is truncated or has trailing bytes");
    }
    Sha256 hasher;
    hasher.update(std::as_bytes(std::span(bytes.data() + kCheckpointHeaderSize, index_len + payload_len)));
    const auto digest = hasher.hex_digest();
    std::string stored_hex;
    for (std::size_t i = 0; i < 32; ++i) {
        static constexpr char kHex[] = "0123456789abcdef";
        const auto b = static_cast<unsigned char>(bytes[32 + i]);
        stored_hex += kHex[b >> 4];
        stored_hex += kHex[b & 0xF];
    }
    if (digest != stored_hex) {
        throw IntegrityError("checkpoint " + path.string() + " failed its digest check (stored sha256:" + stored_hex +
                             ", computed sha256:" + digest + ")");
    }

    json index;
    try {
        index = json::parse(bytes.substr(kCheckpointHeaderSize, index_len));
        auto& out = parsed.index;
        out.format_version = version;
        out.step = index.at("step").get<std::int64_t>();
        for (const auto& [k, v] : index.at("config").items()) out.config[k] = v.get<std::string>();
        for (const auto& t : index.at("tensors")) {
            out.tensors.push_back(TensorRecord{t.at("name").get<std::string>(),
                                               t.at("shape").get<std::vector<std::int64_t>>(),
                                               t.at("offset").get<std::uint64_t>(), t.at("count").get<std::uint64_t>()});
        }
        for (const auto& [k, v] : index.at("adam_steps").items()) out.adam_steps[k] = v.get<std::int64_t>();
    } catch (const json::exception& e) {
        throw IntegrityError("checkpoint " + path.string() + " has a malformed index: " + e.what());
    }
    for (const auto& t : parsed.index.tensors) {
        if (t.offset % kCheckpointAlignment != 0 || t.offset + t.count * sizeof(float) > payload_len) {
            throw IntegrityError("checkpoint " + path.string() + ": tensor '" + t.name + "' lies outside the payload");
        }
    }
    parsed.index.digest = "sha256:" + digest;
    parsed.payload_start = kCheckpointHeaderSize + index_len;
    return parsed;
}

torch::Tensor tensor_at(const ParsedCheckpoint& parsed, const TensorRecord& record) {
    auto t = torch::empty(record.shape, torch::kFloat32);
    if (static_cast<std::uint64_t>(t.numel()) != record.count) {
        throw IntegrityError("checkpoint tensor '" + record.name + "' count disagrees with its shape");
    }
    std::memcpy(t.data_ptr<float>(), parsed.bytes.data() + parsed.payload_start + record.offset,
                record.count * sizeof(float));
    return t;
}

}  // namespace

std::string save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    std::vector<std::pair<std::string, torch::Tensor>> tensors;
    for (const auto& item : state.model->named_parameters()) tensors.emplace_back("param/" + item.key(), item.value());
    for (const auto& item : state.model->named_buffers()) tensors.emplace_back("buffer/" + item.key(), item.value());

    json adam_steps = json::object();
    const auto names = parameter_names(state);
    for (const auto& [opt_name, opt] : optimizers(state)) {
        if (opt == nullptr) continue;
        for (const auto& group : opt->param_groups()) {
            for (const auto& p : group.params()) {
                const auto it = opt->state().find(p.unsafeGetTensorImpl());
                if (it == opt->state().end()) continue;
                const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
                const auto base = std::string(opt_name) + "/" + names.at(p.unsafeGetTensorImpl());
                tensors.emplace_back(base + "/exp_avg", s.exp_avg());
                tensors.emplace_back(base + "/exp_avg_sq", s.exp_avg_sq());
                adam_steps[base] = s.step();
            }
        }
    }

    json index;
    index["format_version"] = kCheckpointVersion;
    json config = json::object();
    for (const auto& [k, v] : state.config.to_key_values()) config[k] = v;
    index["config"] = config;
    index["step"] = state.step;
    index["tensors"] = json::array();
    std::string payload;
    for (const auto& [name, tensor] : tensors) {
        const auto data = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
        const auto offset = align_up(payload.size());
        payload.resize(offset, '\0');
        payload.append(reinterpret_cast<const char*>(data.data_ptr<float>()),
                       static_cast<std::size_t>(data.numel()) * sizeof(float));
        index["tensors"].push_back(
            json{{"name", name}, {"shape", shape_of(data)}, {"offset", offset}, {"count", data.numel()}});
    }
    index["adam_steps"] = adam_steps;

    std::string index_text = index.dump();
    index_text.resize(align_up(kCheckpointHeaderSize + index_text.size()) - kCheckpointHeaderSize, ' ');

    Sha256 hasher;
    hasher.update(index_text);
    hasher.update(payload);
    const auto hex = hasher.hex_digest();

    std::string header(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(header, kCheckpointVersion);
    put_le<std::uint32_t>(header, 0);
    put_le<std::uint64_t>(header, index_text.size());
    put_le<std::uint64_t>(header, payload.size());
    for (std::size_t i = 0; i < hex.size(); i += 2) header.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto temporary = path;
    temporary += ".tmp";
    {
        std::ofstream out(temporary, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + temporary.string());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        out.write(index_text.data(), static_cast<std::streamsize>(index_text.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(temporary);
            throw IoError("failed writing checkpoint " + temporary.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(temporary, path, ec);
    if (ec) {
        std::filesystem::remove(temporary);
        throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
    return "sha256:" + hex;
}

TrainState load_checkpoint(const std::filesystem::path& path, const std::optional<ExperimentConfig>& expected_config) {
    const auto parsed = parse(path);
    const auto& index = parsed.index;
    auto config = ExperimentConfig::from_key_values(index.config);

    if (expected_config) {
        const auto expected = expected_config->resolved();
        if (!(expected.split == config.split)) {
            throw ConfigError("checkpoint " + path.string() + " was trained with split " + config.split.label() +
                              " (n_high=" + std::to_string(config.split.n_high) + ", n_low=" +
                              std::to_string(config.split.n_low) + ") but split " + expected.split.label() +
                              " (n_high=" + std::to_string(expected.split.n_high) + ", n_low=" +
                              std::to_string(expected.split.n_low) + ") was expected");
        }
        if (!(expected.scenario == config.scenario)) {
            throw ConfigError("checkpoint " + path.string() + " was trained on scenario " + config.scenario.label() +
                              " but " + expected.scenario.label() + " was expected");
        }
        config = expected;
    }

    auto state = make_train_state(config);
    state.step = index.step;

    std::map<std::string, const TensorRecord*> records;
    for (const auto& r : index.tensors) records[r.name] = &r;

    const auto restore = [&](const std::string& name, torch::Tensor target) {
        const auto it = records.find(name);
        if (it == records.end()) throw ConfigError("checkpoint " + path.string() + " lacks tensor '" + name + "'");
        if (it->second->shape != shape_of(target)) {
            throw ConfigError("parameter '" + name + "' has shape " + shape_text(it->second->shape) +
                              " in the checkpoint but " + shape_text(shape_of(target)) + " in the model");
        }
        torch::NoGradGuard no_grad;
        target.copy_(tensor_at(parsed, *it->second));
    };

    for (const auto& item : state.model->named_parameters()) restore("param/" + item.key(), item.value());
    for (const auto& item : state.model->named_buffers()) restore("buffer/" + item.key(), item.value());
    const auto params = state.model->named_parameters();
    const auto buffers = state.model->named_buffers();
    for (const auto& r : index.tensors) {
        const bool orphan = (r.name.starts_with("param/") && !params.contains(r.name.substr(6))) ||
                            (r.name.starts_with("buffer/") && !buffers.contains(r.name.substr(7)));
        if (orphan) {
            throw ConfigError("checkpoint tensor '" + r.name + "' has no counterpart in the configured architecture");
        }
    }

    const auto names = parameter_names(state);
    for (const auto& [opt_name, opt] : optimizers(state)) {
        for (const auto& group : opt->param_groups()) {
            for (const auto& p : group.params()) {
                const auto base = std::string(opt_name) + "/" + names.at(p.unsafeGetTensorImpl());
                const auto step = index.adam_steps.find(base);
                if (step == index.adam_steps.end()) continue;
                auto s = std::make_unique<torch::optim::AdamParamState>();
                s->step(step->second);
                auto exp_avg = torch::zeros_like(p);
                auto exp_avg_sq = torch::zeros_like(p);
                restore(base + "/exp_avg", exp_avg);
                restore(base + "/exp_avg_sq", exp_avg_sq);
                s->exp_avg(exp_avg);
                s->exp_avg_sq(exp_avg_sq);
                opt->state()[p.unsafeGetTensorImpl()] = std::move(s);
            }
        }
    }
    return state;
}

CheckpointIndex read_checkpoint_index(const std::filesystem::path& path) { return parse(path).index; }

std::string describe_checkpoint(const std::filesystem::path& path) {
    const auto index = read_checkpoint_index(path);
    json out;
    out["path"] = path.string();
    out["format_version"] = index.format_version;
    out["digest"] = index.digest;
    out["step"] = index.step;
    out["config"] = index.config;
    out["tensors"] = json::array();
    for (const auto& t : index.tensors) {
        out["tensors"].push_back(json{{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"count", t.count}});
    }
    out["adam_steps"] = index.adam_steps;
    return out.dump(2);
}

}  // namespace cgrs
