#include "cgrs/datasets.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"

#include <boost/iostreams/device/file.hpp>
#include <boost/iostreams/filter/bzip2.hpp>
#include <boost/iostreams/filter/gzip.hpp>
#include <boost/iostreams/filtering_stream.hpp>

#include <algorithm>
#include <array>
#include <random>
#include <sstream>

namespace io = boost::iostreams;

namespace cgrs {

void LabeledImageSet::check() const {
    if (!images.defined() || images.dim() != 4 || images.size(1) != kImageSize || images.size(2) != kImageSize ||
        (images.size(3) != 1 && images.size(3) != 3)) {
        throw DataError("dataset '" + name + "': images must be (count, 28, 28, 1|3)");
    }
    if (!labels.defined() || labels.dim() != 1 || labels.size(0) != images.size(0)) {
        throw DataError("dataset '" + name + "': label count does not match image count");
    }
    if (labels.numel() > 0) {
        const auto lo = labels.min().item<std::int64_t>();
        const auto hi = labels.max().item<std::int64_t>();
        if (lo < 0 || hi >= kNumClasses) {
            throw DataError("dataset '" + name + "': labels must lie in [0, 10), found [" + std::to_string(lo) +
                            ", " + std::to_string(hi) + "]");
        }
    }
}

namespace {

std::vector<unsigned char> read_compressed(const std::filesystem::path& path, bool bzip2) {
    if (!std::filesystem::exists(path)) {
        throw IngestionError("missing archive " + path.string() + " (run `cgrs fetch` first)");
    }
    std::vector<unsigned char> bytes;
    try {
        io::filtering_istream in;
        if (bzip2) {
            in.push(io::bzip2_decompressor());
        } else {
            in.push(io::gzip_decompressor());
        }
        in.push(io::file_source(path.string(), std::ios::binary));
        std::array<char, 1 << 16> buffer{};
        while (in) {
            in.read(buffer.data(), buffer.size());
            const auto got = in.gcount();
            bytes.insert(bytes.end(), buffer.begin(), buffer.begin() + got);
        }
    } catch (const std::exception& e) {
        throw IngestionError("corrupt archive " + path.string() + ": " + e.what());
    }
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

LabeledImageSet read_idx_archives(const std::filesystem::path& images_gz, const std::filesystem::path& labels_gz,
                                  std::string name, Split split) {
    const auto image_bytes = read_compressed(images_gz, false);
    const auto label_bytes = read_compressed(labels_gz, false);
    if (image_bytes.size() < 16 || read_be32(image_bytes, 0) != 0x00000803) {
        throw IngestionError("corrupt archive " + images_gz.string() + ": bad IDX image header");
    }
    if (label_bytes.size() < 8 || read_be32(label_bytes, 0) != 0x00000801) {
        throw IngestionError("corrupt archive " + labels_gz.string() + ": bad IDX label header");
    }
    const std::int64_t count = read_be32(image_bytes, 4);
    const std::int64_t rows = read_be32(image_bytes, 8);
    const std::int64_t cols = read_be32(image_bytes, 12);
    if (rows != kImageSize || cols != kImageSize ||
        image_bytes.size() != static_cast<std::size_t>(16 + count * rows * cols)) {
        throw IngestionError("corrupt archive " + images_gz.string() + ": unexpected size");
    }
    if (read_be32(label_bytes, 4) != count || label_bytes.size() != static_cast<std::size_t>(8 + count)) {
        throw IngestionError("corrupt archive " + labels_gz.string() + ": label count mismatch");
    }

    auto pixels = torch::from_blob(const_cast<unsigned char*>(image_bytes.data() + 16), {count, rows, cols, 1},
                                   torch::kUInt8)
                      .to(torch::kFloat32)
                      .div_(255.0F);
    auto labels =
        torch::from_blob(const_cast<unsigned char*>(label_bytes.data() + 8), {count}, torch::kUInt8).to(torch::kInt64);
    LabeledImageSet set{std::move(name), split, pixels, labels};
    set.check();
    return set;
}

LabeledImageSet read_usps_archive(const std::filesystem::path& bz2_path, Split split) {
    const auto bytes = read_compressed(bz2_path, true);
    std::istringstream text(std::string(bytes.begin(), bytes.end()));
    std::vector<float> pixels;
    std::vector<std::int64_t> labels;
    std::string line;
    while (std::getline(text, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        double label = 0;
        if (!(fields >> label)) throw IngestionError("corrupt archive " + bz2_path.string() + ": bad label");
        std::array<float, 256> row{};
        row.fill(0.0F);
        std::string entry;
        while (fields >> entry) {
            const auto colon = entry.find(':');
            if (colon == std::string::npos) {
                throw IngestionError("corrupt archive " + bz2_path.string() + ": bad feature '" + entry + "'");
            }
            const int index = std::stoi(entry.substr(0, colon));
            const double value = std::stod(entry.substr(colon + 1));
            if (index < 1 || index > 256) {
                throw IngestionError("corrupt archive " + bz2_path.string() + ": feature index out of range");
            }
            row[static_cast<std::size_t>(index - 1)] = static_cast<float>((value + 1.0) / 2.0);
        }
        pixels.insert(pixels.end(), row.begin(), row.end());
        labels.push_back(static_cast<std::int64_t>(label) - 1);
    }
    const auto count = static_cast<std::int64_t>(labels.size());
    auto small = torch::from_blob(pixels.data(), {count, 16, 16, 1}, torch::kFloat32).clone();
    auto resized = resize_bilinear(small, kImageSize, kImageSize).clamp_(0.0, 1.0);
    LabeledImageSet set{"usps", split, resized, torch::tensor(labels, torch::kInt64)};
    set.check();
    return set;
}

torch::Tensor resize_bilinear(const torch::Tensor& images, std::int64_t height, std::int64_t width) {
    namespace F = torch::nn::functional;
    auto nchw = images.permute({0, 3, 1, 2});
    auto out = F::interpolate(nchw, F::InterpolateFuncOptions()
                                        .size(std::vector<std::int64_t>{height, width})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
    return out.permute({0, 2, 3, 1}).contiguous();
}

LabeledImageSet preprocess(const LabeledImageSet& set, int target_channels) {
    set.check();
    const auto channels = set.channels();
    if (!(channels == target_channels || (channels == 1 && target_channels == 3))) {
        throw ConfigError("cannot preprocess '" + set.name + "' from " + std::to_string(channels) + " to " +
                          std::to_string(target_channels) + " channels");
    }
    if (set.count() > 0) {
        const auto lo = set.images.min().item<float>();
        const auto hi = set.images.max().item<float>();
        if (lo < 0.0F || hi > 1.0F) {
            throw DataError("cannot preprocess '" + set.name + "': pixel values must lie in [0, 1] (found [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + "]); already preprocessed?");
        }
    }
    auto images = set.images.mul(2.0).sub_(1.0);
    if (channels == 1 && target_channels == 3) images = images.expand({-1, -1, -1, 3}).contiguous();
    return LabeledImageSet{set.name, set.split, images, set.labels.clone()};
}

std::filesystem::path archive_dir(const std::filesystem::path& root, DatasetId id) { return root / to_string(id); }

std::filesystem::path dataset_cache_dir(const std::filesystem::path& root, DatasetId id, Split split) {
    return root / to_string(id) / to_string(split);
}

namespace {

LabeledImageSet load_raw(DatasetId id, Split split, const std::filesystem::path& root) {
    const auto dir = archive_dir(root, id);
    switch (id) {
        case DatasetId::mnist:
        case DatasetId::fashion: {
            const std::string prefix = split == Split::train ? "train" : "t10k";
            return read_idx_archives(dir / (prefix + "-images-idx3-ubyte.gz"), dir / (prefix + "-labels-idx1-ubyte.gz"),
                                     to_string(id), split);
        }
        case DatasetId::usps:
            return read_usps_archive(dir / (split == Split::train ? "usps.bz2" : "usps.t.bz2"), split);
        default:
            throw ConfigError("dataset '" + to_string(id) + "' has no raw archive");
    }
}

BackgroundPatchSet make_backgrounds(const SynthesisOptions& options, std::uint64_t seed) {
    if (options.backgrounds.empty()) return procedural_backgrounds(options.background_patches, seed);
    return backgrounds_from_directory(options.backgrounds, options.background_patches, seed);
}

}  // namespace

LabeledImageSet synthesize_dataset(DatasetId id, Split split, const std::filesystem::path& root,
                                   const SynthesisOptions& synthesis) {
    if (!is_synthesized(id)) throw ConfigError("dataset '" + to_string(id) + "' is not synthesised");
    const auto stream = mix_seed(synthesis.seed, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(split));
    LabeledImageSet out;
    switch (id) {
        case DatasetId::mnist_m:
            out = blend_background(load_raw(DatasetId::mnist, split, root), make_backgrounds(synthesis, stream + 1),
                                   stream);
            break;
        case DatasetId::fashion_m:
            out = blend_background(load_raw(DatasetId::fashion, split, root), make_backgrounds(synthesis, stream + 1),
                                   stream);
            break;
        default:
            out = compose_m_digits(load_raw(DatasetId::mnist, split, root), stream);
            break;
    }
    out.name = to_string(id);
    out.split = split;
    return out;
}

LabeledImageSet load_dataset(DatasetId id, Split split, const std::filesystem::path& root,
                             const SynthesisOptions& synthesis) {
    if (!is_synthesized(id)) return load_raw(id, split, root);
    const auto cache = dataset_cache_dir(root, id, split);
    if (std::filesystem::exists(cache / "manifest.json")) return read_dataset_cache(cache);
    return synthesize_dataset(id, split, root, synthesis);
}

UnlabeledImageSet UnlabeledImageSet::strip_labels(const LabeledImageSet& set) {
    UnlabeledImageSet out;
    out.name_ = set.name;
    out.images_ = set.images;
    return out;
}

TrainingData make_training_data(const LabeledImageSet& source, const LabeledImageSet& target,
                                std::int64_t per_class, std::uint64_t seed) {
    source.check();
    target.check();
    TrainingData data{source, UnlabeledImageSet::strip_labels(target), std::nullopt};
    if (per_class <= 0) return data;

    std::mt19937_64 rng(mix_seed(seed, 0x5e31));
    const auto labels = target.labels.contiguous();
    const auto* label_ptr = labels.data_ptr<std::int64_t>();
    std::vector<std::int64_t> chosen;
    for (std::int64_t c = 0; c < kNumClasses; ++c) {
        std::vector<std::int64_t> members;
        for (std::int64_t i = 0; i < target.count(); ++i) {
            if (label_ptr[i] == c) members.push_back(i);
        }
        std::shuffle(members.begin(), members.end(), rng);
        const auto take = std::min<std::int64_t>(per_class, static_cast<std::int64_t>(members.size()));
        chosen.insert(chosen.end(), members.begin(), members.begin() + take);
    }
    const auto index = torch::tensor(chosen, torch::kInt64);
    data.target_labeled = LabeledImageSet{target.name + "-labeled", target.split,
                                          target.images.index_select(0, index), target.labels.index_select(0, index)};
    return data;
}

LabeledImageSet take_first(const LabeledImageSet& set, std::int64_t n) {
    if (n <= 0 || n >= set.count()) return set;
    return LabeledImageSet{set.name, set.split, set.images.slice(0, 0, n), set.labels.slice(0, 0, n)};
}

}  // namespace cgrs
