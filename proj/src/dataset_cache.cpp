#include "cgrs/datasets.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <fstream>

namespace cgrs {
namespace {

static_assert(std::endian::native == std::endian::little, "cache files are written in host byte order");

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IngestionError("missing cache file " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::byte> bytes(size);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw IngestionError("corrupt cache file " + path.string());
    return bytes;
}

}  // namespace

std::string write_dataset_cache(const LabeledImageSet& set, const std::filesystem::path& directory) {
    set.check();
    std::filesystem::create_directories(directory);
    const auto images = set.images.to(torch::kFloat32).contiguous();
    const auto labels = set.labels.to(torch::kUInt8).contiguous();
    const auto image_bytes = static_cast<std::size_t>(images.numel()) * sizeof(float);
    const auto label_bytes = static_cast<std::size_t>(labels.numel());

    Sha256 digest;
    digest.update({reinterpret_cast<const std::byte*>(images.data_ptr<float>()), image_bytes});
    digest.update({reinterpret_cast<const std::byte*>(labels.data_ptr<std::uint8_t>()), label_bytes});
    const auto hex = digest.hex_digest();

    write_bytes(directory / "images.bin", images.data_ptr<float>(), image_bytes);
    write_bytes(directory / "labels.bin", labels.data_ptr<std::uint8_t>(), label_bytes);

    nlohmann::ordered_json manifest;
    manifest["name"] = set.name;
    manifest["split"] = to_string(set.split);
    manifest["count"] = set.count();
    manifest["height"] = kImageSize;
    manifest["width"] = kImageSize;
    manifest["channels"] = set.channels();
    manifest["dtype"] = "f32le";
    manifest["layout"] = "NHWC";
    manifest["label_dtype"] = "u8";
    manifest["digest"] = "sha256:" + hex;
    std::ofstream out(directory / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (directory / "manifest.json").string());
    out << manifest.dump(2) << '\n';
    return "sha256:" + hex;
}

LabeledImageSet read_dataset_cache(const std::filesystem::path& directory) {
    const auto manifest_path = directory / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IngestionError("missing dataset manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("corrupt dataset manifest " + manifest_path.string() + ": " + e.what());
    }
    const auto count = manifest.at("count").get<std::int64_t>();
    const auto channels = manifest.at("channels").get<std::int64_t>();
    if (manifest.value("dtype", "") != "f32le" || manifest.value("layout", "") != "NHWC") {
        throw IngestionError("unsupported dataset cache layout in " + manifest_path.string());
    }
    const auto image_bytes = read_bytes(directory / "images.bin");
    const auto label_bytes = read_bytes(directory / "labels.bin");
    const auto expected_image_bytes = static_cast<std::size_t>(count * kImageSize * kImageSize * channels) * sizeof(float);
    if (image_bytes.size() != expected_image_bytes || label_bytes.size() != static_cast<std::size_t>(count)) {
        throw IngestionError("dataset cache " + directory.string() + " does not match its manifest");
    }
    Sha256 digest;
    digest.update(image_bytes);
    digest.update(label_bytes);
    if ("sha256:" + digest.hex_digest() != manifest.at("digest").get<std::string>()) {
        throw IntegrityError("dataset cache " + directory.string() + " fails its content digest");
    }
    auto images = torch::from_blob(const_cast<std::byte*>(image_bytes.data()),
                                   {count, kImageSize, kImageSize, channels}, torch::kFloat32)
                      .clone();
    auto labels = torch::from_blob(const_cast<std::byte*>(label_bytes.data()), {count}, torch::kUInt8).to(torch::kInt64);
    LabeledImageSet set{manifest.at("name").get<std::string>(), parse_split(manifest.at("split").get<std::string>()),
                        images, labels};
    set.check();
    return set;
}

}  // namespace cgrs
