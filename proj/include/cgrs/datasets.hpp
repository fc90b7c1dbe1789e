#pragma once

#include "cgrs/types.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cgrs {

// Images are (count, 28, 28, channels) float32 with channels in {1, 3};
// labels are (count) int64 in [0, 10). Raw sets hold values in [0, 1],
// preprocessed sets hold values in [-1, 1].
struct LabeledImageSet {
    std::string name;
    Split split = Split::train;
    torch::Tensor images;
    torch::Tensor labels;

    std::int64_t count() const { return images.defined() ? images.size(0) : 0; }
    std::int64_t channels() const { return images.size(3); }
    // Throws DataError when shapes or label ranges are off.
    void check() const;
};

// Background crops used by the MNIST-M style blend: (count, 28, 28, 3) in [0, 1].
struct BackgroundPatchSet {
    torch::Tensor patches;
    std::string source;

    std::int64_t count() const { return patches.defined() ? patches.size(0) : 0; }
};

// How the derived datasets are synthesised when no cache exists.
struct SynthesisOptions {
    std::uint64_t seed = 1234;
    std::filesystem::path backgrounds;  // directory of images; empty = procedural
    std::int64_t background_patches = 2000;
};

// Raw archive layout under `root` (what `fetch` writes):
//   mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.gz
//   fashion/ (same names)
//   usps/usps.bz2, usps/usps.t.bz2
// Derived sets are read from `root/<name>/<split>/` when a cache exists and
// synthesised from their base set otherwise.
LabeledImageSet load_dataset(DatasetId id, Split split, const std::filesystem::path& root,
                             const SynthesisOptions& synthesis = {});

// Always synthesises a derived set from its raw base set under `root`; the
// result depends only on (id, split, synthesis options, base set).
LabeledImageSet synthesize_dataset(DatasetId id, Split split, const std::filesystem::path& root,
                                   const SynthesisOptions& synthesis = {});

// Parsers for the raw archive formats.
LabeledImageSet read_idx_archives(const std::filesystem::path& images_gz, const std::filesystem::path& labels_gz,
                                  std::string name, Split split);
LabeledImageSet read_usps_archive(const std::filesystem::path& bz2_path, Split split);

// Bilinear (half-pixel centres) resize of an NHWC batch.
torch::Tensor resize_bilinear(const torch::Tensor& images, std::int64_t height, std::int64_t width);

// Per-channel |background - base|, with a seeded background crop per sample.
LabeledImageSet blend_background(const LabeledImageSet& base, const BackgroundPatchSet& backgrounds,
                                 std::uint64_t seed);

// Layout record for one M-Digits composite.
struct DigitComposite {
    std::vector<std::int64_t> source_indices;  // left to right
    std::vector<std::int64_t> digit_labels;    // left to right
    std::int64_t center_position = 0;          // index into the two vectors above
    double center_offset_px = 0.0;             // label digit centre minus canvas centre
};

struct MDigitsResult {
    LabeledImageSet set;
    std::vector<DigitComposite> layouts;
};

// 1-3 digits cropped to their bounding boxes, laid out left to right with a
// 0-2 px gap and +/-2 px vertical jitter, then resized to 28x28. The labelled
// digit sits at the horizontal centre of the canvas.
MDigitsResult compose_m_digits_with_layout(const LabeledImageSet& base, std::uint64_t seed,
                                           std::int64_t count = -1);
LabeledImageSet compose_m_digits(const LabeledImageSet& base, std::uint64_t seed, std::int64_t count = -1);

// [0, 1] -> [-1, 1]; grayscale is replicated when target_channels = 3.
LabeledImageSet preprocess(const LabeledImageSet& set, int target_channels);

// Seeded colour value-noise textures, for offline runs without BSDS images.
BackgroundPatchSet procedural_backgrounds(std::int64_t count, std::uint64_t seed);
// Random 28x28 crops from every decodable image in `directory`.
BackgroundPatchSet backgrounds_from_directory(const std::filesystem::path& directory, std::int64_t count,
                                              std::uint64_t seed);

// On-disk cache: images.bin (f32 little-endian NHWC), labels.bin (u8),
// manifest.json {name, split, count, height, width, channels, dtype, layout,
// digest}. digest = sha256(images.bin || labels.bin).
std::string write_dataset_cache(const LabeledImageSet& set, const std::filesystem::path& directory);
LabeledImageSet read_dataset_cache(const std::filesystem::path& directory);
std::filesystem::path dataset_cache_dir(const std::filesystem::path& root, DatasetId id, Split split);

// Raw archive downloads with MD5 verification against published digests.
struct ArchiveFile {
    std::string url;
    std::string filename;
    std::string md5;
};
std::vector<ArchiveFile> archive_files(DatasetId id);
std::filesystem::path archive_dir(const std::filesystem::path& root, DatasetId id);
void fetch_dataset(DatasetId id, const std::filesystem::path& root);

// Training-side view of the target domain: images only.
class UnlabeledImageSet {
public:
    UnlabeledImageSet() = default;
    static UnlabeledImageSet strip_labels(const LabeledImageSet& set);

    const std::string& name() const { return name_; }
    const torch::Tensor& images() const { return images_; }
    std::int64_t count() const { return images_.defined() ? images_.size(0) : 0; }

private:
    std::string name_;
    torch::Tensor images_;
};

// Everything the trainer may see. Target labels never enter this struct
// except through the per-class semi-supervised subset.
struct TrainingData {
    LabeledImageSet source;
    UnlabeledImageSet target;
    std::optional<LabeledImageSet> target_labeled;
};

// Builds TrainingData from preprocessed train splits. When per_class > 0,
// up to per_class labelled target samples per class are selected (seeded).
TrainingData make_training_data(const LabeledImageSet& source, const LabeledImageSet& target,
                                std::int64_t per_class, std::uint64_t seed);

// First n samples (or all when n <= 0 or n >= count).
LabeledImageSet take_first(const LabeledImageSet& set, std::int64_t n);

}  // namespace cgrs
