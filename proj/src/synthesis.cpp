#include "cgrs/datasets.hpp"

#include "cgrs/digest.hpp"
#include "cgrs/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

namespace cgrs {
namespace {

// Per-sample generators: sample i's draws never depend on any other sample,
// so the result is identical under any partitioning of the work.
std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t index) {
    return std::mt19937_64(mix_seed(seed, static_cast<std::uint64_t>(index)));
}

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

}  // namespace

LabeledImageSet blend_background(const LabeledImageSet& base, const BackgroundPatchSet& backgrounds,
                                 std::uint64_t seed) {
    base.check();
    if (base.channels() != 1) throw ConfigError("blend_background: base set '" + base.name + "' must be grayscale");
    if (backgrounds.count() == 0) throw ConfigError("blend_background: background set is empty");

    std::vector<std::int64_t> picks(static_cast<std::size_t>(base.count()));
    for (std::int64_t i = 0; i < base.count(); ++i) {
        auto rng = sample_rng(seed, i);
        picks[static_cast<std::size_t>(i)] = uniform_int(rng, 0, backgrounds.count() - 1);
    }
    const auto chosen = backgrounds.patches.index_select(0, torch::tensor(picks, torch::kInt64));
    auto blended = (chosen - base.images).abs_().clamp_(0.0, 1.0);
    return LabeledImageSet{base.name + "-blend", base.split, blended.contiguous(), base.labels.clone()};
}

namespace {

struct DigitCrop {
    torch::Tensor pixels;  // (h, w)
    std::int64_t label;
    std::int64_t index;
};

DigitCrop crop_digit(const LabeledImageSet& base, std::int64_t index) {
    const auto image = base.images[index].select(2, 0);
    const auto mask = image.gt(0.05);
    const auto rows = mask.any(1).nonzero();
    const auto cols = mask.any(0).nonzero();
    DigitCrop crop{image, base.labels[index].item<std::int64_t>(), index};
    if (rows.numel() == 0 || cols.numel() == 0) return crop;
    const auto r0 = rows.min().item<std::int64_t>();
    const auto r1 = rows.max().item<std::int64_t>() + 1;
    const auto c0 = cols.min().item<std::int64_t>();
    const auto c1 = cols.max().item<std::int64_t>() + 1;
    crop.pixels = image.slice(0, r0, r1).slice(1, c0, c1);
    return crop;
}

}  // namespace

MDigitsResult compose_m_digits_with_layout(const LabeledImageSet& base, std::uint64_t seed, std::int64_t count) {
    base.check();
    if (base.count() == 0) throw ConfigError("compose_m_digits: base set is empty");
    if (base.channels() != 1) throw ConfigError("compose_m_digits: base set must be grayscale");
    if (count < 0) count = base.count();

    auto images = torch::zeros({count, kImageSize, kImageSize, 1});
    auto labels = torch::zeros({count}, torch::kInt64);
    std::vector<DigitComposite> layouts(static_cast<std::size_t>(count));

    for (std::int64_t i = 0; i < count; ++i) {
        auto rng = sample_rng(seed, i);
        const auto n_digits = uniform_int(rng, 1, 3);
        const auto pick = [&] { return crop_digit(base, uniform_int(rng, 0, base.count() - 1)); };

        const DigitCrop center = pick();
        std::optional<DigitCrop> left;
        std::optional<DigitCrop> right;
        if (n_digits == 3) {
            left = pick();
            right = pick();
        } else if (n_digits == 2) {
            if (uniform_int(rng, 0, 1) == 0) {
                left = pick();
            } else {
                right = pick();
            }
        }
        const auto gap_left = left ? uniform_int(rng, 0, 2) : 0;
        const auto gap_right = right ? uniform_int(rng, 0, 2) : 0;

        const auto width_of = [](const std::optional<DigitCrop>& d) { return d ? d->pixels.size(1) : 0; };
        const auto height_of = [](const std::optional<DigitCrop>& d) { return d ? d->pixels.size(0) : 0; };
        const auto extent_left = width_of(left) + gap_left;
        const auto extent_right = width_of(right) + gap_right;
        const auto side = std::max(extent_left, extent_right);
        const auto center_w = center.pixels.size(1);
        const auto canvas_w = center_w + 2 * side;
        const auto canvas_h = std::max({center.pixels.size(0), height_of(left), height_of(right)}) + 4;

        auto canvas = torch::zeros({canvas_h, canvas_w});
        const auto place = [&](const DigitCrop& d, std::int64_t x) {
            const auto h = d.pixels.size(0);
            const auto jitter = uniform_int(rng, -2, 2);
            const auto y = std::clamp<std::int64_t>((canvas_h - h) / 2 + jitter, 0, canvas_h - h);
            auto region = canvas.slice(0, y, y + h).slice(1, x, x + d.pixels.size(1));
            region.copy_(torch::maximum(region, d.pixels));
        };
        const auto center_x = side;
        place(center, center_x);
        if (left) place(*left, center_x - gap_left - left->pixels.size(1));
        if (right) place(*right, center_x + center_w + gap_right);

        // Pad to a square, then resize to 28x28.
        const auto square = std::max(canvas_w, canvas_h);
        const auto pad_x = (square - canvas_w) / 2;
        const auto pad_y = (square - canvas_h) / 2;
        auto padded = torch::zeros({square, square});
        padded.slice(0, pad_y, pad_y + canvas_h).slice(1, pad_x, pad_x + canvas_w).copy_(canvas);
        namespace F = torch::nn::functional;
        auto resized = F::interpolate(padded.view({1, 1, square, square}),
                                      F::InterpolateFuncOptions()
                                          .size(std::vector<std::int64_t>{kImageSize, kImageSize})
                                          .mode(torch::kBilinear)
                                          .align_corners(false)
                                          .antialias(square > kImageSize))
                           .clamp_(0.0, 1.0);
        images[i].copy_(resized.view({kImageSize, kImageSize, 1}));
        labels[i] = center.label;

        auto& layout = layouts[static_cast<std::size_t>(i)];
        if (left) {
            layout.source_indices.push_back(left->index);
            layout.digit_labels.push_back(left->label);
        }
        layout.center_position = static_cast<std::int64_t>(layout.source_indices.size());
        layout.source_indices.push_back(center.index);
        layout.digit_labels.push_back(center.label);
        if (right) {
            layout.source_indices.push_back(right->index);
            layout.digit_labels.push_back(right->label);
        }
        const double digit_center = static_cast<double>(pad_x + center_x) + static_cast<double>(center_w) / 2.0;
        layout.center_offset_px = digit_center - static_cast<double>(square) / 2.0;
    }
    return MDigitsResult{LabeledImageSet{"m-digits", base.split, images, labels}, std::move(layouts)};
}

LabeledImageSet compose_m_digits(const LabeledImageSet& base, std::uint64_t seed, std::int64_t count) {
    return compose_m_digits_with_layout(base, seed, count).set;
}

BackgroundPatchSet procedural_backgrounds(std::int64_t count, std::uint64_t seed) {
    if (count <= 0) throw ConfigError("procedural_backgrounds: count must be positive");
    auto patches = torch::empty({count, kImageSize, kImageSize, 3});
    auto acc = patches.accessor<float, 4>();
    std::uniform_real_distribution<float> unit(0.0F, 1.0F);

    for (std::int64_t n = 0; n < count; ++n) {
        auto rng = sample_rng(seed, n);
        // Two base colours mixed by multi-octave value noise.
        std::array<float, 3> c0{};
        std::array<float, 3> c1{};
        for (auto& v : c0) v = unit(rng);
        for (auto& v : c1) v = unit(rng);

        constexpr std::array<int, 3> kLattice{3, 6, 12};
        constexpr std::array<float, 3> kAmplitude{0.55F, 0.3F, 0.15F};
        std::array<std::vector<float>, 3> grids;
        for (std::size_t o = 0; o < kLattice.size(); ++o) {
            grids[o].resize(static_cast<std::size_t>((kLattice[o] + 1) * (kLattice[o] + 1)));
            for (auto& v : grids[o]) v = unit(rng);
        }
        for (int y = 0; y < kImageSize; ++y) {
            for (int x = 0; x < kImageSize; ++x) {
                float t = 0.0F;
                for (std::size_t o = 0; o < kLattice.size(); ++o) {
                    const int cells = kLattice[o];
                    const float fx = static_cast<float>(x) / (kImageSize - 1) * static_cast<float>(cells);
                    const float fy = static_cast<float>(y) / (kImageSize - 1) * static_cast<float>(cells);
                    const int ix = std::min(static_cast<int>(fx), cells - 1);
                    const int iy = std::min(static_cast<int>(fy), cells - 1);
                    const float ux = fx - static_cast<float>(ix);
                    const float uy = fy - static_cast<float>(iy);
                    const float sx = ux * ux * (3.0F - 2.0F * ux);
                    const float sy = uy * uy * (3.0F - 2.0F * uy);
                    const auto at = [&](int gx, int gy) {
                        return grids[o][static_cast<std::size_t>(gy * (cells + 1) + gx)];
                    };
                    const float top = at(ix, iy) * (1 - sx) + at(ix + 1, iy) * sx;
                    const float bottom = at(ix, iy + 1) * (1 - sx) + at(ix + 1, iy + 1) * sx;
                    t += kAmplitude[o] * (top * (1 - sy) + bottom * sy);
                }
                for (int c = 0; c < 3; ++c) {
                    acc[n][y][x][c] = std::clamp(c0[static_cast<std::size_t>(c)] * (1 - t) +
                                                     c1[static_cast<std::size_t>(c)] * t,
                                                 0.0F, 1.0F);
                }
            }
        }
    }
    return BackgroundPatchSet{patches, "procedural"};
}

BackgroundPatchSet backgrounds_from_directory(const std::filesystem::path& directory, std::int64_t count,
                                              std::uint64_t seed) {
    if (count <= 0) throw ConfigError("backgrounds_from_directory: count must be positive");
    if (!std::filesystem::is_directory(directory)) {
        throw IngestionError("background directory " + directory.string() + " does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(directory)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<cv::Mat> images;
    for (const auto& file : files) {
        cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
        if (img.empty() || img.rows < kImageSize || img.cols < kImageSize) continue;
        cv::Mat rgb;
        cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
        images.push_back(rgb);
    }
    if (images.empty()) throw ConfigError("no usable background images in " + directory.string());

    auto patches = torch::empty({count, kImageSize, kImageSize, 3});
    for (std::int64_t n = 0; n < count; ++n) {
        auto rng = sample_rng(seed, n);
        const auto& img = images[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(images.size()) - 1))];
        const int y = static_cast<int>(uniform_int(rng, 0, img.rows - kImageSize));
        const int x = static_cast<int>(uniform_int(rng, 0, img.cols - kImageSize));
        cv::Mat crop = img(cv::Rect(x, y, kImageSize, kImageSize)).clone();
        auto t = torch::from_blob(crop.data, {kImageSize, kImageSize, 3}, torch::kUInt8).to(torch::kFloat32).div_(255.0F);
        patches[n].copy_(t);
    }
    return BackgroundPatchSet{patches, directory.string()};
}

}  // namespace cgrs
